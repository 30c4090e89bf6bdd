//! Orthonormal coordinate frames.
//!
//! A [`Frame`] stores an `n × n` matrix whose rows are the basis vectors
//! `b_1, …, b_n` written in ambient coordinates. The frame coordinates of a
//! point `p` are `(p·b_1, …, p·b_n)`; the inverse map is `Σ q_i b_i`. Frames
//! are always proper rotations (`det = +1`).

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::linalg;

/// Tolerance on `‖O Oᵀ − I‖_∞` for a valid frame.
pub const ORTHONORMAL_TOL: f64 = 1e-12;
/// Tolerance on `|v| − 1` accepted by [`Frame::from_first_axis`].
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("vector is not a unit vector (|v| = {norm})")]
    NotUnitVector { norm: f64 },
    #[error("dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("matrix is not orthonormal (‖OOᵀ − I‖∞ = {error:e})")]
    NotOrthonormal { error: f64 },
    #[error("matrix has non-positive determinant {det}")]
    NotProper { det: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    n: usize,
    rows: Vec<f64>,
}

impl Frame {
    pub fn identity(n: usize) -> Self {
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            rows[i * n + i] = 1.0;
        }
        Frame { n, rows }
    }

    /// Builds a frame from row-major data, checking orthonormality and
    /// orientation.
    pub fn from_rows(n: usize, rows: Vec<f64>) -> Result<Self, FrameError> {
        if n < 2 {
            return Err(FrameError::BadDimension(n));
        }
        if rows.len() != n * n {
            return Err(FrameError::DimensionMismatch(rows.len(), n * n));
        }
        let f = Frame { n, rows };
        let error = f.orthonormality_error();
        if !(error <= ORTHONORMAL_TOL) {
            return Err(FrameError::NotOrthonormal { error });
        }
        let det = f.determinant();
        if det <= 0.0 {
            return Err(FrameError::NotProper { det });
        }
        Ok(f)
    }

    /// Completes the unit vector `v` to a positively oriented orthonormal
    /// frame whose first row is `v`.
    ///
    /// Uses the Householder reflection `H = I − 2uuᵀ/|u|²`, `u = e_1 − v`,
    /// which is symmetric and maps `e_1` to `v`; `H` has determinant −1
    /// whenever `u ≠ 0`, in which case the last row is negated.
    pub fn from_first_axis(v: &[f64]) -> Result<Self, FrameError> {
        let n = v.len();
        if n < 2 {
            return Err(FrameError::BadDimension(n));
        }
        let norm = linalg::norm(v);
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(FrameError::NotUnitVector { norm });
        }
        let tail: f64 = v[1..].iter().map(|x| x * x).sum();
        if tail == 0.0 && v[0] > 0.0 {
            return Ok(Frame::identity(n));
        }
        // 1 − v_1 without cancellation when v is close to e_1.
        let u1 = if v[0] > 0.0 { tail / (1.0 + v[0]) } else { 1.0 - v[0] };
        let mut u = vec![u1];
        u.extend(v[1..].iter().map(|x| -x));
        let uu = u1 * u1 + tail;
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                rows[i * n + j] = delta - 2.0 * u[i] * u[j] / uu;
            }
        }
        rows[..n].copy_from_slice(v);
        let mut f = Frame { n, rows };
        if f.determinant() < 0.0 {
            for j in 0..n {
                f.rows[(n - 1) * n + j] = -f.rows[(n - 1) * n + j];
            }
        }
        Ok(f)
    }

    /// The frame of `v` expressed in `w`-coordinates: its rows are the basis
    /// vectors of `v` written in the basis of `w` (matrix `V Wᵀ`).
    ///
    /// `v.to_frame(p) == relative(w, v).to_frame(&w.to_frame(p))`.
    pub fn relative(w: &Frame, v: &Frame) -> Result<Frame, FrameError> {
        if w.n != v.n {
            return Err(FrameError::DimensionMismatch(w.n, v.n));
        }
        let n = w.n;
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                rows[i * n + j] = linalg::dot(v.axis(i), w.axis(j));
            }
        }
        Ok(Frame { n, rows })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Basis vector `i` (0-based) in ambient coordinates.
    pub fn axis(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.n + j]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.axis(i).to_vec()).collect()
    }

    /// Ambient point → frame coordinates.
    pub fn to_frame(&self, p: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| linalg::dot(self.axis(i), p)).collect()
    }

    /// Frame coordinates → ambient point.
    pub fn from_frame(&self, q: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut p = vec![0.0; n];
        for (i, qi) in q.iter().enumerate() {
            for j in 0..n {
                p[j] += qi * self.rows[i * n + j];
            }
        }
        p
    }

    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = linalg::dot(self.axis(i), self.axis(j)) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        linalg::determinant(self.n, &self.rows)
    }
}

pub fn frame_from_first_axis(v: &[f64]) -> Result<Frame, FrameError> {
    Frame::from_first_axis(v)
}

pub fn to_frame(p: &[f64], f: &Frame) -> Vec<f64> {
    f.to_frame(p)
}

pub fn from_frame(q: &[f64], f: &Frame) -> Vec<f64> {
    f.from_frame(q)
}

pub fn relative_frame(w: &Frame, v: &Frame) -> Result<Frame, FrameError> {
    Frame::relative(w, v)
}

impl Serialize for Frame {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Frame {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("frame rows must form a square matrix"));
        }
        Frame::from_rows(n, rows.concat()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = linalg::norm(&v);
            if r > 1e-3 && r <= 1.0 {
                return linalg::scale(&v, 1.0 / r);
            }
        }
    }

    #[test]
    fn first_axis_e1_is_identity() {
        let f = Frame::from_first_axis(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f, Frame::identity(3));
    }

    #[test]
    fn first_axis_planar_quarter_turn() {
        // Of the two orthonormal completions of (0,1), only ((0,1),(-1,0))
        // has det = +1.
        let f = Frame::from_first_axis(&[0.0, 1.0]).unwrap();
        assert_eq!(f.to_rows(), vec![vec![0.0, 1.0], vec![-1.0, 0.0]]);
        assert_eq!(f.determinant(), 1.0);
    }

    #[test]
    fn first_axis_minus_e1() {
        let f = Frame::from_first_axis(&[-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.axis(0), &[-1.0, 0.0, 0.0]);
        assert!(f.orthonormality_error() <= ORTHONORMAL_TOL);
        assert!((f.determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_unit_rejected() {
        assert!(matches!(
            Frame::from_first_axis(&[1.0, 1.0]),
            Err(FrameError::NotUnitVector { .. })
        ));
        assert!(matches!(Frame::from_first_axis(&[1.0]), Err(FrameError::BadDimension(1))));
    }

    #[test]
    fn near_e1_is_stable() {
        let eps = 1e-9;
        let v = [(1.0f64 - eps * eps).sqrt(), eps, 0.0];
        let f = Frame::from_first_axis(&v).unwrap();
        assert!(f.orthonormality_error() <= ORTHONORMAL_TOL);
        assert!(f.determinant() > 1.0 - 1e-12);
    }

    #[test]
    fn transforms() {
        let f = Frame::from_rows(2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(f.to_frame(&[1.0, 0.0]), vec![0.0, -1.0]);
        assert_eq!(f.to_frame(&[0.0, 0.0]), vec![0.0, 0.0]);
        let id = Frame::identity(3);
        assert_eq!(id.to_frame(&[0.3, -2.0, 5.0]), vec![0.3, -2.0, 5.0]);
    }

    #[test]
    fn relative_frame_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Frame::from_first_axis(&random_unit(&mut rng, 3)).unwrap();
        let v = Frame::from_first_axis(&random_unit(&mut rng, 3)).unwrap();
        let same = Frame::relative(&w, &w).unwrap();
        assert!(same.rows().iter().zip(Frame::identity(3).rows()).all(|(a, b)| (a - b).abs() < 1e-14));
        let wt = Frame::relative(&w, &Frame::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((wt.entry(i, j) - w.entry(j, i)).abs() < 1e-15);
            }
        }
        let rel = Frame::relative(&w, &v).unwrap();
        assert!(rel.orthonormality_error() <= ORTHONORMAL_TOL);
        assert!(rel.determinant() > 0.0);
        let p = [0.2, -1.5, 0.7];
        let direct = v.to_frame(&p);
        let chained = rel.to_frame(&w.to_frame(&p));
        for (a, b) in direct.iter().zip(&chained) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn serde_roundtrip() {
        let f = Frame::from_first_axis(&[0.6, 0.8]).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        let g: Frame = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        assert!(serde_json::from_str::<Frame>("[[1.0,0.0],[0.0,-1.0]]").is_err());
    }
}
