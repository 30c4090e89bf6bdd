//! Implicit domains `{level < 0}` with closed-form level and gradient,
//! boundary search, and local graph charts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{Frame, FrameError};
use crate::grid::{Grid, GridGraph};
use crate::linalg;
use crate::rootfind::{self, RootError};

/// Default half-width of the boundary band used when classifying points.
pub const BOUNDARY_BAND: f64 = 1e-9;
/// Residual required of every computed boundary point, in level units.
pub const ROOT_RESIDUAL: f64 = 1e-12;
/// Samples per column when counting boundary crossings.
const CROSSING_SAMPLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("point has dimension {got}, domain has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no boundary point found in the ball of radius {radius} around {center:?}")]
    NoBoundaryInBall { center: Vec<f64>, radius: f64 },
    #[error("column at {point:?} crosses the boundary {count} times")]
    MultipleCrossings { point: Vec<f64>, count: usize },
    #[error("root solve failed at {point:?}: {source}")]
    NewtonStall { point: Vec<f64>, source: RootError },
    #[error("residual {residual:e} at {point:?} exceeds tolerance")]
    ResidualTooLarge { point: Vec<f64>, residual: f64 },
    #[error("projection onto the boundary did not converge from {start:?}")]
    ProjectionFailed { start: Vec<f64> },
    #[error("point {point:?} lies outside the stored grid")]
    OutsideGrid { point: Vec<f64> },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointClass {
    Interior,
    Exterior,
    BoundaryBand,
}

/// Closed-form shapes. Every shape is an open set `{level < 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    /// `{x : normal·x > offset}`; `normal` is normalized on construction.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned ellipsoid.
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64> },
    /// Star-shaped perturbation of a ball: `r < radius + amplitude·P(u)`
    /// where `P(u) = Re((u_1 + i u_2)^lobes)` on the unit sphere. In the
    /// plane this is `radius + amplitude·cos(lobes·φ)`.
    Blob {
        center: Vec<f64>,
        radius: f64,
        amplitude: f64,
        lobes: u32,
    },
    Complement { of: Box<Shape> },
}

impl Shape {
    fn dim(&self) -> usize {
        match self {
            Shape::HalfSpace { normal, .. } => normal.len(),
            Shape::Ball { center, .. } | Shape::Ellipsoid { center, .. } | Shape::Blob { center, .. } => center.len(),
            Shape::Complement { of } => of.dim(),
        }
    }

    fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: &str| Err(DomainError::InvalidShape(m.to_string()));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Shape::HalfSpace { normal, offset } => {
                if !finite(normal) || !offset.is_finite() || linalg::norm(normal) == 0.0 {
                    return bad("half-space needs a finite nonzero normal");
                }
            }
            Shape::Ball { center, radius } => {
                if !finite(center) || !(*radius > 0.0 && radius.is_finite()) {
                    return bad("ball needs a finite center and positive radius");
                }
            }
            Shape::Ellipsoid { center, semi_axes } => {
                if !finite(center) || semi_axes.len() != center.len() || semi_axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return bad("ellipsoid needs one positive semi-axis per coordinate");
                }
            }
            Shape::Blob { center, radius, amplitude, lobes } => {
                if !finite(center) || !(*radius > 0.0) || !(*amplitude >= 0.0) || amplitude >= radius || *lobes == 0 {
                    return bad("blob needs radius > amplitude >= 0 and lobes >= 1");
                }
            }
            Shape::Complement { of } => of.validate()?,
        }
        Ok(())
    }

    fn eval(&self, p: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Shape::HalfSpace { normal, offset } => (offset - linalg::dot(normal, p), linalg::scale(normal, -1.0)),
            Shape::Ball { center, radius } => {
                let d = linalg::sub(p, center);
                let r = linalg::norm(&d);
                if r == 0.0 {
                    let mut g = vec![0.0; d.len()];
                    g[0] = 1.0;
                    return (-radius, g);
                }
                (r - radius, linalg::scale(&d, 1.0 / r))
            }
            Shape::Ellipsoid { center, semi_axes } => {
                let q: Vec<f64> = p.iter().zip(center).zip(semi_axes).map(|((x, c), a)| (x - c) / a).collect();
                let s = linalg::norm(&q);
                if s == 0.0 {
                    let mut g = vec![0.0; q.len()];
                    g[0] = 1.0 / semi_axes[0];
                    return (-1.0, g);
                }
                let g = q.iter().zip(semi_axes).map(|(qi, a)| qi / (a * s)).collect();
                (s - 1.0, g)
            }
            Shape::Blob { center, radius, amplitude, lobes } => {
                let d = linalg::sub(p, center);
                let r = linalg::norm(&d);
                if r == 0.0 {
                    let mut g = vec![0.0; d.len()];
                    g[0] = 1.0;
                    return (-radius, g);
                }
                let k = *lobes as i32;
                // z^(k-1) and z^k for z = d1 + i d2.
                let (mut zr, mut zi) = (1.0, 0.0);
                for _ in 0..k - 1 {
                    let t = zr * d[0] - zi * d[1];
                    zi = zr * d[1] + zi * d[0];
                    zr = t;
                }
                let (pkr, _) = (zr * d[0] - zi * d[1], zr * d[1] + zi * d[0]);
                let rk = r.powi(k);
                let f = pkr / rk;
                let kf = k as f64;
                let mut g: Vec<f64> = d.iter().map(|x| x / r).collect();
                for (j, gj) in g.iter_mut().enumerate() {
                    let dp = match j {
                        0 => kf * zr,
                        1 => -kf * zi,
                        _ => 0.0,
                    };
                    let df = dp / rk - kf * pkr * d[j] / (rk * r * r);
                    *gj -= amplitude * df;
                }
                (r - radius - amplitude * f, g)
            }
            Shape::Complement { of } => {
                let (v, g) = of.eval(p);
                (-v, linalg::scale(&g, -1.0))
            }
        }
    }

    fn normalized(self) -> Shape {
        match self {
            Shape::HalfSpace { normal, offset } => {
                let s = linalg::norm(&normal);
                Shape::HalfSpace { normal: linalg::scale(&normal, 1.0 / s), offset: offset / s }
            }
            Shape::Complement { of } => Shape::Complement { of: Box::new(of.normalized()) },
            other => other,
        }
    }
}

/// An open set given by a level function; interior is `{level < 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitDomain {
    shape: Shape,
    n: usize,
}

impl ImplicitDomain {
    pub fn new(shape: Shape) -> Result<Self, DomainError> {
        shape.validate()?;
        let n = shape.dim();
        if n < 2 {
            return Err(DomainError::InvalidShape(format!("dimension must be at least 2, got {n}")));
        }
        Ok(ImplicitDomain { shape: shape.normalized(), n })
    }

    pub fn half_space(normal: &[f64], offset: f64) -> Self {
        Self::new(Shape::HalfSpace { normal: normal.to_vec(), offset }).expect("valid half-space")
    }

    pub fn ball(center: &[f64], radius: f64) -> Self {
        Self::new(Shape::Ball { center: center.to_vec(), radius }).expect("valid ball")
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn level(&self, p: &[f64]) -> f64 {
        self.shape.eval(p).0
    }

    pub fn grad(&self, p: &[f64]) -> Vec<f64> {
        self.shape.eval(p).1
    }

    pub fn eval(&self, p: &[f64]) -> (f64, Vec<f64>) {
        self.shape.eval(p)
    }

    pub fn complement(&self) -> ImplicitDomain {
        let shape = match &self.shape {
            Shape::Complement { of } => (**of).clone(),
            s => Shape::Complement { of: Box::new(s.clone()) },
        };
        ImplicitDomain { shape, n: self.n }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.level(p) < 0.0
    }

    pub fn classify(&self, p: &[f64], eps: f64) -> PointClass {
        let v = self.level(p);
        if v < -eps {
            PointClass::Interior
        } else if v > eps {
            PointClass::Exterior
        } else {
            PointClass::BoundaryBand
        }
    }

    /// Signed distance estimate `level/|grad|`, exact for half-spaces and
    /// balls and first-order accurate near the boundary otherwise.
    pub fn boundary_distance(&self, p: &[f64]) -> f64 {
        let (v, g) = self.eval(p);
        v / linalg::norm(&g)
    }

    /// Inward unit normal `−grad/|grad|`.
    pub fn inward_normal(&self, p: &[f64]) -> Vec<f64> {
        let g = self.grad(p);
        linalg::scale(&g, -1.0 / linalg::norm(&g))
    }

    /// Lower bound on `|grad|` near the boundary.
    pub fn gradient_floor(&self) -> f64 {
        match &self.shape {
            Shape::Ellipsoid { semi_axes, .. } => 1.0 / semi_axes.iter().cloned().fold(0.0, f64::max),
            Shape::Complement { of } => ImplicitDomain { shape: (**of).clone(), n: self.n }.gradient_floor(),
            _ => 1.0,
        }
    }

    /// Axis-aligned box containing the boundary, `None` when unbounded.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.shape {
            Shape::HalfSpace { .. } => None,
            Shape::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Shape::Ellipsoid { center, semi_axes } => Some((
                center.iter().zip(semi_axes).map(|(c, a)| c - a).collect(),
                center.iter().zip(semi_axes).map(|(c, a)| c + a).collect(),
            )),
            Shape::Blob { center, radius, amplitude, .. } => {
                let r = radius + amplitude;
                Some((center.iter().map(|c| c - r).collect(), center.iter().map(|c| c + r).collect()))
            }
            Shape::Complement { of } => ImplicitDomain { shape: (**of).clone(), n: self.n }.bounding_box(),
        }
    }

    /// Deterministic boundary points of a bounded shape: uniform angles in
    /// the plane, a Fibonacci lattice on the sphere in three dimensions.
    /// Empty for half-spaces.
    pub fn boundary_samples(&self, count: usize) -> Vec<Vec<f64>> {
        let dirs = sphere_directions(self.n, count);
        match &self.shape {
            Shape::HalfSpace { .. } => Vec::new(),
            Shape::Ball { center, radius } => dirs.iter().map(|u| linalg::axpy(center, *radius, u)).collect(),
            Shape::Ellipsoid { center, semi_axes } => dirs
                .iter()
                .map(|u| center.iter().zip(semi_axes).zip(u).map(|((c, a), ui)| c + a * ui).collect())
                .collect(),
            Shape::Blob { center, radius, amplitude, lobes } => dirs
                .iter()
                .map(|u| {
                    let r = radius + amplitude * re_power(u[0], u[1], *lobes);
                    linalg::axpy(center, r, u)
                })
                .collect(),
            Shape::Complement { of } => ImplicitDomain { shape: (**of).clone(), n: self.n }.boundary_samples(count),
        }
    }

    /// Boundary points inside `B_radius(center)`. Bounded shapes filter
    /// their parametrized samples; half-spaces use a tangent lattice around
    /// the projection of `center`.
    pub fn boundary_samples_in(&self, center: &[f64], radius: f64, count: usize) -> Vec<Vec<f64>> {
        let base = self.planar_base();
        match base {
            Some((normal, offset)) => {
                let foot = linalg::axpy(center, offset - linalg::dot(&normal, center), &normal);
                if linalg::dist(&foot, center) >= radius {
                    return Vec::new();
                }
                let frame = Frame::from_first_axis(&normal).expect("unit normal");
                let k = (count as f64).powf(1.0 / (self.n - 1) as f64).ceil().max(2.0) as usize;
                let grid = Grid::new(self.n - 1, radius, if k % 2 == 0 { k + 1 } else { k }).expect("grid");
                let mut out = Vec::new();
                for idx in 0..grid.len() {
                    let mut q = vec![0.0];
                    q.extend(grid.coords(idx));
                    let p = linalg::add(&foot, &frame.from_frame(&q));
                    if linalg::dist(&p, center) < radius {
                        out.push(p);
                    }
                }
                out
            }
            None => self
                .boundary_samples(count)
                .into_iter()
                .filter(|p| linalg::dist(p, center) < radius)
                .collect(),
        }
    }

    fn planar_base(&self) -> Option<(Vec<f64>, f64)> {
        match &self.shape {
            Shape::HalfSpace { normal, offset } => Some((normal.clone(), *offset)),
            Shape::Complement { of } => match &**of {
                Shape::HalfSpace { normal, offset } => Some((normal.clone(), *offset)),
                _ => None,
            },
            _ => None,
        }
    }

    /// Newton projection onto the boundary along the gradient.
    pub fn project_to_boundary(&self, start: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut x = start.to_vec();
        for _ in 0..100 {
            let (v, g) = self.eval(&x);
            if v.abs() <= ROOT_RESIDUAL * 1e-2 {
                return Ok(x);
            }
            let gg = linalg::dot(&g, &g);
            if gg == 0.0 {
                break;
            }
            let next = linalg::axpy(&x, -v / gg, &g);
            if next == x {
                break;
            }
            x = next;
        }
        if self.level(&x).abs() <= ROOT_RESIDUAL {
            Ok(x)
        } else {
            Err(DomainError::ProjectionFailed { start: start.to_vec() })
        }
    }

    /// A point of `∂d ∩ B_radius(center)` nearest to `center`.
    ///
    /// Coarse ray casting (1024 rays in the plane, 4096 in space, 64 steps
    /// each) finds candidate crossings; the best candidates are polished by
    /// alternating the tangent-plane foot of `center` with a projection back
    /// onto the boundary. Ties within 1e−12 (relative) resolve to the
    /// lexicographically smallest point.
    pub fn closest_boundary_point(&self, center: &[f64], radius: f64) -> Result<Vec<f64>, DomainError> {
        self.check_dim(center)?;
        let (v0, g0) = self.eval(center);
        let g0n = linalg::norm(&g0);
        if v0.abs() <= ROOT_RESIDUAL {
            return Ok(center.to_vec());
        }
        if g0n > 0.0 && (v0 / g0n).abs() <= 1e-11 * (1.0 + linalg::norm(center)) {
            if let Ok(p) = self.project_to_boundary(center) {
                return Ok(p);
            }
        }
        let rays = if self.n == 2 { 1024 } else { 4096 };
        let dirs = sphere_directions(self.n, rays);
        let sign0 = v0 > 0.0;
        let mut hits: Vec<(f64, Vec<f64>)> = dirs
            .par_iter()
            .filter_map(|u| {
                let at = |s: f64| self.level(&linalg::axpy(center, s, u));
                let mut prev = 0.0;
                for step in 1..=64 {
                    let s = radius * step as f64 / 64.0;
                    let v = at(s);
                    if (v > 0.0) != sign0 || v == 0.0 {
                        let (mut lo, mut hi) = (prev, s);
                        for _ in 0..200 {
                            let mid = 0.5 * (lo + hi);
                            if mid <= lo || mid >= hi {
                                break;
                            }
                            if (at(mid) > 0.0) == sign0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        let s = 0.5 * (lo + hi);
                        return Some((s, linalg::axpy(center, s, u)));
                    }
                    prev = s;
                }
                None
            })
            .collect();
        if hits.is_empty() {
            return Err(DomainError::NoBoundaryInBall { center: center.to_vec(), radius });
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| linalg::lex_cmp(&a.1, &b.1)));
        let polished: Vec<(f64, Vec<f64>)> = hits
            .iter()
            .take(8)
            .filter_map(|(_, p)| {
                let q = self.polish_nearest(center, p).ok()?;
                Some((linalg::dist(&q, center), q))
            })
            .collect();
        let pool = if polished.is_empty() { &hits } else { &polished };
        let best = pool.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
        let tie = best + 1e-12 * best.max(f64::MIN_POSITIVE);
        let winner = pool
            .iter()
            .filter(|h| h.0 <= tie)
            .min_by(|a, b| linalg::lex_cmp(&a.1, &b.1))
            .expect("nonempty");
        if winner.0 >= radius {
            return Err(DomainError::NoBoundaryInBall { center: center.to_vec(), radius });
        }
        Ok(winner.1.clone())
    }

    fn polish_nearest(&self, center: &[f64], start: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut x = self.project_to_boundary(start)?;
        for _ in 0..500 {
            let nrm = self.inward_normal(&x);
            let off = linalg::dot(&linalg::sub(&x, center), &nrm);
            let foot = linalg::axpy(center, off, &nrm);
            let next = self.project_to_boundary(&foot)?;
            let step = linalg::dist(&next, &x);
            x = next;
            if step <= 1e-15 * (1.0 + linalg::norm(&x)) {
                break;
            }
        }
        Ok(x)
    }

    pub(crate) fn check_dim(&self, p: &[f64]) -> Result<(), DomainError> {
        if p.len() != self.n {
            return Err(DomainError::DimensionMismatch { expected: self.n, got: p.len() });
        }
        Ok(())
    }
}

pub fn classify_point(d: &ImplicitDomain, p: &[f64], eps: f64) -> PointClass {
    d.classify(p, eps)
}

pub fn complement(d: &ImplicitDomain) -> ImplicitDomain {
    d.complement()
}

/// `Re((a + i b)^k)`.
fn re_power(a: f64, b: f64, k: u32) -> f64 {
    let (mut zr, mut zi) = (1.0, 0.0);
    for _ in 0..k {
        let t = zr * a - zi * b;
        zi = zr * b + zi * a;
        zr = t;
    }
    zr
}

/// Deterministic, roughly uniform unit vectors.
pub fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        2 => (0..count)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            // Higher dimensions: normalized Halton-free lattice of signs and axes.
            let mut out = Vec::new();
            let mut i = 0usize;
            while out.len() < count {
                let mut v: Vec<f64> = (0..n)
                    .map(|j| ((i * (2 * j + 3) + j * 7919) % 997) as f64 / 498.5 - 1.0)
                    .collect();
                let r = linalg::norm(&v);
                if r > 1e-6 {
                    v.iter_mut().for_each(|x| *x /= r);
                    out.push(v);
                }
                i += 1;
            }
            out
        }
    }
}

/// Orientation of a graph relative to the set it bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// The set lies above the graph: `{x¹ > φ(x')}`.
    UpperSet,
    /// The set lies below the graph: `{x¹ < φ(x')}`.
    LowerSet,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::UpperSet => Orientation::LowerSet,
            Orientation::LowerSet => Orientation::UpperSet,
        }
    }
}

/// A function `ψ : ℝ^{n−1} → ℝ` together with its gradient.
pub trait GraphFn: Sync {
    fn arg_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>), DomainError>;
}

/// Wraps a closed-form `(ψ, Dψ)` closure.
pub struct FnGraph<F> {
    dim: usize,
    f: F,
}

impl<F> FnGraph<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnGraph { dim, f }
    }
}

impl<F> GraphFn for FnGraph<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn arg_dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>), DomainError> {
        Ok((self.f)(x))
    }
}

/// The boundary of a domain read as a graph over the hyperplane of a frame.
///
/// `ψ(x')` is the root `s ∈ (−reach, reach)` of
/// `level(origin + frame·(s, x')) = 0`, and `Dψ = −∇'L / ∂_1 L` there.
#[derive(Debug, Clone)]
pub struct LevelSetGraph {
    pub domain: ImplicitDomain,
    pub origin: Vec<f64>,
    pub frame: Frame,
    pub reach: f64,
}

impl LevelSetGraph {
    pub fn new(domain: ImplicitDomain, origin: Vec<f64>, frame: Frame, reach: f64) -> Self {
        LevelSetGraph { domain, origin, frame, reach }
    }

    fn point(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(x.len() + 1);
        q.push(s);
        q.extend_from_slice(x);
        linalg::add(&self.origin, &self.frame.from_frame(&q))
    }

    /// Level value and its derivative along the frame's first axis.
    fn column(&self, s: f64, x: &[f64]) -> (f64, f64) {
        let (v, g) = self.domain.eval(&self.point(s, x));
        (v, linalg::dot(&g, self.frame.axis(0)))
    }

    /// Number of sign changes of the level function on `s ∈ [−half, half]`.
    pub fn crossings(&self, x: &[f64], half: f64, samples: usize) -> usize {
        let mut count = 0;
        let mut prev = self.column(-half, x).0;
        for i in 1..=samples {
            let s = -half + 2.0 * half * i as f64 / samples as f64;
            let v = self.column(s, x).0;
            if (v > 0.0) != (prev > 0.0) {
                count += 1;
            }
            prev = v;
        }
        count
    }

    /// Which side of the graph is interior, judged at the column over `x`.
    pub fn orientation_at(&self, x: &[f64]) -> Result<Orientation, DomainError> {
        let s = self.eval(x)?.0;
        let slope = self.column(s, x).1;
        Ok(if slope < 0.0 { Orientation::UpperSet } else { Orientation::LowerSet })
    }
}

impl GraphFn for LevelSetGraph {
    fn arg_dim(&self) -> usize {
        self.frame.dim() - 1
    }

    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>), DomainError> {
        let root = rootfind::newton_bracketed(|s| self.column(s, x), -self.reach, self.reach, Some(0.0), ROOT_RESIDUAL * 1e-2)
            .map_err(|source| DomainError::NewtonStall { point: x.to_vec(), source })?;
        if root.residual > ROOT_RESIDUAL {
            return Err(DomainError::ResidualTooLarge { point: x.to_vec(), residual: root.residual });
        }
        let g = self.domain.grad(&self.point(root.t, x));
        let d1 = linalg::dot(&g, self.frame.axis(0));
        let grad = (1..self.frame.dim()).map(|i| -linalg::dot(&g, self.frame.axis(i)) / d1).collect();
        Ok((root.t, grad))
    }
}

/// A graph chart of `∂d` around `center` on the disk `B_{8R}'`.
#[derive(Debug, Clone)]
pub struct LocalChart {
    pub frame: Frame,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Boundary point whose inward normal fixed the frame (when no hint).
    pub anchor: Vec<f64>,
    pub orientation: Orientation,
    pub psi: GridGraph,
    pub gamma: f64,
    /// `sup|ψ| + sup|Dψ| + [Dψ]_γ` over grid nodes in `B_{8R}'`.
    pub theta_measured: f64,
    pub exact: LevelSetGraph,
}

/// Builds the chart of `∂d` seen from `center` at radius `radius`.
///
/// The chart frame is `frame_hint`, or else the frame whose first axis is
/// the inward normal at the Newton projection of `center` onto `∂d`
/// (falling back to the nearest boundary point when that projection leaves
/// the ball).
pub fn local_chart(
    d: &ImplicitDomain,
    center: &[f64],
    radius: f64,
    frame_hint: Option<&Frame>,
    grid_res: usize,
    gamma: f64,
) -> Result<LocalChart, DomainError> {
    d.check_dim(center)?;
    let n = d.dim();
    let anchor = match d.project_to_boundary(center) {
        Ok(p) if linalg::dist(&p, center) < radius => p,
        _ => d.closest_boundary_point(center, radius)?,
    };
    let frame = match frame_hint {
        Some(f) => f.clone(),
        None => Frame::from_first_axis(&d.inward_normal(&anchor))?,
    };
    let exact = LevelSetGraph::new(d.clone(), center.to_vec(), frame.clone(), 16.0 * radius);
    let grid = Grid::new(n - 1, 8.0 * radius, grid_res).map_err(DomainError::InvalidShape)?;
    let nodes: Vec<Result<(f64, Vec<f64>), DomainError>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let x = grid.coords(idx);
            let count = exact.crossings(&x, 8.0 * radius, CROSSING_SAMPLES);
            if count != 1 {
                return Err(DomainError::MultipleCrossings { point: x, count });
            }
            exact.eval(&x)
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut grads = Vec::with_capacity(grid.len() * (n - 1));
    for r in nodes {
        let (v, g) = r?;
        values.push(v);
        grads.extend(g);
    }
    let psi = GridGraph::new(grid, values, grads);
    let reach = 8.0 * radius;
    let theta_measured = psi.sup_abs(reach) + psi.sup_grad(reach) + psi.holder(gamma, reach);
    let orientation = exact.orientation_at(&vec![0.0; n - 1])?;
    Ok(LocalChart {
        frame,
        center: center.to_vec(),
        radius,
        anchor,
        orientation,
        psi,
        gamma,
        theta_measured,
        exact,
    })
}
