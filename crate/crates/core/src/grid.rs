//! Regular tensor grids on `[−h, h]^k` (k = 1 or 2) and cubic Hermite
//! graph interpolation from nodal values and gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{DomainError, GraphFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub half_width: f64,
    pub res: usize,
}

impl Grid {
    /// `res` nodes per axis; must be odd so the origin is a node.
    pub fn new(dim: usize, half_width: f64, res: usize) -> Result<Grid, String> {
        if !(1..=2).contains(&dim) {
            return Err(format!("graph grids support 1 or 2 lateral dimensions, got {dim}"));
        }
        if res < 3 || res % 2 == 0 {
            return Err(format!("grid resolution must be odd and at least 3, got {res}"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(format!("grid half-width must be positive, got {half_width}"));
        }
        Ok(Grid { dim, half_width, res })
    }

    pub fn len(&self) -> usize {
        self.res.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.res - 1) as f64
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        let mid = (self.res - 1) / 2;
        (i as f64 - mid as f64) * self.step()
    }

    /// Per-axis indices of a flat node index (last axis fastest).
    pub fn multi(&self, idx: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![idx],
            _ => vec![idx / self.res, idx % self.res],
        }
    }

    pub fn flat(&self, m: &[usize]) -> usize {
        match self.dim {
            1 => m[0],
            _ => m[0] * self.res + m[1],
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi(idx).into_iter().map(|i| self.axis_coord(i)).collect()
    }

    pub fn center_index(&self) -> usize {
        let mid = (self.res - 1) / 2;
        self.flat(&vec![mid; self.dim])
    }

    /// Chebyshev distance of a node from the center node.
    pub fn ring(&self, idx: usize) -> usize {
        let mid = (self.res - 1) / 2;
        self.multi(idx).into_iter().map(|i| i.abs_diff(mid)).max().unwrap_or(0)
    }

    /// Nodes grouped by ring, spiraling out from the center.
    pub fn rings(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); (self.res - 1) / 2 + 1];
        for idx in 0..self.len() {
            out[self.ring(idx)].push(idx);
        }
        out
    }

    /// The neighbor one step closer to the center along every off-center axis.
    pub fn inward_neighbor(&self, idx: usize) -> usize {
        let mid = (self.res - 1) / 2;
        let m: Vec<usize> = self
            .multi(idx)
            .into_iter()
            .map(|i| match i.cmp(&mid) {
                std::cmp::Ordering::Less => i + 1,
                std::cmp::Ordering::Greater => i - 1,
                std::cmp::Ordering::Equal => i,
            })
            .collect();
        self.flat(&m)
    }

    /// Node indices whose coordinates lie in the closed disk of `radius`.
    pub fn nodes_within(&self, radius: f64) -> Vec<usize> {
        let tol = radius * 1e-12;
        (0..self.len())
            .filter(|&i| self.coords(i).iter().map(|x| x * x).sum::<f64>().sqrt() <= radius + tol)
            .collect()
    }

    /// Cell containing `x` and the local coordinates in `[0, 1]`.
    fn locate(&self, x: &[f64]) -> Option<(Vec<usize>, Vec<f64>)> {
        let h = self.step();
        let mut cell = Vec::with_capacity(self.dim);
        let mut local = Vec::with_capacity(self.dim);
        for &xi in x.iter().take(self.dim) {
            let u = (xi + self.half_width) / h;
            let slack = 1e-9;
            if !(u >= -slack && u <= (self.res - 1) as f64 + slack) {
                return None;
            }
            let i = (u.floor().max(0.0) as usize).min(self.res - 2);
            cell.push(i);
            local.push((u - i as f64).clamp(0.0, 1.0));
        }
        Some((cell, local))
    }
}

/// Graph samples on a [`Grid`]: values and gradients at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGraph {
    grid: Grid,
    values: Vec<f64>,
    grads: Vec<f64>,
    cross: Vec<f64>,
}

/// Cubic Hermite basis `(h00, h10, h01, h11)` and derivatives in `s`.
fn hermite(s: f64) -> ([f64; 4], [f64; 4]) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        [2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2],
        [6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s],
    )
}

impl GridGraph {
    pub fn new(grid: Grid, values: Vec<f64>, grads: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len());
        assert_eq!(grads.len(), grid.len() * grid.dim);
        let cross = if grid.dim == 2 { mixed_partials(&grid, &grads) } else { Vec::new() };
        GridGraph { grid, values, grads, cross }
    }

    /// Samples `f` at every node.
    pub fn sample(grid: Grid, f: &dyn GraphFn) -> Result<Self, DomainError> {
        let nodes: Vec<Result<(f64, Vec<f64>), DomainError>> =
            (0..grid.len()).into_par_iter().map(|i| f.eval(&grid.coords(i))).collect();
        let mut values = Vec::with_capacity(grid.len());
        let mut grads = Vec::with_capacity(grid.len() * grid.dim);
        for r in nodes {
            let (v, g) = r?;
            values.push(v);
            grads.extend(g);
        }
        Ok(GridGraph::new(grid, values, grads))
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        let n = grid.len();
        let d = grid.dim;
        GridGraph::new(grid, vec![c; n], vec![0.0; n * d])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn node_grad(&self, idx: usize) -> &[f64] {
        &self.grads[idx * self.grid.dim..(idx + 1) * self.grid.dim]
    }

    pub fn value_at_center(&self) -> f64 {
        self.values[self.grid.center_index()]
    }

    pub fn grad_at_center(&self) -> &[f64] {
        self.node_grad(self.grid.center_index())
    }

    /// Hermite interpolation of the value and gradient at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (cell, s) = self.grid.locate(x)?;
        let h = self.grid.step();
        match self.grid.dim {
            1 => {
                let (b, db) = hermite(s[0]);
                let (i0, i1) = (cell[0], cell[0] + 1);
                let (f0, f1) = (self.values[i0], self.values[i1]);
                let (d0, d1) = (self.grads[i0], self.grads[i1]);
                let v = b[0] * f0 + b[1] * h * d0 + b[2] * f1 + b[3] * h * d1;
                let dv = (db[0] * f0 + db[1] * h * d0 + db[2] * f1 + db[3] * h * d1) / h;
                Some((v, vec![dv]))
            }
            _ => {
                let (bx, dbx) = hermite(s[0]);
                let (by, dby) = hermite(s[1]);
                let mut v = 0.0;
                let mut gx = 0.0;
                let mut gy = 0.0;
                for a in 0..2 {
                    for c in 0..2 {
                        let idx = self.grid.flat(&[cell[0] + a, cell[1] + c]);
                        let f = self.values[idx];
                        let fx = self.grads[2 * idx];
                        let fy = self.grads[2 * idx + 1];
                        let fxy = self.cross[idx];
                        // value basis index 2a, slope basis index 2a+1
                        let (p0, p1, q0, q1) = (bx[2 * a], bx[2 * a + 1], by[2 * c], by[2 * c + 1]);
                        let (dp0, dp1, dq0, dq1) = (dbx[2 * a], dbx[2 * a + 1], dby[2 * c], dby[2 * c + 1]);
                        let coef = [f, h * fx, h * fy, h * h * fxy];
                        v += coef[0] * p0 * q0 + coef[1] * p1 * q0 + coef[2] * p0 * q1 + coef[3] * p1 * q1;
                        gx += coef[0] * dp0 * q0 + coef[1] * dp1 * q0 + coef[2] * dp0 * q1 + coef[3] * dp1 * q1;
                        gy += coef[0] * p0 * dq0 + coef[1] * p1 * dq0 + coef[2] * p0 * dq1 + coef[3] * p1 * dq1;
                    }
                }
                Some((v, vec![gx / h, gy / h]))
            }
        }
    }

    /// `max |φ|` over nodes in the closed disk of `radius`.
    pub fn sup_abs(&self, radius: f64) -> f64 {
        self.grid
            .nodes_within(radius)
            .into_iter()
            .map(|i| self.values[i].abs())
            .fold(0.0, f64::max)
    }

    /// `max |Dφ|` over nodes in the closed disk of `radius`.
    pub fn sup_grad(&self, radius: f64) -> f64 {
        self.grid
            .nodes_within(radius)
            .into_iter()
            .map(|i| norm(self.node_grad(i)))
            .fold(0.0, f64::max)
    }

    /// `max |Dφ(w) − Dφ(z)| / |w − z|^γ` over node pairs in the disk of
    /// `radius` at least two cells apart.
    pub fn holder(&self, gamma: f64, radius: f64) -> f64 {
        let nodes = self.grid.nodes_within(radius);
        let coords: Vec<Vec<f64>> = nodes.iter().map(|&i| self.grid.coords(i)).collect();
        let min_sep = 2.0 * self.grid.step() * (1.0 - 1e-9);
        (0..nodes.len())
            .into_par_iter()
            .map(|a| {
                let ga = self.node_grad(nodes[a]);
                let mut worst: f64 = 0.0;
                for b in a + 1..nodes.len() {
                    let sep = dist(&coords[a], &coords[b]);
                    if sep < min_sep {
                        continue;
                    }
                    let gb = self.node_grad(nodes[b]);
                    let dg = dist(ga, gb);
                    worst = worst.max(dg / sep.powf(gamma));
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

impl GraphFn for GridGraph {
    fn arg_dim(&self) -> usize {
        self.grid.dim
    }

    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>), DomainError> {
        self.interpolate(x).ok_or_else(|| DomainError::OutsideGrid { point: x.to_vec() })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `∂²φ/∂x∂y` at nodes: average of the difference quotients of `φ_x` in
/// `y` and of `φ_y` in `x` (one-sided at the edges).
fn mixed_partials(grid: &Grid, grads: &[f64]) -> Vec<f64> {
    let r = grid.res;
    let h = grid.step();
    let diff = |i: usize, j: usize, axis: usize, comp: usize| -> f64 {
        let at = |a: usize, b: usize| grads[2 * (a * r + b) + comp];
        let (lo, hi, span) = if axis == 0 {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(r - 1);
            (at(lo, j), at(hi, j), (hi - lo) as f64)
        } else {
            let lo = j.saturating_sub(1);
            let hi = (j + 1).min(r - 1);
            (at(i, lo), at(i, hi), (hi - lo) as f64)
        };
        (hi - lo) / (span * h)
    };
    let mut out = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            out[i * r + j] = 0.5 * (diff(i, j, 1, 0) + diff(i, j, 0, 1));
        }
    }
    out
}
