//! Quantitative checks: the radius ladder, derivative estimates of graphs,
//! Reifenberg flatness by slab scans, opposition of boundary normals, and a
//! measured `C^{1,γ}` chart norm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{DomainError, GraphFn, ImplicitDomain, LevelSetGraph};
use crate::frames::Frame;
use crate::grid::{Grid, GridGraph};
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("{which} is not on its boundary (level {level:e})")]
    NotOnBoundary { which: String, level: f64 },
    #[error("points are {distance} apart, not within the scale {scale}")]
    TooFar { distance: f64, scale: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One measured quantity against its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub quantity: String,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value ≤ bound`.
    pub fn at_most(quantity: impl Into<String>, value: f64, bound: f64) -> Check {
        Check {
            quantity: quantity.into(),
            value,
            bound,
            margin: bound - value,
            pass: value <= bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderBudget {
    pub n: usize,
    pub gamma: f64,
    pub theta: f64,
    pub tau: f64,
    pub delta: f64,
    pub delta_1: f64,
}

pub const DEFAULT_DELTA_1: f64 = 1.0 / 32.0;
/// Bisection noise allowed on a measured slab width.
pub const SLAB_TOL: f64 = 1e-12;

impl HolderBudget {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |m: String| Err(VerifyError::InvalidBudget(m));
        if self.n < 2 {
            return bad(format!("n = {} < 2", self.n));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} not in (0, 1]", self.gamma));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad(format!("theta = {} not positive", self.theta));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau = {} not in (0, 1]", self.tau));
        }
        if !(self.delta > 0.0 && self.delta <= 0.125) {
            return bad(format!("delta = {} not in (0, 1/8]", self.delta));
        }
        if !(self.delta_1 > 0.0 && self.delta_1 < 1.0 / 16.0) {
            return bad(format!("delta_1 = {} not in (0, 1/16)", self.delta_1));
        }
        Ok(())
    }
}

/// Admissible radii, each the largest value meeting its inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusLadder {
    /// `nθ(16R_*)^γ ≤ 1/4`, capped at 1.
    pub r_star: f64,
    /// `R_1(τ)`: also `18nθR^γ ≤ τ`.
    pub r1: f64,
    /// `R_2(δ)`: below `R_1(2)` and `36nθ(4R_2)^γ ≤ δ`.
    pub r2: f64,
    /// `R_2(δ_1)/10`.
    pub r3: f64,
    /// Radius for opposing graphs, built from `δ_H = min(δ_1, (τ/(8n))^4)`.
    pub r4: f64,
    pub r0: f64,
    pub delta_h: f64,
}

fn root_gamma(x: f64, gamma: f64) -> f64 {
    x.powf(1.0 / gamma)
}

/// `R_1(τ) = min(R_*, (τ/(18nθ))^{1/γ})`.
pub fn r1_of(b: &HolderBudget, tau: f64) -> f64 {
    let nf = b.n as f64;
    r_star_of(b).min(root_gamma(tau / (18.0 * nf * b.theta), b.gamma))
}

pub fn r_star_of(b: &HolderBudget) -> f64 {
    let nf = b.n as f64;
    (root_gamma(1.0 / (4.0 * nf * b.theta), b.gamma) / 16.0).min(1.0)
}

/// `R_2(δ) = min(R_1(2), (δ/(36nθ))^{1/γ}/4)`.
pub fn r2_of(b: &HolderBudget, delta: f64) -> f64 {
    let nf = b.n as f64;
    r1_of(b, 2.0).min(root_gamma(delta / (36.0 * nf * b.theta), b.gamma) / 4.0)
}

pub fn radius_ladder(b: &HolderBudget) -> RadiusLadder {
    let nf = b.n as f64;
    let r_star = r_star_of(b);
    let r1 = r1_of(b, b.tau);
    let r2 = r2_of(b, b.delta);
    let r3 = r2_of(b, b.delta_1) / 10.0;
    let delta_h = b.delta_1.min((b.tau / (8.0 * nf)).powi(4));
    let r4 = r1
        .min(r3)
        .min(r2_of(b, delta_h) / 10.0)
        .min(r1 / 8.0)
        .min(root_gamma(b.tau / (144.0 * nf * nf * b.theta), b.gamma) / 8.0);
    let r0 = [r_star, r1, r2, r3, r4].into_iter().fold(f64::INFINITY, f64::min);
    RadiusLadder { r_star, r1, r2, r3, r4, r0, delta_h }
}

pub fn sup_grad(g: &GridGraph, radius: f64) -> f64 {
    g.sup_grad(radius)
}

pub fn holder_seminorm(g: &GridGraph, gamma: f64, radius: f64) -> f64 {
    g.holder(gamma, radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub r: f64,
    pub worst: f64,
    /// Boundary point attaining `worst`.
    pub at: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReifenbergReport {
    pub delta: f64,
    pub radius: f64,
    pub boundary_points: usize,
    pub scales: Vec<ScaleReport>,
    pub worst: f64,
    pub pass: bool,
}

/// Lateral offsets of the scan lines through `Q_r`: a lattice of the disk
/// `B_r'` including its rim.
fn scan_lines(dim: usize, r: f64) -> Vec<Vec<f64>> {
    let res = if dim == 1 { 65 } else { 17 };
    let g = Grid::new(dim, r, res).expect("scan grid");
    let mut out: Vec<Vec<f64>> = g.nodes_within(r).into_iter().map(|i| g.coords(i)).collect();
    if dim == 2 {
        for k in 0..32 {
            let a = std::f64::consts::TAU * k as f64 / 32.0;
            out.push(vec![r * a.cos(), r * a.sin()]);
        }
    }
    out
}

/// Slab width of `∂d` at boundary point `y` and scale `r` in the inward
/// normal frame: the largest `|x¹ − y¹|/r` over boundary crossings of the
/// scan lines, or 1 when a line's top is exterior or its bottom interior.
pub fn slab_width(d: &ImplicitDomain, y: &[f64], r: f64) -> f64 {
    let n = d.dim();
    let frame = match Frame::from_first_axis(&d.inward_normal(y)) {
        Ok(f) => f,
        Err(_) => return 1.0,
    };
    let steps = 128;
    let mut worst: f64 = 0.0;
    for z in scan_lines(n - 1, r) {
        let mut q = vec![0.0];
        q.extend_from_slice(&z);
        let base = linalg::add(y, &frame.from_frame(&q));
        let axis = frame.axis(0);
        let mut buf = base.clone();
        let mut at = |t: f64| {
            for ((b, p), a) in buf.iter_mut().zip(&base).zip(axis) {
                *b = p + t * a;
            }
            d.level(&buf)
        };
        if at(r) >= 0.0 || at(-r) <= 0.0 {
            return 1.0;
        }
        let mut prev_t = -r;
        let mut prev = at(-r);
        for k in 1..=steps {
            let t = -r + 2.0 * r * k as f64 / steps as f64;
            let v = at(t);
            if (v > 0.0) != (prev > 0.0) {
                let (mut lo, mut hi) = (prev_t, t);
                let lo_pos = prev > 0.0;
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if (at(mid) > 0.0) == lo_pos {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                worst = worst.max((0.5 * (lo + hi)).abs() / r);
            }
            prev = v;
            prev_t = t;
        }
    }
    worst
}

/// Samples `∂d` (restricted to `region` when given) and measures the slab
/// width at scales `R, R/2, …, R/2^{scales−1}`.
pub fn reifenberg_check(
    d: &ImplicitDomain,
    delta: f64,
    radius: f64,
    boundary_samples: usize,
    scales: usize,
    region: Option<(&[f64], f64)>,
) -> ReifenbergReport {
    let points = boundary_points(d, boundary_samples, region);
    let scale_reports: Vec<ScaleReport> = (0..scales.max(1))
        .map(|k| {
            let r = radius / 2f64.powi(k as i32);
            let (worst, at) = points
                .par_iter()
                .map(|y| (slab_width(d, y, r), y.clone()))
                .reduce(|| (0.0, Vec::new()), |a, b| if b.0 > a.0 { b } else { a });
            ScaleReport { r, worst, at }
        })
        .collect();
    let worst = scale_reports.iter().map(|s| s.worst).fold(0.0, f64::max);
    ReifenbergReport {
        delta,
        radius,
        boundary_points: points.len(),
        scales: scale_reports,
        worst,
        pass: !points.is_empty() && worst <= delta + SLAB_TOL,
    }
}

fn boundary_points(d: &ImplicitDomain, count: usize, region: Option<(&[f64], f64)>) -> Vec<Vec<f64>> {
    match region {
        Some((c, r)) => d.boundary_samples_in(c, r, count),
        None => {
            let pts = d.boundary_samples(count);
            if pts.is_empty() {
                d.boundary_samples_in(&vec![0.0; d.dim()], 1.0, count)
            } else {
                pts
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OppositionReport {
    pub normal_p: Vec<f64>,
    pub normal_q: Vec<f64>,
    pub distance: f64,
    pub scale: f64,
    pub delta: f64,
    pub check: Check,
}

/// Compares the outward normals of two disjoint domains at nearby boundary
/// points against `δ^{1/4}/2`.
pub fn normal_opposition_check(
    da: &ImplicitDomain,
    db: &ImplicitDomain,
    p: &[f64],
    q: &[f64],
    r: f64,
    delta: f64,
    band: f64,
) -> Result<OppositionReport, VerifyError> {
    for (which, d, x) in [("P", da, p), ("Q", db, q)] {
        let level = d.boundary_distance(x);
        if !(level.abs() <= band) {
            return Err(VerifyError::NotOnBoundary { which: which.into(), level });
        }
    }
    let distance = linalg::dist(p, q);
    if !(distance < r) {
        return Err(VerifyError::TooFar { distance, scale: r });
    }
    let outward = |d: &ImplicitDomain, x: &[f64]| {
        let g = d.grad(x);
        linalg::scale(&g, 1.0 / linalg::norm(&g))
    };
    let normal_p = outward(da, p);
    let normal_q = outward(db, q);
    let sum = linalg::norm(&linalg::add(&normal_p, &normal_q));
    Ok(OppositionReport {
        normal_p,
        normal_q,
        distance,
        scale: r,
        delta,
        check: Check::at_most("|n_P + n_Q|", sum, delta.powf(0.25) / 2.0),
    })
}

/// Largest `sup|ψ| + sup|Dψ| + [Dψ]_γ` over boundary charts of radius
/// `scale` centered at sampled boundary points, each chart taken in the
/// inward normal frame of its center.
pub fn measure_theta(
    d: &ImplicitDomain,
    scale: f64,
    gamma: f64,
    samples: usize,
    grid_res: usize,
    region: Option<(&[f64], f64)>,
) -> Result<f64, VerifyError> {
    let points = boundary_points(d, samples, region);
    let n = d.dim();
    let norms: Vec<Result<f64, VerifyError>> = points
        .par_iter()
        .map(|y| {
            let frame = Frame::from_first_axis(&d.inward_normal(y)).map_err(DomainError::from)?;
            let chart = LevelSetGraph::new(d.clone(), y.clone(), frame, 2.0 * scale);
            let grid = Grid::new(n - 1, scale, grid_res).map_err(DomainError::InvalidShape)?;
            let g = GridGraph::sample(grid, &chart as &dyn GraphFn)?;
            Ok(g.sup_abs(scale) + g.sup_grad(scale) + g.holder(gamma, scale))
        })
        .collect();
    let mut worst: f64 = 0.0;
    for v in norms {
        worst = worst.max(v?);
    }
    Ok(worst)
}
