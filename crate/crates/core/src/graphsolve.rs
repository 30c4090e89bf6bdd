//! Re-expressing a boundary graph in a rotated frame over the whole disk
//! `B_R'`, flattening charts at the nearest boundary point, and resolving
//! which side of a graph a set occupies.

use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;

use crate::domains::{self, DomainError, GraphFn, ImplicitDomain, LevelSetGraph, Orientation, PointClass};
use crate::frames::{Frame, FrameError};
use crate::grid::{Grid, GridGraph};
use crate::linalg;
use crate::rootfind::{self, RootError};

/// Required `|∂_t g|` along every solved column.
pub const MARGIN_FLOOR: f64 = 0.25;
/// The margin is pre-checked on this multiple of `B_R'`.
pub const MARGIN_GUARD: f64 = 1.25;
/// Residual tolerance for the graph equation.
pub const GRAPH_RESIDUAL: f64 = 1e-12;
/// Absolute slack on measured-vs-bound comparisons of derivative estimates.
pub const ESTIMATE_SLACK: f64 = 1e-9;
const MONOTONE_SAMPLES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("axis-solvability margin {margin:e} at {point:?} (need |margin| >= {floor} with one sign)")]
    MarginViolation { point: Vec<f64>, margin: f64, floor: f64 },
    #[error("graph leaves B_8R over {point:?}")]
    EscapeFromBall { point: Vec<f64> },
    #[error("column over {point:?} is not monotone")]
    NotMonotone { point: Vec<f64> },
    #[error("Newton stalled over {point:?}: {source}")]
    NewtonStall { point: Vec<f64>, source: RootError },
    #[error("graph residual {residual:e} over {point:?} exceeds {GRAPH_RESIDUAL:e}")]
    ResidualTooLarge { point: Vec<f64>, residual: f64 },
    #[error("smallness violated: {what} = {value:e} > {bound:e}")]
    SmallnessViolation { what: String, value: f64, bound: f64 },
    #[error("precondition violated: {inequality} ({value:e} vs {bound:e})")]
    PreconditionViolation { inequality: String, value: f64, bound: f64 },
    #[error("postcondition violated: {what} ({value:e} vs {bound:e})")]
    PostconditionViolation { what: String, value: f64, bound: f64 },
    #[error("orientation probes disagree: {probes:?}")]
    AmbiguousOrientation { probes: Vec<(f64, PointClass, PointClass)> },
    #[error("grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// A graph `x¹ = ψ(x')` in `frame`, bounding a set on the given side.
#[derive(Clone, Copy)]
pub struct GraphSource<'a> {
    pub graph: &'a dyn GraphFn,
    pub frame: &'a Frame,
    pub orientation: Orientation,
}

/// Re-express `source` as a graph over `B_R'` in `target`. Both frames
/// share the ambient origin `origin`.
pub struct GraphProblem<'a> {
    pub source: GraphSource<'a>,
    pub target: Frame,
    pub origin: Vec<f64>,
    pub radius: f64,
    pub gamma: f64,
    pub margin_floor: f64,
}

impl<'a> GraphProblem<'a> {
    pub fn new(source: GraphSource<'a>, target: Frame, origin: Vec<f64>, radius: f64, gamma: f64) -> Self {
        GraphProblem { source, target, origin, radius, gamma, margin_floor: MARGIN_FLOOR }
    }
}

/// A graph over `B_R'` in `frame`, stored on `[−R, R]^{n−1}`.
#[derive(Debug, Clone)]
pub struct SolvedGraph {
    pub frame: Frame,
    pub origin: Vec<f64>,
    pub radius: f64,
    pub gamma: f64,
    pub graph: GridGraph,
    pub orientation: Orientation,
    /// `max |Dφ|` over nodes in `B_R'`.
    pub sup_grad: f64,
    /// Measured `[Dφ]_{C^γ}` over nodes in `B_R'`.
    pub holder: f64,
    pub max_residual: f64,
    /// Smallest `|∂_t g|` met at a solved node.
    pub margin_min: f64,
    /// Every `(φ(y'), y')` lies in `B_{8R}`.
    pub contained: bool,
}

impl SolvedGraph {
    pub fn value_at(&self, y: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.graph.interpolate(y)
    }

    pub fn value_at_center(&self) -> f64 {
        self.graph.value_at_center()
    }

    pub fn grad_at_center(&self) -> &[f64] {
        self.graph.grad_at_center()
    }

    pub fn to_ambient(&self, y: &[f64]) -> Vec<f64> {
        linalg::add(&self.origin, &self.frame.from_frame(y))
    }

    pub fn to_local(&self, p: &[f64]) -> Vec<f64> {
        self.frame.to_frame(&linalg::sub(p, &self.origin))
    }

    /// Ambient point on the graph over node `idx`.
    pub fn node_point(&self, idx: usize) -> Vec<f64> {
        let mut y = vec![self.graph.values()[idx]];
        y.extend(self.graph.grid().coords(idx));
        self.to_ambient(&y)
    }
}

/// `m_{ij} = V_i · O_j`: maps target coordinates `y` to source coordinates
/// `x = M y`.
fn change_of_frame(source: &Frame, target: &Frame) -> Result<Frame, FrameError> {
    Frame::relative(target, source)
}

fn apply(m: &Frame, y: &[f64]) -> Vec<f64> {
    m.to_frame(y)
}

/// `∂_t g` where `g(t) = x¹ − ψ(x')`, `x = M(t, y')`.
fn margin(m: &Frame, dpsi: &[f64]) -> f64 {
    let mut s = m.entry(0, 0);
    for (i, d) in dpsi.iter().enumerate() {
        s -= m.entry(i + 1, 0) * d;
    }
    s
}

/// Sample points of the lateral disk `B_{scale}'` used for the margin pre-check.
fn guard_points(dim: usize, scale: f64, res: usize) -> Vec<Vec<f64>> {
    let k = if dim == 1 { 4 * res + 1 } else { res };
    let k = if k % 2 == 0 { k + 1 } else { k };
    match Grid::new(dim, scale, k) {
        Ok(g) => g.nodes_within(scale).into_iter().map(|i| g.coords(i)).collect(),
        Err(_) => vec![vec![0.0; dim]],
    }
}

/// Solves the graph equation `(φ(y'), y')·O_1 − ψ(((φ(y'), y')Oᵀ)') = 0`
/// column by column, spiraling out from `0'` and seeding each column with
/// its solved inward neighbor.
pub fn solve_graph(gp: &GraphProblem, grid_res: usize) -> Result<SolvedGraph, GraphError> {
    let n = gp.target.dim();
    if gp.source.frame.dim() != n || gp.source.graph.arg_dim() + 1 != n || gp.origin.len() != n {
        return Err(GraphError::Frame(FrameError::DimensionMismatch(gp.source.frame.dim(), n)));
    }
    let r = gp.radius;
    let m = change_of_frame(gp.source.frame, &gp.target)?;
    let psi = gp.source.graph;

    // Margin pre-check on the guard disk of the source hyperplane.
    let pre: Vec<Result<(Vec<f64>, f64), DomainError>> = guard_points(n - 1, MARGIN_GUARD * r, grid_res)
        .into_par_iter()
        .map(|x| psi.eval(&x).map(|(_, d)| (x, margin(&m, &d))))
        .collect();
    let mut sign = 0.0;
    for item in pre {
        let (x, mg) = item?;
        if sign == 0.0 {
            sign = mg.signum();
        }
        if !(mg.abs() >= gp.margin_floor) || mg.signum() != sign {
            return Err(GraphError::MarginViolation { point: x, margin: mg, floor: gp.margin_floor });
        }
    }

    let grid = Grid::new(n - 1, r, grid_res).map_err(GraphError::Grid)?;
    let failure: Mutex<Option<DomainError>> = Mutex::new(None);
    let column = |t: f64, y: &[f64]| -> (f64, f64, Vec<f64>) {
        let mut q = vec![t];
        q.extend_from_slice(y);
        let x = apply(&m, &q);
        match psi.eval(&x[1..]) {
            Ok((v, d)) => (x[0] - v, margin(&m, &d), d),
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                (f64::NAN, f64::NAN, Vec::new())
            }
        }
    };
    let take_failure = || failure.lock().unwrap().take();

    let mut values = vec![0.0; grid.len()];
    let mut grads = vec![0.0; grid.len() * (n - 1)];
    let mut max_residual: f64 = 0.0;
    let mut margin_min = f64::INFINITY;
    let mut contained = true;
    for ring in grid.rings() {
        let solved: Vec<Result<(usize, f64, Vec<f64>, f64, f64), GraphError>> = ring
            .par_iter()
            .map(|&idx| {
                let y = grid.coords(idx);
                let seed = if idx == grid.center_index() { 0.0 } else { values[grid.inward_neighbor(idx)] };
                let root = rootfind::newton_bracketed(
                    |t| {
                        let (g, dg, _) = column(t, &y);
                        (g, dg)
                    },
                    -8.0 * r,
                    8.0 * r,
                    Some(seed),
                    GRAPH_RESIDUAL * 1e-2,
                );
                if let Some(e) = take_failure() {
                    return Err(e.into());
                }
                let root = match root {
                    Ok(root) => root,
                    Err(RootError::NoSignChange { .. }) => return Err(GraphError::EscapeFromBall { point: y }),
                    Err(source) => return Err(GraphError::NewtonStall { point: y, source }),
                };
                let (g, dg, dpsi) = column(root.t, &y);
                if let Some(e) = take_failure() {
                    return Err(e.into());
                }
                if !(g.abs() <= GRAPH_RESIDUAL) {
                    return Err(GraphError::ResidualTooLarge { point: y, residual: g.abs() });
                }
                if !(dg.abs() >= gp.margin_floor) || dg.signum() != sign {
                    return Err(GraphError::MarginViolation { point: y, margin: dg, floor: gp.margin_floor });
                }
                // Implicit differentiation of g(φ(y'), y') = 0.
                let dphi: Vec<f64> = (1..n)
                    .map(|k| {
                        let mut dk = m.entry(0, k);
                        for (i, d) in dpsi.iter().enumerate() {
                            dk -= d * m.entry(i + 1, k);
                        }
                        -dk / dg
                    })
                    .collect();
                // Strict monotonicity of the column on the bracket.
                let mut prev = column(-8.0 * r, &y).0;
                for j in 1..=MONOTONE_SAMPLES {
                    let t = -8.0 * r + 16.0 * r * j as f64 / MONOTONE_SAMPLES as f64;
                    let v = column(t, &y).0;
                    if !((v - prev) * sign > 0.0) {
                        if let Some(e) = take_failure() {
                            return Err(e.into());
                        }
                        return Err(GraphError::NotMonotone { point: y });
                    }
                    prev = v;
                }
                Ok((idx, root.t, dphi, g.abs(), dg.abs()))
            })
            .collect();
        for s in solved {
            let (idx, t, dphi, res, dg) = s?;
            values[idx] = t;
            grads[idx * (n - 1)..(idx + 1) * (n - 1)].copy_from_slice(&dphi);
            max_residual = max_residual.max(res);
            margin_min = margin_min.min(dg);
            let y = grid.coords(idx);
            let norm2 = t * t + y.iter().map(|v| v * v).sum::<f64>();
            contained &= norm2.sqrt() < 8.0 * r;
        }
    }
    if !contained {
        let worst = (0..grid.len())
            .max_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()))
            .unwrap_or(0);
        return Err(GraphError::EscapeFromBall { point: grid.coords(worst) });
    }
    let graph = GridGraph::new(grid, values, grads);
    let orientation = if sign > 0.0 { gp.source.orientation } else { gp.source.orientation.flipped() };
    Ok(SolvedGraph {
        frame: gp.target.clone(),
        origin: gp.origin.clone(),
        radius: r,
        gamma: gp.gamma,
        sup_grad: graph.sup_grad(r),
        holder: graph.holder(gp.gamma, r),
        graph,
        orientation,
        max_residual,
        margin_min,
        contained,
    })
}

/// Options for [`flatten_graph`].
#[derive(Debug, Clone, Copy)]
pub struct FlattenOptions {
    pub gamma: f64,
    /// Declared `θ`, checked against `nθ(16R)^γ ≤ 1/4`.
    pub theta: Option<f64>,
    /// When false the smallness conditions are skipped (out-of-regime runs).
    pub enforce_smallness: bool,
}

/// The boundary of a domain flattened at the point nearest the center.
#[derive(Debug, Clone)]
pub struct FlatGraph {
    pub frame: Frame,
    pub solved: SolvedGraph,
    /// Nearest boundary point to the center (ambient coordinates).
    pub nearest: Vec<f64>,
    /// Frame of the intermediate chart that the solve started from.
    pub chart_frame: Frame,
    /// `sup|Dψ|` and `[Dψ]_γ` of the intermediate chart on `B_{8R}'`.
    pub chart_sup_grad: f64,
    pub chart_holder: f64,
    /// Exact evaluator of the same boundary in `frame`.
    pub exact: LevelSetGraph,
}

/// Rotates the chart of `∂d` at `center` so that the nearest boundary point
/// sits over `0'` with a horizontal tangent, then re-expresses the boundary
/// over `B_R'` in that frame.
pub fn flatten_graph(
    d: &ImplicitDomain,
    center: &[f64],
    radius: f64,
    grid_res: usize,
    opts: FlattenOptions,
) -> Result<FlatGraph, GraphError> {
    let n = d.dim();
    let nf = n as f64;
    if let (Some(theta), true) = (opts.theta, opts.enforce_smallness) {
        let v = nf * theta * (16.0 * radius).powf(opts.gamma);
        if v > 0.25 {
            return Err(GraphError::SmallnessViolation { what: "n θ (16R)^γ".into(), value: v, bound: 0.25 });
        }
    }
    let nearest = d.closest_boundary_point(center, radius)?;
    let chart = domains::local_chart(d, center, radius, None, grid_res, opts.gamma)?;
    let chart_sup_grad = chart.psi.sup_grad(8.0 * radius);
    let chart_holder = chart.psi.holder(opts.gamma, 8.0 * radius);
    let measured = nf * chart_holder * (16.0 * radius).powf(opts.gamma);
    if opts.enforce_smallness && measured > 0.25 {
        return Err(GraphError::SmallnessViolation { what: "n [Dψ] (16R)^γ".into(), value: measured, bound: 0.25 });
    }
    if chart.orientation != Orientation::UpperSet {
        return Err(GraphError::AmbiguousOrientation { probes: Vec::new() });
    }

    // Upward unit normal (1, −Dψ)/|·| of the chart graph at the nearest point.
    let q = chart.frame.to_frame(&linalg::sub(&nearest, center));
    let (_, dpsi) = chart.exact.eval(&q[1..])?;
    let mut v_local = vec![1.0];
    v_local.extend(dpsi.iter().map(|x| -x));
    let v_local = linalg::scale(&v_local, 1.0 / linalg::norm(&v_local));
    let v1 = chart.frame.from_frame(&v_local);
    let v1 = linalg::scale(&v1, 1.0 / linalg::norm(&v1));
    let frame = Frame::from_first_axis(&v1)?;

    let source = GraphSource { graph: &chart.exact, frame: &chart.frame, orientation: chart.orientation };
    let problem = GraphProblem::new(source, frame.clone(), center.to_vec(), radius, opts.gamma);
    let solved = solve_graph(&problem, grid_res)?;

    let dphi0 = linalg::norm(solved.grad_at_center());
    if dphi0 > 1e-8 {
        return Err(GraphError::PostconditionViolation { what: "|Dφ(0')|".into(), value: dphi0, bound: 1e-8 });
    }
    let phi0 = solved.value_at_center();
    if !(phi0.abs() < radius) {
        return Err(GraphError::PostconditionViolation { what: "|φ(0')| < R".into(), value: phi0.abs(), bound: radius });
    }
    if d.level(center).abs() <= domains::ROOT_RESIDUAL && phi0.abs() > 1e-10 {
        return Err(GraphError::PostconditionViolation { what: "φ(0') = 0 on the boundary".into(), value: phi0.abs(), bound: 1e-10 });
    }
    let grad_bound = 2.0 * nf.sqrt();
    if solved.sup_grad > grad_bound {
        return Err(GraphError::PostconditionViolation { what: "sup|Dφ| <= 2√n".into(), value: solved.sup_grad, bound: grad_bound });
    }
    let tilt = dpsi.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let holder_bound = 18.0 * nf * chart_holder / tilt + ESTIMATE_SLACK;
    if solved.holder > holder_bound {
        return Err(GraphError::PostconditionViolation { what: "[Dφ] <= 18n[Dψ]/|(−1,Dψ)|∞".into(), value: solved.holder, bound: holder_bound });
    }
    let exact = LevelSetGraph::new(d.clone(), center.to_vec(), frame.clone(), 16.0 * radius);
    Ok(FlatGraph {
        frame,
        solved,
        nearest,
        chart_frame: chart.frame,
        chart_sup_grad,
        chart_holder,
        exact,
    })
}

/// Re-expresses an upper-set graph whose first axis nearly opposes the
/// target's first axis; the result bounds the same set from above.
///
/// Requires `|V_1 + e_1| ≤ τ/(8n)`, `|ψ(0')| < R`, `Dψ(0') = 0'` and
/// `sup_{B_{8R}'} |Dψ| ≤ τ/(8n)`. Guarantees `sup|Dφ| ≤ τ/√n` and
/// `[Dφ]_γ ≤ 16 [Dψ]_γ`.
pub fn opposite_graph(
    source: GraphSource,
    origin: &[f64],
    target: &Frame,
    radius: f64,
    tau: f64,
    grid_res: usize,
    gamma: f64,
) -> Result<SolvedGraph, GraphError> {
    let n = target.dim();
    let nf = n as f64;
    let small = tau / (8.0 * nf);
    let pre = |inequality: &str, value: f64, bound: f64| GraphError::PreconditionViolation { inequality: inequality.into(), value, bound };
    if source.orientation != Orientation::UpperSet {
        return Err(pre("source bounds an upper set", 0.0, 0.0));
    }
    let mut v1 = target.to_frame(source.frame.axis(0));
    v1[0] += 1.0;
    let tilt = linalg::norm(&v1);
    if tilt > small {
        return Err(pre("|V_1 + e_1| <= τ/(8n)", tilt, small));
    }
    let (psi0, dpsi0) = source.graph.eval(&vec![0.0; n - 1])?;
    if !(psi0.abs() < radius) {
        return Err(pre("|ψ(0')| < R", psi0.abs(), radius));
    }
    let d0 = linalg::norm(&dpsi0);
    if d0 > 1e-8 {
        return Err(pre("Dψ(0') = 0'", d0, 1e-8));
    }
    let wide = Grid::new(n - 1, 8.0 * radius, grid_res).map_err(GraphError::Grid)?;
    let sampled = GridGraph::sample(wide, source.graph)?;
    let sup = sampled.sup_grad(8.0 * radius);
    if sup > small {
        return Err(pre("sup|Dψ| on B_8R' <= τ/(8n)", sup, small));
    }
    let source_holder = sampled.holder(gamma, 8.0 * radius);

    let problem = GraphProblem::new(source, target.clone(), origin.to_vec(), radius, gamma);
    let solved = solve_graph(&problem, grid_res)?;
    if solved.orientation != Orientation::LowerSet {
        return Err(GraphError::PostconditionViolation { what: "result bounds a lower set".into(), value: 0.0, bound: 0.0 });
    }
    let grad_bound = tau / nf.sqrt();
    if solved.sup_grad > grad_bound + ESTIMATE_SLACK {
        return Err(GraphError::PostconditionViolation { what: "sup|Dφ| <= τ/√n".into(), value: solved.sup_grad, bound: grad_bound });
    }
    let holder_bound = 16.0 * source_holder + ESTIMATE_SLACK;
    if solved.holder > holder_bound {
        return Err(GraphError::PostconditionViolation { what: "[Dφ] <= 16[Dψ]".into(), value: solved.holder, bound: holder_bound });
    }
    Ok(solved)
}

/// Decides from the level oracle which side of `g` the domain occupies, by
/// probing `(φ(0') ± ε, 0')` for `ε ∈ {1e−3, 1e−4, 1e−5}·R`.
pub fn resolve_orientation(d: &ImplicitDomain, g: &SolvedGraph) -> Result<Orientation, GraphError> {
    let n = g.frame.dim();
    let phi0 = g.value_at_center();
    let mut found = None;
    let mut probes = Vec::new();
    let mut consistent = true;
    for scale in [1e-3, 1e-4, 1e-5] {
        let eps = scale * g.radius;
        let mut up = vec![0.0; n];
        up[0] = phi0 + eps;
        let mut down = vec![0.0; n];
        down[0] = phi0 - eps;
        let cu = d.classify(&g.to_ambient(&up), 0.0);
        let cd = d.classify(&g.to_ambient(&down), 0.0);
        probes.push((eps, cu, cd));
        let o = match (cu, cd) {
            (PointClass::Interior, PointClass::Exterior) => Some(Orientation::UpperSet),
            (PointClass::Exterior, PointClass::Interior) => Some(Orientation::LowerSet),
            _ => None,
        };
        match (o, found) {
            (None, _) => consistent = false,
            (Some(o), None) => found = Some(o),
            (Some(o), Some(f)) if o != f => consistent = false,
            _ => {}
        }
    }
    match found {
        Some(o) if consistent => Ok(o),
        _ => Err(GraphError::AmbiguousOrientation { probes }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::FnGraph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_graph(dim: usize) -> FnGraph<impl Fn(&[f64]) -> (f64, Vec<f64>) + Sync> {
        FnGraph::new(dim, move |_: &[f64]| (0.0, vec![0.0; dim]))
    }

    #[test]
    fn zero_graph_identity() {
        let f = Frame::identity(2);
        let psi = zero_graph(1);
        let src = GraphSource { graph: &psi, frame: &f, orientation: Orientation::UpperSet };
        let g = solve_graph(&GraphProblem::new(src, f.clone(), vec![0.0, 0.0], 0.3, 1.0), 33).unwrap();
        assert!(g.graph.values().iter().all(|v| *v == 0.0));
        assert_eq!(g.sup_grad, 0.0);
        assert_eq!(g.orientation, Orientation::UpperSet);
    }

    #[test]
    fn sphere_cap_identity_reexpression() {
        let cap = FnGraph::new(1, |x: &[f64]| {
            let s = (1.0 - x[0] * x[0]).sqrt();
            (1.0 - s, vec![x[0] / s])
        });
        let f = Frame::identity(2);
        let src = GraphSource { graph: &cap, frame: &f, orientation: Orientation::UpperSet };
        let g = solve_graph(&GraphProblem::new(src, f.clone(), vec![0.0, 0.0], 0.2, 1.0), 129).unwrap();
        let mut worst: f64 = 0.0;
        for idx in 0..g.graph.grid().len() {
            let y = g.graph.grid().coords(idx)[0];
            worst = worst.max((g.graph.values()[idx] - (1.0 - (1.0 - y * y).sqrt())).abs());
        }
        assert!(worst <= 1e-10, "{worst}");
        assert!(g.max_residual <= 1e-12);
        assert!((g.sup_grad - 0.2 / 0.96f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn plane_in_its_normal_frame_is_zero() {
        for dim in [1usize, 2] {
            let a: Vec<f64> = if dim == 1 { vec![0.3] } else { vec![0.18, -0.24] };
            let a2 = a.clone();
            let plane = FnGraph::new(dim, move |x: &[f64]| (linalg::dot(&a2, x), a2.clone()));
            let src_frame = Frame::identity(dim + 1);
            let mut nrm = vec![1.0];
            nrm.extend(a.iter().map(|v| -v));
            let nrm = linalg::scale(&nrm, 1.0 / linalg::norm(&nrm));
            let target = Frame::from_first_axis(&nrm).unwrap();
            let src = GraphSource { graph: &plane, frame: &src_frame, orientation: Orientation::UpperSet };
            let g = solve_graph(&GraphProblem::new(src, target, vec![0.0; dim + 1], 0.5, 1.0), if dim == 1 { 65 } else { 17 }).unwrap();
            for idx in 0..g.graph.grid().len() {
                assert!(g.graph.values()[idx].abs() <= 1e-10);
                assert!(linalg::norm(g.graph.node_grad(idx)) <= 1e-10);
            }
        }
    }

    #[test]
    fn tilted_line_opposite() {
        let eps: f64 = 0.01;
        let v = Frame::from_first_axis(&[-eps.cos(), -eps.sin()]).unwrap();
        let psi = zero_graph(1);
        let src = GraphSource { graph: &psi, frame: &v, orientation: Orientation::UpperSet };
        let g = opposite_graph(src, &[0.0, 0.0], &Frame::identity(2), 0.1, 1.0, 65, 1.0).unwrap();
        assert_eq!(g.orientation, Orientation::LowerSet);
        for idx in 0..g.graph.grid().len() {
            let y = g.graph.grid().coords(idx)[0];
            assert!((g.graph.values()[idx] + eps.tan() * y).abs() <= 1e-10);
        }
    }

    #[test]
    fn exact_opposition() {
        let v = Frame::from_first_axis(&[-1.0, 0.0, 0.0]).unwrap();
        let psi = zero_graph(2);
        let src = GraphSource { graph: &psi, frame: &v, orientation: Orientation::UpperSet };
        let g = opposite_graph(src, &[0.0; 3], &Frame::identity(3), 0.1, 1.0, 9, 1.0).unwrap();
        assert!(g.graph.values().iter().all(|x| x.abs() < 1e-15));
        assert_eq!(g.orientation, Orientation::LowerSet);
    }

    #[test]
    fn opposite_preconditions_are_named() {
        let v = Frame::identity(2);
        let psi = zero_graph(1);
        let src = GraphSource { graph: &psi, frame: &v, orientation: Orientation::UpperSet };
        match opposite_graph(src, &[0.0, 0.0], &Frame::identity(2), 0.1, 1.0, 17, 1.0) {
            Err(GraphError::PreconditionViolation { inequality, .. }) => assert!(inequality.contains("V_1 + e_1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn steep_rotation_is_a_margin_violation() {
        let psi = zero_graph(1);
        let f = Frame::identity(2);
        let target = Frame::from_first_axis(&[0.1, (1.0f64 - 0.01).sqrt()]).unwrap();
        let src = GraphSource { graph: &psi, frame: &f, orientation: Orientation::UpperSet };
        let e = solve_graph(&GraphProblem::new(src, target, vec![0.0, 0.0], 0.1, 1.0), 17).unwrap_err();
        assert!(matches!(e, GraphError::MarginViolation { .. }));
    }

    #[test]
    fn flatten_half_space() {
        let h = ImplicitDomain::half_space(&[1.0, 0.0], 0.0);
        let fg = flatten_graph(&h, &[0.0, 0.0], 0.1, 33, FlattenOptions { gamma: 1.0, theta: None, enforce_smallness: false }).unwrap();
        assert_eq!(fg.frame, Frame::identity(2));
        assert!(fg.solved.graph.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn flatten_circle_through_origin() {
        let b = ImplicitDomain::ball(&[1.0, 0.0], 1.0);
        let r = 0.05;
        let fg = flatten_graph(&b, &[0.0, 0.0], r, 129, FlattenOptions { gamma: 1.0, theta: Some(1.0), enforce_smallness: false }).unwrap();
        let s = &fg.solved;
        assert!(s.value_at_center().abs() <= 1e-10);
        assert!(linalg::norm(s.grad_at_center()) <= 1e-8);
        for idx in 0..s.graph.grid().len() {
            let y = s.graph.grid().coords(idx)[0];
            assert!((s.graph.values()[idx] - (1.0 - (1.0 - y * y).sqrt())).abs() <= 1e-9);
        }
        assert_eq!(resolve_orientation(&b, s).unwrap(), Orientation::UpperSet);
    }

    #[test]
    fn flatten_off_boundary_center() {
        // Center at distance 0.03 inside the unit ball, away from the axes.
        let b = ImplicitDomain::ball(&[0.0, 0.0], 1.0);
        let a: f64 = 0.7;
        let c = [0.97 * a.cos(), 0.97 * a.sin()];
        let r = 0.05;
        let fg = flatten_graph(&b, &c, r, 129, FlattenOptions { gamma: 1.0, theta: None, enforce_smallness: false }).unwrap();
        let s = &fg.solved;
        assert!((s.value_at_center() + 0.03).abs() < 1e-12, "{}", s.value_at_center());
        assert!(linalg::norm(s.grad_at_center()) <= 1e-8);
        // Radial frame: first axis points to the center of the ball.
        assert!((fg.frame.axis(0)[0] + a.cos()).abs() < 1e-12);
        // Closed form: the circle seen from distance 0.03 inside.
        for idx in 0..s.graph.grid().len() {
            let y = s.graph.grid().coords(idx)[0];
            let exact = 0.97 - (1.0 - y * y).sqrt();
            assert!((s.graph.values()[idx] - exact).abs() <= 1e-10);
        }
    }

    #[test]
    fn flatten_ellipse_needs_rotation() {
        let e = ImplicitDomain::new(domains::Shape::Ellipsoid { center: vec![0.0, 0.0], semi_axes: vec![2.0, 1.0] }).unwrap();
        let c = [1.235, 0.775];
        let fg = flatten_graph(&e, &c, 0.02, 129, FlattenOptions { gamma: 1.0, theta: None, enforce_smallness: false }).unwrap();
        // The intermediate chart was not aligned with the nearest point.
        let turn = linalg::dist(fg.chart_frame.axis(0), fg.frame.axis(0));
        assert!(turn > 1e-7, "{turn}");
        assert!(linalg::norm(fg.solved.grad_at_center()) <= 1e-8);
        let p = fg.solved.node_point(fg.solved.graph.grid().center_index());
        assert!(linalg::dist(&p, &fg.nearest) < 1e-10);
        // Re-expression equivalence on random points of the ball.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 10_000 {
            let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.02..0.02)).collect();
            if linalg::norm(&y) >= 0.02 {
                continue;
            }
            let (phi, _) = fg.solved.value_at(&y[1..]).unwrap();
            if (y[0] - phi).abs() < 1e-8 {
                continue;
            }
            assert_eq!(e.contains(&fg.solved.to_ambient(&y)), y[0] > phi);
            checked += 1;
        }
    }

    #[test]
    fn smallness_is_enforced() {
        let b = ImplicitDomain::ball(&[1.0, 0.0], 1.0);
        let e = flatten_graph(&b, &[0.0, 0.0], 0.05, 33, FlattenOptions { gamma: 1.0, theta: Some(1000.0), enforce_smallness: true }).unwrap_err();
        assert!(matches!(e, GraphError::SmallnessViolation { .. }));
    }

    #[test]
    fn spherical_cap_opposite_sampling() {
        // Complement of a ball seen from outside: inward normal of the
        // complement points away from the ball, close to −e_1 here.
        let ball = ImplicitDomain::ball(&[-1.002, 0.00005], 1.0);
        let outside = ball.complement();
        let c = [0.0, 0.0];
        let r = 0.005;
        let fg = flatten_graph(&ball, &c, r, 129, FlattenOptions { gamma: 1.0, theta: None, enforce_smallness: false }).unwrap();
        assert!(linalg::dist(fg.frame.axis(0), &[-1.0, 0.0]) < 0.01);
        let src = GraphSource { graph: &fg.exact, frame: &fg.frame, orientation: Orientation::UpperSet };
        let g = opposite_graph(src, &c, &Frame::identity(2), r, 1.0, 129, 1.0).unwrap();
        assert_eq!(resolve_orientation(&ball, &g).unwrap(), Orientation::LowerSet);
        assert_eq!(resolve_orientation(&outside, &g).unwrap(), Orientation::UpperSet);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 10_000 {
            let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-r..r)).collect();
            if linalg::norm(&y) >= r {
                continue;
            }
            let (phi, _) = g.value_at(&y[1..]).unwrap();
            if (y[0] - phi).abs() < 1e-8 {
                continue;
            }
            assert_eq!(ball.contains(&y), y[0] < phi);
            checked += 1;
        }
    }

    #[test]
    fn orientation_examples() {
        let f = Frame::identity(2);
        let psi = zero_graph(1);
        let src = GraphSource { graph: &psi, frame: &f, orientation: Orientation::UpperSet };
        let g = solve_graph(&GraphProblem::new(src, f.clone(), vec![0.0, 0.0], 0.1, 1.0), 9).unwrap();
        let h = ImplicitDomain::half_space(&[1.0, 0.0], 0.0);
        assert_eq!(resolve_orientation(&h, &g).unwrap(), Orientation::UpperSet);
        assert_eq!(resolve_orientation(&h.complement(), &g).unwrap(), Orientation::LowerSet);
        let off = ImplicitDomain::half_space(&[0.0, 1.0], 0.0);
        assert!(matches!(resolve_orientation(&off, &g), Err(GraphError::AmbiguousOrientation { .. })));
    }
}
