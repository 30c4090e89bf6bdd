//! Layer stacks: one rotated frame in which every interface crossing a
//! small ball is a graph over the lateral disk, ordered bottom to top, with
//! each slab between consecutive graphs belonging to a single component.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composite::{self, Ball, CompositeError, CompositeScene, LayerChain};
use crate::domains::{self, DomainError, ImplicitDomain, Orientation};
use crate::frames::Frame;
use crate::graphsolve::{self, FlattenOptions, GraphError, GraphSource, SolvedGraph, ESTIMATE_SLACK};
use crate::grid::{Grid, GridGraph};
use crate::linalg;
use crate::verify::{radius_ladder, Check};

/// Graphs may touch; a crossing deeper than this is an error.
pub const ORDER_TOL: f64 = 1e-9;
/// Sample points this close (along the first axis) to a graph are skipped.
pub const SANDWICH_BAND: f64 = 1e-8;
pub const ANCHOR_SLOPE_TOL: f64 = 1e-8;
pub const BOUNDARY_VALUE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("radius {radius:e} exceeds the admissible radius {r0:e}")]
    LadderRefusal { radius: f64, r0: f64 },
    #[error("the ball is not inside the container")]
    BallLeavesContainer,
    #[error("center is not on the container boundary (distance {distance:e})")]
    CenterNotOnBoundary { distance: f64 },
    #[error("boundary ball has members on both sides of the anchor")]
    BoundaryChainHasMinusSide,
    #[error("component {0:?} of the center is not in the chain")]
    AnchorNotInChain(String),
    #[error("graphs {lower} and {upper} cross by {depth:e} at {at:?}")]
    StackOrderViolation { lower: i64, upper: i64, at: Vec<f64>, depth: f64 },
    #[error("interface of {member:?} bounds the wrong side: expected {expected:?}, found {found:?}")]
    OrientationMismatch { member: String, expected: Orientation, found: Orientation },
    #[error("estimate failed: {0:?}")]
    EstimateViolation(Vec<Check>),
    #[error("point is within {distance:e} of an interface")]
    OnInterface { point: Vec<f64>, distance: f64 },
    #[error("point is outside the ball")]
    OutsideBall(Vec<f64>),
    #[error("point is outside the composite domain")]
    OutsideComposite(Vec<f64>),
    #[error("no coefficient for component {0:?}")]
    MissingCoefficient(String),
    #[error("stack says {stack:?} but direct membership says {direct:?} at {point:?}")]
    StackMismatch { point: Vec<f64>, stack: Option<String>, direct: Option<String> },
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy)]
pub struct StackOptions {
    pub grid_res: usize,
    /// Proceed past the ladder and estimate checks, recording failures.
    pub force: bool,
}

impl Default for StackOptions {
    fn default() -> Self {
        StackOptions { grid_res: 129, force: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    LowerCap,
    UpperCap,
    Interface,
}

#[derive(Debug, Clone)]
pub struct LayerGraph {
    /// Chain position `d` of `φ_d`.
    pub index: i64,
    pub kind: GraphKind,
    /// Member whose boundary this graph is.
    pub member: Option<usize>,
    pub graph: GridGraph,
    pub sup_grad: f64,
    pub holder: f64,
}

impl LayerGraph {
    fn cap(index: i64, grid: &Grid, value: f64) -> LayerGraph {
        LayerGraph {
            index,
            kind: if value < 0.0 { GraphKind::LowerCap } else { GraphKind::UpperCap },
            member: None,
            graph: GridGraph::constant(grid.clone(), value),
            sup_grad: 0.0,
            holder: 0.0,
        }
    }

    fn interface(index: i64, member: usize, g: &SolvedGraph, radius: f64, gamma: f64) -> LayerGraph {
        LayerGraph {
            index,
            kind: GraphKind::Interface,
            member: Some(member),
            graph: g.graph.clone(),
            sup_grad: g.graph.sup_grad(radius),
            holder: g.graph.holder(gamma, radius),
        }
    }

    pub fn value(&self, y: &[f64]) -> Option<f64> {
        self.graph.interpolate(y).map(|(v, _)| v)
    }
}

#[derive(Debug, Clone)]
pub struct LayerStack {
    pub frame: Frame,
    pub center: Vec<f64>,
    pub radius: f64,
    pub grid: Grid,
    pub gamma: f64,
    /// Chain as used for the stack (after any side swap).
    pub chain: LayerChain,
    /// The chain's plus and minus sides were exchanged to put the anchor on top.
    pub sides_swapped: bool,
    pub boundary: bool,
    /// Position `k` of the graph the frame was flattened at.
    pub anchor: Option<i64>,
    /// Bottom to top.
    pub graphs: Vec<LayerGraph>,
    /// `slots[t]` is the component between `graphs[t-1]` and `graphs[t]`;
    /// the first and last slots lie outside `U ∩ B_R`.
    pub slots: Vec<Option<usize>>,
    pub checks: Vec<Check>,
}

impl LayerStack {
    pub fn to_local(&self, p: &[f64]) -> Vec<f64> {
        self.frame.to_frame(&linalg::sub(p, &self.center))
    }

    pub fn to_ambient(&self, y: &[f64]) -> Vec<f64> {
        linalg::add(&self.center, &self.frame.from_frame(y))
    }

    pub fn layer_count(&self) -> usize {
        self.graphs.len() - 1
    }

    pub fn l(&self) -> usize {
        self.chain.l()
    }

    pub fn m(&self) -> usize {
        self.chain.m()
    }

    pub fn graph(&self, d: i64) -> Option<&LayerGraph> {
        self.graphs.iter().find(|g| g.index == d)
    }

    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Component of the slab `φ_{d} < y¹ < φ_{d+1}` holding `p`, with `d+1`
    /// the first graph above `p`. `Ok(None)` means below the bottom graph
    /// (outside the container in the boundary case).
    pub fn locate(&self, p: &[f64]) -> Result<Option<usize>, LayerError> {
        if linalg::dist(p, &self.center) >= self.radius {
            return Err(LayerError::OutsideBall(p.to_vec()));
        }
        let y = self.to_local(p);
        let mut slot = None;
        for (t, g) in self.graphs.iter().enumerate() {
            let v = g.value(&y[1..]).ok_or_else(|| LayerError::OutsideBall(p.to_vec()))?;
            let gap = y[0] - v;
            if gap.abs() <= SANDWICH_BAND && g.kind == GraphKind::Interface {
                return Err(LayerError::OnInterface { point: p.to_vec(), distance: gap.abs() });
            }
            if gap < 0.0 && slot.is_none() {
                slot = Some(t);
            }
        }
        Ok(self.slots[slot.unwrap_or(self.graphs.len())])
    }

    /// Exchanges the values of two graphs, keeping the slot labels. Used to
    /// inject faults.
    pub fn with_swapped_graphs(&self, a: usize, b: usize) -> LayerStack {
        let mut s = self.clone();
        let ga = s.graphs[a].graph.clone();
        s.graphs[a].graph = s.graphs[b].graph.clone();
        s.graphs[b].graph = ga;
        s
    }
}

fn check_ladder(scene: &CompositeScene, ball: &Ball, opts: &StackOptions) -> Result<(), LayerError> {
    let r0 = radius_ladder(&scene.budget).r0;
    if ball.radius > r0 && !opts.force {
        return Err(LayerError::LadderRefusal { radius: ball.radius, r0 });
    }
    Ok(())
}

fn flatten_opts(scene: &CompositeScene, opts: &StackOptions) -> FlattenOptions {
    FlattenOptions { gamma: scene.budget.gamma, theta: Some(scene.budget.theta), enforce_smallness: !opts.force }
}

/// Graph of `∂U_member` in the anchor frame by opposition, oriented so that
/// `U_member` lies above (`plus_side`) or below.
fn opposed_interface(
    scene: &CompositeScene,
    member: usize,
    plus_side: bool,
    ball: &Ball,
    frame: &Frame,
    opts: &StackOptions,
) -> Result<SolvedGraph, LayerError> {
    let d = scene.domain(member);
    let b = if plus_side { d.complement() } else { d.clone() };
    let flat = graphsolve::flatten_graph(&b, &ball.center, ball.radius, opts.grid_res, flatten_opts(scene, opts))?;
    let source = GraphSource { graph: &flat.exact, frame: &flat.frame, orientation: Orientation::UpperSet };
    let solved = graphsolve::opposite_graph(
        source,
        &ball.center,
        frame,
        ball.radius,
        scene.budget.tau,
        opts.grid_res,
        scene.budget.gamma,
    )?;
    let expected = if plus_side { Orientation::UpperSet } else { Orientation::LowerSet };
    let found = graphsolve::resolve_orientation(d, &solved)?;
    if found != expected {
        return Err(LayerError::OrientationMismatch { member: scene.id(member).to_string(), expected, found });
    }
    Ok(solved)
}

/// Anchor data: frame, anchor graph position and its solved graph.
struct Anchor {
    frame: Frame,
    index: i64,
    graph: SolvedGraph,
}

fn flatten_anchor(scene: &CompositeScene, set: &ImplicitDomain, ball: &Ball, opts: &StackOptions) -> Result<(Frame, SolvedGraph), LayerError> {
    let flat = graphsolve::flatten_graph(set, &ball.center, ball.radius, opts.grid_res, flatten_opts(scene, opts))?;
    Ok((flat.frame, flat.solved))
}

/// Solves every non-anchor interface in the anchor frame and assembles the
/// ordered stack with caps.
fn assemble(
    scene: &CompositeScene,
    ball: &Ball,
    chain: LayerChain,
    sides_swapped: bool,
    anchor: Option<Anchor>,
    opts: &StackOptions,
) -> Result<LayerStack, LayerError> {
    let n = scene.dim();
    let r = ball.radius;
    let gamma = scene.budget.gamma;
    let grid = Grid::new(n - 1, r, opts.grid_res).map_err(GraphError::Grid)?;
    let (frame, anchor_index) = match &anchor {
        Some(a) => (a.frame.clone(), Some(a.index)),
        None => (Frame::identity(n), None),
    };

    // Interfaces: d ∈ [−m+1, 0] from the minus side, d ∈ [1, l] from the plus side.
    let mut jobs: Vec<(i64, usize, bool)> = Vec::new();
    for t in 0..chain.m() {
        jobs.push((-(t as i64), chain.minus[t], false));
    }
    for d in 1..=chain.l() {
        jobs.push((d as i64, chain.plus[d], true));
    }
    if chain.boundary {
        jobs.push((0, chain.plus[0], true));
    }
    let solved: Vec<Result<LayerGraph, LayerError>> = jobs
        .par_iter()
        .map(|&(d, member, plus)| {
            if let Some(a) = anchor.as_ref().filter(|a| a.index == d) {
                return Ok(LayerGraph::interface(d, member, &a.graph, r, gamma));
            }
            let g = opposed_interface(scene, member, plus, ball, &frame, opts)?;
            Ok(LayerGraph::interface(d, member, &g, r, gamma))
        })
        .collect();
    let mut graphs = Vec::with_capacity(jobs.len() + 2);
    let bottom = if chain.boundary { 0 } else { -(chain.m() as i64) };
    if !chain.boundary {
        graphs.push(LayerGraph::cap(bottom, &grid, -r));
    }
    for g in solved {
        graphs.push(g?);
    }
    graphs.push(LayerGraph::cap(chain.l() as i64 + 1, &grid, r));
    graphs.sort_by_key(|g| g.index);

    let mut slots = vec![None];
    let first = if chain.boundary { 0 } else { -(chain.m() as i64) };
    for d in first..=chain.l() as i64 {
        slots.push(chain.member(d));
    }
    slots.push(None);

    let mut stack = LayerStack {
        frame,
        center: ball.center.clone(),
        radius: r,
        grid,
        gamma,
        chain,
        sides_swapped,
        boundary: false,
        anchor: anchor_index,
        graphs,
        slots,
        checks: Vec::new(),
    };
    stack.boundary = stack.chain.boundary;
    check_order(&stack)?;
    stack.checks = estimate_checks(scene, &stack);
    if !opts.force && !stack.passes() {
        return Err(LayerError::EstimateViolation(stack.checks.iter().filter(|c| !c.pass).cloned().collect()));
    }
    Ok(stack)
}

/// `φ_d ≤ φ_{d+1}` at every node of `B_R'`, comparing values clamped to `[−R, R]`.
fn check_order(stack: &LayerStack) -> Result<(), LayerError> {
    let r = stack.radius;
    for idx in stack.grid.nodes_within(r) {
        for w in stack.graphs.windows(2) {
            let lo = w[0].graph.values()[idx].clamp(-r, r);
            let hi = w[1].graph.values()[idx].clamp(-r, r);
            if lo - hi > ORDER_TOL {
                return Err(LayerError::StackOrderViolation {
                    lower: w[0].index,
                    upper: w[1].index,
                    at: stack.grid.coords(idx),
                    depth: lo - hi,
                });
            }
        }
    }
    Ok(())
}

fn estimate_checks(scene: &CompositeScene, stack: &LayerStack) -> Vec<Check> {
    let b = &scene.budget;
    let holder_bound = 288.0 * b.n as f64 * b.theta;
    let mut out = Vec::new();
    for g in stack.graphs.iter().filter(|g| g.kind == GraphKind::Interface) {
        out.push(Check::at_most(format!("sup|Dφ_{}|", g.index), g.sup_grad, b.tau + ESTIMATE_SLACK));
        out.push(Check::at_most(format!("[Dφ_{}]_γ", g.index), g.holder, holder_bound));
    }
    if let Some(k) = stack.anchor.and_then(|k| stack.graph(k)) {
        out.push(Check::at_most(
            format!("|Dφ_{}(0')|", k.index),
            linalg::norm(k.graph.grad_at_center()),
            ANCHOR_SLOPE_TOL,
        ));
        let v = k.graph.value_at_center().abs();
        let strict = Check::at_most(format!("|φ_{}(0')| < R", k.index), v, stack.radius);
        out.push(Check { pass: v < stack.radius, ..strict });
        if stack.boundary {
            out.push(Check::at_most(format!("|φ_{}(0')|", k.index), v, BOUNDARY_VALUE_TOL));
        }
    }
    out
}

/// Stack for a ball inside the container.
pub fn stack_interior(scene: &CompositeScene, ball: &Ball, opts: &StackOptions) -> Result<LayerStack, LayerError> {
    check_ladder(scene, ball, opts)?;
    let u0 = scene.domain(0);
    if !u0.contains(&ball.center) || composite::boundary_meets_ball(u0, ball) {
        return Err(LayerError::BallLeavesContainer);
    }
    let chain = composite::chain_decompose(scene, ball)?;
    let c0 = composite::component_membership(scene, &ball.center)?;
    let k = chain.position(c0).ok_or_else(|| LayerError::AnchorNotInChain(scene.id(c0).to_string()))?;
    let (chain, swapped, k) = if k < 0 || (k == 0 && chain.m() == 0 && chain.l() >= 1) {
        (chain.swapped(), true, -k)
    } else {
        (chain, false, k)
    };
    if chain.l() == 0 && chain.m() == 0 {
        return assemble(scene, ball, chain, swapped, None, opts);
    }
    let (set, member) = if k >= 1 {
        (scene.domain(chain.plus[k as usize]).clone(), chain.plus[k as usize])
    } else {
        (scene.domain(chain.minus[0]).complement(), chain.minus[0])
    };
    let (frame, graph) = flatten_anchor(scene, &set, ball, opts)?;
    let expected = if k >= 1 { Orientation::UpperSet } else { Orientation::LowerSet };
    let found = graphsolve::resolve_orientation(scene.domain(member), &graph)?;
    if found != expected {
        return Err(LayerError::OrientationMismatch { member: scene.id(member).to_string(), expected, found });
    }
    assemble(scene, ball, chain, swapped, Some(Anchor { frame, index: k, graph }), opts)
}

/// Stack for a ball centered on the container boundary. The center is
/// first projected onto the boundary.
pub fn stack_boundary(scene: &CompositeScene, ball: &Ball, opts: &StackOptions) -> Result<LayerStack, LayerError> {
    check_ladder(scene, ball, opts)?;
    let u0 = scene.domain(0);
    let distance = u0.boundary_distance(&ball.center);
    if !(distance.abs() <= domains::BOUNDARY_BAND) {
        return Err(LayerError::CenterNotOnBoundary { distance });
    }
    let center = u0.project_to_boundary(&ball.center)?;
    let ball = Ball::new(&center, ball.radius);
    let chain = composite::chain_decompose(scene, &ball)?;
    if chain.m() > 0 {
        return Err(LayerError::BoundaryChainHasMinusSide);
    }
    let chain = LayerChain { boundary: true, ..chain };
    let (frame, graph) = flatten_anchor(scene, u0, &ball, opts)?;
    assemble(scene, &ball, chain, false, Some(Anchor { frame, index: 0, graph }), opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub point: Vec<f64>,
    pub stack: Option<String>,
    pub direct: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub samples: usize,
    pub checked: usize,
    pub skipped_band: usize,
    pub mismatches: usize,
    pub witnesses: Vec<Mismatch>,
    pub pass: bool,
}

fn direct_component(scene: &CompositeScene, p: &[f64]) -> Option<usize> {
    composite::component_membership(scene, p).ok()
}

/// Compares the stack's classification with direct component membership
/// at seeded samples of the ball.
pub fn sandwich_verify(stack: &LayerStack, scene: &CompositeScene, samples: usize, seed: u64) -> SandwichReport {
    let pts = Ball::new(&stack.center, stack.radius).samples(samples, seed);
    let results: Vec<Option<Option<Mismatch>>> = pts
        .par_iter()
        .map(|p| {
            let got = match stack.locate(p) {
                Ok(c) => c,
                Err(_) => return None,
            };
            if scene.interface_distance(p) <= SANDWICH_BAND {
                return None;
            }
            let want = direct_component(scene, p);
            if got == want {
                Some(None)
            } else {
                Some(Some(Mismatch {
                    point: p.clone(),
                    stack: got.map(|c| scene.id(c).to_string()),
                    direct: want.map(|c| scene.id(c).to_string()),
                }))
            }
        })
        .collect();
    let mut rep = SandwichReport { samples, checked: 0, skipped_band: 0, mismatches: 0, witnesses: Vec::new(), pass: false };
    for r in results {
        match r {
            None => rep.skipped_band += 1,
            Some(None) => rep.checked += 1,
            Some(Some(m)) => {
                rep.checked += 1;
                rep.mismatches += 1;
                if rep.witnesses.len() < 8 {
                    rep.witnesses.push(m);
                }
            }
        }
    }
    rep.pass = rep.mismatches == 0 && rep.checked > 0;
    rep
}

/// A scalar or tensor coefficient stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Coefficient {
    pub fn scalar(v: f64) -> Coefficient {
        Coefficient { shape: Vec::new(), data: vec![v] }
    }
}

/// Per-component coefficient tables keyed by member index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoefficientField {
    pub tables: BTreeMap<usize, Coefficient>,
}

/// Coefficient of the component containing `p`, read off the stack. Debug
/// builds also check it against direct membership.
pub fn coefficient_eval<'a>(
    field: &'a CoefficientField,
    stack: &LayerStack,
    scene: &CompositeScene,
    p: &[f64],
) -> Result<&'a Coefficient, LayerError> {
    let c = stack.locate(p)?.ok_or_else(|| LayerError::OutsideComposite(p.to_vec()))?;
    if cfg!(debug_assertions) {
        let direct = direct_component(scene, p);
        if direct != Some(c) && scene.interface_distance(p) > SANDWICH_BAND {
            return Err(LayerError::StackMismatch {
                point: p.to_vec(),
                stack: Some(scene.id(c).to_string()),
                direct: direct.map(|d| scene.id(d).to_string()),
            });
        }
    }
    field.tables.get(&c).ok_or_else(|| LayerError::MissingCoefficient(scene.id(c).to_string()))
}
