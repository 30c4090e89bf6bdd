//! Composite scenes: pairwise trichotomy, the containment forest, component
//! membership, and the chain of nested members seen by a ball.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{DomainError, ImplicitDomain};
use crate::linalg;
use crate::verify::HolderBudget;

pub const DEFAULT_SEED: u64 = 0x5EED;
pub const DEFAULT_SAMPLES: usize = 4096;
/// Boundary points per member added to pair classification.
const BOUNDARY_PROBES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositeError {
    #[error("duplicate member id {0:?}")]
    DuplicateId(String),
    #[error("member {id:?} has dimension {got}, scene has {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("trichotomy violated by {i:?} and {j:?}: {counts:?}")]
    TrichotomyViolation { i: String, j: String, counts: PairCounts, witnesses: Vec<Vec<f64>> },
    #[error("sampling could not relate {i:?} and {j:?}")]
    Inconclusive { i: String, j: String },
    #[error("member {id:?} is not a proper subset of the container")]
    NotInsideContainer { id: String },
    #[error("member {id:?} declares parent {hint:?} but its smallest container is {actual:?}")]
    ParentMismatch { id: String, hint: String, actual: String },
    #[error("point {0:?} is outside the composite domain")]
    OutsideComposite(Vec<f64>),
    #[error("the ball does not meet the composite domain")]
    EmptyTrace,
    #[error("sampling was inconclusive: {0}")]
    SamplingInconclusive(String),
    #[error("ball-meeting members inside {j:?} do not form a single member: {members:?}")]
    UnionNotInS { j: String, members: Vec<String>, witnesses: Vec<Vec<f64>> },
    #[error("more than two clusters meet the ball inside {j:?}: {clusters:?}")]
    MoreThanTwoClusters { j: String, clusters: Vec<String> },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Sample counts of `U_i ∖ U_j`, `U_j ∖ U_i` and `U_i ∩ U_j`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub only_i: usize,
    pub only_j: usize,
    pub both: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairClass {
    ISubsetJ,
    JSubsetI,
    Disjoint,
    Violation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub class: PairClass,
    pub counts: PairCounts,
    /// One point from each nonempty cell, in the order `only_i, only_j, both`.
    pub witnesses: Vec<Vec<f64>>,
}

pub type Bounds = (Vec<f64>, Vec<f64>);

fn union_box(a: Option<Bounds>, b: Option<Bounds>) -> Option<Bounds> {
    match (a, b) {
        (Some((lo1, hi1)), Some((lo2, hi2))) => Some((
            lo1.iter().zip(&lo2).map(|(x, y)| x.min(*y)).collect(),
            hi1.iter().zip(&hi2).map(|(x, y)| x.max(*y)).collect(),
        )),
        (a, None) => a,
        (None, b) => b,
    }
}

fn widen(b: &Bounds, factor: f64) -> Bounds {
    let (lo, hi) = b;
    let lo2 = lo.iter().zip(hi).map(|(l, h)| l - factor * (h - l).max(1e-12)).collect();
    let hi2 = lo.iter().zip(hi).map(|(l, h)| h + factor * (h - l).max(1e-12)).collect();
    (lo2, hi2)
}

fn uniform_in_box(b: &Bounds, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| b.0.iter().zip(&b.1).map(|(l, h)| rng.gen_range(*l..=*h)).collect())
        .collect()
}

/// Boundary samples pushed off the boundary along the normal by offsets
/// spanning ten decades below the box size, on both sides.
fn boundary_probes(d: &ImplicitDomain, b: &Bounds) -> Vec<Vec<f64>> {
    let diag = linalg::dist(&b.0, &b.1);
    let mid: Vec<f64> = b.0.iter().zip(&b.1).map(|(l, h)| 0.5 * (l + h)).collect();
    let base = match d.bounding_box() {
        Some(_) => d.boundary_samples(BOUNDARY_PROBES),
        None => d.boundary_samples_in(&mid, 0.5 * diag, BOUNDARY_PROBES),
    };
    let mut out = Vec::with_capacity(base.len() * 20);
    for p in base {
        let nrm = d.inward_normal(&p);
        for k in 2..12 {
            let h = diag * 10f64.powi(-k);
            out.push(linalg::axpy(&p, h, &nrm));
            out.push(linalg::axpy(&p, -h, &nrm));
        }
    }
    out
}

/// Decides the set relation of `ui` and `uj` from seeded samples in `bounds`
/// (defaulting to the union of the members' boxes) plus boundary probes.
pub fn classify_pair(
    ui: &ImplicitDomain,
    uj: &ImplicitDomain,
    samples: usize,
    seed: u64,
    bounds: Option<&Bounds>,
) -> Result<PairReport, CompositeError> {
    let b = match bounds {
        Some(b) => b.clone(),
        None => match union_box(ui.bounding_box(), uj.bounding_box()) {
            Some(b) => widen(&b, 0.05),
            None => (vec![-1.0; ui.dim()], vec![1.0; ui.dim()]),
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = uniform_in_box(&b, samples, &mut rng);
    pts.extend(boundary_probes(ui, &b));
    pts.extend(boundary_probes(uj, &b));
    let mut counts = PairCounts::default();
    let mut witnesses: [Option<Vec<f64>>; 3] = [None, None, None];
    for p in pts {
        let (vi, vj) = (ui.level(&p), uj.level(&p));
        if vi == 0.0 || vj == 0.0 {
            continue;
        }
        let cell = match (vi < 0.0, vj < 0.0) {
            (true, false) => 0,
            (false, true) => 1,
            (true, true) => 2,
            (false, false) => continue,
        };
        match cell {
            0 => counts.only_i += 1,
            1 => counts.only_j += 1,
            _ => counts.both += 1,
        }
        witnesses[cell].get_or_insert(p);
    }
    let PairCounts { only_i: a, only_j: bj, both: c } = counts;
    let class = match (a > 0, bj > 0, c > 0) {
        (false, false, false) => {
            return Err(CompositeError::Inconclusive { i: "U_i".into(), j: "U_j".into() });
        }
        (true, true, true) => PairClass::Violation,
        // Identical traces: distinct members must differ.
        (false, false, true) => PairClass::Violation,
        (true, true, false) => PairClass::Disjoint,
        (false, true, true) => PairClass::ISubsetJ,
        (true, false, true) => PairClass::JSubsetI,
        // One member never sampled.
        _ => return Err(CompositeError::Inconclusive { i: "U_i".into(), j: "U_j".into() }),
    };
    Ok(PairReport { class, counts, witnesses: witnesses.into_iter().flatten().collect() })
}

/// Relation of member `i` to member `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `U_i ⊊ U_j`
    Subset,
    /// `U_i ⊋ U_j`
    Superset,
    Disjoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub id: String,
    pub domain: ImplicitDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: &[f64], radius: f64) -> Ball {
        Ball { center: center.to_vec(), radius }
    }

    /// Seeded uniform samples of the open ball.
    pub fn samples(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.center.len();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if linalg::norm(&u) < 1.0 {
                out.push(linalg::axpy(&self.center, self.radius, &u));
            }
        }
        out
    }
}

/// `U_0 ⊇ U_1, …, U_K` with their validated containment forest. The empty
/// sentinel `U_{K+1}` is represented by `None` wherever an index may be
/// absent.
#[derive(Debug, Clone)]
pub struct CompositeScene {
    n: usize,
    members: Vec<Member>,
    pub budget: HolderBudget,
    pub seed: u64,
    relations: Vec<Vec<Option<Relation>>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    bounds: Bounds,
}

impl CompositeScene {
    /// Classifies every pair, rejects partial overlaps and identical
    /// members, and builds the forest. Member 0 is the container `U_0`.
    pub fn new(members: Vec<Member>, budget: HolderBudget, seed: u64, samples: usize) -> Result<Self, CompositeError> {
        let n = Self::check_members(&members)?;
        let bounds = scene_bounds(&members);
        let k = members.len();
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
        let reports: Vec<Result<PairReport, CompositeError>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let pair_seed = seed ^ ((i as u64) << 32 | j as u64);
                classify_pair(&members[i].domain, &members[j].domain, samples, pair_seed, Some(&bounds)).map_err(|e| match e {
                    CompositeError::Inconclusive { .. } => CompositeError::Inconclusive {
                        i: members[i].id.clone(),
                        j: members[j].id.clone(),
                    },
                    e => e,
                })
            })
            .collect();
        let mut relations = vec![vec![None; k]; k];
        for (&(i, j), rep) in pairs.iter().zip(reports) {
            let rep = rep?;
            let (ri, rj) = match rep.class {
                PairClass::ISubsetJ => (Relation::Subset, Relation::Superset),
                PairClass::JSubsetI => (Relation::Superset, Relation::Subset),
                PairClass::Disjoint => (Relation::Disjoint, Relation::Disjoint),
                PairClass::Violation => {
                    return Err(CompositeError::TrichotomyViolation {
                        i: members[i].id.clone(),
                        j: members[j].id.clone(),
                        counts: rep.counts,
                        witnesses: rep.witnesses,
                    })
                }
            };
            relations[i][j] = Some(ri);
            relations[j][i] = Some(rj);
        }
        for i in 1..k {
            if relations[i][0] != Some(Relation::Subset) {
                return Err(CompositeError::NotInsideContainer { id: members[i].id.clone() });
            }
        }
        Ok(Self::assemble(n, members, budget, seed, relations, bounds))
    }

    /// Builds a scene from a caller-supplied relation table without
    /// sampling. Meant for fault injection: nothing checks the table.
    pub fn from_relations_unchecked(
        members: Vec<Member>,
        budget: HolderBudget,
        seed: u64,
        relations: Vec<Vec<Option<Relation>>>,
    ) -> Result<Self, CompositeError> {
        let n = Self::check_members(&members)?;
        let bounds = scene_bounds(&members);
        Ok(Self::assemble(n, members, budget, seed, relations, bounds))
    }

    fn check_members(members: &[Member]) -> Result<usize, CompositeError> {
        let n = members.first().map(|m| m.domain.dim()).ok_or(CompositeError::EmptyTrace)?;
        let mut seen = std::collections::BTreeSet::new();
        for m in members {
            if !seen.insert(m.id.clone()) {
                return Err(CompositeError::DuplicateId(m.id.clone()));
            }
            if m.domain.dim() != n {
                return Err(CompositeError::DimensionMismatch { id: m.id.clone(), expected: n, got: m.domain.dim() });
            }
        }
        Ok(n)
    }

    fn assemble(n: usize, members: Vec<Member>, budget: HolderBudget, seed: u64, relations: Vec<Vec<Option<Relation>>>, bounds: Bounds) -> Self {
        let k = members.len();
        let rel = &relations;
        let supersets = |i: usize| (0..k).filter(move |&j| rel[i][j] == Some(Relation::Subset));
        let depth: Vec<usize> = (0..k).map(|i| supersets(i).count()).collect();
        let parent: Vec<Option<usize>> = (0..k).map(|i| supersets(i).max_by_key(|&j| (depth[j], std::cmp::Reverse(j)))).collect();
        let mut children = vec![Vec::new(); k];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        CompositeScene { n, members, budget, seed, relations, parent, children, depth, bounds }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn domain(&self, i: usize) -> &ImplicitDomain {
        &self.members[i].domain
    }

    pub fn id(&self, i: usize) -> &str {
        &self.members[i].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.members.iter().position(|m| m.id == id)
    }

    pub fn relation(&self, i: usize, j: usize) -> Option<Relation> {
        self.relations[i][j]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Checks a declared parent against the computed forest.
    pub fn check_parent_hint(&self, i: usize, hint: &str) -> Result<(), CompositeError> {
        let actual = self.parent[i].map(|p| self.id(p).to_string()).unwrap_or_default();
        if actual != hint {
            return Err(CompositeError::ParentMismatch { id: self.id(i).to_string(), hint: hint.to_string(), actual });
        }
        Ok(())
    }

    /// Smallest distance from `p` to any member boundary (first order).
    pub fn interface_distance(&self, p: &[f64]) -> f64 {
        self.members
            .iter()
            .map(|m| m.domain.boundary_distance(p).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn scene_bounds(members: &[Member]) -> Bounds {
    if let Some(b) = members[0].domain.bounding_box() {
        return widen(&b, 0.05);
    }
    let inner = members.iter().skip(1).fold(None, |acc, m| union_box(acc, m.domain.bounding_box()));
    match inner {
        Some(b) => widen(&b, 1.0),
        None => {
            let n = members[0].domain.dim();
            (vec![-1.0; n], vec![1.0; n])
        }
    }
}

/// Deepest forest node containing `p`: the intersection of all members
/// that contain `p`.
pub fn component_membership(scene: &CompositeScene, p: &[f64]) -> Result<usize, CompositeError> {
    if !scene.domain(0).contains(p) {
        return Err(CompositeError::OutsideComposite(p.to_vec()));
    }
    let mut cur = 0;
    while let Some(&c) = scene.children(cur).iter().find(|&&c| scene.domain(c).contains(p)) {
        cur = c;
    }
    Ok(cur)
}

/// Every `j` with `p ∈ W_j = U_j ∖ ⋃_{U_i ⊊ U_j} U_i`, from the relation
/// table alone.
pub fn direct_components(scene: &CompositeScene, p: &[f64]) -> Vec<usize> {
    (0..scene.len())
        .filter(|&j| {
            scene.domain(j).contains(p)
                && !(0..scene.len()).any(|i| scene.relation(i, j) == Some(Relation::Subset) && scene.domain(i).contains(p))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub samples: usize,
    pub inside: usize,
    pub skipped_band: usize,
    pub gaps: usize,
    pub double_counts: usize,
    /// Points outside `U_0` claimed by some component.
    pub stray: usize,
    pub witnesses: Vec<Vec<f64>>,
    pub pass: bool,
}

/// Counts how many components claim each sample (in `region`, or the scene
/// box), skipping points within `band` of any member boundary.
pub fn partition_check(scene: &CompositeScene, samples: usize, seed: u64, band: f64, region: Option<&Ball>) -> PartitionReport {
    let pts = match region {
        Some(b) => b.samples(samples, seed),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            uniform_in_box(scene.bounds(), samples, &mut rng)
        }
    };
    let mut rep = PartitionReport {
        samples,
        inside: 0,
        skipped_band: 0,
        gaps: 0,
        double_counts: 0,
        stray: 0,
        witnesses: Vec::new(),
        pass: false,
    };
    for p in pts {
        if scene.interface_distance(&p) <= band {
            rep.skipped_band += 1;
            continue;
        }
        let owners = direct_components(scene, &p).len();
        let inside = scene.domain(0).contains(&p);
        let bad = if inside {
            rep.inside += 1;
            match owners {
                0 => {
                    rep.gaps += 1;
                    true
                }
                1 => false,
                _ => {
                    rep.double_counts += 1;
                    true
                }
            }
        } else if owners > 0 {
            rep.stray += 1;
            true
        } else {
            false
        };
        if bad && rep.witnesses.len() < 8 {
            rep.witnesses.push(p);
        }
    }
    rep.pass = rep.gaps == 0 && rep.double_counts == 0 && rep.stray == 0;
    rep
}

/// `U ∩ B_R ≠ ∅`.
pub fn meets_ball(d: &ImplicitDomain, ball: &Ball) -> bool {
    d.contains(&ball.center) || d.closest_boundary_point(&ball.center, ball.radius).is_ok()
}

/// `∂U ∩ B_R ≠ ∅`.
pub fn boundary_meets_ball(d: &ImplicitDomain, ball: &Ball) -> bool {
    d.closest_boundary_point(&ball.center, ball.radius).is_ok()
}

/// The smallest member whose trace on the ball contains `U ∩ B_R`.
///
/// A child covers exactly when the whole ball lies inside it; this is
/// decided geometrically and cross-checked against ball samples.
pub fn minimal_cover(scene: &CompositeScene, ball: &Ball) -> Result<usize, CompositeError> {
    if !meets_ball(scene.domain(0), ball) {
        return Err(CompositeError::EmptyTrace);
    }
    let pts: Vec<Vec<f64>> = ball
        .samples(DEFAULT_SAMPLES, scene.seed)
        .into_iter()
        .filter(|p| scene.domain(0).contains(p))
        .collect();
    let mut cur = 0;
    'descend: loop {
        for &c in scene.children(cur) {
            let d = scene.domain(c);
            let covers = d.contains(&ball.center) && !boundary_meets_ball(d, ball);
            let sampled = pts.iter().all(|p| d.contains(p));
            if covers != sampled && covers {
                return Err(CompositeError::SamplingInconclusive(format!(
                    "{} contains the ball geometrically but not every sample",
                    scene.id(c)
                )));
            }
            if covers {
                cur = c;
                continue 'descend;
            }
        }
        return Ok(cur);
    }
}

/// Ball-meeting children of `j`.
fn meeting_children(scene: &CompositeScene, j: usize, ball: &Ball) -> Vec<usize> {
    scene
        .children(j)
        .iter()
        .copied()
        .filter(|&c| meets_ball(scene.domain(c), ball))
        .collect()
}

fn witness_in(d: &ImplicitDomain, ball: &Ball) -> Vec<f64> {
    if d.contains(&ball.center) {
        return ball.center.clone();
    }
    d.closest_boundary_point(&ball.center, ball.radius).unwrap_or_else(|_| ball.center.clone())
}

/// The single member `U_k` equal to the union of the ball-meeting proper
/// sub-members of `U_j`, or `None` (the empty sentinel) when there are none.
pub fn inner_union(scene: &CompositeScene, j: usize, ball: &Ball) -> Result<Option<usize>, CompositeError> {
    let meeting = meeting_children(scene, j, ball);
    match meeting.len() {
        0 => Ok(None),
        1 => Ok(Some(meeting[0])),
        _ => Err(CompositeError::UnionNotInS {
            j: scene.id(j).to_string(),
            members: meeting.iter().map(|&c| scene.id(c).to_string()).collect(),
            witnesses: meeting.iter().map(|&c| witness_in(scene.domain(c), ball)).collect(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCover {
    pub j: usize,
    pub plus: Option<usize>,
    pub minus: Option<usize>,
}

/// `U_j ∩ B_R = (W_j ⊔ U_k ⊔ U_l) ∩ B_R` with `j` the minimal cover and at
/// most two ball-meeting children. The child containing the center (else
/// the lower index) goes on the plus side.
pub fn split_cover(scene: &CompositeScene, ball: &Ball) -> Result<SplitCover, CompositeError> {
    let j = minimal_cover(scene, ball)?;
    let meeting = meeting_children(scene, j, ball);
    let boundary = boundary_meets_ball(scene.domain(0), ball);
    let too_many = || CompositeError::MoreThanTwoClusters {
        j: scene.id(j).to_string(),
        clusters: meeting.iter().map(|&c| scene.id(c).to_string()).collect(),
    };
    match meeting.len() {
        0 => Ok(SplitCover { j, plus: None, minus: None }),
        1 => Ok(SplitCover { j, plus: Some(meeting[0]), minus: None }),
        2 if !(j == 0 && boundary) => {
            let (a, b) = (meeting[0], meeting[1]);
            let (plus, minus) = if scene.domain(b).contains(&ball.center) { (b, a) } else { (a, b) };
            Ok(SplitCover { j, plus: Some(plus), minus: Some(minus) })
        }
        _ => Err(too_many()),
    }
}

/// Indices `i_{−m}, …, i_0, …, i_l` of the nested members seen by a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChain {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `i_0, i_1, …, i_l`.
    pub plus: Vec<usize>,
    /// `i_{−1}, …, i_{−m}`.
    pub minus: Vec<usize>,
    /// The ball meets `∂U_0`.
    pub boundary: bool,
}

impl LayerChain {
    pub fn l(&self) -> usize {
        self.plus.len() - 1
    }

    pub fn m(&self) -> usize {
        self.minus.len()
    }

    /// `i_d` for `d ∈ [−m, l]`.
    pub fn member(&self, d: i64) -> Option<usize> {
        if d >= 0 {
            self.plus.get(d as usize).copied()
        } else {
            self.minus.get((-d - 1) as usize).copied()
        }
    }

    /// Position `d` of member `i` in the chain.
    pub fn position(&self, i: usize) -> Option<i64> {
        if let Some(d) = self.plus.iter().position(|&x| x == i) {
            return Some(d as i64);
        }
        self.minus.iter().position(|&x| x == i).map(|t| -(t as i64) - 1)
    }

    /// Exchanges the plus and minus sides around `i_0`.
    pub fn swapped(&self) -> LayerChain {
        let mut plus = vec![self.plus[0]];
        plus.extend(&self.minus);
        LayerChain {
            center: self.center.clone(),
            radius: self.radius,
            plus,
            minus: self.plus[1..].to_vec(),
            boundary: self.boundary,
        }
    }
}

/// Follows `split_cover` with repeated `inner_union` on each side until the
/// empty sentinel.
pub fn chain_decompose(scene: &CompositeScene, ball: &Ball) -> Result<LayerChain, CompositeError> {
    let split = split_cover(scene, ball)?;
    let follow = |start: Option<usize>| -> Result<Vec<usize>, CompositeError> {
        let mut out = Vec::new();
        let mut cur = start;
        while let Some(c) = cur {
            out.push(c);
            cur = inner_union(scene, c, ball)?;
        }
        Ok(out)
    };
    let mut plus = vec![split.j];
    plus.extend(follow(split.plus)?);
    let minus = follow(split.minus)?;
    let boundary = boundary_meets_ball(scene.domain(0), ball);
    Ok(LayerChain { center: ball.center.clone(), radius: ball.radius, plus, minus, boundary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub samples: usize,
    pub checked: usize,
    pub skipped_band: usize,
    /// Samples of `U ∩ B_R` whose component is not in the chain.
    pub gaps: usize,
    /// Chain members whose component received no sample (thin layers).
    pub unsampled_members: usize,
    pub pass: bool,
}

/// Checks by sampling that every component met in `U ∩ B_R` is a chain member.
pub fn chain_check(scene: &CompositeScene, chain: &LayerChain, samples: usize, seed: u64, band: f64) -> ChainReport {
    let ball = Ball::new(&chain.center, chain.radius);
    let pts = ball.samples(samples, seed);
    let mut rep = ChainReport { samples, checked: 0, skipped_band: 0, gaps: 0, unsampled_members: 0, pass: false };
    let mut seen = std::collections::BTreeSet::new();
    for p in &pts {
        if scene.interface_distance(p) <= band {
            rep.skipped_band += 1;
            continue;
        }
        let Ok(c) = component_membership(scene, p) else { continue };
        rep.checked += 1;
        if chain.position(c).is_none() {
            rep.gaps += 1;
        }
        seen.insert(c);
    }
    let members = chain.plus.iter().chain(&chain.minus);
    rep.unsampled_members = members.filter(|c| !seen.contains(*c)).count();
    rep.pass = rep.gaps == 0 && rep.checked > 0;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::DEFAULT_DELTA_1;

    fn budget() -> HolderBudget {
        HolderBudget { n: 2, gamma: 1.0, theta: 1.0, tau: 1.0, delta: 0.125, delta_1: DEFAULT_DELTA_1 }
    }

    fn member(id: &str, d: ImplicitDomain) -> Member {
        Member { id: id.into(), domain: d }
    }

    fn nested() -> CompositeScene {
        CompositeScene::new(
            vec![
                member("u0", ImplicitDomain::ball(&[0.0, 0.0], 1.0)),
                member("u1", ImplicitDomain::ball(&[0.0, 0.0], 0.5)),
                member("u2", ImplicitDomain::ball(&[0.0, 0.0], 0.25)),
            ],
            budget(),
            DEFAULT_SEED,
            DEFAULT_SAMPLES,
        )
        .unwrap()
    }

    fn twins() -> CompositeScene {
        CompositeScene::new(
            vec![
                member("u0", ImplicitDomain::ball(&[0.0, 0.0], 1.0)),
                member("left", ImplicitDomain::ball(&[-0.3, 0.0], 0.28)),
                member("right", ImplicitDomain::ball(&[0.3, 0.0], 0.28)),
            ],
            budget(),
            DEFAULT_SEED,
            DEFAULT_SAMPLES,
        )
        .unwrap()
    }

    #[test]
    fn pair_examples() {
        let small = ImplicitDomain::ball(&[0.0, 0.0], 0.5);
        let big = ImplicitDomain::ball(&[0.0, 0.0], 1.0);
        assert_eq!(classify_pair(&small, &big, 4096, 1, None).unwrap().class, PairClass::ISubsetJ);
        assert_eq!(classify_pair(&big, &small, 4096, 1, None).unwrap().class, PairClass::JSubsetI);
        let l = ImplicitDomain::ball(&[-0.5, 0.0], 0.3);
        let r = ImplicitDomain::ball(&[0.5, 0.0], 0.3);
        assert_eq!(classify_pair(&l, &r, 4096, 1, None).unwrap().class, PairClass::Disjoint);
        let a = ImplicitDomain::ball(&[0.0, 0.0], 1.0);
        let b = ImplicitDomain::ball(&[1.0, 0.0], 1.0);
        let rep = classify_pair(&a, &b, 4096, 1, None).unwrap();
        assert_eq!(rep.class, PairClass::Violation);
        assert_eq!(rep.witnesses.len(), 3);
        assert_eq!(classify_pair(&a, &a.clone(), 4096, 1, None).unwrap().class, PairClass::Violation);
    }

    #[test]
    fn thin_shells_are_resolved() {
        let outer = ImplicitDomain::ball(&[0.0, 0.0], 500.0);
        let inner = ImplicitDomain::ball(&[0.0, 0.0], 500.0 - 6e-7);
        let rep = classify_pair(&inner, &outer, 4096, 1, None).unwrap();
        assert_eq!(rep.class, PairClass::ISubsetJ);
    }

    #[test]
    fn forests() {
        let s = nested();
        assert_eq!((s.parent(1), s.parent(2)), (Some(0), Some(1)));
        let t = twins();
        assert_eq!(t.children(0), &[1, 2]);
        let overlap = CompositeScene::new(
            vec![
                member("u0", ImplicitDomain::ball(&[0.0, 0.0], 3.0)),
                member("a", ImplicitDomain::ball(&[0.0, 0.0], 1.0)),
                member("b", ImplicitDomain::ball(&[1.0, 0.0], 1.0)),
            ],
            budget(),
            DEFAULT_SEED,
            DEFAULT_SAMPLES,
        );
        assert!(matches!(overlap, Err(CompositeError::TrichotomyViolation { .. })));
    }

    #[test]
    fn randomized_nested_forests_match_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            // Two chains of nested balls inside a big ball; truth is known.
            let mut members = vec![member("u0", ImplicitDomain::ball(&[0.0, 0.0], 10.0))];
            let mut truth = vec![None];
            for (side, cx) in [(0, -4.0), (1, 4.0)] {
                let mut radii: Vec<f64> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0.5..3.5)).collect();
                radii.sort_by(|a, b| b.total_cmp(a));
                radii.dedup_by(|a, b| (*a - *b).abs() < 0.05);
                let mut prev = 0;
                for (k, r) in radii.iter().enumerate() {
                    members.push(member(&format!("s{side}k{k}"), ImplicitDomain::ball(&[cx, 0.0], *r)));
                    truth.push(Some(prev));
                    prev = members.len() - 1;
                }
            }
            let s = CompositeScene::new(members, budget(), DEFAULT_SEED, DEFAULT_SAMPLES).unwrap();
            for (i, t) in truth.iter().enumerate() {
                assert_eq!(s.parent(i), *t);
            }
        }
    }

    #[test]
    fn membership_examples() {
        let s = nested();
        assert_eq!(component_membership(&s, &[0.7, 0.0]).unwrap(), 0);
        assert_eq!(component_membership(&s, &[0.35, 0.0]).unwrap(), 1);
        assert_eq!(component_membership(&s, &[0.1, 0.0]).unwrap(), 2);
        assert!(matches!(component_membership(&s, &[1.5, 0.0]), Err(CompositeError::OutsideComposite(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for s in [nested(), twins()] {
            for _ in 0..10_000 {
                let p = [rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1)];
                let direct = direct_components(&s, &p);
                match component_membership(&s, &p) {
                    Ok(c) => assert_eq!(direct, vec![c]),
                    Err(_) => assert!(direct.is_empty()),
                }
            }
        }
    }

    #[test]
    fn partition_passes_and_detects_corruption() {
        assert!(partition_check(&nested(), 10_000, 1, 1e-8, None).pass);
        assert!(partition_check(&twins(), 10_000, 1, 1e-8, None).pass);
        let members = vec![
            member("u0", ImplicitDomain::ball(&[0.0, 0.0], 3.0)),
            member("a", ImplicitDomain::ball(&[0.0, 0.0], 1.0)),
            member("b", ImplicitDomain::ball(&[1.0, 0.0], 1.0)),
        ];
        use Relation::*;
        let rel = vec![
            vec![None, Some(Superset), Some(Superset)],
            vec![Some(Subset), None, Some(Disjoint)],
            vec![Some(Subset), Some(Disjoint), None],
        ];
        let bad = CompositeScene::from_relations_unchecked(members, budget(), DEFAULT_SEED, rel).unwrap();
        let rep = partition_check(&bad, 10_000, 1, 1e-8, None);
        assert!(!rep.pass);
        assert!(rep.double_counts > 0);
    }

    #[test]
    fn minimal_cover_examples() {
        let s = nested();
        assert_eq!(minimal_cover(&s, &Ball::new(&[0.05, 0.0], 0.1)).unwrap(), 2);
        assert_eq!(minimal_cover(&s, &Ball::new(&[0.95, 0.0], 0.1)).unwrap(), 0);
        assert_eq!(minimal_cover(&s, &Ball::new(&[0.46, 0.0], 0.05)).unwrap(), 0);
        assert_eq!(minimal_cover(&s, &Ball::new(&[0.3, 0.0], 0.04)).unwrap(), 1);
    }

    #[test]
    fn inner_union_examples() {
        let s = nested();
        let ball = Ball::new(&[0.46, 0.0], 0.05);
        assert_eq!(inner_union(&s, 0, &ball).unwrap(), Some(1));
        assert_eq!(inner_union(&s, 1, &ball).unwrap(), None);
        let t = twins();
        let big = Ball::new(&[0.0, 0.0], 0.1);
        assert!(matches!(inner_union(&t, 0, &big), Err(CompositeError::UnionNotInS { .. })));
    }

    #[test]
    fn split_and_chain_examples() {
        let s = nested();
        let c = chain_decompose(&s, &Ball::new(&[0.46, 0.0], 0.05)).unwrap();
        assert_eq!((c.plus.clone(), c.minus.clone()), (vec![0, 1], vec![]));
        let c = chain_decompose(&s, &Ball::new(&[0.7, 0.0], 0.01)).unwrap();
        assert_eq!((c.l(), c.m()), (0, 0));
        let t = twins();
        let c = chain_decompose(&t, &Ball::new(&[0.0, 0.0], 0.05)).unwrap();
        assert_eq!((c.l(), c.m()), (1, 1));
        assert!(chain_check(&t, &c, 10_000, 3, 1e-8).pass);
        // Three children meeting the ball.
        let three = CompositeScene::new(
            vec![
                member("u0", ImplicitDomain::ball(&[0.0, 0.0], 1.0)),
                member("a", ImplicitDomain::ball(&[-0.2, 0.0], 0.15)),
                member("b", ImplicitDomain::ball(&[0.2, 0.0], 0.15)),
                member("c", ImplicitDomain::ball(&[0.0, 0.25], 0.15)),
            ],
            budget(),
            DEFAULT_SEED,
            DEFAULT_SAMPLES,
        )
        .unwrap();
        assert!(matches!(split_cover(&three, &Ball::new(&[0.0, 0.05], 0.2)), Err(CompositeError::MoreThanTwoClusters { .. })));
    }

    #[test]
    fn boundary_ball_has_no_minus_side() {
        let s = CompositeScene::new(
            vec![
                member("u0", ImplicitDomain::half_space(&[1.0, 0.0], 0.0)),
                member("inc", ImplicitDomain::ball(&[0.3, 0.0], 0.28)),
            ],
            budget(),
            DEFAULT_SEED,
            DEFAULT_SAMPLES,
        )
        .unwrap();
        let c = chain_decompose(&s, &Ball::new(&[0.0, 0.0], 0.05)).unwrap();
        assert!(c.boundary);
        assert_eq!((c.plus.clone(), c.m()), (vec![0, 1], 0));
    }
}
