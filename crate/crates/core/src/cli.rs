//! Command-line front end: scene files, command dispatch and result output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composite::{self, Ball, CompositeError, CompositeScene, Member, PartitionReport, DEFAULT_SAMPLES, DEFAULT_SEED};
use crate::domains::{DomainError, ImplicitDomain, Shape};
use crate::frames::Frame;
use crate::graphsolve::{GraphError, ESTIMATE_SLACK};
use crate::grid::{Grid, GridGraph};
use crate::layers::{self, Coefficient, GraphKind, LayerError, LayerStack, SandwichReport, StackOptions};
use crate::linalg;
use crate::verify::{self, Check, HolderBudget, OppositionReport, RadiusLadder, ReifenbergReport, VerifyError, DEFAULT_DELTA_1};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SCENE: i32 = 2;
pub const EXIT_REGIME: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

pub const STACK_FORMAT: &str = "layerstack-stack/1";
const SANDWICH_SAMPLES: usize = 10_000;
const PARTITION_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use CompositeError as C;
        use LayerError as L;
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Composite(C::DuplicateId(_) | C::DimensionMismatch { .. }) => EXIT_INPUT,
            CliError::Composite(C::UnionNotInS { .. } | C::MoreThanTwoClusters { .. } | C::EmptyTrace) => EXIT_REGIME,
            CliError::Composite(_) => EXIT_SCENE,
            CliError::Layer(L::Composite(C::UnionNotInS { .. } | C::MoreThanTwoClusters { .. } | C::EmptyTrace)) => EXIT_REGIME,
            CliError::Layer(L::Composite(_)) => EXIT_SCENE,
            CliError::Layer(L::LadderRefusal { .. } | L::BallLeavesContainer | L::Graph(GraphError::SmallnessViolation { .. })) => EXIT_REGIME,
            CliError::Layer(L::CenterNotOnBoundary { .. }) => EXIT_INPUT,
            CliError::Verify(VerifyError::InvalidBudget(_) | VerifyError::NotOnBoundary { .. } | VerifyError::TooFar { .. }) => EXIT_INPUT,
            CliError::Domain(DomainError::InvalidShape(_) | DomainError::DimensionMismatch { .. }) => EXIT_INPUT,
            _ => EXIT_VERIFY,
        }
    }

    fn kind(&self) -> String {
        let dbg = match self {
            CliError::Input(_) => return "InputError".into(),
            CliError::Composite(e) => format!("{e:?}"),
            CliError::Layer(LayerError::Composite(e)) => format!("{e:?}"),
            CliError::Layer(LayerError::Graph(e)) => format!("{e:?}"),
            CliError::Layer(e) => format!("{e:?}"),
            CliError::Verify(e) => format!("{e:?}"),
            CliError::Domain(e) => format!("{e:?}"),
        };
        dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
    }
}

// ---------------------------------------------------------------- scene file

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub gamma: f64,
    pub theta: f64,
    pub tau: f64,
    pub delta: f64,
    #[serde(default = "default_delta_1")]
    pub delta_1: f64,
}

fn default_delta_1() -> f64 {
    DEFAULT_DELTA_1
}

#[derive(Debug, Clone, Deserialize)]
pub struct ShapeSpec {
    pub id: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Scalar(f64),
    Table { shape: Vec<usize>, data: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Value(f64),
    Word(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub center: Option<Vec<f64>>,
    pub radius: Option<RadiusSpec>,
    #[serde(default)]
    pub boundary: bool,
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub dimension: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub budget: BudgetSpec,
    #[serde(rename = "shape")]
    pub shapes: Vec<ShapeSpec>,
    #[serde(default)]
    pub coefficients: BTreeMap<String, CoefficientSpec>,
    #[serde(default)]
    pub query: QuerySpec,
}

/// A parsed and validated scene with its query defaults.
pub struct LoadedScene {
    pub file: SceneFile,
    pub scene: CompositeScene,
    pub coefficients: layers::CoefficientField,
}

pub fn parse_scene(text: &str) -> Result<SceneFile, CliError> {
    let file: SceneFile = toml::from_str(text).map_err(|e| CliError::Input(format!("scene parse error: {e}")))?;
    if file.shapes.is_empty() {
        return Err(CliError::Input("scene declares no shapes".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in &file.shapes {
        if !seen.insert(s.id.as_str()) {
            return Err(CliError::Input(format!("duplicate shape id {:?}", s.id)));
        }
    }
    Ok(file)
}

pub fn build_scene(file: SceneFile) -> Result<LoadedScene, CliError> {
    let budget = HolderBudget {
        n: file.dimension,
        gamma: file.budget.gamma,
        theta: file.budget.theta,
        tau: file.budget.tau,
        delta: file.budget.delta,
        delta_1: file.budget.delta_1,
    };
    budget.validate()?;
    let mut members = Vec::with_capacity(file.shapes.len());
    for s in &file.shapes {
        let domain = ImplicitDomain::new(s.shape.clone()).map_err(|e| CliError::Input(format!("shape {:?}: {e}", s.id)))?;
        if domain.dim() != file.dimension {
            return Err(CliError::Input(format!(
                "shape {:?} has dimension {}, scene has {}",
                s.id,
                domain.dim(),
                file.dimension
            )));
        }
        members.push(Member { id: s.id.clone(), domain });
    }
    let seed = file.seed.unwrap_or(DEFAULT_SEED);
    let scene = CompositeScene::new(members, budget, seed, DEFAULT_SAMPLES)?;
    for (i, s) in file.shapes.iter().enumerate() {
        if let Some(hint) = &s.parent {
            scene.check_parent_hint(i, hint)?;
        }
    }
    let mut coefficients = layers::CoefficientField::default();
    for (id, c) in &file.coefficients {
        let i = scene.index_of(id).ok_or_else(|| CliError::Input(format!("coefficient for unknown shape {id:?}")))?;
        let table = match c {
            CoefficientSpec::Scalar(v) => Coefficient::scalar(*v),
            CoefficientSpec::Table { shape, data } => {
                if shape.iter().product::<usize>() != data.len() {
                    return Err(CliError::Input(format!("coefficient {id:?}: shape and data length disagree")));
                }
                Coefficient { shape: shape.clone(), data: data.clone() }
            }
        };
        coefficients.tables.insert(i, table);
    }
    Ok(LoadedScene { file, scene, coefficients })
}

pub fn load_scene(path: &Path) -> Result<LoadedScene, CliError> {
    load(path).map_err(|(e, _)| e)
}

/// Loads a scene, reporting the seed whenever the file parsed.
fn load(path: &Path) -> Result<LoadedScene, (CliError, Option<u64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| (CliError::Input(format!("{}: {e}", path.display())), None))?;
    let file = parse_scene(&text).map_err(|e| match e {
        CliError::Input(m) => (CliError::Input(format!("{}: {m}", path.display())), None),
        e => (e, None),
    })?;
    let seed = Some(file.seed.unwrap_or(DEFAULT_SEED));
    build_scene(file).map_err(|e| (e, seed))
}

// ---------------------------------------------------------------- JSON output

/// Writes floats with 17 significant digits so runs compare byte for byte.
struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats);
    value.serialize(&mut ser).expect("serializing to memory");
    String::from_utf8(out).expect("JSON is UTF-8")
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    status: &'static str,
    kind: String,
    message: String,
    exit_code: i32,
    seed: Option<u64>,
    detail: Option<&'a serde_json::Value>,
}

#[derive(Serialize)]
struct MemberReport {
    id: String,
    kind: String,
    parent: Option<String>,
    depth: usize,
    children: Vec<String>,
}

#[derive(Serialize)]
struct ValidateReport {
    status: &'static str,
    seed: u64,
    dimension: usize,
    members: Vec<MemberReport>,
    relations: Vec<Vec<Option<composite::Relation>>>,
    partition: PartitionReport,
    ladder: RadiusLadder,
    pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphOut {
    pub index: i64,
    pub kind: GraphKind,
    pub member: Option<String>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub sup_grad: f64,
    pub holder: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerOut {
    pub lower: i64,
    pub upper: i64,
    pub component: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOut {
    pub plus: Vec<String>,
    pub minus: Vec<String>,
    pub l: usize,
    pub m: usize,
    pub sides_swapped: bool,
}

/// The stack artifact written by `stack` and read by `verify --estimates`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackOut {
    pub format: String,
    pub status: String,
    pub seed: u64,
    pub dimension: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub radius_auto: bool,
    pub ladder: RadiusLadder,
    pub boundary: bool,
    pub frame: Frame,
    pub grid: Grid,
    pub gamma: f64,
    pub chain: ChainOut,
    pub anchor: Option<i64>,
    pub graphs: Vec<GraphOut>,
    pub layers: Vec<LayerOut>,
    pub estimates: Vec<Check>,
    pub sandwich: SandwichReport,
    pub pass: bool,
}

fn stack_out(stack: &LayerStack, loaded: &LoadedScene, ladder: RadiusLadder, radius_auto: bool, sandwich: SandwichReport) -> StackOut {
    let scene = &loaded.scene;
    let id = |i: usize| scene.id(i).to_string();
    let pass = stack.passes() && sandwich.pass;
    StackOut {
        format: STACK_FORMAT.into(),
        status: if pass { "pass" } else { "fail" }.into(),
        seed: scene.seed,
        dimension: scene.dim(),
        center: stack.center.clone(),
        radius: stack.radius,
        radius_auto,
        ladder,
        boundary: stack.boundary,
        frame: stack.frame.clone(),
        grid: stack.grid.clone(),
        gamma: stack.gamma,
        chain: ChainOut {
            plus: stack.chain.plus.iter().map(|&i| id(i)).collect(),
            minus: stack.chain.minus.iter().map(|&i| id(i)).collect(),
            l: stack.l(),
            m: stack.m(),
            sides_swapped: stack.sides_swapped,
        },
        anchor: stack.anchor,
        graphs: stack
            .graphs
            .iter()
            .map(|g| GraphOut {
                index: g.index,
                kind: g.kind,
                member: g.member.map(id),
                values: g.graph.values().to_vec(),
                grads: g.graph.grads().to_vec(),
                sup_grad: g.sup_grad,
                holder: g.holder,
            })
            .collect(),
        layers: stack
            .graphs
            .windows(2)
            .enumerate()
            .map(|(t, w)| LayerOut { lower: w[0].index, upper: w[1].index, component: stack.slots[t + 1].map(id) })
            .collect(),
        estimates: stack.checks.clone(),
        sandwich,
        pass,
    }
}

// ---------------------------------------------------------------- commands

#[derive(Debug, Parser)]
#[command(name = "layerstack", version, about = "Layer stacks for composite C^{1,γ} domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify all shape pairs, build the containment forest, check the partition.
    Validate { scene: PathBuf },
    /// Build the layer stack of a ball.
    Stack(StackArgs),
    /// Run a standalone check.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Args)]
pub struct StackArgs {
    pub scene: PathBuf,
    /// Ball center as comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub center: Option<Vec<f64>>,
    /// Ball radius, or `auto` for the admissible radius of the budget.
    #[arg(long)]
    pub radius: Option<String>,
    /// The center lies on the container boundary.
    #[arg(long)]
    pub boundary: bool,
    /// Nodes per lateral axis (odd).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json")]
    pub out: Vec<OutFormat>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    /// Run past ladder refusals and failed estimates, reporting failures.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub scene: PathBuf,
    /// Reifenberg flatness: DELTA RADIUS.
    #[arg(long, num_args = 2, value_names = ["DELTA", "RADIUS"])]
    pub reifenberg: Option<Vec<f64>>,
    /// Shape checked by --reifenberg (default: the container).
    #[arg(long)]
    pub shape: Option<String>,
    /// Normal opposition between two disjoint shapes: A B.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub opposition: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Re-check the estimates recorded in a stack file.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
}

/// Result of one command: the JSON printed on stdout and the exit code.
pub struct Outcome {
    pub json: String,
    pub code: i32,
}

pub fn run(cli: Cli) -> Outcome {
    let result = match cli.command {
        Command::Validate { scene } => cmd_validate(&scene),
        Command::Stack(a) => cmd_stack(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(o) => o,
        Err((e, seed)) => {
            let code = e.exit_code();
            let detail = match &e {
                CliError::Composite(CompositeError::TrichotomyViolation { i, j, counts, witnesses }) => Some(serde_json::json!({
                    "i": i, "j": j, "counts": counts, "witnesses": witnesses,
                })),
                _ => None,
            };
            let rep = ErrorReport {
                status: "error",
                kind: e.kind(),
                message: e.to_string(),
                exit_code: code,
                seed,
                detail: detail.as_ref(),
            };
            Outcome { json: to_json(&rep), code }
        }
    }
}

type CmdResult = Result<Outcome, (CliError, Option<u64>)>;

fn with_seed<T>(r: Result<T, impl Into<CliError>>, seed: Option<u64>) -> Result<T, (CliError, Option<u64>)> {
    r.map_err(|e| (e.into(), seed))
}

fn shape_kind(s: &Shape) -> String {
    let v = serde_json::to_value(s).unwrap_or_default();
    v.get("kind").and_then(|k| k.as_str()).unwrap_or("unknown").to_string()
}

pub fn cmd_validate(path: &Path) -> CmdResult {
    let loaded = load(path)?;
    let s = &loaded.scene;
    let partition = composite::partition_check(s, PARTITION_SAMPLES, s.seed, layers::SANDWICH_BAND, None);
    let pass = partition.pass;
    let rep = ValidateReport {
        status: if pass { "pass" } else { "fail" },
        seed: s.seed,
        dimension: s.dim(),
        members: (0..s.len())
            .map(|i| MemberReport {
                id: s.id(i).to_string(),
                kind: shape_kind(s.domain(i).shape()),
                parent: s.parent(i).map(|p| s.id(p).to_string()),
                depth: s.depth(i),
                children: s.children(i).iter().map(|&c| s.id(c).to_string()).collect(),
            })
            .collect(),
        relations: (0..s.len()).map(|i| (0..s.len()).map(|j| s.relation(i, j)).collect()).collect(),
        partition,
        ladder: verify::radius_ladder(&s.budget),
        pass,
    };
    Ok(Outcome { json: to_json(&rep), code: if pass { EXIT_PASS } else { EXIT_SCENE } })
}

fn parse_radius(word: &str) -> Result<Option<f64>, CliError> {
    if word.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    word.parse::<f64>()
        .ok()
        .filter(|r| r.is_finite() && *r > 0.0)
        .map(Some)
        .ok_or_else(|| CliError::Input(format!("radius must be a positive number or \"auto\", got {word:?}")))
}

pub fn cmd_stack(a: &StackArgs) -> CmdResult {
    let loaded = load(&a.scene)?;
    let seed = Some(loaded.scene.seed);
    let q = &loaded.file.query;
    let n = loaded.scene.dim();
    let center = a
        .center
        .clone()
        .or_else(|| q.center.clone())
        .ok_or_else(|| (CliError::Input("no center given (--center or [query].center)".into()), seed))?;
    if center.len() != n {
        return Err((CliError::Input(format!("center has {} coordinates, scene dimension is {n}", center.len())), seed));
    }
    let radius_word = match (&a.radius, &q.radius) {
        (Some(w), _) => w.clone(),
        (None, Some(RadiusSpec::Value(v))) => v.to_string(),
        (None, Some(RadiusSpec::Word(w))) => w.clone(),
        (None, None) => "auto".into(),
    };
    let ladder = verify::radius_ladder(&loaded.scene.budget);
    let given = with_seed(parse_radius(&radius_word), seed)?;
    let radius = given.unwrap_or(ladder.r0);
    let grid_res = a.grid.or(q.grid).unwrap_or(129);
    if grid_res < 3 || grid_res % 2 == 0 {
        return Err((CliError::Input(format!("grid must be odd and at least 3, got {grid_res}")), seed));
    }
    let opts = StackOptions { grid_res, force: a.force };
    let ball = Ball::new(&center, radius);
    let boundary = a.boundary || q.boundary;
    let stack = if boundary {
        layers::stack_boundary(&loaded.scene, &ball, &opts)
    } else {
        layers::stack_interior(&loaded.scene, &ball, &opts)
    };
    let stack = with_seed(stack, seed)?;
    let sandwich = layers::sandwich_verify(&stack, &loaded.scene, SANDWICH_SAMPLES, loaded.scene.seed);
    let out = stack_out(&stack, &loaded, ladder, given.is_none(), sandwich);
    let json = to_json(&out);
    let io_err = |e: io::Error| (CliError::Input(format!("{}: {e}", a.output_dir.display())), seed);
    std::fs::create_dir_all(&a.output_dir).map_err(io_err)?;
    for fmt in &a.out {
        match fmt {
            OutFormat::Json => std::fs::write(a.output_dir.join("stack.json"), &json).map_err(io_err)?,
            OutFormat::Csv => {
                for g in &out.graphs {
                    let path = a.output_dir.join(format!("graph_{}.csv", g.index));
                    std::fs::write(path, graph_csv(&stack, g)).map_err(io_err)?;
                }
            }
            OutFormat::Svg => {
                if n != 2 {
                    return Err((CliError::Input("SVG output needs a two-dimensional scene".into()), seed));
                }
                std::fs::write(a.output_dir.join("stack.svg"), stack_svg(&stack, &loaded.scene)).map_err(io_err)?;
            }
        }
    }
    let code = if out.pass { EXIT_PASS } else { EXIT_VERIFY };
    Ok(Outcome { json, code })
}

fn graph_csv(stack: &LayerStack, g: &GraphOut) -> String {
    let k = stack.grid.dim;
    let mut s = String::new();
    let lateral: Vec<String> = (0..k).map(|i| format!("y{}", i + 2)).collect();
    let grads: Vec<String> = (0..k).map(|i| format!("dphi_dy{}", i + 2)).collect();
    let _ = writeln!(s, "{},phi,{}", lateral.join(","), grads.join(","));
    for idx in 0..stack.grid.len() {
        let mut row: Vec<String> = stack.grid.coords(idx).iter().map(|v| format!("{v:.16e}")).collect();
        row.push(format!("{:.16e}", g.values[idx]));
        row.extend(g.grads[idx * k..(idx + 1) * k].iter().map(|v| format!("{v:.16e}")));
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

const PALETTE: [&str; 8] = ["#d9e6f2", "#f2dcc7", "#d5ecd4", "#eed6ea", "#f4efc4", "#d3e9ea", "#e6d8cc", "#dedede"];

/// Draws the ball with each slab filled, in the stack frame scaled to the
/// ball (first axis pointing up).
fn stack_svg(stack: &LayerStack, scene: &CompositeScene) -> String {
    let r = stack.radius;
    let px = 200.0 / r;
    let to_px = |lateral: f64, up: f64| (250.0 + lateral * px, 250.0 - up * px);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="500" height="500" viewBox="0 0 500 500">"#);
    let _ = writeln!(s, r#"<defs><clipPath id="ball"><circle cx="250" cy="250" r="200"/></clipPath></defs>"#);
    let _ = writeln!(s, r#"<g clip-path="url(#ball)">"#);
    let xs: Vec<f64> = (0..stack.grid.len()).map(|i| stack.grid.coords(i)[0]).collect();
    let vals = |t: usize| -> Vec<f64> { stack.graphs[t].graph.values().iter().map(|v| v.clamp(-r, r)).collect() };
    for t in 0..stack.graphs.len() - 1 {
        let (lo, hi) = (vals(t), vals(t + 1));
        let mut pts = Vec::new();
        for (x, v) in xs.iter().zip(&lo) {
            pts.push(to_px(*x, *v));
        }
        for (x, v) in xs.iter().zip(&hi).rev() {
            pts.push(to_px(*x, *v));
        }
        let fill = match stack.slots[t + 1] {
            Some(c) => PALETTE[c % PALETTE.len()],
            None => "#ffffff",
        };
        let path: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.3},{b:.3}")).collect();
        let label = stack.slots[t + 1].map(|c| scene.id(c)).unwrap_or("outside");
        let _ = writeln!(s, r#"<polygon points="{}" fill="{fill}" stroke="none"><title>{label}</title></polygon>"#, path.join(" "));
    }
    for g in stack.graphs.iter().filter(|g| g.kind == GraphKind::Interface) {
        let path: Vec<String> = xs
            .iter()
            .zip(g.graph.values())
            .map(|(x, v)| {
                let (a, b) = to_px(*x, *v);
                format!("{a:.3},{b:.3}")
            })
            .collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#333333" stroke-width="1.5"/>"##, path.join(" "));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<circle cx="250" cy="250" r="200" fill="none" stroke="#000000" stroke-width="1"/>"##);
    let _ = writeln!(s, "</svg>");
    s
}

#[derive(Serialize)]
struct ReifenbergOut {
    status: &'static str,
    seed: u64,
    shape: String,
    report: ReifenbergReport,
}

#[derive(Serialize)]
struct OppositionOut {
    status: &'static str,
    seed: u64,
    shapes: [String; 2],
    report: OppositionReport,
}

#[derive(Serialize)]
struct EstimatesOut {
    status: &'static str,
    seed: u64,
    checks: Vec<Check>,
    ordered: bool,
    pass: bool,
}

pub fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    let loaded = load(&a.scene)?;
    let s = &loaded.scene;
    let seed = Some(s.seed);
    let member = |id: &str| s.index_of(id).ok_or_else(|| (CliError::Input(format!("unknown shape {id:?}")), seed));
    if let Some(v) = &a.reifenberg {
        let (delta, radius) = (v[0], v[1]);
        let i = match &a.shape {
            Some(id) => member(id)?,
            None => 0,
        };
        let report = verify::reifenberg_check(s.domain(i), delta, radius, 256, 4, None);
        let pass = report.pass;
        let out = ReifenbergOut { status: if pass { "pass" } else { "fail" }, seed: s.seed, shape: s.id(i).to_string(), report };
        return Ok(Outcome { json: to_json(&out), code: if pass { EXIT_PASS } else { EXIT_VERIFY } });
    }
    if let Some(ids) = &a.opposition {
        let (i, j) = (member(&ids[0])?, member(&ids[1])?);
        let need = |v: &Option<Vec<f64>>, name: &str| {
            v.clone().ok_or_else(|| (CliError::Input(format!("--opposition needs --{name}")), seed))
        };
        let (p, q) = (need(&a.p, "p")?, need(&a.q, "q")?);
        let scale = a.scale.ok_or_else(|| (CliError::Input("--opposition needs --scale".into()), seed))?;
        let delta = a.delta.unwrap_or(s.budget.delta);
        let report = with_seed(verify::normal_opposition_check(s.domain(i), s.domain(j), &p, &q, scale, delta, 1e-9), seed)?;
        let pass = report.check.pass;
        let out = OppositionOut {
            status: if pass { "pass" } else { "fail" },
            seed: s.seed,
            shapes: [ids[0].clone(), ids[1].clone()],
            report,
        };
        return Ok(Outcome { json: to_json(&out), code: if pass { EXIT_PASS } else { EXIT_VERIFY } });
    }
    if let Some(path) = &a.estimates {
        let text = std::fs::read_to_string(path).map_err(|e| (CliError::Input(format!("{}: {e}", path.display())), seed))?;
        let stack: StackOut = serde_json::from_str(&text).map_err(|e| (CliError::Input(format!("{}: {e}", path.display())), seed))?;
        let (checks, ordered) = with_seed(recheck_estimates(&stack, &s.budget), seed)?;
        let pass = ordered && checks.iter().all(|c| c.pass);
        let out = EstimatesOut { status: if pass { "pass" } else { "fail" }, seed: s.seed, checks, ordered, pass };
        return Ok(Outcome { json: to_json(&out), code: if pass { EXIT_PASS } else { EXIT_VERIFY } });
    }
    Err((CliError::Input("verify needs one of --reifenberg, --opposition, --estimates".into()), seed))
}

/// Recomputes the derivative estimates and ordering from the stored graphs.
pub fn recheck_estimates(stack: &StackOut, b: &HolderBudget) -> Result<(Vec<Check>, bool), CliError> {
    if stack.format != STACK_FORMAT {
        return Err(CliError::Input(format!("unknown stack format {:?}", stack.format)));
    }
    let grid = Grid::new(stack.grid.dim, stack.grid.half_width, stack.grid.res).map_err(CliError::Input)?;
    let r = stack.radius;
    let mut checks = Vec::new();
    let mut graphs = Vec::new();
    for g in &stack.graphs {
        if g.values.len() != grid.len() || g.grads.len() != grid.len() * grid.dim {
            return Err(CliError::Input(format!("graph {} does not match the grid", g.index)));
        }
        let gg = GridGraph::new(grid.clone(), g.values.clone(), g.grads.clone());
        if g.kind == GraphKind::Interface {
            checks.push(Check::at_most(format!("sup|Dφ_{}|", g.index), gg.sup_grad(r), b.tau + ESTIMATE_SLACK));
            checks.push(Check::at_most(format!("[Dφ_{}]_γ", g.index), gg.holder(b.gamma, r), 288.0 * b.n as f64 * b.theta));
            if stack.anchor == Some(g.index) {
                checks.push(Check::at_most(format!("|Dφ_{}(0')|", g.index), linalg::norm(gg.grad_at_center()), layers::ANCHOR_SLOPE_TOL));
                if stack.boundary {
                    checks.push(Check::at_most(format!("|φ_{}(0')|", g.index), gg.value_at_center().abs(), layers::BOUNDARY_VALUE_TOL));
                }
            }
        }
        graphs.push(gg);
    }
    let ordered = grid.nodes_within(r).into_iter().all(|idx| {
        graphs
            .windows(2)
            .all(|w| w[0].values()[idx].clamp(-r, r) - w[1].values()[idx].clamp(-r, r) <= layers::ORDER_TOL)
    });
    Ok((checks, ordered))
}

/// Entry point used by the binary: parses arguments, runs, prints.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_INPUT,
            };
            let _ = e.print();
            return code;
        }
    };
    let out = run(cli);
    println!("{}", out.json);
    if out.code != EXIT_PASS {
        eprintln!("layerstack: exit {}", out.code);
    }
    out.code
}
