//! `keyclip` command-line front end.
//!
//! Machine output goes to stdout (or `--out`); diagnostics go to stderr.
//! Exit codes: 0 success, 1 data errors, 2 usage errors.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use keyclip::eval::{make_instance, sweep, token_report_csv, InstanceParams, Policy, SweepConfig};
use keyclip::relevance::curve_csv;
use keyclip::{
    coverage, its_select, plan, read_container, relevancy_scores, token_report, topk_select, uniform_select,
    watershed_select, write_container, ClipPlan, Container, Curve, FrameSelection, GroundTruth, Picked,
    SelectionConfig, DEFAULT_ITS_ALPHA,
};

#[derive(Parser)]
#[command(name = "keyclip", version, about = "Query-aware key clip selection for long videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan token-budgeted key clips for a container with a query.
    Select(SelectArgs),
    /// Run a reference frame selector.
    Baseline(BaselineArgs),
    /// Write a synthetic container and its ground truth.
    Synth(SynthArgs),
    /// Score a plan or selection against ground truth.
    Eval(EvalArgs),
    /// Sweep policies, budgets, and anchor ratios over synthetic instances.
    Sweep(SweepArgs),
    /// Export the frame relevancy curve as CSV.
    Curve(CurveArgs),
    /// Compare token usage of several plans against a baseline plan.
    Tokens(TokensArgs),
}

#[derive(Args)]
struct SelectArgs {
    /// Input container (.f2ce or .f2ce.json).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Budget in full-resolution frames.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Anchor count [default: k].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k_anchor: Option<u64>,
    #[arg(long, default_value_t = 2.0)]
    s_max: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda_r: f64,
    #[arg(long, default_value_t = 0.05)]
    lambda_l: f64,
    /// Pixels per visual token.
    #[arg(long, default_value_t = 392.0)]
    z: f64,
    /// Output dimension granularity in pixels.
    #[arg(long, default_value_t = 28, value_parser = clap::value_parser!(u32).range(1..))]
    grid: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep overlapping clips separate.
    #[arg(long)]
    no_merge: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Uniform,
    Topk,
    Its,
    Watershed,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Weight exponent for `its`.
    #[arg(long, default_value_t = DEFAULT_ITS_ALPHA)]
    alpha: f64,
}

#[derive(Args)]
struct InstanceArgs {
    /// Frames per video.
    #[arg(long, default_value_t = 1800, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    /// Planted events per video.
    #[arg(long, default_value_t = 3)]
    events: usize,
    #[arg(long, default_value_t = 0.6)]
    amp: f64,
    /// Bump width in frames.
    #[arg(long, default_value_t = 10.0)]
    bump_width: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Coverage half-window in frames.
    #[arg(long, default_value_t = GroundTruth::DEFAULT_WINDOW)]
    window: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(2..))]
    dim: u64,
    #[arg(long, default_value_t = 448, value_parser = clap::value_parser!(u32).range(1..))]
    src_height: u32,
    #[arg(long, default_value_t = 448, value_parser = clap::value_parser!(u32).range(1..))]
    src_width: u32,
}

impl InstanceArgs {
    fn params(&self) -> Result<InstanceParams, Failure> {
        if !(self.amp.is_finite() && self.bump_width > 0.0 && self.noise >= 0.0) {
            return Err(Failure::usage("--amp must be finite, --bump-width positive, --noise non-negative"));
        }
        Ok(InstanceParams {
            n: self.frames as usize,
            events: self.events,
            amp: self.amp,
            width: self.bump_width,
            noise_sigma: self.noise,
            window: self.window,
            dim: self.dim as usize,
            src_height: self.src_height,
            src_width: self.src_width,
        })
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Container path; a `.json` extension writes the JSON mirror.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON path.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    instance: InstanceArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Plan JSON or selection JSON.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Override the ground truth's window.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    KeyClips,
    Uniform,
    Topk,
    Its,
    Watershed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "key-clips,uniform")]
    policies: Vec<PolicyArg>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    ks: Vec<usize>,
    /// K_anchor / K ratios.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    ratios: Vec<f64>,
    /// Number of seeded instances.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ITS_ALPHA)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    instance: InstanceArgs,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TokensArgs {
    /// Named plan as NAME=PATH; repeat for each policy.
    #[arg(long = "plan", required = true, value_parser = parse_named)]
    plans: Vec<(String, PathBuf)>,
    /// Name of the plan the deltas are measured against.
    #[arg(long)]
    baseline: String,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), path.into())),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

/// A failed command: exit code plus message.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn data(message: impl Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

fn data_err<E: Display>(context: &Path) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::data(format!("{}: {e}", context.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(data_err(path)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).map_err(Failure::data)
        }
    }
}

fn load(path: &Path) -> Result<Container<f64>, Failure> {
    read_container(path).map_err(data_err(path))
}

fn load_curve(path: &Path) -> Result<Curve, Failure> {
    let c = load(path)?;
    let query = c.query.ok_or_else(|| Failure::data(format!("{}: missing query embedding", path.display())))?;
    relevancy_scores(&c.sequence, &query).map_err(data_err(path))
}

fn cmd_select(a: SelectArgs) -> Result<(), Failure> {
    let k = a.k as usize;
    let cfg = SelectionConfig {
        k,
        k_anchor: a.k_anchor.map_or(k, |v| v as usize),
        s_max: a.s_max,
        lambda_r: a.lambda_r,
        lambda_l: a.lambda_l,
        z: a.z,
        grid: a.grid,
        seed: a.seed,
        merge: !a.no_merge,
    };
    cfg.validate().map_err(Failure::usage)?;
    let c = load(&a.input)?;
    let query = c.query.ok_or_else(|| Failure::data(format!("{}: missing query embedding", a.input.display())))?;
    let plan = plan(&c.sequence, &query, &cfg).map_err(data_err(&a.input))?;
    emit(a.out.as_deref(), &plan.to_json())
}

fn cmd_baseline(a: BaselineArgs) -> Result<(), Failure> {
    if !(a.alpha.is_finite() && a.alpha > 0.0) {
        return Err(Failure::usage("--alpha must be positive"));
    }
    let k = a.k as usize;
    let sel = match a.method {
        Method::Uniform => uniform_select(load(&a.input)?.sequence.len(), k),
        Method::Topk => topk_select(&load_curve(&a.input)?, k),
        Method::Its => its_select(&load_curve(&a.input)?, k, a.alpha),
        Method::Watershed => watershed_select(&load_curve(&a.input)?, k),
    };
    emit(a.out.as_deref(), &sel.to_json())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let params = a.instance.params()?;
    let inst = make_instance(&params, a.seed);
    write_container(&inst.sequence, Some(&inst.query), &a.out).map_err(data_err(&a.out))?;
    let mut gt = serde_json::to_string_pretty(&inst.truth).map_err(Failure::data)?;
    gt.push('\n');
    fs::write(&a.gt, gt).map_err(data_err(&a.gt))
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.input).map_err(data_err(&a.input))?;
    let picked = match ClipPlan::from_json(&text) {
        Ok(plan) => Picked::from(&plan),
        Err(_) => {
            let sel: FrameSelection = serde_json::from_str(&text)
                .map_err(|e| Failure::data(format!("{}: neither a plan nor a selection: {e}", a.input.display())))?;
            Picked::from(&sel)
        }
    };
    let gt_text = fs::read_to_string(&a.gt).map_err(data_err(&a.gt))?;
    let mut gt: GroundTruth = serde_json::from_str(&gt_text).map_err(data_err(&a.gt))?;
    if let Some(w) = a.window {
        gt.window = w;
    }
    let gt = GroundTruth::new(gt.event_centers, gt.window);
    let mut out = serde_json::to_string(&coverage(&picked, &gt)).map_err(Failure::data)?;
    out.push('\n');
    emit(a.out.as_deref(), &out)
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    if a.ks.contains(&0) {
        return Err(Failure::usage("--ks values must be at least 1"));
    }
    if a.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Failure::usage("--ratios values must be positive"));
    }
    if !(a.alpha.is_finite() && a.alpha > 0.0) {
        return Err(Failure::usage("--alpha must be positive"));
    }
    let policies = a
        .policies
        .iter()
        .map(|p| match p {
            PolicyArg::KeyClips => Policy::KeyClips,
            PolicyArg::Uniform => Policy::Uniform,
            PolicyArg::Topk => Policy::TopK,
            PolicyArg::Its => Policy::Its { alpha: a.alpha },
            PolicyArg::Watershed => Policy::Watershed,
        })
        .collect();
    let cfg = SweepConfig {
        policies,
        ks: a.ks,
        anchor_ratios: a.ratios,
        seeds: (a.seed..a.seed + a.seeds).collect(),
        instance: a.instance.params()?,
    };
    let report = sweep(&cfg).map_err(Failure::data)?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_curve(a: CurveArgs) -> Result<(), Failure> {
    let curve = load_curve(&a.input)?;
    emit(a.out.as_deref(), &curve_csv(&curve))
}

fn cmd_tokens(a: TokensArgs) -> Result<(), Failure> {
    let mut plans = Vec::with_capacity(a.plans.len());
    for (name, path) in &a.plans {
        let text = fs::read_to_string(path).map_err(data_err(path))?;
        plans.push((name.clone(), ClipPlan::from_json(&text).map_err(data_err(path))?));
    }
    let rows = token_report(&plans, &a.baseline)
        .ok_or_else(|| Failure::usage(format!("--baseline {:?} does not name a --plan", a.baseline)))?;
    let text = match a.format {
        Format::Csv => token_report_csv(&rows),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rows).map_err(Failure::data)?;
            s.push('\n');
            s
        }
    };
    emit(a.out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Tokens(a) => cmd_tokens(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("keyclip: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
