//! Command-line front end: data collection, surrogate fitting, sequence
//! synthesis, candidate mining, and replay against TOML benchmark worlds.
//!
//! Exit codes: 0 on success, 2 for configuration problems (unreadable or
//! invalid inputs), 3 when --require-attack is set and no profitable
//! sequence validates.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;
use windfall::actionspec::AttackVector;
use windfall::benchmark::{self, Benchmark};
use windfall::intmath::Amount;
use windfall::ledger::{parse_rational, profit, rational_string, rational_to_f64};
use windfall::report;
use windfall::sampler::{self, SampleConfig};
use windfall::surrogate::{self, ApproxMethod};
use windfall::synthesis::{self, SynthesisConfig};
use windfall::traceminer;
use windfall::world::World;

const EXIT_CONFIG: u8 = 2;
const EXIT_NO_ATTACK: u8 = 3;
/// Hard cap on worker threads regardless of machine size.
const MAX_WORKERS: usize = 18;

#[derive(Parser)]
#[command(name = "windfall", version, about = "Finds profitable action sequences against simulated protocol deployments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample action executions into a JSONL dataset.
    Collect(CollectArgs),
    /// Fit surrogates to a dataset and print training accuracy.
    Fit(FitArgs),
    /// Search for profitable action sequences.
    Synthesize(SynthesizeArgs),
    /// Execute one concrete sequence and report its actual profit.
    Validate(ValidateArgs),
    /// Mine action candidates from an interface and trace corpus.
    Mine(MineArgs),
    /// Re-execute the benchmark's reference sequence step by step.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct CommonSearch {
    /// Benchmark definition (TOML).
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the machine's cores, capped.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    common: CommonSearch,
    /// Points per action.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    log_uniform: bool,
    /// Output dataset path (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonSearch,
    /// Dataset produced by `collect`.
    #[arg(long)]
    data: PathBuf,
    /// poly, nearest, or exact.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    common: CommonSearch,
    #[arg(long)]
    method: Option<String>,
    /// Divergence threshold as an exact rational, e.g. 1/20.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    /// Maximum sequence length.
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Initial points per action.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    max_repeats: Option<usize>,
    #[arg(long)]
    log_uniform: bool,
    /// Disable counterexample-driven refinement.
    #[arg(long)]
    no_refine: bool,
    /// Exit 3 unless a profitable sequence validates.
    #[arg(long)]
    require_attack: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    benchmark: PathBuf,
    /// JSON file with {"actions": [names], "params": [[values]]}.
    #[arg(long)]
    attack: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    /// Interface description (JSON).
    #[arg(long)]
    interfaces: PathBuf,
    /// Historical invocations (JSONL).
    #[arg(long)]
    traces: PathBuf,
    /// Benchmark world to probe candidates against.
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value_t = traceminer::DEFAULT_MAX_CHOICES)]
    max_choices: usize,
    /// Output path for mined candidates.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    benchmark: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Collect(args) => cmd_collect(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Synthesize(args) => cmd_synthesize(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Mine(args) => cmd_mine(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("windfall: {err:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn init_workers(requested: Option<usize>) {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let n = requested.unwrap_or(cores).clamp(1, MAX_WORKERS);
    // Errors mean a pool already exists (tests call in-process); keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// Defaults, overlaid with the benchmark's search table, overlaid with
/// explicit flags.
fn search_config(bench: &Benchmark, args: &SynthesizeArgs) -> anyhow::Result<SynthesisConfig> {
    let mut cfg = SynthesisConfig::default();
    let o = &bench.overrides;
    if let Some(v) = o.max_length {
        cfg.max_length = v;
    }
    if let Some(e) = &o.epsilon {
        cfg.epsilon = parse_rational(e)?;
    }
    if let Some(v) = o.degree {
        cfg.degree = v;
    }
    if let Some(v) = o.initial_points {
        cfg.initial_points = v;
    }
    if let Some(v) = o.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = o.timeout_secs {
        cfg.timeout = Duration::from_secs(v);
    }
    if o.max_repeats.is_some() {
        cfg.max_repeats = o.max_repeats;
    }

    if let Some(m) = &args.method {
        cfg.method = ApproxMethod::from_str(m).map_err(|e| anyhow::anyhow!(e))?;
    }
    if let Some(e) = &args.epsilon {
        cfg.epsilon = parse_rational(e)?;
    }
    if let Some(v) = args.length {
        cfg.max_length = v;
    }
    if let Some(v) = args.degree {
        cfg.degree = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.timeout_secs {
        cfg.timeout = Duration::from_secs(v);
    }
    if let Some(v) = args.points {
        cfg.initial_points = v;
    }
    if args.max_repeats.is_some() {
        cfg.max_repeats = args.max_repeats;
    }
    cfg.log_uniform = args.log_uniform;
    cfg.refine = !args.no_refine;
    cfg.seed = args.common.seed;
    Ok(cfg)
}

fn cmd_collect(args: CollectArgs) -> anyhow::Result<u8> {
    init_workers(args.common.workers);
    let bench = benchmark::load_path(&args.common.benchmark)?;
    let cfg = SampleConfig {
        per_action: args.points.unwrap_or(SampleConfig::default().per_action),
        log_uniform: args.log_uniform,
        ..SampleConfig::default()
    };
    let datasets = sampler::collect(&bench.world, &bench.actions, &cfg, args.common.seed)?;
    sampler::write_jsonl(&args.out, &datasets)?;
    let total: usize = datasets.iter().map(Vec::len).sum();
    eprintln!("collected {total} points across {} actions into {}", bench.actions.len(), args.out.display());
    Ok(0)
}

#[derive(Serialize)]
struct FitLine {
    action: String,
    points: usize,
    max_relative_error: f64,
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<u8> {
    init_workers(args.common.workers);
    let bench = benchmark::load_path(&args.common.benchmark)?;
    let datasets = sampler::read_jsonl(&args.data, bench.actions.len())?;
    let method = match &args.method {
        Some(m) => ApproxMethod::from_str(m).map_err(|e| anyhow::anyhow!(e))?,
        None => ApproxMethod::Polynomial,
    };
    let degree = args.degree.unwrap_or(2);
    let surrogates = surrogate::fit_models(&bench.world, &bench.actions, &datasets, method, degree)?;
    let mut lines = Vec::new();
    for (i, spec) in bench.actions.iter().enumerate() {
        let err = match method {
            // Exact summaries have no pointwise training error.
            ApproxMethod::Exact => 0.0,
            _ => surrogate::max_relative_error(&surrogates.models[i], &datasets[i]),
        };
        lines.push(FitLine { action: spec.name.clone(), points: datasets[i].len(), max_relative_error: err });
    }
    println!("{}", serde_json::to_string_pretty(&lines)?);
    Ok(0)
}

fn cmd_synthesize(args: SynthesizeArgs) -> anyhow::Result<u8> {
    init_workers(args.common.workers);
    let bench = benchmark::load_path(&args.common.benchmark)?;
    let cfg = search_config(&bench, &args)?;
    let result = synthesis::run(&bench.world, &bench.actions, &cfg)?;
    let report = report::build_report(&bench, &cfg, &result);
    let json = report::to_json(&report);
    match &args.out {
        Some(path) => std::fs::write(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(best) = result.best {
        let attack = &result.validated[best];
        eprintln!("validated {} sequences; best {} at {:.2} USD", result.validated.len(), attack.rendered, attack.actual_usd);
    } else {
        eprintln!("no profitable sequence validated");
    }
    if args.require_attack && result.best.is_none() {
        return Ok(EXIT_NO_ATTACK);
    }
    Ok(0)
}

/// Matches the attack block of a run report, so a reported sequence can be
/// fed straight back in.
#[derive(Deserialize)]
struct AttackFile {
    actions: Vec<String>,
    params: Vec<Vec<serde_json::Value>>,
}

#[derive(Serialize)]
struct StepResult {
    action: String,
    params: Vec<String>,
    executed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    revert: Option<String>,
}

#[derive(Serialize)]
struct ValidationReport {
    steps: Vec<StepResult>,
    executed_fully: bool,
    profit_usd: f64,
    profit_usd_exact: String,
    per_token: BTreeMap<String, String>,
}

fn parse_amount_value(v: &serde_json::Value) -> anyhow::Result<Amount> {
    match v {
        serde_json::Value::Number(n) => n
            .as_i64()
            .map(Amount::from)
            .ok_or_else(|| anyhow::anyhow!("parameter {n} is not an integer")),
        serde_json::Value::String(s) => {
            windfall::benchmark::parse_amount(s).map_err(|e| anyhow::anyhow!("parameter {s:?}: {e}"))
        }
        other => anyhow::bail!("parameter {other} is neither an integer nor a string"),
    }
}

fn execute_sequence(world: &World, bench: &Benchmark, vector: &AttackVector) -> ValidationReport {
    let mut scratch = world.clone();
    let before = scratch.state.clone();
    let mut steps = Vec::new();
    let mut executed_fully = true;
    for (step, &idx) in vector.actions.iter().enumerate() {
        let spec = &bench.actions[idx];
        let params = &vector.params[step];
        let outcome = scratch.execute(&spec.protocol, &spec.method, &spec.fixed, params);
        let revert = outcome.as_ref().err().map(|(e, _)| e.to_string());
        let executed = revert.is_none();
        steps.push(StepResult {
            action: spec.name.clone(),
            params: params.iter().map(|p| p.to_string()).collect(),
            executed,
            revert,
        });
        if !executed {
            executed_fully = false;
            break;
        }
    }
    let gains = profit(&before, &scratch.state, &scratch.adversary, &scratch.registry);
    ValidationReport {
        steps,
        executed_fully,
        profit_usd: rational_to_f64(&gains.usd),
        profit_usd_exact: rational_string(&gains.usd),
        per_token: gains
            .per_token
            .iter()
            .filter(|(_, &d)| d != 0)
            .map(|(&t, d)| (scratch.registry.symbol(t).to_string(), d.to_string()))
            .collect(),
    }
}

fn cmd_validate(args: ValidateArgs) -> anyhow::Result<u8> {
    let bench = benchmark::load_path(&args.benchmark)?;
    let text = std::fs::read_to_string(&args.attack)?;
    let file: AttackFile = serde_json::from_str(&text)?;
    if file.actions.len() != file.params.len() {
        anyhow::bail!("attack lists {} actions but {} parameter rows", file.actions.len(), file.params.len());
    }
    let mut actions = Vec::new();
    for name in &file.actions {
        let idx = bench
            .actions
            .iter()
            .position(|s| &s.name == name)
            .ok_or_else(|| anyhow::anyhow!("benchmark has no action named {name:?}"))?;
        actions.push(idx);
    }
    let mut params = Vec::new();
    for (row, &idx) in file.params.iter().zip(&actions) {
        if row.len() != bench.actions[idx].arity() {
            anyhow::bail!(
                "action {:?} takes {} parameters, attack supplies {}",
                bench.actions[idx].name,
                bench.actions[idx].arity(),
                row.len()
            );
        }
        params.push(row.iter().map(parse_amount_value).collect::<anyhow::Result<Vec<Amount>>>()?);
    }
    let vector = AttackVector { actions, params };
    let report = execute_sequence(&bench.world, &bench, &vector);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn cmd_mine(args: MineArgs) -> anyhow::Result<u8> {
    let interfaces = traceminer::load_interfaces(&args.interfaces)?;
    let corpus = traceminer::load_traces(&args.traces)?;
    let bench = benchmark::load_path(&args.benchmark)?;
    let report = traceminer::mine(&interfaces, &corpus, &bench.world, args.max_choices)?;
    std::fs::write(&args.out, traceminer::report_json(&report))?;
    eprintln!(
        "mined {} actions ({} dropped as independent) into {}",
        report.actions.len(),
        report.dropped.independent.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_replay(args: ReplayArgs) -> anyhow::Result<u8> {
    let bench = benchmark::load_path(&args.benchmark)?;
    let gt = bench
        .ground_truth
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("benchmark {} declares no reference sequence", bench.name))?;
    let vector = AttackVector { actions: gt.actions.clone(), params: gt.params.clone() };
    let report = execute_sequence(&bench.world, &bench, &vector);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

