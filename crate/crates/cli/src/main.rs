use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};
use thiserror::Error;

use zar_core::ast::Command;
use zar_core::cftree::dump;
use zar_core::compile::compile;
use zar_core::debias::{debias, elim_choices};
use zar_core::dist::{cwp_of, Estimate, IterConfig};
use zar_core::error::Error as CoreError;
use zar_core::parser::{parse_expr, parse_source, ParseError};
use zar_core::sampler::{
    prepare, program_hash, sample, sample_many, write_samples, FixedStream, SampleRecord, SamplerConfig,
};
use zar_core::semantics::exec_projected;
use zar_core::stats::{self, Reference, Tolerance};
use zar_core::value::{fmt_rational_short, rat, to_f64, State, Value};

#[derive(Parser)]
#[command(name = "zar", version, about = "Compile probabilistic programs to random-bit samplers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the CF tree of a program at some stage of the pipeline.
    Compile(CompileArgs),
    /// Compute a posterior expectation or event probability exactly.
    Infer(InferArgs),
    /// Draw samples.
    Sample(SampleArgs),
    /// Sample and compare against a reference distribution.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ProgramArgs {
    /// Program source file.
    file: PathBuf,
    /// Override a `#param` default, e.g. `--param p=1/2`.
    #[arg(long = "param", value_name = "NAME=EXPR")]
    params: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Raw,
    Elim,
    Debias,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long, value_enum, default_value = "debias")]
    stage: Stage,
    /// Levels of nested loops to expand at their initial state.
    #[arg(long, default_value_t = 1)]
    expand_depth: usize,
}

#[derive(Args)]
struct IterArgs {
    /// Stop iterating a loop once the mass still inside it is at most this.
    #[arg(long, default_value = "1/1000000000")]
    tol: String,
    /// Body expansions allowed per loop entry.
    #[arg(long, default_value_t = 10_000)]
    max_iters: u64,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Expectation to compute (numeric or boolean expression).
    #[arg(long, conflicts_with = "event", required_unless_present = "event")]
    query: Option<String>,
    /// Event whose posterior probability to compute.
    #[arg(long)]
    event: Option<String>,
    #[command(flatten)]
    iter: IterArgs,
}

#[derive(Args)]
struct SamplerArgs {
    /// Number of samples.
    #[arg(short = 'n', default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(short = 'j')]
    jobs: Option<usize>,
    /// Node visits allowed per attempt.
    #[arg(long, default_value_t = 10_000_000)]
    max_steps: u64,
    /// Attempts allowed per sample.
    #[arg(long)]
    max_restarts: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Write samples here instead of standard output; the summary then goes
    /// to standard output.
    #[arg(short = 'o')]
    out: Option<PathBuf>,
    /// Replay this fixed bit string (`0`/`1`) instead of the seeded source.
    #[arg(long)]
    bits: Option<String>,
    /// Record only this variable instead of the whole final state.
    #[arg(long)]
    var: Option<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Variable whose distribution is checked.
    #[arg(long)]
    var: String,
    /// `oracle` or a JSON file mapping values to probabilities.
    #[arg(long, default_value = "oracle")]
    reference: String,
    #[arg(long, default_value_t = 1e-2)]
    max_tv: f64,
    #[command(flatten)]
    iter: IterArgs,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Eval(#[from] CoreError),
    #[error("{0}")]
    Io(String),
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Rejected(Vec<String>),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(e) if e.is_syntax() => 1,
            CliError::Parse(_) | CliError::Eval(_) => 2,
            CliError::Io(_) => 3,
            CliError::Rejected(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load(args: &ProgramArgs) -> Result<(Command, String)> {
    let text = fs::read_to_string(&args.file).map_err(|e| io_err(&args.file, e))?;
    let src = parse_source(&text)?;
    let mut overrides = Vec::new();
    for p in &args.params {
        let (name, value) = p
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--param expects NAME=EXPR, got `{p}`")))?;
        overrides.push((name.trim().to_string(), parse_expr(value)?));
    }
    let body = src.instantiate(&overrides)?;
    let described: Vec<String> = src
        .params
        .iter()
        .map(|(name, default)| {
            let chosen = overrides.iter().rev().find(|(o, _)| o == &**name).map_or(default, |(_, e)| e);
            format!("{name}={}", zar_core::pretty::pretty_expr(chosen))
        })
        .collect();
    Ok((body, described.join(",")))
}

fn iter_config(args: &IterArgs) -> Result<IterConfig> {
    let tol = match parse_expr(&args.tol)?.eval(&State::new())?.as_rational() {
        Some(t) if t >= rat(0, 1) => t,
        _ => return Err(CliError::Usage(format!("--tol must be a non-negative number, got `{}`", args.tol))),
    };
    Ok(IterConfig { tolerance: tol, max_iters: args.max_iters })
}

fn sampler_config(args: &SamplerArgs) -> SamplerConfig {
    SamplerConfig { max_steps: args.max_steps, max_restarts: args.max_restarts }
}

/// Run `f` on a pool of `jobs` threads, or the default pool.
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn cmd_compile(args: &CompileArgs) -> Result<String> {
    let (c, _) = load(&args.program)?;
    let mut t = compile(&c, &State::new())?;
    if matches!(args.stage, Stage::Elim | Stage::Debias) {
        t = elim_choices(&t)?;
    }
    if matches!(args.stage, Stage::Debias) {
        t = debias(&t)?;
    }
    Ok(dump(&t, args.expand_depth))
}

fn estimate_json(e: &Estimate) -> Json {
    let mut out = serde_json::Map::new();
    if e.is_exact() {
        out.insert("value".into(), json!(to_f64(&e.value)));
        out.insert("exact".into(), json!(fmt_rational_short(&e.value)));
    } else {
        let hi = e.upper.as_ref().map(to_f64);
        out.insert("value".into(), json!([to_f64(&e.lower), hi]));
    }
    out.insert("iterations".into(), json!(e.iterations));
    out.insert("converged".into(), json!(e.converged));
    Json::Object(out)
}

fn cmd_infer(args: &InferArgs) -> Result<String> {
    let (c, _) = load(&args.program)?;
    let cfg = iter_config(&args.iter)?;
    let (text, is_event) = match (&args.query, &args.event) {
        (Some(q), _) => (q, false),
        (None, Some(e)) => (e, true),
        (None, None) => return Err(CliError::Usage("give --query or --event".into())),
    };
    let f = parse_expr(text)?;
    let mut keep = BTreeSet::new();
    f.free_vars(&mut keep);
    let d = exec_projected(&c, &State::new(), &keep, &cfg)?;
    if is_event {
        for s in d.mass.keys() {
            if f.eval(s)?.as_bool().is_none() {
                return Err(CoreError::TypeError(format!("event `{text}` is not boolean at {{{s}}}")).into());
            }
        }
    }
    Ok(estimate_json(&cwp_of(&d, &f)?).to_string())
}

fn summary(records: &[SampleRecord], var: Option<&str>, seed: u64, hash: &str) -> Result<Json> {
    let bits: Vec<f64> = records.iter().map(|r| r.bits as f64).collect();
    let restarts: Vec<f64> = records.iter().map(|r| r.restarts as f64).collect();
    let mut out = json!({
        "program": hash,
        "seed": seed,
        "n": records.len(),
        "bit_mean": stats::mean(&bits)?,
        "bit_stddev": stats::stddev(&bits)?,
        "restart_mean": stats::mean(&restarts)?,
    });
    if let Some(v) = var {
        let xs: Option<Vec<f64>> = records.iter().map(|r| r.state.lookup(v).to_f64()).collect();
        if let Some(xs) = xs {
            out["mean"] = json!(stats::mean(&xs)?);
            out["stddev"] = json!(stats::stddev(&xs)?);
        }
    }
    Ok(out)
}

fn cmd_sample(args: &SampleArgs) -> Result<String> {
    let (c, _) = load(&args.program)?;
    let it = prepare(&c)?;
    let cfg = sampler_config(&args.sampler);
    let n = args.sampler.n;
    if n == 0 {
        return Err(CliError::Usage("-n must be at least 1".into()));
    }
    let records = match &args.bits {
        Some(bits) => {
            let mut src = FixedStream::parse(bits)?;
            (0..n).map(|_| sample(&it, &mut src, &cfg)).collect::<std::result::Result<Vec<_>, _>>()?
        }
        None => with_jobs(args.sampler.jobs, || sample_many(&it, n, args.sampler.seed, &cfg))??,
    };
    let hash = program_hash(&c);
    let var = args.var.as_deref();
    let summary = summary(&records, var, args.sampler.seed, &hash)?.to_string();
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
            let mut w = io::BufWriter::new(file);
            write_samples(&mut w, &c, args.sampler.seed, var, &records).map_err(|e| io_err(path, e))?;
            w.flush().map_err(|e| io_err(path, e))?;
            Ok(summary)
        }
        None => {
            let stdout = io::stdout();
            let mut w = io::BufWriter::new(stdout.lock());
            write_samples(&mut w, &c, args.sampler.seed, var, &records).map_err(|e| CliError::Io(e.to_string()))?;
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
            eprintln!("{summary}");
            Ok(String::new())
        }
    }
}

/// Reference file: a JSON object from value literals to probabilities.
fn read_reference(path: &Path) -> Result<stats::FiniteDist> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let obj: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    let mut cells = Vec::new();
    for (k, w) in obj {
        let v: Value = parse_expr(&k)?.eval(&State::new())?;
        cells.push((v, w));
    }
    let d: stats::FiniteDist = cells.into_iter().collect();
    let total: f64 = d.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CoreError::NotNormalized(format!("reference sums to {total}")).into());
    }
    Ok(stats::normalize(d)?)
}

fn cmd_validate(args: &ValidateArgs) -> Result<String> {
    let (c, param) = load(&args.program)?;
    let reference = if args.reference == "oracle" {
        Reference::Oracle(iter_config(&args.iter)?)
    } else {
        Reference::Given(read_reference(Path::new(&args.reference))?)
    };
    let cfg = sampler_config(&args.sampler);
    let exp = with_jobs(args.sampler.jobs, || {
        stats::run_experiment(&c, &State::new(), &args.var, args.sampler.n, args.sampler.seed, &param, &reference, &cfg)
    })??;
    let tol = Tolerance { max_tv: args.max_tv, ..Tolerance::default() };
    let problems = stats::check(&exp.empirical, &exp.reference, args.sampler.n, &tol)?;
    println!("{}", exp.report.to_json());
    if problems.is_empty() {
        Ok(String::new())
    } else {
        Err(CliError::Rejected(problems))
    }
}

fn run(cli: Cli) -> Result<String> {
    match &cli.cmd {
        Cmd::Compile(a) => cmd_compile(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{}", out.trim_end());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
