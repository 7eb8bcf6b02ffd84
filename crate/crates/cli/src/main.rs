use std::fs;
use std::io::{self, Write};
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sicqta::bounds::{random_subset, BoundsRow};
use sicqta::codebook::{
    evaluate_codebook, support_table, trace_to_codebook, Channel, Codebook, Ensemble, SupportMode,
};
use sicqta::report;
use sicqta::sim::{self, ArrivalConfig, BatchConfig, SweepAxis};
use sicqta::{Algorithm, DeviceId, TreeParams};

/// Query tree collision resolution with and without interference cancellation.
#[derive(Debug, Parser)]
#[command(name = "sicqta", version)]
struct Cli {
    /// Worker threads for simulations (default: available parallelism).
    #[arg(long, global = true, env = "SICQTA_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resolve one set of devices and print the slot trace as JSON.
    Resolve(ResolveArgs),
    /// Closed-form latency bounds for a range of M.
    Bounds(BoundsArgs),
    /// Monte Carlo latency of M random devices; one CSV row per trial.
    Batch(BatchArgs),
    /// Gated access under Poisson arrivals.
    Arrivals(ArrivalArgs),
    /// Batch statistics over M, or arrival statistics over lambda.
    Sweep(SweepArgs),
    /// Devices supported within a latency budget, next to reference values.
    Table1(TableArgs),
    /// Success statistics of a codebook file.
    Codebook(CodebookArgs),
}

#[derive(Debug, Args, Serialize)]
struct Output {
    /// Write to this file (plus `<file>.manifest.json`) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ResolveArgs {
    #[arg(long, default_value = "sicqta")]
    algorithm: Algorithm,
    #[arg(long)]
    u: u32,
    /// Comma-separated bit strings of length u.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "random",
        required_unless_present = "random"
    )]
    ids: Vec<String>,
    /// Draw this many distinct ids uniformly (needs --seed).
    #[arg(long, requires = "seed")]
    random: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_cancel_depth: Option<usize>,
    /// Also write the participation codebook of the trace.
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct BoundsArgs {
    #[arg(long)]
    u: u32,
    /// Inclusive range `A..B` with 2 <= A <= B <= 2^u.
    #[arg(long)]
    m_range: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct BatchArgs {
    #[arg(long, default_value = "sicqta")]
    algorithm: Algorithm,
    #[arg(long)]
    u: u32,
    #[arg(long)]
    m: u64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    max_cancel_depth: Option<usize>,
    /// Write the summary row here as well.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct ArrivalArgs {
    #[arg(long, default_value = "sicqta")]
    algorithm: Algorithm,
    #[arg(long)]
    u: u32,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 200_000)]
    horizon: u64,
    /// Default: a tenth of the horizon.
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    max_cancel_depth: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    /// `m=A..B`, `m=a,b,c`, `lambda=A..B:STEP` or `lambda=a,b,c`.
    #[arg(long)]
    axis: String,
    #[arg(long, default_value = "sicqta")]
    algorithm: Algorithm,
    #[arg(long)]
    u: u32,
    #[arg(long)]
    seed: u64,
    /// Trials per point of an M sweep.
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    /// Horizon of a lambda sweep.
    #[arg(long, default_value_t = 200_000)]
    horizon: u64,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    max_cancel_depth: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct TableArgs {
    /// `formula` or `oracle`.
    #[arg(long, default_value = "formula")]
    mode: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args, Serialize)]
struct CodebookArgs {
    /// Codebook file: `d=<int> N=<int>` header, then N rows of 0/1.
    #[arg(long)]
    file: PathBuf,
    /// Active devices per frame.
    #[arg(long)]
    m: usize,
    /// `collision` or `sic`.
    #[arg(long, default_value = "sic")]
    channel: String,
    /// Draws used when exhaustive enumeration is too large.
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Serialize)]
struct RunManifest<'a, P: Serialize> {
    subcommand: &'a str,
    parameters: &'a P,
    seed: Option<u64>,
    tool_version: &'a str,
    outputs: Vec<&'a Path>,
    duration_secs: f64,
}

struct Run {
    started: Instant,
}

impl Run {
    /// Write `content` to `--out` with its manifest, or to stdout.
    fn emit<P: Serialize>(
        &self,
        subcommand: &str,
        params: &P,
        seed: Option<u64>,
        output: &Output,
        extra: &[&Path],
        content: &str,
    ) -> anyhow::Result<()> {
        let Some(path) = &output.out else {
            io::stdout().write_all(content.as_bytes())?;
            return Ok(());
        };
        fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
        let mut outputs = vec![path.as_path()];
        outputs.extend_from_slice(extra);
        let manifest = RunManifest {
            subcommand,
            parameters: params,
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut manifest_path = path.clone().into_os_string();
        manifest_path.push(".manifest.json");
        fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest)? + "\n",
        )
        .with_context(|| format!("writing {}", Path::new(&manifest_path).display()))?;
        Ok(())
    }
}

fn parse_range(s: &str) -> anyhow::Result<(u64, u64)> {
    let (a, b) = s
        .split_once("..")
        .with_context(|| format!("range {s:?} must look like A..B"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn to_csv(write: impl FnOnce(&mut Vec<u8>) -> sicqta::Result<()>) -> anyhow::Result<String> {
    Ok(report::to_string(write)?)
}

fn resolve(run: &Run, args: &ResolveArgs) -> anyhow::Result<()> {
    let params = TreeParams::new(args.u)?;
    let ids: Vec<DeviceId> = match args.random {
        Some(m) => {
            if m > params.max_devices() {
                bail!("cannot draw {m} distinct ids from 2^{} devices", args.u);
            }
            random_subset(params, m, args.seed.unwrap_or_default(), 0)
        }
        None => args
            .ids
            .iter()
            .map(|b| params.parse_device(b.trim()))
            .collect::<sicqta::Result<_>>()?,
    };
    let trace = args.algorithm.resolve(ids, params, args.max_cancel_depth)?;
    trace.validate()?;
    let mut extra = Vec::new();
    if let Some(path) = &args.codebook {
        let (_, book) = trace_to_codebook(&trace)?;
        fs::write(path, book.to_string()).with_context(|| format!("writing {}", path.display()))?;
        extra.push(path.as_path());
    }
    let json = report::trace_json(&trace)? + "\n";
    run.emit("resolve", args, args.seed, &args.output, &extra, &json)
}

fn bounds(run: &Run, args: &BoundsArgs) -> anyhow::Result<()> {
    let params = TreeParams::new(args.u)?;
    let (a, b) = parse_range(&args.m_range)?;
    if !(2 <= a && a <= b && b <= params.max_devices()) {
        bail!("M range must satisfy 2 <= A <= B <= 2^u, got {a}..{b}");
    }
    let rows = (a..=b)
        .map(|m| BoundsRow::new(m, args.u))
        .collect::<sicqta::Result<Vec<_>>>()?;
    let csv = to_csv(|w| report::write_bounds_csv(&rows, w))?;
    run.emit("bounds", args, None, &args.output, &[], &csv)
}

fn batch(run: &Run, args: &BatchArgs) -> anyhow::Result<()> {
    let stats = sim::run_batch(&BatchConfig {
        u: args.u,
        m: args.m,
        trials: args.trials,
        seed: args.seed,
        algorithm: args.algorithm,
        max_cancel_depth: args.max_cancel_depth,
    })?;
    eprintln!(
        "mean latency {:.6}, mean throughput {:.6}, bound violations {}",
        stats.mean_latency, stats.mean_throughput, stats.violations
    );
    let mut extra = Vec::new();
    if let Some(path) = &args.summary {
        let summary = to_csv(|w| report::write_batch_stats_csv(std::slice::from_ref(&stats), w))?;
        fs::write(path, summary).with_context(|| format!("writing {}", path.display()))?;
        extra.push(path.as_path());
    }
    let csv = to_csv(|w| report::write_batch_trials_csv(std::slice::from_ref(&stats), w))?;
    run.emit("batch", args, Some(args.seed), &args.output, &extra, &csv)
}

fn arrivals(run: &Run, args: &ArrivalArgs) -> anyhow::Result<()> {
    let stats = sim::run_arrivals(&ArrivalConfig {
        u: args.u,
        lambda: args.lambda,
        horizon: args.horizon,
        warmup: args.warmup,
        seed: args.seed,
        algorithm: args.algorithm,
        max_cancel_depth: args.max_cancel_depth,
    })?;
    let csv = to_csv(|w| report::write_arrivals_csv(&[stats], w))?;
    run.emit("arrivals", args, Some(args.seed), &args.output, &[], &csv)
}

fn sweep(run: &Run, args: &SweepArgs) -> anyhow::Result<()> {
    let csv = match SweepAxis::parse(&args.axis)? {
        SweepAxis::M(ms) => {
            let template = BatchConfig {
                u: args.u,
                m: 0,
                trials: args.trials,
                seed: args.seed,
                algorithm: args.algorithm,
                max_cancel_depth: args.max_cancel_depth,
            };
            let rows = sim::sweep_batch(&template, &ms)?;
            to_csv(|w| report::write_batch_stats_csv(&rows, w))?
        }
        SweepAxis::Lambda(lambdas) => {
            let template = ArrivalConfig {
                u: args.u,
                lambda: 0.0,
                horizon: args.horizon,
                warmup: args.warmup,
                seed: args.seed,
                algorithm: args.algorithm,
                max_cancel_depth: args.max_cancel_depth,
            };
            let rows = sim::sweep_arrivals(&template, &lambdas)?;
            to_csv(|w| report::write_arrivals_csv(&rows, w))?
        }
    };
    run.emit("sweep", args, Some(args.seed), &args.output, &[], &csv)
}

fn table1(run: &Run, args: &TableArgs) -> anyhow::Result<()> {
    let mode: SupportMode = args.mode.parse()?;
    let rows = support_table(mode)?;
    let csv = to_csv(|w| report::write_support_csv(&rows, w))?;
    run.emit("table1", args, None, &args.output, &[], &csv)
}

fn codebook(run: &Run, args: &CodebookArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.file)
        .with_context(|| format!("reading {}", args.file.display()))?;
    let book: Codebook = text.parse()?;
    let channel = match args.channel.as_str() {
        "collision" => Channel::Collision,
        "sic" => Channel::Sic,
        other => bail!("unknown channel {other:?}"),
    };
    let eval = evaluate_codebook(
        &book,
        &Ensemble::Subsets {
            m: args.m,
            samples: args.samples,
            seed: args.seed,
        },
        channel,
    )?;
    let json = serde_json::to_string_pretty(&eval)? + "\n";
    run.emit("codebook", args, Some(args.seed), &args.output, &[], &json)
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let run = Run {
        started: Instant::now(),
    };
    match &cli.command {
        Command::Resolve(a) => resolve(&run, a),
        Command::Bounds(a) => bounds(&run, a),
        Command::Batch(a) => batch(&run, a),
        Command::Arrivals(a) => arrivals(&run, a),
        Command::Sweep(a) => sweep(&run, a),
        Command::Table1(a) => table1(&run, a),
        Command::Codebook(a) => codebook(&run, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon_workers(workers) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match panic::catch_unwind(|| dispatch(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<sicqta::Error>() {
                Some(sicqta::Error::Invariant(_)) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
        Err(_) => ExitCode::from(3),
    }
}

fn rayon_workers(workers: usize) -> anyhow::Result<()> {
    if workers == 0 {
        bail!("worker count must be at least 1");
    }
    sim::set_global_workers(workers)?;
    Ok(())
}
