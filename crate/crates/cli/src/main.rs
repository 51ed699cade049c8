use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use funsor::interp::DEFAULT_FUEL;
use funsor::models::{bench_hmm, run_model, ModelSpec, RunOptions, Semiring};
use funsor::{EvalConfig, Evaluator, FunsorError, Interp, ScanMode};

#[derive(Parser)]
#[command(name = "funsor", version, about = "Evaluate functional-tensor models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the log marginal of a JSON model file.
    Run(RunArgs),
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        which: Bench,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Sequential against parallel Markov products on random HMMs.
    Markov(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// exact, optimize, momentmatching or montecarlo
    #[arg(long, default_value = "exact")]
    interp: String,
    /// sumproduct or maxproduct
    #[arg(long, default_value = "sumproduct")]
    semiring: String,
    /// sequential or parallel
    #[arg(long, default_value = "parallel")]
    scan: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo particles
    #[arg(long, default_value_t = 1)]
    samples: usize,
    /// Report wall_ms as 0 so that output is reproducible byte for byte.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated Markov chain lengths.
    #[arg(long, value_delimiter = ',', required = true)]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

#[derive(Serialize)]
struct RunReport {
    model: &'static str,
    interpretation: &'static str,
    log_value: f64,
    wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<usize>,
}

#[derive(Serialize)]
struct ErrorReport {
    error: &'static str,
    detail: String,
}

fn fuel() -> Result<usize, FunsorError> {
    match std::env::var("FUNSOR_FUEL") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| FunsorError::InvalidConfig(format!("FUNSOR_FUEL must be a nonnegative integer, got `{s}`"))),
        Err(_) => Ok(DEFAULT_FUEL),
    }
}

fn cmd_run(args: &RunArgs) -> Result<String, FunsorError> {
    let interp: Interp = args.interp.parse()?;
    if interp == Interp::Lazy {
        return Err(FunsorError::InvalidConfig("lazy evaluation has no numeric value".into()));
    }
    let semiring: Semiring = args.semiring.parse()?;
    let scan: ScanMode = args.scan.parse()?;
    if args.samples == 0 {
        return Err(FunsorError::InvalidConfig("--samples must be at least 1".into()));
    }
    let text =
        std::fs::read_to_string(&args.file).map_err(|e| FunsorError::Parse(format!("{}: {e}", args.file.display())))?;
    let spec = ModelSpec::from_json(&text)?;
    let config = EvalConfig { fuel: fuel()?, scan, seed: args.seed, samples: args.samples };
    let start = Instant::now();
    let out = run_model(&spec, &RunOptions { interp, semiring, config })?;
    let wall_ms = if args.deterministic { 0.0 } else { start.elapsed().as_secs_f64() * 1e3 };
    let report = RunReport {
        model: spec.name(),
        interpretation: interp.name(),
        log_value: out.log_value,
        wall_ms,
        levels: out.levels,
    };
    Ok(serde_json::to_string(&report).expect("serializable report"))
}

fn timed(ev: &Evaluator, term: &funsor::Term, trials: usize) -> Result<(f64, f64), FunsorError> {
    let mut best = f64::INFINITY;
    let mut value = f64::NAN;
    for _ in 0..trials {
        let start = Instant::now();
        let out = ev.run(term)?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
        value = out.value().ok_or_else(|| FunsorError::Intractable(format!("benchmark left {out}")))?;
    }
    Ok((value, best))
}

fn cmd_bench(args: &BenchArgs) -> Result<String, FunsorError> {
    if args.lengths.is_empty() || args.lengths.contains(&0) {
        return Err(FunsorError::InvalidConfig("lengths must be positive".into()));
    }
    if args.trials == 0 {
        return Err(FunsorError::InvalidConfig("--trials must be at least 1".into()));
    }
    let fuel = fuel()?;
    let mut csv = String::from("T,levels,wall_ms_sequential,wall_ms_parallel\n");
    for &t in &args.lengths {
        let term = bench_hmm(t, 3, 0)?;
        let seq =
            Evaluator::new(Interp::Exact, EvalConfig { fuel, scan: ScanMode::Sequential, ..EvalConfig::default() });
        let par = Evaluator::new(Interp::Exact, EvalConfig { fuel, scan: ScanMode::Parallel, ..EvalConfig::default() });
        let (a, ms_seq) = timed(&seq, &term, args.trials)?;
        let (b, ms_par) = timed(&par, &term, args.trials)?;
        let diff = (a - b).abs();
        eprintln!("T={t} sequential={a} parallel={b} diff={diff:e}");
        if diff > 1e-8 * a.abs().max(1.0) {
            return Err(FunsorError::Intractable(format!("T={t}: sequential {a} and parallel {b} disagree")));
        }
        csv.push_str(&format!("{t},{},{ms_seq:.3},{ms_par:.3}\n", par.levels()));
    }
    Ok(csv)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|s| s + "\n"),
        Command::Bench { which: Bench::Markov(args) } => cmd_bench(args),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = ErrorReport { error: e.code(), detail: e.to_string() };
            println!("{}", serde_json::to_string(&report).expect("serializable error"));
            ExitCode::FAILURE
        }
    }
}
