use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ctxauthz::authz::AuthMode;
use ctxauthz::ids::SimTime;
use ctxauthz::scenario::{self, Overrides, Scenario};
use log::error;

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Runs a context-aware authorization scenario and reports leaks, reaction
/// times and authorization message counts.
#[derive(Debug, Parser)]
#[command(name = "ctxauthz", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,

    /// Authorization mode, overriding the scenario's.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AuthMode>,

    /// Lease duration in ms for quasi-static sessions.
    #[arg(long)]
    lease_ms: Option<SimTime>,

    /// Seed for network jitter, overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,

    /// Network jitter bounds in ms, e.g. `0,5`.
    #[arg(long, value_parser = parse_jitter)]
    jitter_ms: Option<[SimTime; 2]>,

    /// Where to write the event trace.
    #[arg(long, conflicts_with = "compare")]
    trace_out: Option<PathBuf>,

    /// Where to write the metrics (TOML).
    #[arg(long)]
    metrics_out: Option<PathBuf>,

    /// Run the scenario under all three modes and print a table.
    #[arg(long, conflicts_with = "mode")]
    compare: bool,
}

fn parse_mode(s: &str) -> Result<AuthMode, String> {
    s.parse::<AuthMode>()
}

fn parse_jitter(s: &str) -> Result<[SimTime; 2], String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: SimTime = lo
        .trim()
        .parse()
        .map_err(|e| format!("bad lower bound: {e}"))?;
    let hi: SimTime = hi
        .trim()
        .parse()
        .map_err(|e| format!("bad upper bound: {e}"))?;
    if lo > hi {
        return Err(format!("lower bound {lo} exceeds upper bound {hi}"));
    }
    Ok([lo, hi])
}

fn write(path: &PathBuf, text: &str) -> Result<(), u8> {
    fs::write(path, text).map_err(|e| {
        error!("cannot write {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn run(args: &Args) -> Result<u8, u8> {
    let source = fs::read_to_string(&args.scenario).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", args.scenario.display());
        EXIT_USAGE
    })?;
    let sc = Scenario::from_toml(&source).map_err(|e| {
        eprintln!("error: {}: {e}", args.scenario.display());
        EXIT_USAGE
    })?;
    let overrides = Overrides {
        mode: args.mode,
        lease_ms: args.lease_ms,
        seed: args.seed,
        jitter_ms: args.jitter_ms,
    };
    let sc = sc.with_overrides(&overrides);

    if args.compare {
        let cmp = scenario::compare(&sc).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_USAGE
        })?;
        print!("{}", cmp.table());
        if let Some(p) = &args.metrics_out {
            write(p, &cmp.to_toml())?;
        }
        let clean = cmp.reports.iter().all(|r| r.is_clean());
        return Ok(if clean { 0 } else { EXIT_VIOLATION });
    }

    let out = scenario::run(&sc).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_USAGE
    })?;
    if let Some(p) = &args.trace_out {
        write(p, &out.trace.to_text())?;
    }
    if let Some(p) = &args.metrics_out {
        write(p, &out.metrics.to_toml())?;
    }
    print!("{}", out.metrics.summary());
    for v in &out.metrics.violation_list {
        eprintln!(
            "violation [{}] at t={} seq={}: {}",
            v.rule, v.t, v.seq, v.message
        );
    }
    for e in &out.metrics.analysis_errors {
        eprintln!("analysis error: {e}");
    }
    Ok(if out.metrics.is_clean() {
        0
    } else {
        EXIT_VIOLATION
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(code) | Err(code) => ExitCode::from(code),
    }
}
