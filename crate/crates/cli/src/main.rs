use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qanneal_core::harness::{
    aggregate, parse_seeds, run_sde, run_wnh, sweep, write_schedule_csv, write_summary,
    ExperimentConfig, ScheduleJob, SdeJob, WnhJob, WnhSource, SCHEMA_VERSION,
};
use qanneal_core::quantizer::WnhConfig;
use qanneal_core::schedule::Enforcement;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "QANNEAL_OUT";
const DEFAULT_OUT_ROOT: &str = "qanneal-out";

#[derive(Debug, Parser)]
#[command(
    name = "qanneal",
    version,
    about = "Quantization-annealed optimization experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $QANNEAL_OUT/<name>, else ./qanneal-out/<name>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seeds overriding the config: `3`, `0,1,5` or `0..10`
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Treat recoverable problems as errors
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an algorithm x learning-rate x seed sweep and summarize it
    Optimize,
    /// Tabulate a resolution schedule
    Schedule,
    /// Test quantization errors for white noise
    Wnh(WnhArgs),
    /// Simulate the diffusion limit and compare it with the optimizer
    Sde,
    /// Rebuild the summary of a sweep directory
    Aggregate {
        /// Sweep directory or its `runs` subdirectory
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct WnhArgs {
    /// CSV (one vector per row) or raw little-endian f64 file (`.bin`)
    #[arg(long, conflicts_with = "samples")]
    input: Option<PathBuf>,
    /// Vector length for binary input
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Draw this many uniform values on [-100, 100) instead of reading input
    #[arg(long)]
    samples: Option<usize>,
    /// Quantization level q_p
    #[arg(long, default_value_t = 1024)]
    level: u64,
}

#[derive(Debug)]
enum Failure {
    /// The command ran but its verdict is negative.
    Verdict(String),
    Error(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn out_dir(common: &Common, configured: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = &common.out {
        return p.clone();
    }
    if let Some(p) = configured {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    root.join(name)
}

fn require_config(common: &Common) -> Result<&Path, Failure> {
    common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Error("--config <path> is required".into()))
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn optimize(common: &Common) -> CmdResult {
    let mut cfg = ExperimentConfig::load(require_config(common)?)?;
    if let Some(s) = &common.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if common.strict {
        cfg.schedule.enforcement = Enforcement::Strict;
    }
    cfg.validate()?;
    let out = out_dir(common, cfg.out_dir.as_deref(), &cfg.name);
    let res = sweep(&cfg, &out, common.jobs)?;
    println!(
        "{}: {} runs, {} failed -> {}",
        cfg.name,
        res.runs.len(),
        res.failures(),
        out.display()
    );
    for r in res.runs.iter().filter(|r| !r.succeeded()) {
        eprintln!(
            "failed: {} lr={} seed={}: {}",
            r.algorithm,
            r.learning_rate,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    if common.strict && res.failures() > 0 {
        return Err(Failure::Verdict(format!("{} runs failed", res.failures())));
    }
    Ok(())
}

fn schedule(common: &Common) -> CmdResult {
    let path = require_config(common)?;
    let mut job = ScheduleJob::load(path)?;
    if common.strict {
        job.schedule.enforcement = Enforcement::Strict;
    }
    let out = out_dir(common, None, &file_stem(path));
    std::fs::create_dir_all(&out)?;
    let rows = job.rows()?;
    let file = out.join("schedule.csv");
    write_schedule_csv(&rows, std::fs::File::create(&file)?)?;
    println!("{} rows -> {}", rows.len(), file.display());
    Ok(())
}

fn wnh(common: &Common, args: &WnhArgs) -> CmdResult {
    let job = match (&common.config, &args.input, args.samples) {
        (Some(p), None, None) => WnhJob::load(p)?,
        (None, Some(p), None) => WnhJob {
            version: SCHEMA_VERSION,
            source: if p.extension().is_some_and(|e| e == "bin") {
                WnhSource::Binary {
                    path: p.clone(),
                    dim: args.dim,
                }
            } else {
                WnhSource::Csv { path: p.clone() }
            },
            level: args.level,
            test: WnhConfig::default(),
        },
        (None, None, Some(samples)) => WnhJob {
            version: SCHEMA_VERSION,
            source: WnhSource::Uniform {
                samples,
                dim: args.dim,
                seed: common
                    .seeds
                    .as_deref()
                    .map(parse_seeds)
                    .transpose()?
                    .and_then(|s| s.first().copied())
                    .unwrap_or(0),
                low: -100.0,
                high: 100.0,
            },
            level: args.level,
            test: WnhConfig::default(),
        },
        _ => {
            return Err(Failure::Error(
                "give exactly one of --config, --input or --samples".into(),
            ))
        }
    };
    let name = match (&common.config, &args.input) {
        (Some(p), _) | (None, Some(p)) => file_stem(p),
        _ => "wnh-uniform".into(),
    };
    let outcome = run_wnh(&job, common.strict)?;
    let out = out_dir(common, None, &name);
    std::fs::create_dir_all(&out)?;
    let file = out.join("wnh_report.json");
    serde_json::to_writer_pretty(std::fs::File::create(&file)?, &outcome)?;
    if outcome.rows_skipped > 0 {
        eprintln!("skipped {} malformed rows", outcome.rows_skipped);
    }
    let r = &outcome.report;
    println!(
        "{} samples, variance {:.6} (expected {:.6}) -> {}",
        r.sample_count,
        r.empirical_variance,
        r.expected_variance,
        file.display()
    );
    if r.passed {
        println!("white-noise hypothesis not rejected");
        Ok(())
    } else {
        Err(Failure::Verdict("white-noise hypothesis rejected".into()))
    }
}

fn sde(common: &Common) -> CmdResult {
    let path = require_config(common)?;
    let mut job = SdeJob::load(path)?;
    let base = out_dir(common, None, &file_stem(path));
    let seeds = match &common.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![job.seed],
    };
    let mut diverged = 0;
    for &seed in &seeds {
        job.seed = seed;
        let out = if seeds.len() == 1 {
            base.clone()
        } else {
            base.join(format!("seed_{seed}"))
        };
        let outcome = run_sde(&job, &out)?;
        for arm in &outcome.arms {
            diverged += arm.diverged;
            println!(
                "seed {seed} {}: {} paths, {} diverged, global-basin fraction {}",
                arm.name,
                arm.paths,
                arm.diverged,
                arm.final_global_basin_fraction
                    .map(|f| format!("{f:.4}"))
                    .unwrap_or_else(|| "n/a".into())
            );
        }
        if let Some(c) = &outcome.comparison {
            println!(
                "seed {seed} comparison: ks {:.4} (threshold {}), variance ratio {:.4}, deterministic agreement {}",
                c.ks_max, c.ks_threshold, c.variance_ratio, c.deterministic_agreement
            );
        }
        println!("-> {}", out.display());
    }
    if common.strict && diverged > 0 {
        return Err(Failure::Verdict(format!("{diverged} paths diverged")));
    }
    Ok(())
}

fn aggregate_cmd(common: &Common, dir: &Path) -> CmdResult {
    let table = aggregate(dir)?;
    let out = common.out.clone().unwrap_or_else(|| dir.to_path_buf());
    std::fs::create_dir_all(&out)?;
    write_summary(&out, &table)?;
    let failures: usize = table.rows.iter().map(|r| r.failures).sum();
    println!(
        "{} rows, {} failed runs -> {}",
        table.rows.len(),
        failures,
        out.display()
    );
    if common.strict && failures > 0 {
        return Err(Failure::Verdict(format!("{failures} runs failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize => optimize(&cli.common),
        Command::Schedule => schedule(&cli.common),
        Command::Wnh(a) => wnh(&cli.common, a),
        Command::Sde => sde(&cli.common),
        Command::Aggregate { dir } => aggregate_cmd(&cli.common, dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Error(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
