use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveSpec;
use crate::optim::RunConfig;
use crate::quantizer::{
    quantize_vector, read_vectors_binary, read_vectors_csv, CsvReadReport, QuantLevel,
    WnhAccumulator, WnhConfig, WnhReport,
};
use crate::schedule::{trajectory, ScheduleConfig, ScheduleRow};
use crate::sde::{
    compare_optimizer_to_sde, simulate_ensemble, ComparisonReport, SdeSpec, SeedEntry,
};

fn check_version(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "unsupported config version {v} (expected {SCHEMA_VERSION})"
        )))
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleJob {
    pub version: u32,
    /// Problem dimension used in the bounds.
    pub n: usize,
    pub horizon: u64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

impl ScheduleJob {
    pub fn load(path: &Path) -> Result<Self> {
        let job: Self = parse_toml(path)?;
        check_version(job.version)?;
        Ok(job)
    }

    pub fn rows(&self) -> Result<Vec<ScheduleRow>> {
        trajectory(&self.schedule.with_dimension(self.n), self.horizon)
    }
}

pub fn write_schedule_csv<W: std::io::Write>(rows: &[ScheduleRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Where the raw values for a white-noise check come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WnhSource {
    /// Uniform values on `[low, high)`.
    Uniform {
        samples: usize,
        #[serde(default = "one_usize")]
        dim: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "neg_hundred")]
        low: f64,
        #[serde(default = "hundred")]
        high: f64,
    },
    Csv {
        path: PathBuf,
    },
    /// Little-endian f64 rows of length `dim`.
    Binary {
        path: PathBuf,
        dim: usize,
    },
}

fn one_usize() -> usize {
    1
}
fn neg_hundred() -> f64 {
    -100.0
}
fn hundred() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WnhJob {
    pub version: u32,
    pub source: WnhSource,
    /// Values are quantized at this level and the errors tested.
    pub level: u64,
    #[serde(default)]
    pub test: WnhConfig,
}

impl WnhJob {
    pub fn load(path: &Path) -> Result<Self> {
        let job: Self = parse_toml(path)?;
        check_version(job.version)?;
        Ok(job)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WnhOutcome {
    pub level: u64,
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub report: WnhReport,
}

/// Quantize the source values and run the white-noise battery on the errors.
pub fn run_wnh(job: &WnhJob, strict: bool) -> Result<WnhOutcome> {
    check_version(job.version)?;
    let level = QuantLevel::new(job.level)?;
    let (rows, read) = match &job.source {
        WnhSource::Uniform {
            samples,
            dim,
            seed,
            low,
            high,
        } => {
            if !(low < high) || *dim == 0 {
                return Err(Error::InvalidConfig(
                    "uniform source needs low < high and dim >= 1".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut acc = WnhAccumulator::new(job.test)?;
            for _ in 0..*samples {
                let x: Vec<f64> = (0..*dim).map(|_| rng.random_range(*low..*high)).collect();
                let (_, e) = quantize_vector(&x, level)?;
                acc.push(e.errors())?;
            }
            return Ok(WnhOutcome {
                level: job.level,
                rows_read: *samples,
                rows_skipped: 0,
                report: acc.finish()?,
            });
        }
        WnhSource::Csv { path } => read_vectors_csv(path, strict)?,
        WnhSource::Binary { path, dim } => {
            let rows = read_vectors_binary(path, *dim)?;
            let n = rows.len();
            (
                rows,
                CsvReadReport {
                    rows: n,
                    skipped: 0,
                },
            )
        }
    };
    let mut acc = WnhAccumulator::new(job.test)?;
    for r in &rows {
        let (_, e) = quantize_vector(r, level)?;
        acc.push(e.errors())?;
    }
    Ok(WnhOutcome {
        level: job.level,
        rows_read: read.rows,
        rows_skipped: read.skipped,
        report: acc.finish()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeJob {
    pub version: u32,
    pub objective: ObjectiveSpec,
    pub paths: u64,
    #[serde(default)]
    pub seed: u64,
    pub sde: SdeSpec,
    /// A second arm simulated from the same seeds, e.g. a constant-noise control.
    #[serde(default)]
    pub control: Option<SdeSpec>,
    /// Optimizer configuration to compare against the main arm.
    #[serde(default)]
    pub compare: Option<RunConfig>,
}

impl SdeJob {
    pub fn load(path: &Path) -> Result<Self> {
        let job: Self = parse_toml(path)?;
        check_version(job.version)?;
        Ok(job)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub paths: u64,
    pub diverged: u64,
    pub initial_global_basin_fraction: Option<f64>,
    pub final_global_basin_fraction: Option<f64>,
    pub terminal_mean: Vec<f64>,
    pub terminal_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeOutcome {
    pub objective: String,
    pub master_seed: u64,
    pub arms: Vec<ArmSummary>,
    pub comparison: Option<ComparisonReport>,
    pub seed_ledger: Vec<SeedEntry>,
}

/// Simulate every arm of `job`, writing `<arm>_ensemble.csv`, `seed_ledger.csv`
/// and `report.json` under `out`.
pub fn run_sde(job: &SdeJob, out: &Path) -> Result<SdeOutcome> {
    check_version(job.version)?;
    let obj = job.objective.build()?;
    fs::create_dir_all(out)?;
    let mut arms = Vec::new();
    let mut ledger = Vec::new();
    let mut specs = vec![("main", &job.sde)];
    if let Some(c) = &job.control {
        specs.push(("control", c));
    }
    for (name, spec) in specs {
        let e = simulate_ensemble(obj.as_ref(), spec, job.paths, job.seed)?;
        e.write_summary_csv(fs::File::create(out.join(format!("{name}_ensemble.csv")))?)?;
        let last = e.epochs.last().expect("horizon + 1 summaries");
        arms.push(ArmSummary {
            name: name.to_string(),
            paths: e.paths,
            diverged: e.diverged,
            initial_global_basin_fraction: e.epochs[0].global_basin_fraction,
            final_global_basin_fraction: last.global_basin_fraction,
            terminal_mean: last.mean.clone(),
            terminal_variance: last.variance.clone(),
        });
        ledger = e.seed_ledger;
    }
    let mut w = csv::Writer::from_path(out.join("seed_ledger.csv"))?;
    for s in &ledger {
        w.serialize(s)?;
    }
    w.flush()?;
    let comparison = match &job.compare {
        Some(rc) => Some(compare_optimizer_to_sde(
            obj.as_ref(),
            rc,
            &job.sde,
            job.paths,
            job.seed,
        )?),
        None => None,
    };
    let outcome = SdeOutcome {
        objective: obj.name().to_string(),
        master_seed: job.seed,
        arms,
        comparison,
        seed_ledger: ledger,
    };
    serde_json::to_writer_pretty(fs::File::create(out.join("report.json"))?, &outcome)?;
    Ok(outcome)
}
