use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlgorithmSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::optim::{run, RunMeta, RunRecord};
use crate::rational::Rational;

/// What lands in `runs/<stem>.json` for every scheduled run, success or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub experiment: String,
    pub experiment_hash: String,
    pub algorithm: String,
    pub learning_rate: Rational,
    pub seed: u64,
    pub error: Option<String>,
    pub meta: Option<RunMeta>,
}

impl RunFile {
    pub fn stem(algorithm: &str, lr: Rational, seed: u64) -> String {
        format!("{algorithm}_lr{}-{}_seed{seed}", lr.num(), lr.den())
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.meta.as_ref().is_some_and(|m| m.errors.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub learning_rate: Rational,
    pub learning_rate_value: f64,
    pub runs: usize,
    pub failures: usize,
    pub final_f_mean: f64,
    pub final_f_std: f64,
    pub train_mean: Option<f64>,
    pub train_std: Option<f64>,
    pub test_mean: Option<f64>,
    pub test_std: Option<f64>,
    pub best_test_mean: Option<f64>,
    /// Per-run final test values the means are computed from, in seed order.
    pub test_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub experiment: String,
    pub experiment_hash: String,
    pub rows: Vec<SummaryRow>,
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

const LABEL_ORDER: [&str; 4] = ["SGD", "QSGD", "ADAM", "QtADAM"];

fn label_rank(label: &str) -> usize {
    LABEL_ORDER
        .iter()
        .position(|l| *l == label)
        .unwrap_or(LABEL_ORDER.len())
}

impl SummaryTable {
    /// Group run files by algorithm and learning rate. Rows come out in
    /// SGD, QSGD, ADAM, QtADAM order, learning rates descending.
    pub fn from_runs(runs: &[RunFile]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or(Error::InsufficientData { got: 0, need: 1 })?;
        let mut groups: BTreeMap<(usize, String, u64, u64), Vec<&RunFile>> = BTreeMap::new();
        for r in runs {
            // descending learning rate: sort on den/num ascending
            let key = (
                label_rank(&r.algorithm),
                r.algorithm.clone(),
                r.learning_rate.den() * 1_000_000 / r.learning_rate.num(),
                r.learning_rate.den(),
            );
            groups.entry(key).or_default().push(r);
        }
        let rows = groups
            .into_values()
            .map(|mut g| {
                g.sort_by_key(|r| r.seed);
                let ok: Vec<&RunMeta> = g
                    .iter()
                    .filter(|r| r.succeeded())
                    .filter_map(|r| r.meta.as_ref())
                    .collect();
                let f: Vec<f64> = ok.iter().map(|m| m.final_f).collect();
                let train: Vec<f64> = ok.iter().filter_map(|m| m.final_train_accuracy).collect();
                let test: Vec<f64> = ok.iter().filter_map(|m| m.final_test_accuracy).collect();
                let best: Vec<f64> = ok.iter().filter_map(|m| m.best_test_accuracy).collect();
                let (final_f_mean, final_f_std) = mean_std(&f).unwrap_or((f64::NAN, f64::NAN));
                let tr = mean_std(&train);
                let te = mean_std(&test);
                SummaryRow {
                    algorithm: g[0].algorithm.clone(),
                    learning_rate: g[0].learning_rate,
                    learning_rate_value: g[0].learning_rate.to_f64(),
                    runs: g.len(),
                    failures: g.len() - ok.len(),
                    final_f_mean,
                    final_f_std,
                    train_mean: tr.map(|v| v.0),
                    train_std: tr.map(|v| v.1),
                    test_mean: te.map(|v| v.0),
                    test_std: te.map(|v| v.1),
                    best_test_mean: mean_std(&best).map(|v| v.0),
                    test_values: test,
                }
            })
            .collect();
        Ok(Self {
            experiment: first.experiment.clone(),
            experiment_hash: first.experiment_hash.clone(),
            rows,
        })
    }

    pub fn row(&self, algorithm: &str, lr: Rational) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.learning_rate == lr)
    }

    /// Long form: one line per (algorithm, learning rate).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "algorithm",
            "learning_rate",
            "runs",
            "failures",
            "final_f_mean",
            "final_f_std",
            "train_mean",
            "train_std",
            "test_mean",
            "test_std",
            "best_test_mean",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.algorithm.clone(),
                r.learning_rate.to_string(),
                r.runs.to_string(),
                r.failures.to_string(),
                r.final_f_mean.to_string(),
                r.final_f_std.to_string(),
                opt(r.train_mean),
                opt(r.train_std),
                opt(r.test_mean),
                opt(r.test_std),
                opt(r.best_test_mean),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wide form: one line per learning rate, train/test columns per algorithm.
    pub fn write_wide_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut algs: Vec<&str> = Vec::new();
        let mut lrs: Vec<Rational> = Vec::new();
        for r in &self.rows {
            if !algs.contains(&r.algorithm.as_str()) {
                algs.push(&r.algorithm);
            }
            if !lrs.contains(&r.learning_rate) {
                lrs.push(r.learning_rate);
            }
        }
        lrs.sort_by(|a, b| b.to_f64().total_cmp(&a.to_f64()));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["learning_rate".to_string()];
        for a in &algs {
            header.push(format!("{a}_train"));
            header.push(format!("{a}_test"));
        }
        w.write_record(&header)?;
        for lr in lrs {
            let mut rec = vec![format!("{}", lr.to_f64())];
            for a in &algs {
                let row = self.row(a, lr);
                let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
                rec.push(cell(
                    row.and_then(|r| r.train_mean.or(Some(r.final_f_mean))),
                ));
                rec.push(cell(row.and_then(|r| r.test_mean)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub out_dir: PathBuf,
    pub runs: Vec<RunFile>,
    pub summary: SummaryTable,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.succeeded()).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    alg: AlgorithmSpec,
    lr: Rational,
    seed: u64,
}

fn write_run(dir: &Path, file: &RunFile, record: Option<&RunRecord>) -> Result<()> {
    let stem = RunFile::stem(&file.algorithm, file.learning_rate, file.seed);
    if let Some(rec) = record {
        rec.write_csv(fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        if !rec.epochs.is_empty() {
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}_epochs.csv")))?;
            for e in &rec.epochs {
                w.serialize(e)?;
            }
            w.flush()?;
        }
    }
    let f = fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(f, file)?;
    Ok(())
}

/// Run every (algorithm, learning rate, seed) combination of `cfg`, writing
/// per-run files under `out/runs` and the summary under `out`.
///
/// A run that fails is recorded with its error and does not stop the sweep.
/// `jobs` caps the worker count; `None` uses all cores. Output does not depend
/// on the worker count.
pub fn sweep(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<SweepResult> {
    cfg.validate()?;
    let obj: Box<dyn Objective> = cfg.objective_spec().build()?;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let hash = cfg.hash();

    let mut job_list = Vec::new();
    for alg in &cfg.algorithms {
        for &lr in &cfg.learning_rates {
            for &seed in &cfg.seeds {
                job_list.push(Job {
                    alg: *alg,
                    lr,
                    seed,
                });
            }
        }
    }
    let work = |job: &Job| -> Result<RunFile> {
        let rc = cfg.run_config(&job.alg, job.lr);
        let label = rc.label().to_string();
        let (file, rec) = match run(obj.as_ref(), &rc, job.seed) {
            Ok(rec) => (
                RunFile {
                    experiment: cfg.name.clone(),
                    experiment_hash: hash.clone(),
                    algorithm: label,
                    learning_rate: job.lr,
                    seed: job.seed,
                    error: None,
                    meta: Some(rec.meta.clone()),
                },
                Some(rec),
            ),
            Err(e) => (
                RunFile {
                    experiment: cfg.name.clone(),
                    experiment_hash: hash.clone(),
                    algorithm: label,
                    learning_rate: job.lr,
                    seed: job.seed,
                    error: Some(e.to_string()),
                    meta: None,
                },
                None,
            ),
        };
        write_run(&runs_dir, &file, rec.as_ref())?;
        Ok(file)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let runs = pool.install(|| job_list.par_iter().map(work).collect::<Result<Vec<_>>>())?;

    let summary = SummaryTable::from_runs(&runs)?;
    write_summary(out, &summary)?;
    Ok(SweepResult {
        out_dir: out.to_path_buf(),
        runs,
        summary,
    })
}

pub fn write_summary(out: &Path, summary: &SummaryTable) -> Result<()> {
    serde_json::to_writer_pretty(fs::File::create(out.join("summary.json"))?, summary)?;
    summary.write_csv(fs::File::create(out.join("summary.csv"))?)?;
    summary.write_wide_csv(fs::File::create(out.join("summary_table.csv"))?)?;
    Ok(())
}

/// Rebuild the summary from the run files in `dir` (or `dir/runs`).
/// Run files from different experiments are an error naming each offender.
pub fn aggregate(dir: &Path) -> Result<SummaryTable> {
    let runs_dir = if dir.join("runs").is_dir() {
        dir.join("runs")
    } else {
        dir.to_path_buf()
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut files = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p)?;
        let f: RunFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
        files.push((p.clone(), f));
    }
    if files.is_empty() {
        return Err(Error::InsufficientData { got: 0, need: 1 });
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, f) in &files {
        *counts.entry(f.experiment_hash.as_str()).or_default() += 1;
    }
    if counts.len() > 1 {
        let majority = counts
            .iter()
            .max_by_key(|(_, c)| **c)
            .map(|(h, _)| *h)
            .unwrap_or_default();
        let offenders: Vec<String> = files
            .iter()
            .filter(|(_, f)| f.experiment_hash != majority)
            .map(|(p, f)| {
                format!(
                    "{} ({})",
                    p.display(),
                    &f.experiment_hash[..12.min(f.experiment_hash.len())]
                )
            })
            .collect();
        return Err(Error::InvalidConfig(format!(
            "run files from {} different experiments; offenders: {}",
            counts.len(),
            offenders.join(", ")
        )));
    }
    let runs: Vec<RunFile> = files.into_iter().map(|(_, f)| f).collect();
    SummaryTable::from_runs(&runs)
}
