//! Euler–Maruyama simulation of the diffusion limit of the quantized update,
//!
//! ```text
//! dW = -alpha * grad f(W) ds + sigma(s) dB
//! ```
//!
//! with `sigma` held constant over each epoch `[t, t + 1)` and `N` substeps of
//! length `1 / N` per epoch.

mod ks;

pub use ks::ks_two_sample;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::optim::{run, InitSpec, RunConfig};
use crate::schedule::{diffusion_scale, noise_floor, trajectory, ScheduleConfig};

/// Which constant multiplies `1 / q_p` in the diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionPreset {
    /// `sqrt(n / 12)`, the standard deviation of the summed error.
    #[default]
    Twelfth,
    /// `sqrt(n / 24)`, the noise floor used by the convergence condition.
    TwentyFourth,
}

impl DiffusionPreset {
    pub fn scale(&self, n: usize, q_p: u64) -> f64 {
        match self {
            DiffusionPreset::Twelfth => diffusion_scale(n, q_p),
            DiffusionPreset::TwentyFourth => noise_floor(n, q_p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Off,
    Constant {
        sigma: f64,
    },
    /// A fixed lattice `1 / q_p`.
    Fixed {
        q_p: u64,
        #[serde(default)]
        preset: DiffusionPreset,
    },
    /// `q_p(t)` from the resolution schedule, without rescue events.
    Schedule {
        #[serde(default)]
        schedule: ScheduleConfig,
        #[serde(default)]
        preset: DiffusionPreset,
    },
    /// `c / ln(t + 2)`.
    Annealed {
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSpec {
    /// Drift scale; the drift is `-alpha * grad f`.
    pub alpha: f64,
    pub noise: NoiseSpec,
    /// Substeps per epoch; the step size is `1 / substeps`.
    #[serde(default = "one")]
    pub substeps: u32,
    /// Length of the simulation in epochs.
    pub horizon: u64,
    #[serde(default)]
    pub init: InitSpec,
}

fn one() -> u32 {
    1
}

impl SdeSpec {
    pub fn ds(&self) -> f64 {
        1.0 / self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(
                "sde alpha must be finite and >= 0".into(),
            ));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidConfig("sde substeps must be >= 1".into()));
        }
        match &self.noise {
            NoiseSpec::Constant { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => Err(
                Error::InvalidConfig("constant sigma must be finite and >= 0".into()),
            ),
            NoiseSpec::Fixed { q_p: 0, .. } => Err(Error::InvalidConfig("q_p must be >= 1".into())),
            NoiseSpec::Annealed { c } if !(*c >= 0.0 && c.is_finite()) => Err(
                Error::InvalidConfig("annealing constant must be finite and >= 0".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Diffusion coefficient for each epoch `0..horizon`.
    pub fn sigma_path(&self, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let h = self.horizon as usize;
        let path = match &self.noise {
            NoiseSpec::Off => vec![0.0; h],
            NoiseSpec::Constant { sigma } => vec![*sigma; h],
            NoiseSpec::Fixed { q_p, preset } => vec![preset.scale(n, *q_p); h],
            NoiseSpec::Schedule { schedule, preset } => {
                let cfg = schedule.with_dimension(n);
                trajectory(&cfg, self.horizon.saturating_sub(1))?
                    .iter()
                    .take(h)
                    .map(|r| preset.scale(n, r.q_p))
                    .collect()
            }
            NoiseSpec::Annealed { c } => (0..self.horizon)
                .map(|t| c / ((t as f64) + 2.0).ln())
                .collect(),
        };
        if path.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "diffusion scale must be non-increasing".into(),
            ));
        }
        Ok(path)
    }
}

/// `w + drift * ds + sigma * sqrt(ds) * noise`. The noise term is skipped
/// entirely when `sigma` is zero.
pub fn em_step(w: &[f64], drift: &[f64], sigma: f64, ds: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if drift.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: drift.len(),
        });
    }
    let next: Vec<f64> = if sigma == 0.0 {
        w.iter().zip(drift).map(|(x, d)| x + d * ds).collect()
    } else {
        if noise.len() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: noise.len(),
            });
        }
        let s = sigma * ds.sqrt();
        w.iter()
            .zip(drift)
            .zip(noise)
            .map(|((x, d), z)| x + d * ds + s * z)
            .collect()
    };
    match next.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: next[index],
        }),
        None => Ok(next),
    }
}

/// Seed of path `path` under master seed `master`: the first word of the
/// ChaCha stream numbered `path`. Optimizer runs paired with SDE paths use
/// the same value, so both start from the same point.
pub fn path_seed(master: u64, path: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(path);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub path: u64,
    pub seed: u64,
    /// Start point followed by the state after each epoch, up to divergence.
    pub states: Vec<Vec<f64>>,
    pub diverged_at_epoch: Option<u64>,
}

/// Simulate one path.
pub fn simulate_path(
    obj: &dyn Objective,
    spec: &SdeSpec,
    sigma_path: &[f64],
    master: u64,
    path: u64,
) -> Result<PathResult> {
    let seed = path_seed(master, path);
    let mut w = spec.init.point(obj, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let ds = spec.ds();
    let n = obj.dim();
    let mut states = Vec::with_capacity(spec.horizon as usize + 1);
    states.push(w.clone());
    let mut noise = vec![0.0; n];
    for (t, &sigma) in sigma_path.iter().enumerate() {
        for _ in 0..spec.substeps {
            let drift: Vec<f64> = obj.gradient(&w).iter().map(|g| -spec.alpha * g).collect();
            if sigma != 0.0 {
                for z in noise.iter_mut() {
                    *z = StandardNormal.sample(&mut rng);
                }
            }
            match em_step(&w, &drift, sigma, ds, &noise) {
                Ok(next) if drift.iter().all(|d| d.is_finite()) => w = next,
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    return Ok(PathResult {
                        path,
                        seed,
                        states,
                        diverged_at_epoch: Some(t as u64),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        states.push(w.clone());
    }
    Ok(PathResult {
        path,
        seed,
        states,
        diverged_at_epoch: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Full covariance, row-major, for dimension up to 8.
    pub covariance: Option<Vec<f64>>,
    pub global_basin_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub path: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub master_seed: u64,
    pub paths: u64,
    pub diverged: u64,
    /// Terminal states of the paths that did not diverge, in path order.
    pub terminal: Vec<Vec<f64>>,
    pub epochs: Vec<EpochSummary>,
    pub seed_ledger: Vec<SeedEntry>,
}

impl EnsembleResult {
    /// One row per epoch and coordinate.
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "coordinate",
            "mean",
            "variance",
            "global_basin_fraction",
        ])?;
        for e in &self.epochs {
            for (k, (m, v)) in e.mean.iter().zip(&e.variance).enumerate() {
                let basin = e
                    .global_basin_fraction
                    .map(|f| f.to_string())
                    .unwrap_or_default();
                w.write_record([
                    e.epoch.to_string(),
                    k.to_string(),
                    m.to_string(),
                    v.to_string(),
                    basin,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn final_basin_fraction(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.global_basin_fraction)
    }
}

/// Summary statistics over the paths that are still alive at `epoch`.
pub fn summarize(obj: &dyn Objective, states: &[&[f64]], epoch: u64) -> EpochSummary {
    let n = obj.dim();
    let m = states.len() as f64;
    let mut mean = vec![0.0; n];
    for s in states {
        for (a, x) in mean.iter_mut().zip(s.iter()) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m.max(1.0));
    let denom = (m - 1.0).max(1.0);
    let mut variance = vec![0.0; n];
    for s in states {
        for k in 0..n {
            variance[k] += (s[k] - mean[k]).powi(2);
        }
    }
    variance.iter_mut().for_each(|v| *v /= denom);
    let covariance = (n <= 8).then(|| {
        let mut c = vec![0.0; n * n];
        for s in states {
            for i in 0..n {
                for j in 0..n {
                    c[i * n + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        c.iter_mut().for_each(|v| *v /= denom);
        c
    });
    let global_basin_fraction = if states.is_empty() {
        None
    } else {
        let flags: Option<Vec<bool>> = states.iter().map(|s| obj.in_global_basin(s)).collect();
        flags.map(|f| f.iter().filter(|&&b| b).count() as f64 / m)
    };
    EpochSummary {
        epoch,
        mean,
        variance,
        covariance,
        global_basin_fraction,
    }
}

/// Simulate `paths` independent paths in parallel. Path `i` draws from its
/// own ChaCha stream, so results do not depend on thread scheduling.
pub fn simulate_ensemble(
    obj: &dyn Objective,
    spec: &SdeSpec,
    paths: u64,
    seed: u64,
) -> Result<EnsembleResult> {
    if paths == 0 {
        return Err(Error::InvalidConfig(
            "ensemble needs at least one path".into(),
        ));
    }
    let sigma = spec.sigma_path(obj.dim())?;
    let results = (0..paths)
        .into_par_iter()
        .map(|p| simulate_path(obj, spec, &sigma, seed, p))
        .collect::<Result<Vec<_>>>()?;
    let alive: Vec<&PathResult> = results
        .iter()
        .filter(|r| r.diverged_at_epoch.is_none())
        .collect();
    let epochs = (0..=spec.horizon)
        .map(|e| {
            let states: Vec<&[f64]> = alive
                .iter()
                .map(|r| r.states[e as usize].as_slice())
                .collect();
            summarize(obj, &states, e)
        })
        .collect();
    Ok(EnsembleResult {
        master_seed: seed,
        paths,
        diverged: (results.len() - alive.len()) as u64,
        terminal: alive
            .iter()
            .map(|r| r.states.last().cloned().unwrap_or_default())
            .collect(),
        epochs,
        seed_ledger: results
            .iter()
            .map(|r| SeedEntry {
                path: r.path,
                seed: r.seed,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub objective: String,
    pub paths: u64,
    pub dim: usize,
    pub horizon: u64,
    pub sde_diverged: u64,
    pub optimizer_errors: u64,
    /// Per-coordinate KS statistic between terminal distributions.
    pub ks_terminal: Vec<f64>,
    pub ks_max: f64,
    pub ks_threshold: f64,
    pub ks_passed: bool,
    /// Largest per-coordinate gap between the two ensemble means, per epoch.
    pub mean_gap_by_epoch: Vec<f64>,
    pub max_mean_gap: f64,
    /// Cross-path variance pooled over coordinates and over the second half of the horizon.
    pub stationary_variance_optimizer: f64,
    pub stationary_variance_sde: f64,
    pub variance_ratio: f64,
    /// Every optimizer path equals its paired SDE path exactly.
    pub deterministic_agreement: bool,
}

impl ComparisonReport {
    pub fn write_json<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// KS decision threshold on terminal distributions.
pub const KS_THRESHOLD: f64 = 0.1;

fn pooled_stationary_variance(epochs: &[EpochSummary]) -> f64 {
    let half = epochs.len() / 2;
    let tail = &epochs[half..];
    let total: f64 = tail
        .iter()
        .map(|e| e.variance.iter().sum::<f64>() / e.variance.len() as f64)
        .sum();
    total / tail.len() as f64
}

/// Run `paths` optimizer runs and `paths` SDE paths from paired start points
/// and compare the resulting distributions.
pub fn compare_optimizer_to_sde(
    obj: &dyn Objective,
    run_cfg: &RunConfig,
    spec: &SdeSpec,
    paths: u64,
    seed: u64,
) -> Result<ComparisonReport> {
    if paths == 0 {
        return Err(Error::InvalidConfig(
            "comparison needs at least one path".into(),
        ));
    }
    if run_cfg.epochs != spec.horizon {
        return Err(Error::InvalidConfig(format!(
            "optimizer epochs {} differ from sde horizon {}",
            run_cfg.epochs, spec.horizon
        )));
    }
    if (run_cfg.learning_rate.to_f64() - spec.alpha).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "optimizer learning rate {} differs from sde alpha {}",
            run_cfg.learning_rate, spec.alpha
        )));
    }
    let n = obj.dim();
    let mut cfg = run_cfg.clone();
    cfg.init = spec.init.clone();
    cfg.capture_weights = true;
    cfg.track_epoch_metrics = false;

    let sigma = spec.sigma_path(n)?;
    let horizon = spec.horizon as usize;
    let pairs = (0..paths)
        .into_par_iter()
        .map(|p| -> Result<(Option<Vec<Vec<f64>>>, PathResult)> {
            let ps = path_seed(seed, p);
            let rec = run(obj, &cfg, ps)?;
            let opt = if rec.meta.errors.is_empty() {
                let mut w = rec.weights_by_epoch.unwrap_or_default();
                // a run that stopped early stays where it stopped
                let last = w
                    .last()
                    .cloned()
                    .unwrap_or_else(|| rec.final_weights.clone());
                w.resize(horizon + 1, last);
                Some(w)
            } else {
                None
            };
            Ok((opt, simulate_path(obj, spec, &sigma, seed, p)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let opt_paths: Vec<&Vec<Vec<f64>>> = pairs.iter().filter_map(|(o, _)| o.as_ref()).collect();
    let sde_paths: Vec<&PathResult> = pairs
        .iter()
        .map(|(_, s)| s)
        .filter(|s| s.diverged_at_epoch.is_none())
        .collect();
    let optimizer_errors = paths - opt_paths.len() as u64;
    let sde_diverged = paths - sde_paths.len() as u64;

    let opt_epochs: Vec<EpochSummary> = (0..=horizon)
        .map(|e| {
            let st: Vec<&[f64]> = opt_paths.iter().map(|p| p[e].as_slice()).collect();
            summarize(obj, &st, e as u64)
        })
        .collect();
    let sde_epochs: Vec<EpochSummary> = (0..=horizon)
        .map(|e| {
            let st: Vec<&[f64]> = sde_paths.iter().map(|p| p.states[e].as_slice()).collect();
            summarize(obj, &st, e as u64)
        })
        .collect();

    let ks_terminal: Vec<f64> = (0..n)
        .map(|k| {
            let a: Vec<f64> = opt_paths.iter().map(|p| p[horizon][k]).collect();
            let b: Vec<f64> = sde_paths.iter().map(|p| p.states[horizon][k]).collect();
            ks_two_sample(&a, &b).unwrap_or(1.0)
        })
        .collect();
    let ks_max = ks_terminal.iter().copied().fold(0.0, f64::max);
    let mean_gap_by_epoch: Vec<f64> = opt_epochs
        .iter()
        .zip(&sde_epochs)
        .map(|(a, b)| {
            a.mean
                .iter()
                .zip(&b.mean)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let max_mean_gap = mean_gap_by_epoch.iter().copied().fold(0.0, f64::max);
    let v_opt = pooled_stationary_variance(&opt_epochs);
    let v_sde = pooled_stationary_variance(&sde_epochs);
    let deterministic_agreement = optimizer_errors == 0
        && sde_diverged == 0
        && pairs
            .iter()
            .all(|(o, s)| o.as_ref().is_some_and(|o| *o == s.states));

    Ok(ComparisonReport {
        objective: obj.name().to_string(),
        paths,
        dim: n,
        horizon: spec.horizon,
        sde_diverged,
        optimizer_errors,
        ks_passed: ks_max < KS_THRESHOLD,
        ks_terminal,
        ks_max,
        ks_threshold: KS_THRESHOLD,
        mean_gap_by_epoch,
        max_mean_gap,
        stationary_variance_optimizer: v_opt,
        stationary_variance_sde: v_sde,
        variance_ratio: v_opt / v_sde,
        deterministic_agreement,
    })
}
