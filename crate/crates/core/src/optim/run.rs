use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::direction::OptimizerKind;
use super::step::{step_quantized, step_unquantized, OptimizerState};
use crate::error::{Error, Result};
use crate::objectives::{norm, BatchRef, Objective};
use crate::rational::Rational;
use crate::schedule::{diffusion_scale, noise_floor, ScheduleConfig};

/// How the starting point of a run is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// The objective's own initializer, seeded by the run seed.
    #[default]
    Objective,
    Fixed {
        point: Vec<f64>,
    },
    /// Uniform in the box `[low, high]^n`, seeded by the run seed.
    UniformBox {
        low: f64,
        high: f64,
    },
}

impl InitSpec {
    pub fn point(&self, obj: &dyn Objective, seed: u64) -> Result<Vec<f64>> {
        match self {
            InitSpec::Objective => Ok(obj.initial_point(seed)),
            InitSpec::Fixed { point } => {
                if point.len() != obj.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: obj.dim(),
                        got: point.len(),
                    });
                }
                Ok(point.clone())
            }
            InitSpec::UniformBox { low, high } => {
                if !(low < high) {
                    return Err(Error::InvalidConfig("init box needs low < high".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::MAX);
                Ok((0..obj.dim())
                    .map(|_| rng.random_range(*low..*high))
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub optimizer: OptimizerKind,
    pub quantized: bool,
    pub learning_rate: Rational,
    pub schedule: ScheduleConfig,
    /// Apply the vanishing-gradient rescue.
    pub rescue: bool,
    pub epochs: u64,
    /// Stop once the gradient norm falls strictly below this value.
    pub grad_tol: f64,
    /// Stop after this many consecutive steps whose direction vanished at the cap.
    pub vanish_patience: u64,
    pub init: InitSpec,
    /// Evaluate classification metrics at the end of every epoch.
    pub track_epoch_metrics: bool,
    /// Keep every applied quantization error vector in the record.
    pub capture_errors: bool,
    /// Keep the weights at the start of the run and after every epoch.
    pub capture_weights: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            quantized: true,
            learning_rate: Rational::new(1, 8).expect("valid"),
            schedule: ScheduleConfig::default(),
            rescue: true,
            epochs: 100,
            grad_tol: 1e-12,
            vanish_patience: 10,
            init: InitSpec::Objective,
            track_epoch_metrics: true,
            capture_errors: false,
            capture_weights: false,
        }
    }
}

impl RunConfig {
    /// `SGD`, `QSGD`, `ADAM` or `QtADAM`.
    pub fn label(&self) -> &'static str {
        match (&self.optimizer, self.quantized) {
            (OptimizerKind::Sgd, false) => "SGD",
            (OptimizerKind::Sgd, true) => "QSGD",
            (OptimizerKind::Adam { .. }, false) => "ADAM",
            (OptimizerKind::Adam { .. }, true) => "QtADAM",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be >= 0".into()));
        }
        if self.vanish_patience == 0 {
            return Err(Error::InvalidConfig("vanish_patience must be >= 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form together with the objective name.
    pub fn hash(&self, objective: &str) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(objective.as_bytes());
        h.update([0u8]);
        h.update(json.as_bytes());
        hex::encode(h.finalize())
    }
}

/// One row per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: u64,
    pub step: u64,
    pub f: f64,
    pub grad_norm: f64,
    pub q_p: Option<u64>,
    pub h_bar: Option<i64>,
    pub sigma: Option<f64>,
    pub sigma_variance_scale: Option<f64>,
    pub sigma_inf: Option<f64>,
    pub rescue: u32,
    pub vanished: bool,
    pub vanished_at_cap: bool,
    pub theorem_compliant: Option<bool>,
    pub lattice_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub f: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    GradientTolerance,
    VanishedAtCap,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub objective: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub wall_time_s: f64,
    pub steps: u64,
    pub epochs_completed: u64,
    pub stop_reason: StopReason,
    pub errors: Vec<String>,
    pub initial_point: Vec<f64>,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub final_h_bar: Option<i64>,
    pub final_q_p: Option<u64>,
    pub rescue_events: u64,
    pub bound_raises: u64,
    pub lattice_violations: u64,
    pub final_train_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub best_test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub rows: Vec<StepRow>,
    pub epochs: Vec<EpochRow>,
    pub final_weights: Vec<f64>,
    /// Applied error vectors (lattice units), when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub errors: Option<Vec<Vec<f64>>>,
    /// Start point followed by the weights after each epoch, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights_by_epoch: Option<Vec<Vec<f64>>>,
}

impl RunRecord {
    /// Per-step trace as CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.meta)?;
        Ok(())
    }

    pub fn trajectory(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.f)
    }
}

/// Run one optimizer to completion.
///
/// Configuration errors are returned; numerical failures during the run stop
/// it and are recorded in the metadata.
pub fn run(obj: &dyn Objective, cfg: &RunConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let w0 = cfg.init.point(obj, seed)?;
    let mut state = if cfg.quantized {
        OptimizerState::quantized(&w0, cfg.learning_rate, &cfg.optimizer, cfg.schedule, seed)?
    } else {
        OptimizerState::unquantized(&w0, cfg.learning_rate, &cfg.optimizer, seed)?
    };
    let n = obj.dim();
    let per_batch = cfg.schedule.per_minibatch;
    let batches = obj.batches_per_epoch().max(1);

    let mut rows = Vec::new();
    let mut epoch_rows = Vec::new();
    let mut errors = Vec::new();
    let mut captured = cfg.capture_errors.then(Vec::new);
    let mut weights_by_epoch = cfg.capture_weights.then(|| vec![state.values()]);
    let mut stop = StopReason::MaxEpochs;
    let mut vanish_streak = 0u64;
    let mut lattice_violations = 0u64;
    let mut epochs_completed = 0u64;

    'outer: for epoch in 0..cfg.epochs {
        for index in 0..batches {
            let w = state.values();
            let (f, g) = match obj.batch_value_and_gradient(&w, BatchRef { seed, epoch, index }) {
                Ok(v) => v,
                Err(e) => {
                    errors.push(e.to_string());
                    stop = StopReason::Error;
                    break 'outer;
                }
            };
            let grad_norm = norm(&g);
            let sched_row = |s: &OptimizerState| {
                s.scheduler.as_ref().map(|sc| {
                    let c = s.schedule.as_ref().expect("schedule with scheduler");
                    (
                        sc.t,
                        sc.h_bar,
                        sc.q_p,
                        sc.sigma_infimum(c),
                        sc.theorem_compliant(c),
                    )
                })
            };
            if grad_norm < cfg.grad_tol {
                rows.push(make_row(
                    &state,
                    sched_row(&state),
                    epoch,
                    f,
                    grad_norm,
                    0,
                    false,
                    false,
                    n,
                ));
                stop = StopReason::GradientTolerance;
                break 'outer;
            }
            let outcome = if cfg.quantized {
                step_quantized(&mut state, &g, cfg.rescue)
            } else {
                step_unquantized(&mut state, &g)
            };
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    errors.push(e.to_string());
                    stop = StopReason::Error;
                    break 'outer;
                }
            };
            if !state.lattice_closed() {
                lattice_violations += 1;
            }
            if let (Some(c), Some(e)) = (captured.as_mut(), outcome.eps_applied.as_ref()) {
                c.push(e.errors().to_vec());
            }
            rows.push(make_row(
                &state,
                sched_row(&state),
                epoch,
                f,
                grad_norm,
                outcome.rescue_raises,
                outcome.vanished_initially,
                outcome.vanished_at_cap,
                n,
            ));
            if outcome.vanished_at_cap {
                vanish_streak += 1;
                if vanish_streak >= cfg.vanish_patience {
                    stop = StopReason::VanishedAtCap;
                    break 'outer;
                }
            } else {
                vanish_streak = 0;
            }
            if per_batch {
                if let Err(e) = state.advance_schedule() {
                    errors.push(e.to_string());
                    stop = StopReason::Error;
                    break 'outer;
                }
            }
        }
        epochs_completed = epoch + 1;
        if let Some(wb) = weights_by_epoch.as_mut() {
            wb.push(state.values());
        }
        if cfg.track_epoch_metrics {
            epoch_rows.push(epoch_row(obj, &state.values(), epoch));
        }
        if !per_batch {
            if let Err(e) = state.advance_schedule() {
                errors.push(e.to_string());
                stop = StopReason::Error;
                break;
            }
        }
    }

    let final_weights = state.values();
    let final_f = obj.value(&final_weights);
    let final_grad_norm = norm(&obj.gradient(&final_weights));
    let final_metrics = obj.metrics(&final_weights);
    let best_test_accuracy = epoch_rows
        .iter()
        .filter_map(|r| r.test_accuracy)
        .chain(final_metrics.map(|m| m.test_accuracy))
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
    let meta = RunMeta {
        label: cfg.label().to_string(),
        objective: obj.name().to_string(),
        seed,
        config_hash: cfg.hash(obj.name()),
        config: cfg.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
        steps: state.step,
        epochs_completed,
        stop_reason: stop,
        errors,
        initial_point: if n <= 16 { w0 } else { Vec::new() },
        final_f,
        final_grad_norm,
        final_h_bar: state.scheduler.map(|s| s.h_bar),
        final_q_p: state.scheduler.map(|s| s.q_p),
        rescue_events: state.rescue_count,
        bound_raises: state.scheduler.map_or(0, |s| s.violations),
        lattice_violations,
        final_train_accuracy: final_metrics.map(|m| m.train_accuracy),
        final_test_accuracy: final_metrics.map(|m| m.test_accuracy),
        best_test_accuracy,
    };
    Ok(RunRecord {
        meta,
        rows,
        epochs: epoch_rows,
        final_weights,
        errors: captured,
        weights_by_epoch,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    state: &OptimizerState,
    sched: Option<(u64, i64, u64, f64, bool)>,
    epoch: u64,
    f: f64,
    grad_norm: f64,
    rescue: u32,
    vanished: bool,
    vanished_at_cap: bool,
    n: usize,
) -> StepRow {
    StepRow {
        t: sched.map_or(epoch, |s| s.0),
        step: state.step,
        f,
        grad_norm,
        q_p: sched.map(|s| s.2),
        h_bar: sched.map(|s| s.1),
        sigma: sched.map(|s| noise_floor(n, s.2)),
        sigma_variance_scale: sched.map(|s| diffusion_scale(n, s.2)),
        sigma_inf: sched.map(|s| s.3),
        rescue,
        vanished,
        vanished_at_cap,
        theorem_compliant: sched.map(|s| s.4),
        lattice_ok: state.lattice_closed(),
    }
}

fn epoch_row(obj: &dyn Objective, w: &[f64], epoch: u64) -> EpochRow {
    match obj.metrics(w) {
        Some(m) => EpochRow {
            epoch,
            f: m.train_loss,
            train_accuracy: Some(m.train_accuracy),
            test_accuracy: Some(m.test_accuracy),
        },
        None => EpochRow {
            epoch,
            f: obj.value(w),
            train_accuracy: None,
            test_accuracy: None,
        },
    }
}
