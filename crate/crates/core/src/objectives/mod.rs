//! Benchmark objectives with analytic gradients.
//!
//! Every objective declares an open ball `B(center, radius)` as its domain and,
//! where one is known, a Lipschitz constant valid on that ball and the location
//! of its global minimum. Constructors run a finite-difference gradient check
//! unless told not to.

mod benchmarks;
mod brute;
mod mlp;

pub use benchmarks::{Ackley, DoubleWell, Quadratic, Rastrigin};
pub use brute::brute_force_min;
pub use mlp::{ClassificationConfig, Dataset, MlpTask, Split};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallDomain {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallDomain {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        distance(x, &self.center) < self.radius
    }

    /// Uniform sample from the open ball.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.center.len();
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let u: f64 = rng.random::<f64>();
        let r = self.radius * u.powf(1.0 / d as f64) * (1.0 - 1e-12);
        self.center
            .iter()
            .zip(&dir)
            .map(|(c, v)| c + r * v / norm)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMin {
    pub location: Vec<f64>,
    pub value: f64,
}

/// Addresses one mini-batch of one epoch of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchRef {
    pub seed: u64,
    pub epoch: u64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
    fn domain(&self) -> &BallDomain;

    fn lipschitz(&self) -> Option<f64> {
        None
    }

    fn global_min(&self) -> Option<GlobalMin> {
        None
    }

    fn batches_per_epoch(&self) -> usize {
        1
    }

    /// Loss and gradient on one mini-batch. Deterministic objectives ignore the batch.
    fn batch_value_and_gradient(&self, w: &[f64], _batch: BatchRef) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(w), self.gradient(w)))
    }

    /// Starting point for a run with the given seed.
    fn initial_point(&self, seed: u64) -> Vec<f64> {
        self.domain().sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Whether `w` lies in the basin of attraction of the global minimum,
    /// for objectives whose basins are known.
    fn in_global_basin(&self, _w: &[f64]) -> Option<bool> {
        None
    }

    /// Classification metrics, for objectives that have them.
    fn metrics(&self, _w: &[f64]) -> Option<Metrics> {
        None
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compare `gradient` with central differences at `points` seeded start points,
/// on at most `max_coords` coordinates per point.
pub fn check_gradient(
    obj: &dyn Objective,
    points: usize,
    max_coords: usize,
    rel_tol: f64,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = obj.dim();
    for p in 0..points {
        let x = obj.initial_point(seed.wrapping_add(p as u64 + 1));
        let g = obj.gradient(&x);
        if g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: g.len(),
            });
        }
        let coords: Vec<usize> = if d <= max_coords {
            (0..d).collect()
        } else {
            (0..max_coords).map(|_| rng.random_range(0..d)).collect()
        };
        for i in coords {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (obj.value(&xp) - obj.value(&xm)) / (xp[i] - xm[i]);
            let err = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1.0);
            if !(err <= rel_tol) {
                return Err(Error::GradientCheck {
                    objective: obj.name().to_string(),
                    detail: format!(
                        "coordinate {i} at point {p}: analytic {} vs finite difference {fd} (rel {err:.2e})",
                        g[i]
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Sample the ball and confirm `|f(x) - f(x*)| <= L |x - x*|`.
/// Returns the largest observed ratio.
pub fn check_lipschitz(obj: &dyn Objective, samples: usize, seed: u64) -> Result<f64> {
    let (Some(l), Some(gm)) = (obj.lipschitz(), obj.global_min()) else {
        return Err(Error::Unsupported(format!(
            "{} declares no Lipschitz constant or minimizer",
            obj.name()
        )));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = obj.domain().sample(&mut rng);
        let r = distance(&x, &gm.location);
        if r == 0.0 {
            continue;
        }
        let ratio = (obj.value(&x) - gm.value).abs() / r;
        worst = worst.max(ratio);
        if ratio > l * (1.0 + 1e-12) {
            return Err(Error::Numerical(format!(
                "{}: Lipschitz bound {l} violated with ratio {ratio}",
                obj.name()
            )));
        }
    }
    Ok(worst)
}

/// Objectives addressable by name from experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        n: usize,
        #[serde(default = "one")]
        curvature: f64,
    },
    DoubleWell,
    Rastrigin {
        n: usize,
    },
    Ackley {
        n: usize,
    },
    Mlp {
        #[serde(default)]
        task: ClassificationConfig,
        #[serde(default)]
        data_seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Box<dyn Objective>> {
        Ok(match self {
            ObjectiveSpec::Quadratic { n, curvature } => Box::new(Quadratic::new(*n, *curvature)?),
            ObjectiveSpec::DoubleWell => Box::new(DoubleWell::new()?),
            ObjectiveSpec::Rastrigin { n } => Box::new(Rastrigin::new(*n)?),
            ObjectiveSpec::Ackley { n } => Box::new(Ackley::new(*n)?),
            ObjectiveSpec::Mlp { task, data_seed } => {
                Box::new(MlpTask::new(task.clone(), *data_seed)?)
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveSpec::Quadratic { .. } => "quadratic",
            ObjectiveSpec::DoubleWell => "double_well",
            ObjectiveSpec::Rastrigin { .. } => "rastrigin",
            ObjectiveSpec::Ackley { .. } => "ackley",
            ObjectiveSpec::Mlp { .. } => "mlp",
        }
    }
}
