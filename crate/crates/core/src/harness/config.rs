use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objectives::ObjectiveSpec;
use crate::optim::{InitSpec, OptimizerKind, RunConfig};
use crate::rational::Rational;
use crate::schedule::ScheduleConfig;

/// Current config schema version. Files must declare it.
pub const SCHEMA_VERSION: u32 = 1;

/// `1/4, 1/8, ..., 1/4 * 2^-(count-1)`.
pub fn halving_grid(count: u32) -> Vec<Rational> {
    (0..count)
        .map(|k| Rational::new(1, 4u64 << k).expect("valid"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub optimizer: OptimizerKind,
    pub quantized: bool,
}

impl AlgorithmSpec {
    /// SGD, QSGD, ADAM and QtADAM.
    pub fn paper_set() -> Vec<AlgorithmSpec> {
        let mut v = Vec::new();
        for optimizer in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            for quantized in [false, true] {
                v.push(AlgorithmSpec {
                    optimizer,
                    quantized,
                });
            }
        }
        v
    }
}

fn default_algorithms() -> Vec<AlgorithmSpec> {
    AlgorithmSpec::paper_set()
}

fn default_learning_rates() -> Vec<Rational> {
    halving_grid(9)
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_epochs() -> u64 {
    100
}

fn default_true() -> bool {
    true
}

fn default_patience() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub objective: ObjectiveSpec,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<Rational>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    /// Overrides the mini-batch size of objectives that have one.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_true")]
    pub rescue: bool,
    #[serde(default)]
    pub grad_tol: f64,
    #[serde(default = "default_patience")]
    pub vanish_patience: u64,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                self.version
            ));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        if self.learning_rates.is_empty() {
            return bad("at least one learning rate is required".into());
        }
        if self.learning_rates.iter().any(|lr| lr.num() == lr.den()) {
            return bad("learning rates must lie in (0, 1)".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }

    /// Objective spec with the batch-size override applied.
    pub fn objective_spec(&self) -> ObjectiveSpec {
        let mut spec = self.objective.clone();
        if let (ObjectiveSpec::Mlp { task, .. }, Some(bs)) = (&mut spec, self.batch_size) {
            task.batch_size = bs;
        }
        spec
    }

    pub fn run_config(&self, alg: &AlgorithmSpec, lr: Rational) -> RunConfig {
        RunConfig {
            optimizer: alg.optimizer,
            quantized: alg.quantized,
            learning_rate: lr,
            schedule: self.schedule,
            rescue: self.rescue,
            epochs: self.epochs,
            grad_tol: self.grad_tol,
            vanish_patience: self.vanish_patience,
            init: self.init.clone(),
            track_epoch_metrics: true,
            capture_errors: false,
            capture_weights: false,
        }
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Parse a seed list: `3`, `0,1,5` or a half-open range `0..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Parse(format!("invalid seed list {s:?}"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(bad());
    }
    Ok(v)
}
