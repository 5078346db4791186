use serde::{Deserialize, Serialize};

use super::direction::{DirectionalDerivative, OptimizerKind};
use crate::error::{Error, Result};
use crate::quantizer::{quantize_vector, LatticeVector, QuantError};
use crate::rational::Rational;
use crate::schedule::{ScheduleConfig, SchedulerState};

/// Weights on an exact lattice, or plain floats for the unquantized baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Weights {
    Lattice(LatticeVector),
    Real(Vec<f64>),
}

impl Weights {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Weights::Lattice(l) => l.values(),
            Weights::Real(v) => v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Weights::Lattice(l) => l.len(),
            Weights::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub weights: Weights,
    pub step: u64,
    pub learning_rate: Rational,
    pub derivative: DirectionalDerivative,
    pub schedule: Option<ScheduleConfig>,
    pub scheduler: Option<SchedulerState>,
    pub rng_seed: u64,
    pub rescue_count: u64,
}

impl OptimizerState {
    /// Quantized state: `w0` is rounded onto the initial `1/q_p(0)` lattice.
    pub fn quantized(
        w0: &[f64],
        learning_rate: Rational,
        kind: &OptimizerKind,
        schedule: ScheduleConfig,
        rng_seed: u64,
    ) -> Result<Self> {
        let schedule = schedule.with_dimension(w0.len());
        let scheduler = SchedulerState::new(&schedule)?;
        let (w, _) = quantize_vector(w0, scheduler.level())?;
        Ok(Self {
            weights: Weights::Lattice(w),
            step: 0,
            learning_rate,
            derivative: DirectionalDerivative::new(kind, w0.len())?,
            schedule: Some(schedule),
            scheduler: Some(scheduler),
            rng_seed,
            rescue_count: 0,
        })
    }

    pub fn unquantized(
        w0: &[f64],
        learning_rate: Rational,
        kind: &OptimizerKind,
        rng_seed: u64,
    ) -> Result<Self> {
        if let Some(index) = w0.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: w0[index],
            });
        }
        Ok(Self {
            weights: Weights::Real(w0.to_vec()),
            step: 0,
            learning_rate,
            derivative: DirectionalDerivative::new(kind, w0.len())?,
            schedule: None,
            scheduler: None,
            rng_seed,
            rescue_count: 0,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        self.weights.values()
    }

    /// `den(alpha) * q_p`, the denominator every weight must divide after a step.
    pub fn closure_denominator(&self) -> Option<u128> {
        let s = self.scheduler.as_ref()?;
        (self.learning_rate.den() as u128).checked_mul(s.q_p as u128)
    }

    /// True when the weights lie on the lattice `1 / (den(alpha) * q_p)`.
    /// Always true for unquantized state.
    pub fn lattice_closed(&self) -> bool {
        match (&self.weights, self.closure_denominator()) {
            (Weights::Lattice(w), Some(d)) => w.lies_on(d),
            (Weights::Lattice(_), None) => false,
            (Weights::Real(_), _) => true,
        }
    }

    /// Move the schedule to the next epoch (or mini-batch, when configured so).
    pub fn advance_schedule(&mut self) -> Result<()> {
        if let (Some(cfg), Some(s)) = (self.schedule.as_ref(), self.scheduler.as_mut()) {
            s.advance_epoch(cfg)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub new_weights: Weights,
    /// `h^Q`; `None` on the unquantized path.
    pub quantized_direction: Option<LatticeVector>,
    pub raw_direction: Vec<f64>,
    pub eps_applied: Option<QuantError>,
    pub vanished_initially: bool,
    pub vanished_at_cap: bool,
    pub h_bar_after: Option<i64>,
    pub rescue_raises: u32,
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// `w <- w - alpha * h` in floating point.
pub fn step_unquantized(state: &mut OptimizerState, grad: &[f64]) -> Result<StepOutcome> {
    check_dim(state.weights.len(), grad.len())?;
    let Weights::Real(w) = &state.weights else {
        return Err(Error::InvalidConfig(
            "unquantized step on lattice weights".into(),
        ));
    };
    let h = state.derivative.direction(grad)?;
    let alpha = state.learning_rate.to_f64();
    let next: Vec<f64> = w.iter().zip(&h).map(|(wi, hi)| wi - alpha * hi).collect();
    if let Some(index) = next.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            index,
            value: next[index],
        });
    }
    state.weights = Weights::Real(next);
    state.step += 1;
    Ok(StepOutcome {
        new_weights: state.weights.clone(),
        quantized_direction: None,
        raw_direction: h,
        eps_applied: None,
        vanished_initially: false,
        vanished_at_cap: false,
        h_bar_after: None,
        rescue_raises: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescueOutcome {
    pub h_q: LatticeVector,
    pub eps: QuantError,
    pub vanished_at_cap: bool,
    pub raises: u32,
}

/// Raise the resolution one exponent at a time until `h` no longer rounds to
/// zero or the rescue ceiling is reached. `h_bar` never decreases.
///
/// An exactly zero `h` cannot be rescued at any resolution and returns at once
/// with the cap flag set.
pub fn rescue_vanishing(
    h: &[f64],
    sched: &mut SchedulerState,
    cfg: &ScheduleConfig,
) -> Result<RescueOutcome> {
    let (mut h_q, mut eps) = quantize_vector(h, sched.level())?;
    let mut raises = 0;
    if h.iter().all(|&x| x == 0.0) {
        return Ok(RescueOutcome {
            h_q,
            eps,
            vanished_at_cap: true,
            raises,
        });
    }
    let ceiling = sched.rescue_ceiling(cfg);
    while h_q.is_zero() && sched.h_bar < ceiling {
        sched.raise_resolution(cfg)?;
        raises += 1;
        (h_q, eps) = quantize_vector(h, sched.level())?;
    }
    Ok(RescueOutcome {
        vanished_at_cap: h_q.is_zero(),
        h_q,
        eps,
        raises,
    })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u128, b: u128) -> Result<u128> {
    (a / gcd(a, b))
        .checked_mul(b)
        .ok_or(Error::ArithmeticOverflow)
}

/// `w - (num/den) * h_q` exactly, over `lcm(D_w, den * D_h)`.
fn lattice_update(
    w: &LatticeVector,
    alpha: Rational,
    h_q: &LatticeVector,
) -> Result<LatticeVector> {
    let step_den = (alpha.den() as u128)
        .checked_mul(h_q.denominator())
        .ok_or(Error::ArithmeticOverflow)?;
    let d = lcm(w.denominator(), step_den)?;
    let w = w.rescaled(d)?;
    let m = i128::try_from(d / step_den).map_err(|_| Error::ArithmeticOverflow)?;
    let a = alpha.num() as i128;
    let numerators = w
        .numerators()
        .iter()
        .zip(h_q.numerators())
        .map(|(&wk, &hk)| {
            a.checked_mul(hk)
                .and_then(|v| v.checked_mul(m))
                .and_then(|v| wk.checked_sub(v))
                .ok_or(Error::ArithmeticOverflow)
        })
        .collect::<Result<Vec<_>>>()?;
    LatticeVector::from_parts(numerators, d)
}

/// One step of the quantized learning equation
/// `w <- w - (alpha / q_p) * round(q_p * h)`, with the vanishing rescue when
/// `rescue` is set.
pub fn step_quantized(
    state: &mut OptimizerState,
    grad: &[f64],
    rescue: bool,
) -> Result<StepOutcome> {
    check_dim(state.weights.len(), grad.len())?;
    let (Some(cfg), Some(sched)) = (state.schedule.as_ref(), state.scheduler.as_mut()) else {
        return Err(Error::InvalidConfig(
            "quantized step without a schedule".into(),
        ));
    };
    let Weights::Lattice(w) = &state.weights else {
        return Err(Error::InvalidConfig(
            "quantized step on real weights".into(),
        ));
    };
    sched.check_bound(cfg)?;
    let h = state.derivative.direction(grad)?;
    let (mut h_q, mut eps) = quantize_vector(&h, sched.level())?;
    let vanished_initially = h_q.is_zero();
    let mut vanished_at_cap = false;
    let mut raises = 0;
    if vanished_initially && rescue {
        let r = rescue_vanishing(&h, sched, cfg)?;
        h_q = r.h_q;
        eps = r.eps;
        vanished_at_cap = r.vanished_at_cap;
        raises = r.raises;
    }
    let next = lattice_update(w, state.learning_rate, &h_q)?;
    let h_bar_after = sched.h_bar;
    state.weights = Weights::Lattice(next);
    state.step += 1;
    if raises > 0 {
        state.rescue_count += 1;
    }
    Ok(StepOutcome {
        new_weights: state.weights.clone(),
        quantized_direction: Some(h_q),
        raw_direction: h,
        eps_applied: Some(eps),
        vanished_initially,
        vanished_at_cap,
        h_bar_after: Some(h_bar_after),
        rescue_raises: raises,
    })
}
