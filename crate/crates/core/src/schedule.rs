//! Coarse-to-fine resolution schedule.
//!
//! The lattice denominator is `q_p(t) = eta * base^h_bar(t)` with an integer
//! exponent `h_bar` that never decreases. The exponent is kept inside a
//! window whose upper edge grows like `log(log(t + 2))`:
//!
//! ```text
//! sup_h(t) = 1/2 * log_base( n * ln(t + 2) / (24 * eta^2 * C) )
//! inf_h(t) = sup_h(t) - beta / (t + 2)
//! ```
//!
//! and the noise floor `sigma(t) = sqrt(n / 24) / q_p(t)` is compared against
//! `C / ln(t + 2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::QuantLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Enforcement {
    /// Error when the lower bound cannot be met below the exponent cap.
    Strict,
    /// Raise `h_bar` to the lower bound, stopping at the cap.
    #[default]
    Clamped,
    /// Bounds are computed and reported but never acted on.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub eta: f64,
    pub base: f64,
    pub h_bar0: i64,
    #[serde(rename = "c")]
    pub c: f64,
    pub beta: f64,
    /// Problem dimension; 0 means "take it from the objective".
    pub n: usize,
    pub enforcement: Enforcement,
    pub max_exponent: i64,
    /// Re-evaluate the schedule after every mini-batch instead of every epoch.
    pub per_minibatch: bool,
}

impl Default for ScheduleConfig {
    /// `h_bar(0) = 2, b = 2, eta = 1, beta = 20, C = 1e6`.
    fn default() -> Self {
        Self {
            eta: 1.0,
            base: 2.0,
            h_bar0: 2,
            c: 1.0e6,
            beta: 20.0,
            n: 0,
            enforcement: Enforcement::Clamped,
            max_exponent: 62,
            per_minibatch: false,
        }
    }
}

impl ScheduleConfig {
    /// A fixed resolution `2^h_bar` with bounds switched off.
    pub fn fixed(h_bar: i64) -> Self {
        Self {
            h_bar0: h_bar,
            enforcement: Enforcement::Off,
            ..Self::default()
        }
    }

    pub fn with_dimension(mut self, n: usize) -> Self {
        if self.n == 0 {
            self.n = n;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("schedule eta must be > 0");
        }
        if !(self.base > 1.0 && self.base.is_finite()) {
            return bad("schedule base must be > 1");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("schedule C must be > 0");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("schedule beta must be >= 0");
        }
        if self.n == 0 {
            return bad("schedule dimension n must be >= 1");
        }
        if self.h_bar0 < 0 || self.h_bar0 > self.max_exponent {
            return bad("schedule h_bar0 must lie in [0, max_exponent]");
        }
        q_p_of(self.h_bar0, self)?;
        q_p_of(self.max_exponent, self)?;
        Ok(())
    }
}

/// `C / ln(t + 2)`.
pub fn sigma_infimum(t: u64, c: f64) -> f64 {
    c / ((t as f64) + 2.0).ln()
}

/// Upper edge of the exponent window. Negative for large `C`.
pub fn sup_h_bar(t: u64, cfg: &ScheduleConfig) -> f64 {
    let arg = cfg.n as f64 * ((t as f64) + 2.0).ln() / (24.0 * cfg.eta * cfg.eta * cfg.c);
    0.5 * arg.ln() / cfg.base.ln()
}

pub fn inf_h_bar(t: u64, cfg: &ScheduleConfig) -> f64 {
    sup_h_bar(t, cfg) - cfg.beta / ((t as f64) + 2.0)
}

/// `round(eta * base^h_bar)`, exact when `eta = 1` and `base` is an integer.
pub fn q_p_of(h_bar: i64, cfg: &ScheduleConfig) -> Result<u64> {
    if h_bar > cfg.max_exponent {
        return Err(Error::ExponentOverflow {
            h_bar,
            max: cfg.max_exponent,
        });
    }
    if h_bar < 0 {
        return Err(Error::InvalidConfig(format!("negative exponent {h_bar}")));
    }
    let overflow = || Error::ExponentOverflow {
        h_bar,
        max: cfg.max_exponent,
    };
    if cfg.eta == 1.0 && cfg.base.fract() == 0.0 && cfg.base < u64::MAX as f64 {
        let b = cfg.base as u64;
        let e = u32::try_from(h_bar).map_err(|_| overflow())?;
        return b
            .checked_pow(e)
            .filter(|&q| q <= i64::MAX as u64)
            .ok_or_else(overflow);
    }
    let q = (cfg.eta * cfg.base.powf(h_bar as f64)).round();
    if !q.is_finite() || q >= i64::MAX as f64 {
        return Err(overflow());
    }
    if q < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "eta * base^{h_bar} rounds below 1"
        )));
    }
    Ok(q as u64)
}

/// `sqrt(n / 24) / q_p`, the noise floor named in the convergence condition.
pub fn noise_floor(n: usize, q_p: u64) -> f64 {
    (n as f64 / 24.0).sqrt() / q_p as f64
}

/// `sqrt(n / 12) / q_p`, the diffusion scale implied by the error variance.
pub fn diffusion_scale(n: usize, q_p: u64) -> f64 {
    (n as f64 / 12.0).sqrt() / q_p as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub t: u64,
    pub h_bar: i64,
    pub q_p: u64,
    pub sup_h: f64,
    pub inf_h: f64,
    pub violations: u64,
}

impl SchedulerState {
    /// State at `t = 0`, with the lower bound already enforced.
    pub fn new(cfg: &ScheduleConfig) -> Result<Self> {
        cfg.validate()?;
        let mut s = Self {
            t: 0,
            h_bar: cfg.h_bar0,
            q_p: q_p_of(cfg.h_bar0, cfg)?,
            sup_h: sup_h_bar(0, cfg),
            inf_h: inf_h_bar(0, cfg),
            violations: 0,
        };
        s.check_bound(cfg)?;
        Ok(s)
    }

    pub fn level(&self) -> QuantLevel {
        QuantLevel::new(self.q_p).expect("q_p >= 1 by construction")
    }

    pub fn sigma(&self, cfg: &ScheduleConfig) -> f64 {
        noise_floor(cfg.n, self.q_p)
    }

    pub fn sigma_infimum(&self, cfg: &ScheduleConfig) -> f64 {
        sigma_infimum(self.t, cfg.c)
    }

    pub fn theorem_compliant(&self, cfg: &ScheduleConfig) -> bool {
        self.sigma(cfg) >= self.sigma_infimum(cfg)
    }

    /// Raise `h_bar` until it is at least `inf_h`. Never lowers it.
    pub fn check_bound(&mut self, cfg: &ScheduleConfig) -> Result<()> {
        if cfg.enforcement == Enforcement::Off || (self.h_bar as f64) >= self.inf_h {
            return Ok(());
        }
        let needed = self.inf_h.ceil() as i64;
        let target = if needed > cfg.max_exponent {
            if cfg.enforcement == Enforcement::Strict {
                return Err(Error::ExponentOverflow {
                    h_bar: needed,
                    max: cfg.max_exponent,
                });
            }
            cfg.max_exponent
        } else {
            needed
        };
        if target > self.h_bar {
            self.h_bar = target;
            self.q_p = q_p_of(target, cfg)?;
            self.violations += 1;
        }
        Ok(())
    }

    /// Highest exponent the vanishing-gradient rescue may reach.
    pub fn rescue_ceiling(&self, cfg: &ScheduleConfig) -> i64 {
        match cfg.enforcement {
            Enforcement::Strict => (self.sup_h.floor() as i64).min(cfg.max_exponent),
            Enforcement::Clamped | Enforcement::Off => cfg.max_exponent,
        }
    }

    /// `h_bar += 1`; fails at the cap.
    pub fn raise_resolution(&mut self, cfg: &ScheduleConfig) -> Result<()> {
        let h = self.h_bar + 1;
        self.q_p = q_p_of(h, cfg)?;
        self.h_bar = h;
        Ok(())
    }

    pub fn advance_epoch(&mut self, cfg: &ScheduleConfig) -> Result<()> {
        self.t += 1;
        self.sup_h = sup_h_bar(self.t, cfg);
        self.inf_h = inf_h_bar(self.t, cfg);
        self.check_bound(cfg)
    }
}

/// One row of a schedule trajectory export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t: u64,
    pub h_bar: i64,
    pub q_p: u64,
    pub sigma: f64,
    pub sigma_variance_scale: f64,
    pub sigma_inf: f64,
    pub sup_h: f64,
    pub inf_h: f64,
    pub violations: u64,
    pub theorem_compliant: bool,
}

impl ScheduleRow {
    pub fn from_state(s: &SchedulerState, cfg: &ScheduleConfig) -> Self {
        Self {
            t: s.t,
            h_bar: s.h_bar,
            q_p: s.q_p,
            sigma: s.sigma(cfg),
            sigma_variance_scale: diffusion_scale(cfg.n, s.q_p),
            sigma_inf: s.sigma_infimum(cfg),
            sup_h: s.sup_h,
            inf_h: s.inf_h,
            violations: s.violations,
            theorem_compliant: s.theorem_compliant(cfg),
        }
    }
}

/// Schedule rows for `t = 0..=horizon` with no optimizer attached.
pub fn trajectory(cfg: &ScheduleConfig, horizon: u64) -> Result<Vec<ScheduleRow>> {
    let mut s = SchedulerState::new(cfg)?;
    let mut rows = Vec::with_capacity(horizon as usize + 1);
    rows.push(ScheduleRow::from_state(&s, cfg));
    for _ in 0..horizon {
        s.advance_epoch(cfg)?;
        rows.push(ScheduleRow::from_state(&s, cfg));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(n: usize) -> ScheduleConfig {
        ScheduleConfig::default().with_dimension(n)
    }

    #[test]
    fn sigma_infimum_examples() {
        assert_relative_eq!(sigma_infimum(0, 1.0), 1.0 / 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(sigma_infimum(0, 1.0), 1.0 / 2f64.ln(), epsilon = 1e-12);
        // t + 2 = e^2 is not an integer; evaluate the formula at the real point
        let t = std::f64::consts::E.powi(2) - 2.0;
        assert_relative_eq!(1.0 / (t + 2.0).ln(), 0.5, epsilon = 1e-15);
        let mut prev = f64::INFINITY;
        for t in (0..1_000_000u64).step_by(997) {
            let s = sigma_infimum(t, 1.0);
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn sup_h_examples() {
        // n = 24, eta = 1, C = 1 and ln(t+2) = 1 -> 1/2 log2(1) = 0
        let c = ScheduleConfig {
            c: 1.0,
            n: 24,
            ..ScheduleConfig::default()
        };
        let ln_arg = 1.0f64; // ln(t + 2) at t = e - 2
        let direct = 0.5 * (c.n as f64 * ln_arg / (24.0 * c.c)).log2();
        assert_eq!(direct, 0.0);
        let c = ScheduleConfig {
            c: 1e-3,
            n: 10_000,
            ..ScheduleConfig::default()
        };
        assert_relative_eq!(sup_h_bar(0, &c), 9.0699, epsilon = 1e-4);
        for t in 0..10_000 {
            assert!(sup_h_bar(t + 1, &c) >= sup_h_bar(t, &c));
        }
    }

    #[test]
    fn inf_h_examples() {
        let c = cfg(10);
        assert_relative_eq!(inf_h_bar(0, &c), sup_h_bar(0, &c) - 10.0, epsilon = 1e-12);
        let gap = sup_h_bar(1_000_000, &c) - inf_h_bar(1_000_000, &c);
        assert!(gap < 1e-4 * c.beta);
        let c0 = ScheduleConfig { beta: 0.0, ..c };
        assert_eq!(inf_h_bar(5, &c0), sup_h_bar(5, &c0));
    }

    #[test]
    fn q_p_examples() {
        let c = cfg(1);
        assert_eq!(q_p_of(2, &c).unwrap(), 4);
        assert_eq!(q_p_of(0, &c).unwrap(), 1);
        assert_eq!(q_p_of(10, &c).unwrap(), 1024);
        assert_eq!(q_p_of(62, &c).unwrap(), 1 << 62);
        assert!(matches!(
            q_p_of(63, &c),
            Err(Error::ExponentOverflow { .. })
        ));
        for h in 0..=62 {
            assert_eq!(q_p_of(h, &c).unwrap(), 1u64 << h);
        }
        let c3 = ScheduleConfig {
            eta: 1.5,
            base: 3.0,
            max_exponent: 20,
            ..c
        };
        assert_eq!(q_p_of(2, &c3).unwrap(), 14); // round(13.5) half up
    }

    #[test]
    fn paper_defaults_start_at_four() {
        let c = cfg(354);
        let s = SchedulerState::new(&c).unwrap();
        assert_eq!(s.q_p, 4);
        assert_eq!(s.h_bar, 2);
        // with C = 1e6 the upper edge is far below h_bar(0)
        assert!(s.sup_h < 0.0);
    }

    fn state_at(inf_h: f64, h_bar: i64) -> SchedulerState {
        SchedulerState {
            t: 3,
            h_bar,
            q_p: 1 << h_bar,
            sup_h: inf_h + 1.0,
            inf_h,
            violations: 0,
        }
    }

    #[test]
    fn check_bound_examples() {
        let c = cfg(2);
        let mut s = state_at(4.5, 5);
        s.check_bound(&c).unwrap();
        assert_eq!(s.h_bar, 5);
        assert_eq!(s.violations, 0);

        let mut s = state_at(6.2, 5);
        s.check_bound(&c).unwrap();
        assert_eq!(s.h_bar, 7);
        assert_eq!(s.q_p, 128);
        assert_eq!(s.violations, 1);

        let off = ScheduleConfig {
            enforcement: Enforcement::Off,
            ..c
        };
        let mut s = state_at(40.0, 5);
        s.check_bound(&off).unwrap();
        assert_eq!(s.h_bar, 5);
    }

    #[test]
    fn check_bound_cap() {
        let c = ScheduleConfig {
            max_exponent: 10,
            ..cfg(2)
        };
        let mut s = state_at(15.0, 5);
        s.check_bound(&c).unwrap();
        assert_eq!(s.h_bar, 10);
        let strict = ScheduleConfig {
            enforcement: Enforcement::Strict,
            ..c
        };
        let mut s = state_at(15.0, 5);
        assert!(matches!(
            s.check_bound(&strict),
            Err(Error::ExponentOverflow { .. })
        ));
    }

    #[test]
    fn off_mode_is_constant() {
        let c = ScheduleConfig {
            enforcement: Enforcement::Off,
            c: 1e-9,
            ..cfg(4)
        };
        let rows = trajectory(&c, 100).unwrap();
        assert!(rows.iter().all(|r| r.h_bar == 2 && r.q_p == 4));
    }

    #[test]
    fn small_c_trace_matches_hand_simulation() {
        // frozen from a hand loop over t = 0..10 (n = 24, C = 1e-6, beta = 20)
        let expected = [2, 4, 6, 7, 8, 8, 8, 9, 9, 9, 9];
        let c = ScheduleConfig {
            c: 1e-6,
            n: 24,
            ..ScheduleConfig::default()
        };
        let rows = trajectory(&c, 10).unwrap();
        let got: Vec<i64> = rows.iter().map(|r| r.h_bar).collect();
        assert_eq!(got, expected);
        assert_relative_eq!(rows[1].inf_h, 3.367, epsilon = 1e-3);
    }

    #[test]
    fn monotone_over_long_runs() {
        for c_val in [1e6, 1.0, 1e-3, 1e-8] {
            let c = ScheduleConfig {
                c: c_val,
                ..cfg(50)
            };
            let rows = trajectory(&c, 10_000).unwrap();
            for w in rows.windows(2) {
                assert!(w[1].h_bar >= w[0].h_bar);
                assert!(w[1].sigma <= w[0].sigma);
            }
            assert!(rows.iter().all(|r| r.h_bar as f64 >= r.inf_h.min(62.0)));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ScheduleConfig::default().validate().is_err()); // n unresolved
        assert!(ScheduleConfig {
            base: 1.0,
            ..cfg(1)
        }
        .validate()
        .is_err());
        assert!(ScheduleConfig { eta: 0.0, ..cfg(1) }.validate().is_err());
        assert!(ScheduleConfig {
            max_exponent: 70,
            ..cfg(1)
        }
        .validate()
        .is_err());
    }
}
