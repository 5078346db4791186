//! Exact learning rates.
//!
//! The quantized update `w - (a/b) * k / q_p` stays on a lattice only when the
//! learning rate is an exact rational, so it is never stored as a float.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest denominator accepted when recovering a rational from a float.
pub const MAX_DENOMINATOR: u64 = 1 << 20;

/// A reduced positive rational `num / den` in the interval (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RationalRepr", into = "RationalRepr")]
pub struct Rational {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::InvalidLearningRate(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Best rational approximation with denominator at most [`MAX_DENOMINATOR`],
    /// found by continued fractions. Dyadic and short decimal values come back exact.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() || x <= 0.0 || x > 1.0 {
            return Err(Error::InvalidLearningRate(x.to_string()));
        }
        let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
        let mut v = x;
        for _ in 0..64 {
            let a = v.floor();
            if a > u64::MAX as f64 {
                break;
            }
            let a = a as u64;
            let p2 = a.saturating_mul(p1).saturating_add(p0);
            let q2 = a.saturating_mul(q1).saturating_add(q0);
            if q2 > MAX_DENOMINATOR {
                break;
            }
            (p0, q0, p1, q1) = (p1, q1, p2, q2);
            let frac = v - a as f64;
            if frac.abs() < 1e-15 || (p1 as f64 / q1 as f64 - x).abs() <= f64::EPSILON * x {
                break;
            }
            v = 1.0 / frac;
        }
        Self::new(p1, q1)
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidLearningRate(s.into()))?;
            let d = d
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidLearningRate(s.into()))?;
            Rational::new(n, d)
        } else {
            let x = s
                .parse::<f64>()
                .map_err(|_| Error::InvalidLearningRate(s.into()))?;
            Rational::from_f64(x)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RationalRepr {
    Float(f64),
    Text(String),
}

impl TryFrom<RationalRepr> for Rational {
    type Error = Error;

    fn try_from(r: RationalRepr) -> Result<Self> {
        match r {
            RationalRepr::Float(x) => Rational::from_f64(x),
            RationalRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Rational> for RationalRepr {
    fn from(r: Rational) -> Self {
        RationalRepr::Text(r.to_string())
    }
}
