//! Round-half-up lattice quantizer.
//!
//! A value `x` quantized at level `q_p` lands on `k / q_p` with
//! `k = floor(q_p * x + 0.5)`. The error is reported in lattice units,
//! `eps = q_p * (x_q - x)`, so that `x_q = x + eps / q_p` and `eps` lies in
//! `[-0.5, 0.5]`.

mod wnh;

pub use wnh::{
    read_vectors_binary, read_vectors_csv, wnh_test, CsvReadReport, TestVerdict, WnhAccumulator,
    WnhConfig, WnhReport, WNH_MIN_SAMPLES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest magnitude of `q_p * x` accepted before the integer index could overflow.
const MAX_SCALED: f64 = 1.0e36;

/// Lattice denominator `q_p >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct QuantLevel(u64);

impl QuantLevel {
    pub fn new(q_p: u64) -> Result<Self> {
        if q_p == 0 {
            return Err(Error::InvalidConfig(
                "quantization level must be >= 1".into(),
            ));
        }
        Ok(Self(q_p))
    }

    /// The integer grid (`q_p = 1`).
    pub const fn unit() -> Self {
        Self(1)
    }

    pub fn get(&self) -> u64 {
        self.0
    }

    /// Spacing between neighbouring lattice points.
    pub fn spacing(&self) -> f64 {
        1.0 / self.0 as f64
    }
}

impl TryFrom<u64> for QuantLevel {
    type Error = Error;
    fn try_from(v: u64) -> Result<Self> {
        QuantLevel::new(v)
    }
}

impl From<QuantLevel> for u64 {
    fn from(l: QuantLevel) -> u64 {
        l.0
    }
}

/// A vector whose components are exactly `numerators[i] / denominator`.
///
/// The integer numerators are authoritative; `values()` is a float mirror.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeVector {
    numerators: Vec<i128>,
    denominator: u128,
}

impl LatticeVector {
    pub fn from_parts(numerators: Vec<i128>, denominator: u128) -> Result<Self> {
        if denominator == 0 {
            return Err(Error::InvalidConfig(
                "lattice denominator must be >= 1".into(),
            ));
        }
        Ok(Self {
            numerators,
            denominator,
        })
    }

    pub fn zeros(n: usize, level: QuantLevel) -> Self {
        Self {
            numerators: vec![0; n],
            denominator: level.get() as u128,
        }
    }

    pub fn numerators(&self) -> &[i128] {
        &self.numerators
    }

    pub fn denominator(&self) -> u128 {
        self.denominator
    }

    pub fn len(&self) -> usize {
        self.numerators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerators.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.numerators.iter().all(|&k| k == 0)
    }

    pub fn values(&self) -> Vec<f64> {
        let d = self.denominator as f64;
        self.numerators.iter().map(|&k| k as f64 / d).collect()
    }

    /// True when every component is an integer multiple of `1 / den`,
    /// i.e. the stored denominator divides `den`.
    pub fn lies_on(&self, den: u128) -> bool {
        den != 0 && den.is_multiple_of(self.denominator)
    }

    /// Re-express over a denominator that is a multiple of the current one.
    pub fn rescaled(&self, den: u128) -> Result<Self> {
        if !self.lies_on(den) {
            return Err(Error::InvalidConfig(format!(
                "cannot rescale denominator {} to {}",
                self.denominator, den
            )));
        }
        let m = i128::try_from(den / self.denominator).map_err(|_| Error::ArithmeticOverflow)?;
        let numerators = self
            .numerators
            .iter()
            .map(|&k| k.checked_mul(m).ok_or(Error::ArithmeticOverflow))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            numerators,
            denominator: den,
        })
    }

    /// Infinity norm of the float mirror.
    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-component quantization errors in lattice units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantError {
    errors: Vec<f64>,
}

impl QuantError {
    pub fn new(errors: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = errors.iter().enumerate().find(|(_, e)| !(e.abs() <= 0.5)) {
            return Err(Error::InvalidConfig(format!(
                "quantization error {value} at {index} outside [-0.5, 0.5]"
            )));
        }
        Ok(Self { errors })
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.errors
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Lattice index and error for one scaled value `y = q_p * x`.
///
/// Splitting into integer and fractional parts keeps round-half-up exact:
/// `floor(y + 0.5)` would round `0.49999999999999994` up.
fn round_half_up(y: f64) -> (i128, f64) {
    let fl = y.floor();
    let frac = y - fl;
    if frac >= 0.5 {
        (fl as i128 + 1, fl + 1.0 - y)
    } else {
        (fl as i128, -frac)
    }
}

fn check_finite(x: f64, index: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { index, value: x })
    }
}

/// Integer index `k` and error `eps` with `k / q_p = x + eps / q_p`.
pub fn quantize_index(x: f64, level: QuantLevel) -> Result<(i128, f64)> {
    check_finite(x, 0)?;
    let y = x * level.get() as f64;
    if y.abs() >= MAX_SCALED {
        return Err(Error::LatticeOverflow {
            value: x,
            level: level.get() as u128,
        });
    }
    Ok(round_half_up(y))
}

/// Quantize one value: returns the lattice value and its error in lattice units.
pub fn quantize_scalar(x: f64, level: QuantLevel) -> Result<(f64, f64)> {
    let (k, eps) = quantize_index(x, level)?;
    Ok((k as f64 / level.get() as f64, eps))
}

/// Componentwise [`quantize_scalar`].
pub fn quantize_vector(x: &[f64], level: QuantLevel) -> Result<(LatticeVector, QuantError)> {
    let q = level.get() as f64;
    let mut numerators = Vec::with_capacity(x.len());
    let mut errors = Vec::with_capacity(x.len());
    for (i, &xi) in x.iter().enumerate() {
        check_finite(xi, i)?;
        let y = xi * q;
        if y.abs() >= MAX_SCALED {
            return Err(Error::LatticeOverflow {
                value: xi,
                level: level.get() as u128,
            });
        }
        let (k, e) = round_half_up(y);
        numerators.push(k);
        errors.push(e);
    }
    Ok((
        LatticeVector {
            numerators,
            denominator: level.get() as u128,
        },
        QuantError { errors },
    ))
}

/// Round each component to the nearest integer (round half up).
pub fn quantize_integer_grid(x: &[f64]) -> Result<(Vec<i128>, QuantError)> {
    let (lv, err) = quantize_vector(x, QuantLevel::unit())?;
    Ok((lv.numerators, err))
}

/// Expected squared norm of the quantization error vector, `n / (12 q_p^2)`.
pub fn error_covariance_trace(n: usize, level: QuantLevel) -> f64 {
    let q = level.get() as f64;
    n as f64 / (12.0 * q * q)
}
