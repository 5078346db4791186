//! Empirical checks of the white-noise hypothesis for quantization errors.
//!
//! Under the hypothesis each error component is i.i.d. Uniform[-0.5, 0.5]:
//! mean 0, variance 1/12, flat histogram, no serial or cross-component
//! correlation. The accumulator streams vectors once and keeps only moment
//! sums, a histogram and a short lag window.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::QuantError;
use crate::error::{Error, Result};

pub const WNH_MIN_SAMPLES: usize = 10_000;

const UNIFORM_VARIANCE: f64 = 1.0 / 12.0;
/// Var(e^2) for e ~ U[-1/2, 1/2]: E e^4 - (E e^2)^2 = 1/80 - 1/144.
const UNIFORM_VARIANCE_OF_SQUARE: f64 = 1.0 / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WnhConfig {
    pub bins: usize,
    pub lags: usize,
    pub significance: f64,
    pub min_samples: usize,
}

impl Default for WnhConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            lags: 10,
            significance: 0.01,
            min_samples: WNH_MIN_SAMPLES,
        }
    }
}

impl WnhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidConfig("wnh bins must be >= 2".into()));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::InvalidConfig(
                "wnh significance must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl TestVerdict {
    fn at_most(statistic: f64, threshold: f64) -> Self {
        Self {
            statistic,
            threshold,
            // NaN statistics (zero variance) must fail
            passed: statistic <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WnhReport {
    pub sample_count: usize,
    pub dimension: usize,
    pub significance: f64,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub expected_variance: f64,
    pub variance_relative_error: f64,
    pub chi_square_stat: f64,
    pub chi_square_bins: usize,
    pub lag_autocorr: Vec<f64>,
    pub max_cross_corr: f64,
    pub mean_test: TestVerdict,
    pub variance_test: TestVerdict,
    pub uniformity_test: TestVerdict,
    pub autocorrelation_test: TestVerdict,
    pub cross_correlation_test: TestVerdict,
    pub passed: bool,
}

/// Streaming moment accumulator. Vectors are flattened row-major for the
/// univariate and serial statistics; columns feed the cross-correlation.
#[derive(Debug, Clone)]
pub struct WnhAccumulator {
    config: WnhConfig,
    dim: Option<usize>,
    rows: usize,
    count: usize,
    mean: f64,
    m2: f64,
    hist: Vec<u64>,
    window: VecDeque<f64>,
    lag_sums: Vec<f64>,
    lag_counts: Vec<usize>,
    col_sum: Vec<f64>,
    col_sum_sq: Vec<f64>,
    cross: Vec<f64>,
}

impl WnhAccumulator {
    pub fn new(config: WnhConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            dim: None,
            rows: 0,
            count: 0,
            mean: 0.0,
            m2: 0.0,
            hist: vec![0; config.bins],
            window: VecDeque::with_capacity(config.lags + 1),
            lag_sums: vec![0.0; config.lags],
            lag_counts: vec![0; config.lags],
            col_sum: Vec::new(),
            col_sum_sq: Vec::new(),
            cross: Vec::new(),
        })
    }

    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        match self.dim {
            None => {
                let d = v.len();
                self.dim = Some(d);
                self.col_sum = vec![0.0; d];
                self.col_sum_sq = vec![0.0; d];
                self.cross = vec![0.0; d * d.saturating_sub(1) / 2];
            }
            Some(d) if d != v.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                })
            }
            _ => {}
        }
        let bins = self.config.bins;
        for (i, &e) in v.iter().enumerate() {
            if !e.is_finite() {
                return Err(Error::NonFinite { index: i, value: e });
            }
            self.count += 1;
            let delta = e - self.mean;
            self.mean += delta / self.count as f64;
            self.m2 += delta * (e - self.mean);
            let b = (((e + 0.5) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
            self.hist[b] += 1;
            for (k, prev) in self.window.iter().rev().enumerate() {
                self.lag_sums[k] += e * prev;
                self.lag_counts[k] += 1;
            }
            if self.config.lags > 0 {
                if self.window.len() == self.config.lags {
                    self.window.pop_front();
                }
                self.window.push_back(e);
            }
            self.col_sum[i] += e;
            self.col_sum_sq[i] += e * e;
        }
        let mut p = 0;
        for i in 0..v.len() {
            for j in (i + 1)..v.len() {
                self.cross[p] += v[i] * v[j];
                p += 1;
            }
        }
        self.rows += 1;
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<WnhReport> {
        let n = self.count;
        if n < self.config.min_samples.max(2) {
            return Err(Error::InsufficientData {
                got: n,
                need: self.config.min_samples.max(2),
            });
        }
        let alpha = self.config.significance;
        let nf = n as f64;
        let mean = self.mean;
        let var = (self.m2 / nf).max(0.0);
        let std_normal = Normal::standard();

        let z_two_sided = std_normal.inverse_cdf(1.0 - alpha / 2.0);
        let mean_test =
            TestVerdict::at_most(mean.abs() / (UNIFORM_VARIANCE / nf).sqrt(), z_two_sided);
        let variance_test = TestVerdict::at_most(
            (var - UNIFORM_VARIANCE).abs() / (UNIFORM_VARIANCE_OF_SQUARE / nf).sqrt(),
            z_two_sided,
        );

        let bins = self.config.bins;
        let expected = nf / bins as f64;
        let chi2: f64 = self
            .hist
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let chi_dist =
            ChiSquared::new((bins - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        let uniformity_test = TestVerdict::at_most(chi2, chi_dist.inverse_cdf(1.0 - alpha));

        // Bonferroni across lags and across component pairs
        let lag_autocorr: Vec<f64> = self
            .lag_sums
            .iter()
            .zip(&self.lag_counts)
            .map(|(&s, &c)| {
                if c == 0 || var == 0.0 {
                    f64::NAN
                } else {
                    (s / c as f64 - mean * mean) / var
                }
            })
            .collect();
        let max_lag =
            lag_autocorr.iter().fold(
                0.0f64,
                |m, &r| if r.is_nan() { f64::NAN } else { m.max(r.abs()) },
            );
        let lags = self.config.lags.max(1) as f64;
        let autocorrelation_test = TestVerdict::at_most(
            max_lag,
            std_normal.inverse_cdf(1.0 - alpha / (2.0 * lags)) / nf.sqrt(),
        );

        let d = self.dim.unwrap_or(0);
        let rows = self.rows as f64;
        let mut max_cross = 0.0f64;
        let mut p = 0;
        for i in 0..d {
            for j in (i + 1)..d {
                let mi = self.col_sum[i] / rows;
                let mj = self.col_sum[j] / rows;
                let vi = self.col_sum_sq[i] / rows - mi * mi;
                let vj = self.col_sum_sq[j] / rows - mj * mj;
                let r = (self.cross[p] / rows - mi * mj) / (vi * vj).sqrt();
                max_cross = if r.is_nan() || max_cross.is_nan() {
                    f64::NAN
                } else {
                    max_cross.max(r.abs())
                };
                p += 1;
            }
        }
        let pairs = (d * d.saturating_sub(1) / 2).max(1) as f64;
        let cross_correlation_test = TestVerdict::at_most(
            max_cross,
            std_normal.inverse_cdf(1.0 - alpha / (2.0 * pairs)) / rows.sqrt(),
        );

        let passed = mean_test.passed
            && variance_test.passed
            && uniformity_test.passed
            && autocorrelation_test.passed
            && cross_correlation_test.passed;
        Ok(WnhReport {
            sample_count: n,
            dimension: d,
            significance: alpha,
            empirical_mean: mean,
            empirical_variance: var,
            expected_variance: UNIFORM_VARIANCE,
            variance_relative_error: (var - UNIFORM_VARIANCE) / UNIFORM_VARIANCE,
            chi_square_stat: chi2,
            chi_square_bins: bins,
            lag_autocorr,
            max_cross_corr: max_cross,
            mean_test,
            variance_test,
            uniformity_test,
            autocorrelation_test,
            cross_correlation_test,
            passed,
        })
    }
}

impl AsRef<[f64]> for QuantError {
    fn as_ref(&self) -> &[f64] {
        self.errors()
    }
}

/// Run the full battery over a stream of error vectors.
pub fn wnh_test<I, V>(errors: I, config: &WnhConfig) -> Result<WnhReport>
where
    I: IntoIterator<Item = V>,
    V: AsRef<[f64]>,
{
    let mut acc = WnhAccumulator::new(*config)?;
    for v in errors {
        acc.push(v.as_ref())?;
    }
    acc.finish()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvReadReport {
    pub rows: usize,
    pub skipped: usize,
}

/// One real vector per row, comma separated, no header. Rows that fail to
/// parse or disagree with the first row's width are skipped and counted,
/// or rejected outright in strict mode.
pub fn read_vectors_csv(path: &Path, strict: bool) -> Result<(Vec<Vec<f64>>, CsvReadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut report = CsvReadReport::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.parse::<f64>()).collect();
        let ok = match &parsed {
            Ok(v) => {
                !v.is_empty()
                    && v.iter().all(|x| x.is_finite())
                    && out.first().is_none_or(|f| f.len() == v.len())
            }
            Err(_) => false,
        };
        if ok {
            out.push(parsed.unwrap());
            report.rows += 1;
        } else if strict {
            return Err(Error::Parse(format!("malformed row at line {}", line + 1)));
        } else {
            report.skipped += 1;
        }
    }
    Ok((out, report))
}

/// Little-endian f64 values, `dim` per vector.
pub fn read_vectors_binary(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 {
        return Err(Error::InvalidConfig("binary input needs dim >= 1".into()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let stride = 8 * dim;
    if bytes.len() % stride != 0 {
        return Err(Error::Parse(format!(
            "binary input length {} is not a multiple of {} bytes",
            bytes.len(),
            stride
        )));
    }
    Ok(bytes
        .chunks_exact(stride)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect())
}
