use std::f64::consts::{E, PI};

use super::{check_gradient, BallDomain, GlobalMin, Objective};
use crate::error::{Error, Result};

const SELF_TEST_POINTS: usize = 100;
const SELF_TEST_TOL: f64 = 1e-5;

fn self_test(obj: &dyn Objective) -> Result<()> {
    check_gradient(obj, SELF_TEST_POINTS, 64, SELF_TEST_TOL, 0x5e1f)
}

/// `f(w) = c/2 |w|^2` on the ball of radius 2 around the origin.
#[derive(Debug, Clone)]
pub struct Quadratic {
    curvature: f64,
    domain: BallDomain,
}

impl Quadratic {
    pub fn new(n: usize, curvature: f64) -> Result<Self> {
        let q = Self::unchecked(n, curvature)?;
        self_test(&q)?;
        Ok(q)
    }

    pub fn unchecked(n: usize, curvature: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("quadratic needs n >= 1".into()));
        }
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(Error::InvalidConfig(
                "quadratic curvature must be > 0".into(),
            ));
        }
        Ok(Self {
            curvature,
            domain: BallDomain::new(vec![0.0; n], 2.0),
        })
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }
    fn dim(&self) -> usize {
        self.domain.center.len()
    }
    fn value(&self, w: &[f64]) -> f64 {
        0.5 * self.curvature * w.iter().map(|x| x * x).sum::<f64>()
    }
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|x| self.curvature * x).collect()
    }
    fn domain(&self) -> &BallDomain {
        &self.domain
    }
    fn lipschitz(&self) -> Option<f64> {
        // sup |grad| on the ball
        Some(self.curvature * self.domain.radius)
    }
    fn global_min(&self) -> Option<GlobalMin> {
        Some(GlobalMin {
            location: vec![0.0; self.dim()],
            value: 0.0,
        })
    }
}

/// Tilted double well `f(x) = x^4 - 8x^2 + 3x` on `(-3, 3)`.
///
/// Minima near `-2.09` (global) and `1.90` (local), separated by a maximum
/// near `0.19`.
#[derive(Debug, Clone)]
pub struct DoubleWell {
    domain: BallDomain,
    minima: [f64; 2],
    ridge: f64,
}

impl DoubleWell {
    pub fn new() -> Result<Self> {
        let dw = Self::unchecked();
        self_test(&dw)?;
        Ok(dw)
    }

    pub fn unchecked() -> Self {
        let newton = |mut x: f64| {
            for _ in 0..100 {
                let g = 4.0 * x * x * x - 16.0 * x + 3.0;
                let h = 12.0 * x * x - 16.0;
                x -= g / h;
            }
            x
        };
        Self {
            domain: BallDomain::new(vec![0.0], 3.0),
            minima: [newton(-2.0), newton(2.0)],
            ridge: newton(0.0),
        }
    }

    pub fn f(x: f64) -> f64 {
        let x2 = x * x;
        x2 * x2 - 8.0 * x2 + 3.0 * x
    }

    pub fn df(x: f64) -> f64 {
        4.0 * x * x * x - 16.0 * x + 3.0
    }

    pub fn global_minimizer(&self) -> f64 {
        self.minima[0]
    }

    pub fn local_minimizer(&self) -> f64 {
        self.minima[1]
    }

    /// Interior maximum separating the two basins.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn in_global_basin(&self, x: f64) -> bool {
        x < self.ridge
    }
}

impl Objective for DoubleWell {
    fn name(&self) -> &str {
        "double_well"
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, w: &[f64]) -> f64 {
        Self::f(w[0])
    }
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vec![Self::df(w[0])]
    }
    fn domain(&self) -> &BallDomain {
        &self.domain
    }
    fn lipschitz(&self) -> Option<f64> {
        // |f'| on [-3, 3] peaks at x = 3: 108 - 48 + 3
        Some(63.0)
    }
    fn global_min(&self) -> Option<GlobalMin> {
        Some(GlobalMin {
            location: vec![self.minima[0]],
            value: Self::f(self.minima[0]),
        })
    }
    fn in_global_basin(&self, w: &[f64]) -> Option<bool> {
        Some(DoubleWell::in_global_basin(self, w[0]))
    }
}

/// `f(x) = sum x_i^2 + 10 (1 - cos 2 pi x_i)` on the ball of radius 5.12.
#[derive(Debug, Clone)]
pub struct Rastrigin {
    domain: BallDomain,
}

impl Rastrigin {
    pub fn new(n: usize) -> Result<Self> {
        let r = Self::unchecked(n)?;
        self_test(&r)?;
        Ok(r)
    }

    pub fn unchecked(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("rastrigin needs n >= 1".into()));
        }
        Ok(Self {
            domain: BallDomain::new(vec![0.0; n], 5.12),
        })
    }
}

impl Objective for Rastrigin {
    fn name(&self) -> &str {
        "rastrigin"
    }
    fn dim(&self) -> usize {
        self.domain.center.len()
    }
    fn value(&self, w: &[f64]) -> f64 {
        w.iter()
            .map(|x| x * x + 10.0 * (1.0 - (2.0 * PI * x).cos()))
            .sum()
    }
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .map(|x| 2.0 * x + 20.0 * PI * (2.0 * PI * x).sin())
            .collect()
    }
    fn domain(&self) -> &BallDomain {
        &self.domain
    }
    fn lipschitz(&self) -> Option<f64> {
        let n = self.dim() as f64;
        Some(2.0 * self.domain.radius + 20.0 * PI * n.sqrt())
    }
    fn global_min(&self) -> Option<GlobalMin> {
        Some(GlobalMin {
            location: vec![0.0; self.dim()],
            value: 0.0,
        })
    }
}

/// Ackley's function on the ball of radius 5.
#[derive(Debug, Clone)]
pub struct Ackley {
    domain: BallDomain,
}

impl Ackley {
    pub fn new(n: usize) -> Result<Self> {
        let a = Self::unchecked(n)?;
        self_test(&a)?;
        Ok(a)
    }

    pub fn unchecked(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("ackley needs n >= 1".into()));
        }
        Ok(Self {
            domain: BallDomain::new(vec![0.0; n], 5.0),
        })
    }
}

impl Objective for Ackley {
    fn name(&self) -> &str {
        "ackley"
    }
    fn dim(&self) -> usize {
        self.domain.center.len()
    }
    fn value(&self, w: &[f64]) -> f64 {
        let n = w.len() as f64;
        let r = (w.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        let c = w.iter().map(|x| (2.0 * PI * x).cos()).sum::<f64>() / n;
        20.0 * (1.0 - (-0.2 * r).exp()) + (E - c.exp())
    }
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = w.len() as f64;
        let r = (w.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        let c = w.iter().map(|x| (2.0 * PI * x).cos()).sum::<f64>() / n;
        let a = if r > 0.0 {
            4.0 * (-0.2 * r).exp() / (n * r)
        } else {
            0.0
        };
        let b = c.exp() * 2.0 * PI / n;
        w.iter().map(|x| a * x + b * (2.0 * PI * x).sin()).collect()
    }
    fn domain(&self) -> &BallDomain {
        &self.domain
    }
    fn lipschitz(&self) -> Option<f64> {
        // |grad| <= 4/sqrt(n) + 2 pi e / sqrt(n)
        Some((4.0 + 2.0 * PI * E) / (self.dim() as f64).sqrt())
    }
    fn global_min(&self) -> Option<GlobalMin> {
        Some(GlobalMin {
            location: vec![0.0; self.dim()],
            value: 0.0,
        })
    }
}
