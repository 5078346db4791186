use super::{GlobalMin, Objective};
use crate::error::{Error, Result};

/// Dense grid scan of the domain ball followed by compass-search refinement.
/// Only defined for one- and two-dimensional objectives.
pub fn brute_force_min(obj: &dyn Objective, resolution: usize) -> Result<GlobalMin> {
    let d = obj.dim();
    if d == 0 || d > 2 {
        return Err(Error::Unsupported(format!(
            "brute-force minimisation needs dim <= 2, got {d}"
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidConfig("grid resolution must be >= 2".into()));
    }
    let dom = obj.domain();
    let rho = dom.radius;
    let step = 2.0 * rho / (resolution - 1) as f64;
    let axis = |i: usize, k: usize| dom.center[k] - rho + step * i as f64;

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |x: Vec<f64>| {
        if dom.contains(&x) {
            let v = obj.value(&x);
            if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best = Some((x, v));
            }
        }
    };
    if d == 1 {
        for i in 0..resolution {
            consider(vec![axis(i, 0)]);
        }
    } else {
        for i in 0..resolution {
            for j in 0..resolution {
                consider(vec![axis(i, 0), axis(j, 1)]);
            }
        }
    }
    let (mut x, mut fx) = best.ok_or_else(|| Error::Numerical("empty grid".into()))?;

    let mut h = step;
    while h > 1e-12 {
        let mut improved = false;
        for k in 0..d {
            for s in [-1.0, 1.0] {
                let mut y = x.clone();
                y[k] += s * h;
                if dom.contains(&y) {
                    let fy = obj.value(&y);
                    if fy < fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    Ok(GlobalMin {
        location: x,
        value: fx,
    })
}
