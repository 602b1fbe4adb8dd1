//! Small fitting routines: linear sinusoid fits for phase extraction and a
//! Levenberg-Marquardt fit of the randomized-benchmarking decay A*p^m + B.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Result of fitting y = offset + amplitude*cos(x + phase).
#[derive(Debug, Clone)]
pub struct SinusoidFit {
    pub offset: f64,
    pub amplitude: f64,
    /// Phase in radians, wrapped to (-pi, pi].
    pub phase: f64,
    pub residual_rms: f64,
}

/// Fit y = offset + amplitude*cos(x + phase) at known phase abscissae.
///
/// Linear in (offset, a, b) with a*cos x + b*sin x = amplitude*cos(x + phase),
/// solved by least squares; the amplitude is returned non-negative.
pub fn fit_sinusoid(x: &[f64], y: &[f64]) -> Result<SinusoidFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Fit(format!(
            "sinusoid fit needs >= 3 samples, got {} x / {} y",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let mut design = DMatrix::zeros(n, 3);
    for (i, &xi) in x.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = xi.cos();
        design[(i, 2)] = xi.sin();
    }
    let rhs = DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Fit(format!("sinusoid least squares failed: {e}")))?;
    let (offset, a, b) = (sol[0], sol[1], sol[2]);
    let amplitude = (a * a + b * b).sqrt();
    // a cos x + b sin x = amplitude cos(x + phase) with phase = atan2(-b, a)
    let phase = (-b).atan2(a);
    let resid = (&design * &sol - &rhs).norm() / (n as f64).sqrt();
    Ok(SinusoidFit {
        offset,
        amplitude,
        phase,
        residual_rms: resid,
    })
}

/// Result of fitting y = a * p^m + b.
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub a: f64,
    pub p: f64,
    pub b: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

/// Weighted Levenberg-Marquardt fit of the exponential decay with floor,
/// y = a * p^m + b. `weights` multiply the residuals (pass standard errors'
/// inverses); `None` means uniform.
///
/// Initialization follows the usual RB recipe: b0 = 1/4 (two-qubit uniform
/// floor), a0 = y(first) - b0, p0 from a log-linear regression of y - b0.
pub fn fit_decay(m: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<DecayFit> {
    if m.len() != y.len() || m.len() < 3 {
        return Err(Error::Fit(format!(
            "decay fit needs >= 3 samples, got {} m / {} y",
            m.len(),
            y.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != m.len() {
            return Err(Error::Fit("weights length mismatch".into()));
        }
        if w.iter().any(|&wi| !(wi > 0.0) || !wi.is_finite()) {
            return Err(Error::Fit("weights must be positive and finite".into()));
        }
    }
    let uniform = vec![1.0; m.len()];
    let w = weights.unwrap_or(&uniform);

    let b0 = 0.25;
    let a0 = (y[0] - b0).max(1e-3);
    let p0 = initial_p(m, y, b0).unwrap_or(0.95);
    let mut params = [a0, p0.clamp(1e-6, 1.0 - 1e-9), b0];

    let chi2 = |q: &[f64; 3]| -> f64 {
        m.iter()
            .zip(y)
            .zip(w)
            .map(|((&mi, &yi), &wi)| {
                let r = wi * (q[0] * q[1].powf(mi) + q[2] - yi);
                r * r
            })
            .sum()
    };

    let mut lambda = 1e-3;
    let mut cost = chi2(&params);
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        // J^T J and J^T r with analytic Jacobian
        let mut jtj = DMatrix::<f64>::zeros(3, 3);
        let mut jtr = DVector::<f64>::zeros(3);
        for ((&mi, &yi), &wi) in m.iter().zip(y).zip(w) {
            let pm = params[1].powf(mi);
            let r = wi * (params[0] * pm + params[2] - yi);
            let j = [
                wi * pm,
                wi * params[0] * mi * params[1].powf(mi - 1.0),
                wi,
            ];
            for (row, jr) in j.iter().enumerate() {
                jtr[row] += jr * r;
                for (col, jc) in j.iter().enumerate() {
                    jtj[(row, col)] += jr * jc;
                }
            }
        }
        let mut damped = jtj.clone();
        for k in 0..3 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let step = match damped.lu().solve(&jtr) {
            Some(s) => s,
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let trial = [
            params[0] - step[0],
            (params[1] - step[1]).clamp(1e-9, 1.0 - 1e-12),
            params[2] - step[2],
        ];
        let trial_cost = chi2(&trial);
        if trial_cost < cost {
            let rel = (cost - trial_cost) / cost.max(1e-300);
            params = trial;
            cost = trial_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-12 || step.norm() < 1e-13 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if !params.iter().all(|v| v.is_finite()) {
        return Err(Error::Fit("decay fit diverged".into()));
    }
    Ok(DecayFit {
        a: params[0],
        p: params[1],
        b: params[2],
        residual_rms: (cost / m.len() as f64).sqrt(),
        iterations,
    })
}

fn initial_p(m: &[f64], y: &[f64], b0: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = m
        .iter()
        .zip(y)
        .filter(|(_, &yi)| yi - b0 > 1e-6)
        .map(|(&mi, &yi)| (mi, (yi - b0).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    let p = slope.exp();
    (p.is_finite() && p > 0.0 && p < 1.0).then_some(p)
}
