//! Gate calibration: conditional-Ramsey phase extraction, flux-amplitude
//! calibration of the conditional phase to pi, single-qubit phase
//! compensation, and fidelity metrics against the ideal CZ.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::device::DeviceParams;
use crate::dynamics::{
    propagate_computational, propagate_unitary, IdleFrame, PropagationOptions, PulseShape,
    QuantumChannel, SUBSPACE_DIM,
};
use crate::fit::fit_sinusoid;
use crate::{Error, Result};

use std::f64::consts::PI;

/// Maximum admissible rms residual of the Ramsey sinusoid fit.
pub const RAMSEY_RESIDUAL_TOL: f64 = 0.05;
/// Default conditional-phase tolerance, rad.
pub const PHASE_TOL_RAD: f64 = 1e-4;

/// Conditional-Ramsey readout of the target-qubit phase for both control
/// states.
#[derive(Debug, Clone, Serialize)]
pub struct RamseyResult {
    /// Target-qubit phase with the control in |0>, rad.
    pub phase_control0_rad: f64,
    /// Target-qubit phase with the control in |1>, rad.
    pub phase_control1_rad: f64,
    /// Difference wrapped to (-pi, pi].
    pub conditional_phase_rad: f64,
    /// Fringe contrasts (0.5 for a fully coherent channel).
    pub contrast0: f64,
    pub contrast1: f64,
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_pi(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Ramsey-style conditional phase measurement on a channel: the target qubit
/// (Q2) is prepared in a superposition, the channel applied, and the fringe
/// phase fitted for both control (Q1) states.
///
/// `angles` sets the number of analysis phases; fit residuals above
/// `RAMSEY_RESIDUAL_TOL` reject the result.
pub fn conditional_ramsey(channel: &QuantumChannel, angles: usize) -> Result<RamseyResult> {
    if channel.dim() != SUBSPACE_DIM {
        return Err(Error::InvalidDimension(format!(
            "conditional ramsey expects a {SUBSPACE_DIM}-state channel"
        )));
    }
    let n = angles.max(8);
    let thetas: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    let mut phases = [0.0_f64; 2];
    let mut contrasts = [0.0_f64; 2];
    for control in 0..2 {
        // dressed indices of |c0> and |c1>
        let (i0, i1) = if control == 0 { (0, 1) } else { (2, 3) };
        let mut rho = DMatrix::<Complex64>::zeros(SUBSPACE_DIM, SUBSPACE_DIM);
        let half = Complex64::new(0.5, 0.0);
        rho[(i0, i0)] = half;
        rho[(i0, i1)] = half;
        rho[(i1, i0)] = half;
        rho[(i1, i1)] = half;
        let out = channel.apply(&rho)?;
        let probs: Vec<f64> = thetas
            .iter()
            .map(|&th| {
                // projector onto (|c0> + e^{i theta}|c1>)/sqrt(2)
                let e = Complex64::from_polar(1.0, th);
                let p = 0.5
                    * (out[(i0, i0)] + out[(i1, i1)] + out[(i1, i0)] * e.conj()
                        + out[(i0, i1)] * e);
                p.re
            })
            .collect();
        let fit = fit_sinusoid(&thetas, &probs)?;
        if fit.residual_rms > RAMSEY_RESIDUAL_TOL {
            return Err(Error::Calibration(format!(
                "ramsey fringe fit residual {:.3} exceeds {RAMSEY_RESIDUAL_TOL}",
                fit.residual_rms
            )));
        }
        // p(theta) = offset + contrast cos(theta - delta), fit phase = -delta
        phases[control] = wrap_pi(-fit.phase);
        contrasts[control] = fit.amplitude;
    }
    Ok(RamseyResult {
        phase_control0_rad: phases[0],
        phase_control1_rad: phases[1],
        conditional_phase_rad: wrap_pi(phases[1] - phases[0]),
        contrast0: contrasts[0],
        contrast1: contrasts[1],
    })
}

/// Settings of the amplitude calibration.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub dt_ns: f64,
    /// Conditional-phase tolerance, rad.
    pub tolerance_rad: f64,
    /// Amplitude scan window, Phi0.
    pub amplitude_lo_phi0: f64,
    pub amplitude_hi_phi0: f64,
    /// Coarse scan points used to bracket the pi crossing.
    pub scan_points: usize,
    pub max_iterations: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            dt_ns: crate::dynamics::DEFAULT_DT_NS,
            tolerance_rad: PHASE_TOL_RAD,
            amplitude_lo_phi0: 0.15,
            amplitude_hi_phi0: 0.40,
            scan_points: 26,
            max_iterations: 80,
        }
    }
}

/// Calibrated pulse and its figures of merit.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResult {
    pub pulse: PulseShape,
    pub peak_frequency_ghz: f64,
    /// Unwrapped conditional phase, rad (target +pi).
    pub conditional_phase_rad: f64,
    pub phase_error_rad: f64,
    pub iterations: usize,
    /// Accumulated single-qubit phases to compensate with virtual Z, rad.
    pub phase_01_rad: f64,
    pub phase_10_rad: f64,
    pub leakage_11: f64,
    /// Average gate fidelity of the compensated coherent channel vs CZ.
    pub average_fidelity: f64,
    /// Computational-subspace leakage averaged over the maximally mixed input.
    pub leakage_avg: f64,
}

/// Calibrate the flux amplitude of a fixed-duration half-sine pulse so the
/// unwrapped conditional phase hits +pi.
///
/// A coarse amplitude scan brackets the lowest-amplitude crossing of pi, then
/// bisection refines it to `tolerance_rad`.
pub fn calibrate_cz(
    params: &DeviceParams,
    duration_ns: f64,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    let frame = IdleFrame::new(params)?;
    let prop = PropagationOptions {
        dt_ns: opts.dt_ns,
        richardson: false,
    };
    let phase_at = |amp: f64| -> Result<f64> {
        let pulse = PulseShape::new(amp, duration_ns)?;
        Ok(propagate_computational(&frame, &pulse, &prop)?.conditional_phase_rad)
    };

    // coarse scan from low amplitude for the first crossing of pi
    let n = opts.scan_points.max(3);
    let mut bracket: Option<((f64, f64), (f64, f64))> = None;
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..n {
        let amp = opts.amplitude_lo_phi0
            + (opts.amplitude_hi_phi0 - opts.amplitude_lo_phi0) * k as f64 / (n - 1) as f64;
        let phi = phase_at(amp)?;
        if let Some((a0, p0)) = prev {
            if (p0 - PI) * (phi - PI) <= 0.0 && p0 < PI {
                bracket = Some(((a0, p0), (amp, phi)));
                break;
            }
        }
        prev = Some((amp, phi));
    }
    let ((mut lo, mut phi_lo), (mut hi, _)) = bracket.ok_or_else(|| {
        Error::Calibration(format!(
            "conditional phase never crosses pi for amplitudes in [{}, {}] Phi0 at {} ns",
            opts.amplitude_lo_phi0, opts.amplitude_hi_phi0, duration_ns
        ))
    })?;

    let mut iterations = 0;
    let mut best = (lo, phi_lo);
    while iterations < opts.max_iterations {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let phi = phase_at(mid)?;
        if (phi - PI).abs() < (best.1 - PI).abs() {
            best = (mid, phi);
        }
        if (phi - PI).abs() <= opts.tolerance_rad {
            break;
        }
        if (phi_lo - PI) * (phi - PI) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            phi_lo = phi;
        }
        if (hi - lo) < 1e-12 {
            break;
        }
    }
    let (amp, phi) = best;
    if (phi - PI).abs() > opts.tolerance_rad {
        return Err(Error::Calibration(format!(
            "phase error {:.2e} rad after {iterations} iterations (tolerance {:.1e})",
            (phi - PI).abs(),
            opts.tolerance_rad
        )));
    }

    let pulse = PulseShape::new(amp, duration_ns)?;
    let trace = propagate_computational(&frame, &pulse, &prop)?;
    let unitary = propagate_unitary(&frame, &pulse, &prop)?;
    let comp = compensation_unitary(-trace.phase_01_rad, -trace.phase_10_rad);
    let compensated = &comp * &unitary.matrix;
    let channel = QuantumChannel::from_unitary(&compensated)?;
    let metrics = gate_metrics(&channel, &cz_target())?;
    Ok(CalibrationResult {
        pulse,
        peak_frequency_ghz: pulse.peak_frequency_ghz(&params.flux_map),
        conditional_phase_rad: trace.conditional_phase_rad,
        phase_error_rad: (trace.conditional_phase_rad - PI).abs(),
        iterations,
        phase_01_rad: trace.phase_01_rad,
        phase_10_rad: trace.phase_10_rad,
        leakage_11: trace.leakage_11,
        average_fidelity: metrics.average_fidelity,
        leakage_avg: metrics.leakage,
    })
}

/// Virtual-Z compensation on the dressed subspace: |q1 q2> picks up
/// exp(i (q1 z10 + q2 z01)); leakage states are left alone.
pub fn compensation_unitary(z01_rad: f64, z10_rad: f64) -> DMatrix<Complex64> {
    let mut u = DMatrix::identity(SUBSPACE_DIM, SUBSPACE_DIM);
    u[(1, 1)] = Complex64::from_polar(1.0, z01_rad);
    u[(2, 2)] = Complex64::from_polar(1.0, z10_rad);
    u[(3, 3)] = Complex64::from_polar(1.0, z01_rad + z10_rad);
    u
}

/// Ideal CZ on the computational subspace.
pub fn cz_target() -> DMatrix<Complex64> {
    let mut u = DMatrix::identity(4, 4);
    u[(3, 3)] = Complex64::new(-1.0, 0.0);
    u
}

/// Fidelity and leakage of a subspace channel against a 4 x 4 target unitary.
#[derive(Debug, Clone, Serialize)]
pub struct GateMetrics {
    /// Process fidelity Tr(S_U^+ S_E)/d^2 on the computational block.
    pub process_fidelity: f64,
    /// Average gate fidelity (d F_pro + 1)/(d + 1), d = 4.
    pub average_fidelity: f64,
    /// Population leaving the computational subspace, averaged over the
    /// maximally mixed computational input.
    pub leakage: f64,
}

/// Compare a 10-state channel against a computational-subspace target unitary.
pub fn gate_metrics(channel: &QuantumChannel, target: &DMatrix<Complex64>) -> Result<GateMetrics> {
    if channel.dim() != SUBSPACE_DIM {
        return Err(Error::InvalidDimension(format!(
            "gate metrics expect a {SUBSPACE_DIM}-state channel"
        )));
    }
    if target.nrows() != 4 || target.ncols() != 4 {
        return Err(Error::InvalidDimension("target must be 4 x 4".into()));
    }
    let d = 4usize;
    // computational-block superoperator: E_c(rho4) = P E(embed(rho4)) P
    let mut s_c = DMatrix::<Complex64>::zeros(d * d, d * d);
    let mut leak_acc = 0.0;
    for j in 0..d {
        for i in 0..d {
            let mut e = DMatrix::<Complex64>::zeros(SUBSPACE_DIM, SUBSPACE_DIM);
            e[(i, j)] = Complex64::new(1.0, 0.0);
            let out = channel.apply(&e)?;
            let mut col = nalgebra::DVector::<Complex64>::zeros(d * d);
            for cj in 0..d {
                for ci in 0..d {
                    col[cj * d + ci] = out[(ci, cj)];
                }
            }
            s_c.set_column(j * d + i, &col);
            if i == j {
                let kept: f64 = (0..d).map(|k| out[(k, k)].re).sum();
                leak_acc += 1.0 - kept;
            }
        }
    }
    let s_u = target.map(|z| z.conj()).kronecker(target);
    let process_fidelity = (s_u.adjoint() * &s_c).trace().re / (d * d) as f64;
    let average_fidelity = (d as f64 * process_fidelity + 1.0) / (d as f64 + 1.0);
    Ok(GateMetrics {
        process_fidelity,
        average_fidelity,
        leakage: leak_acc / d as f64,
    })
}
