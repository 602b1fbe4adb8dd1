//! Property-based checks on randomized inputs.

use proptest::prelude::*;

use czsim::calibration::wrap_pi;
use czsim::device::DeviceParams;
use czsim::fit::{fit_decay, fit_sinusoid};
use czsim::spectrum::chi12_spectral;

proptest! {
    #[test]
    fn wrap_pi_lands_in_half_open_interval(x in -1e3f64..1e3) {
        let w = wrap_pi(x);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        // wrapping preserves the angle modulo 2 pi
        let diff = (x - w) / (2.0 * std::f64::consts::PI);
        prop_assert!((diff - diff.round()).abs() < 1e-9);
    }

    #[test]
    fn flux_map_inverts_its_own_output(phi in 0.01f64..0.42) {
        let fm = DeviceParams::default().flux_map;
        let w = fm.frequency_at(phi);
        let back = fm.flux_for_frequency(w).unwrap();
        prop_assert!((back - phi).abs() < 1e-9, "phi = {phi}, back = {back}");
    }

    #[test]
    fn sinusoid_fit_recovers_parameters(
        offset in -1.0f64..1.0,
        amplitude in 0.1f64..1.0,
        phase in -3.0f64..3.0,
    ) {
        let angles: Vec<f64> = (0..24).map(|k| k as f64 * 0.27).collect();
        let values: Vec<f64> = angles
            .iter()
            .map(|&t| offset + amplitude * (t + phase).cos())
            .collect();
        let fit = fit_sinusoid(&angles, &values).unwrap();
        prop_assert!((fit.offset - offset).abs() < 1e-9);
        prop_assert!((fit.amplitude - amplitude).abs() < 1e-9);
        prop_assert!(wrap_pi(fit.phase - phase).abs() < 1e-9);
    }

    #[test]
    fn decay_fit_recovers_parameters(
        a in 0.4f64..0.8,
        p in 0.8f64..0.995,
        b in 0.1f64..0.3,
    ) {
        let ms: Vec<f64> = (0..12).map(|k| (1 + 4 * k) as f64).collect();
        let ys: Vec<f64> = ms.iter().map(|&m| a * p.powf(m) + b).collect();
        let fit = fit_decay(&ms, &ys, None).unwrap();
        prop_assert!((fit.p - p).abs() < 1e-6, "p = {p}, fitted {}", fit.p);
        prop_assert!((fit.a - a).abs() < 1e-5);
        prop_assert!((fit.b - b).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn chi12_is_stable_under_extra_truncation_levels(wc in 4.9f64..7.4) {
        let p5 = DeviceParams::default();
        let p6 = p5.clone().with_levels(6);
        let chi5 = chi12_spectral(&p5, wc).unwrap();
        let chi6 = chi12_spectral(&p6, wc).unwrap();
        // the two-excitation manifold is exact within a truncation; adding a
        // level only moves chi through far-detuned admixtures
        prop_assert!(
            (chi5 - chi6).abs() < 5e-6 + 0.01 * chi5.abs(),
            "chi5 = {chi5}, chi6 = {chi6}"
        );
    }

    #[test]
    fn chi12_is_invariant_under_rigid_frequency_shift(
        wc in 5.8f64..7.4,
        shift in -0.5f64..0.5,
    ) {
        let params = DeviceParams::default();
        let mut shifted = params.clone();
        shifted.q1.frequency_ghz += shift;
        shifted.q2.frequency_ghz += shift;
        let a = chi12_spectral(&params, wc).unwrap();
        let b = chi12_spectral(&shifted, wc + shift).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "a = {a}, b = {b}");
    }
}
