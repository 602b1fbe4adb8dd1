//! Three-mode bosonic device model: two fixed-frequency transmon qubits and a
//! flux-tunable transmon coupler with excitation-conserving exchange couplings.
//!
//! All stored frequencies are linear (GHz); the 2*pi factor is applied only
//! inside time-evolution integrators. Tensor order is fixed as (Q1, C, Q2),
//! matching the ket labels |Q1, C, Q2>.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance for Hermiticity validation.
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Q1,
    Coupler,
    Q2,
}

/// A single anharmonic (Duffing) oscillator mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModeSpec {
    pub label: Mode,
    /// Bare mode frequency omega/2pi in GHz.
    pub frequency_ghz: f64,
    /// Anharmonicity alpha/2pi in GHz, negative for transmons.
    pub anharmonicity_ghz: f64,
    /// Truncation dimension; at least 3 so the second-excited states exist.
    pub levels: usize,
}

impl ModeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 3 {
            return Err(Error::InvalidDimension(format!(
                "mode {:?}: levels = {} < 3",
                self.label, self.levels
            )));
        }
        if self.frequency_ghz <= 0.0 {
            return Err(Error::Validation(format!(
                "mode {:?}: frequency must be positive",
                self.label
            )));
        }
        if self.anharmonicity_ghz >= 0.0 {
            return Err(Error::Validation(format!(
                "mode {:?}: anharmonicity must be negative",
                self.label
            )));
        }
        Ok(())
    }

    /// Bare ladder energy omega*n + (alpha/2) n(n-1), GHz.
    pub fn ladder_energy(&self, n: u32) -> f64 {
        let nf = n as f64;
        self.frequency_ghz * nf + 0.5 * self.anharmonicity_ghz * nf * (nf - 1.0)
    }
}

/// Pairwise exchange couplings g_ij/2pi in GHz.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CouplingGraph {
    pub g12_ghz: f64,
    pub g1c_ghz: f64,
    pub g2c_ghz: f64,
}

impl CouplingGraph {
    pub fn validate(&self) -> Result<()> {
        if self.g12_ghz < 0.0 || self.g1c_ghz < 0.0 || self.g2c_ghz < 0.0 {
            return Err(Error::Validation("couplings must be non-negative".into()));
        }
        Ok(())
    }
}

/// Flux-to-frequency map of the coupler SQUID:
/// omega_c(Phi) = (omega_max + |alpha_c|) * (cos^2(pi Phi) + d^2 sin^2(pi Phi))^(1/4) - |alpha_c|.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FluxMap {
    /// Coupler frequency at the flux sweet spot, GHz.
    pub omega_max_ghz: f64,
    /// Coupler anharmonicity (negative), GHz.
    pub anharmonicity_ghz: f64,
    /// SQUID junction asymmetry d in [0, 1).
    pub asymmetry: f64,
}

impl FluxMap {
    pub fn validate(&self) -> Result<()> {
        if self.omega_max_ghz <= 0.0 {
            return Err(Error::Validation("omega_max must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.asymmetry) {
            return Err(Error::Validation("asymmetry must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Coupler frequency (GHz) at flux `phi` (units of Phi0).
    pub fn frequency_at(&self, phi_phi0: f64) -> f64 {
        let wj = self.omega_max_ghz + self.anharmonicity_ghz.abs();
        let (s, c) = (std::f64::consts::PI * phi_phi0).sin_cos();
        let d2 = self.asymmetry * self.asymmetry;
        wj * (c * c + d2 * s * s).powf(0.25) - self.anharmonicity_ghz.abs()
    }

    /// Lowest reachable frequency on the principal branch, GHz.
    pub fn min_frequency_ghz(&self) -> f64 {
        self.frequency_at(0.5)
    }

    /// Inverse map on the branch phi in [0, 0.5]. Errors when the target
    /// frequency is outside the achievable band.
    pub fn flux_for_frequency(&self, omega_ghz: f64) -> Result<f64> {
        let lo = self.min_frequency_ghz();
        if omega_ghz > self.omega_max_ghz + 1e-12 || omega_ghz < lo - 1e-12 {
            return Err(Error::Range(format!(
                "target frequency {omega_ghz} GHz outside achievable band [{lo}, {}]",
                self.omega_max_ghz
            )));
        }
        let wj = self.omega_max_ghz + self.anharmonicity_ghz.abs();
        let y = ((omega_ghz + self.anharmonicity_ghz.abs()) / wj).powi(4);
        let d2 = self.asymmetry * self.asymmetry;
        // y = cos^2 + d^2 sin^2 = d^2 + (1 - d^2) cos^2
        let c2 = ((y - d2) / (1.0 - d2)).clamp(0.0, 1.0);
        Ok(c2.sqrt().acos() / std::f64::consts::PI)
    }
}

/// Full device parameter set. The default instance carries the reference
/// circuit values used throughout the crate's tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceParams {
    pub q1: ModeSpec,
    pub coupler: ModeSpec,
    pub q2: ModeSpec,
    pub couplings: CouplingGraph,
    pub flux_map: FluxMap,
}

impl Default for DeviceParams {
    fn default() -> Self {
        let levels = 5;
        DeviceParams {
            q1: ModeSpec {
                label: Mode::Q1,
                frequency_ghz: 5.27,
                anharmonicity_ghz: -0.210,
                levels,
            },
            coupler: ModeSpec {
                label: Mode::Coupler,
                frequency_ghz: 6.74,
                anharmonicity_ghz: -0.370,
                levels,
            },
            q2: ModeSpec {
                label: Mode::Q2,
                frequency_ghz: 4.62,
                anharmonicity_ghz: -0.240,
                levels,
            },
            couplings: CouplingGraph {
                g12_ghz: 0.012,
                g1c_ghz: 0.122,
                g2c_ghz: 0.105,
            },
            flux_map: FluxMap {
                omega_max_ghz: 6.74,
                anharmonicity_ghz: -0.370,
                asymmetry: 0.0,
            },
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        self.q1.validate()?;
        self.coupler.validate()?;
        self.q2.validate()?;
        self.couplings.validate()?;
        self.flux_map.validate()?;
        if self.q1.label == self.coupler.label
            || self.q1.label == self.q2.label
            || self.coupler.label == self.q2.label
        {
            return Err(Error::Validation("mode labels must be distinct".into()));
        }
        Ok(())
    }

    /// Load from a JSON document with keys mirroring the field names.
    pub fn from_json(text: &str) -> Result<Self> {
        let params: DeviceParams = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("device JSON: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn modes(&self) -> [&ModeSpec; 3] {
        [&self.q1, &self.coupler, &self.q2]
    }

    /// Coupler idling frequency, GHz.
    pub fn idle_coupler_frequency_ghz(&self) -> f64 {
        self.coupler.frequency_ghz
    }

    /// Truncation dimension per mode (all three modes share it).
    pub fn levels(&self) -> usize {
        self.q1.levels
    }

    /// Override the truncation dimension on all modes.
    pub fn with_levels(mut self, levels: usize) -> Self {
        self.q1.levels = levels;
        self.coupler.levels = levels;
        self.q2.levels = levels;
        self
    }
}

/// Bare product state |n1, nc, n2>.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BareState {
    pub n1: u32,
    pub nc: u32,
    pub n2: u32,
}

impl BareState {
    pub fn new(n1: u32, nc: u32, n2: u32) -> Self {
        BareState { n1, nc, n2 }
    }

    pub fn total_excitations(&self) -> u32 {
        self.n1 + self.nc + self.n2
    }

    /// Flat index in the (Q1 tensor C tensor Q2) product space.
    pub fn flat_index(&self, levels: usize) -> usize {
        (self.n1 as usize) * levels * levels + (self.nc as usize) * levels + self.n2 as usize
    }
}

impl std::fmt::Display for BareState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|{}{}{}>", self.n1, self.nc, self.n2)
    }
}

/// Dense Hermitian operator on the truncated product space, entries in GHz.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    matrix: DMatrix<Complex64>,
}

impl HermitianOperator {
    /// Validates Hermiticity to `HERMITICITY_TOL` relative to the max entry.
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidDimension("operator must be square".into()));
        }
        let scale = matrix.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
        let mut dev = 0.0_f64;
        for i in 0..matrix.nrows() {
            for j in i..matrix.ncols() {
                dev = dev.max((matrix[(i, j)] - matrix[(j, i)].conj()).norm());
            }
        }
        if dev > HERMITICITY_TOL * scale.max(1.0) {
            return Err(Error::Validation(format!(
                "matrix is not Hermitian: max deviation {dev:e}"
            )));
        }
        Ok(HermitianOperator { matrix })
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }
}

/// Annihilation operator on a `levels`-dimensional truncated Fock space:
/// entry (n, n+1) equals sqrt(n+1).
pub fn annihilation_operator(levels: usize) -> Result<DMatrix<Complex64>> {
    if levels < 2 {
        return Err(Error::InvalidDimension(format!(
            "annihilation operator needs levels >= 2, got {levels}"
        )));
    }
    let mut a = DMatrix::zeros(levels, levels);
    for n in 0..levels - 1 {
        a[(n, n + 1)] = Complex64::new(((n + 1) as f64).sqrt(), 0.0);
    }
    Ok(a)
}

/// Real-valued full Hamiltonian (all couplings are real in this model).
pub(crate) fn hamiltonian_real(params: &DeviceParams, coupler_frequency_ghz: f64) -> DMatrix<f64> {
    let levels = params.levels();
    let dim = levels * levels * levels;
    let mut h = DMatrix::zeros(dim, dim);
    let freqs = [
        params.q1.frequency_ghz,
        coupler_frequency_ghz,
        params.q2.frequency_ghz,
    ];
    let anh = [
        params.q1.anharmonicity_ghz,
        params.coupler.anharmonicity_ghz,
        params.q2.anharmonicity_ghz,
    ];
    let pairs = [
        (0usize, 1usize, params.couplings.g1c_ghz),
        (1, 2, params.couplings.g2c_ghz),
        (0, 2, params.couplings.g12_ghz),
    ];
    let l = levels as u32;
    for n1 in 0..l {
        for nc in 0..l {
            for n2 in 0..l {
                let b = BareState::new(n1, nc, n2);
                let i = b.flat_index(levels);
                let ns = [n1, nc, n2];
                let diag: f64 = (0..3)
                    .map(|k| {
                        let n = ns[k] as f64;
                        freqs[k] * n + 0.5 * anh[k] * n * (n - 1.0)
                    })
                    .sum();
                h[(i, i)] = diag;
                // a_p^+ a_q hops; the Hermitian partner is filled symmetrically
                for &(p, q, g) in &pairs {
                    if ns[q] > 0 && ns[p] < l - 1 {
                        let mut t = ns;
                        t[q] -= 1;
                        t[p] += 1;
                        let j = BareState::new(t[0], t[1], t[2]).flat_index(levels);
                        let amp = g * ((ns[p] + 1) as f64).sqrt() * (ns[q] as f64).sqrt();
                        h[(j, i)] += amp;
                        h[(i, j)] += amp;
                    }
                }
            }
        }
    }
    h
}

/// Build the three-mode Hamiltonian at the given coupler frequency.
///
/// H/h = sum_i [omega_i n_i + (alpha_i/2) n_i(n_i - 1)]
///     + sum_{i<j} g_ij (a_i^+ a_j + a_i a_j^+),
/// on the (Q1, C, Q2) tensor-product space, entries in GHz.
pub fn build_hamiltonian(
    params: &DeviceParams,
    coupler_frequency_ghz: f64,
) -> Result<HermitianOperator> {
    params.validate()?;
    if coupler_frequency_ghz <= 0.0 {
        return Err(Error::Validation("coupler frequency must be positive".into()));
    }
    let h = hamiltonian_real(params, coupler_frequency_ghz);
    HermitianOperator::new(h.map(|x| Complex64::new(x, 0.0)))
}

/// Bare basis states with total excitation number `n`, in lexicographic
/// (n1, nc, n2) order.
pub fn manifold_basis(levels: usize, n: u32) -> Vec<BareState> {
    let mut out = Vec::new();
    let l = levels as u32;
    for n1 in 0..l {
        for nc in 0..l {
            for n2 in 0..l {
                if n1 + nc + n2 == n {
                    out.push(BareState::new(n1, nc, n2));
                }
            }
        }
    }
    out
}

/// Hamiltonian restricted to one excitation-number manifold, in the
/// `manifold_basis` order. Exact: the full Hamiltonian commutes with the
/// total excitation number.
pub fn manifold_hamiltonian(
    params: &DeviceParams,
    coupler_frequency_ghz: f64,
    n: u32,
) -> DMatrix<f64> {
    let basis = manifold_basis(params.levels(), n);
    manifold_hamiltonian_with_basis(params, coupler_frequency_ghz, &basis)
}

pub(crate) fn manifold_hamiltonian_with_basis(
    params: &DeviceParams,
    coupler_frequency_ghz: f64,
    basis: &[BareState],
) -> DMatrix<f64> {
    let index: std::collections::HashMap<BareState, usize> =
        basis.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let freqs = [
        params.q1.frequency_ghz,
        coupler_frequency_ghz,
        params.q2.frequency_ghz,
    ];
    let anh = [
        params.q1.anharmonicity_ghz,
        params.coupler.anharmonicity_ghz,
        params.q2.anharmonicity_ghz,
    ];
    let pairs = [
        (0usize, 1usize, params.couplings.g1c_ghz),
        (1, 2, params.couplings.g2c_ghz),
        (0, 2, params.couplings.g12_ghz),
    ];
    let l = params.levels() as u32;
    let d = basis.len();
    let mut h = DMatrix::zeros(d, d);
    for (i, b) in basis.iter().enumerate() {
        let ns = [b.n1, b.nc, b.n2];
        h[(i, i)] = (0..3)
            .map(|k| {
                let n = ns[k] as f64;
                freqs[k] * n + 0.5 * anh[k] * n * (n - 1.0)
            })
            .sum();
        for &(p, q, g) in &pairs {
            if ns[q] > 0 && ns[p] < l - 1 {
                let mut t = ns;
                t[q] -= 1;
                t[p] += 1;
                if let Some(&j) = index.get(&BareState::new(t[0], t[1], t[2])) {
                    let amp = g * ((ns[p] + 1) as f64).sqrt() * (ns[q] as f64).sqrt();
                    h[(j, i)] += amp;
                    h[(i, j)] += amp;
                }
            }
        }
    }
    h
}

/// Total excitation-number operator as a diagonal, for invariant checks.
pub fn number_operator(levels: usize) -> DVector<f64> {
    let dim = levels * levels * levels;
    let mut n = DVector::zeros(dim);
    let l = levels as u32;
    for n1 in 0..l {
        for nc in 0..l {
            for n2 in 0..l {
                let b = BareState::new(n1, nc, n2);
                n[b.flat_index(levels)] = (n1 + nc + n2) as f64;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn annihilation_matches_ladder_coefficients() {
        let a = annihilation_operator(2).unwrap();
        assert_eq!(a[(0, 1)], Complex64::new(1.0, 0.0));
        assert_eq!(a[(1, 0)], Complex64::new(0.0, 0.0));

        let a3 = annihilation_operator(3).unwrap();
        assert_abs_diff_eq!(a3[(1, 2)].re, 2.0_f64.sqrt(), epsilon = 1e-15);

        let a4 = annihilation_operator(4).unwrap();
        let num = a4.adjoint() * &a4;
        for n in 0..4 {
            assert_abs_diff_eq!(num[(n, n)].re, n as f64, epsilon = 1e-14);
        }
        assert!(matches!(
            annihilation_operator(1),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn hamiltonian_dimension_and_hermiticity() {
        let params = DeviceParams::default();
        let h = build_hamiltonian(&params, 6.74).unwrap();
        assert_eq!(h.dimension(), 125);
    }

    #[test]
    fn uncoupled_energies_are_analytic_ladder_sums() {
        let mut params = DeviceParams::default();
        params.couplings = CouplingGraph {
            g12_ghz: 0.0,
            g1c_ghz: 0.0,
            g2c_ghz: 0.0,
        };
        let h = hamiltonian_real(&params, 6.74);
        // coupler n = 2 at idle: 2 * 6.74 - 0.370 = 13.11 GHz
        let b = BareState::new(0, 2, 0);
        assert_abs_diff_eq!(h[(b.flat_index(5), b.flat_index(5))], 13.11, epsilon = 1e-10);
        // all diagonal entries equal the analytic sums
        for n1 in 0..5u32 {
            for nc in 0..5u32 {
                for n2 in 0..5u32 {
                    let i = BareState::new(n1, nc, n2).flat_index(5);
                    let expect = params.q1.ladder_energy(n1)
                        + params.coupler.ladder_energy(nc)
                        + params.q2.ladder_energy(n2);
                    assert_abs_diff_eq!(h[(i, i)], expect, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn commutes_with_total_excitation_number() {
        let params = DeviceParams::default();
        let h = hamiltonian_real(&params, 6.74);
        let n = number_operator(5);
        let scale = h.amax();
        let mut comm_max = 0.0_f64;
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                comm_max = comm_max.max((h[(i, j)] * (n[i] - n[j])).abs());
            }
        }
        assert!(comm_max < 1e-12 * scale);
    }

    #[test]
    fn manifold_restriction_agrees_with_full_matrix() {
        let params = DeviceParams::default();
        let h = hamiltonian_real(&params, 5.5);
        for n in 0..4u32 {
            let basis = manifold_basis(5, n);
            let hm = manifold_hamiltonian(&params, 5.5, n);
            for (i, bi) in basis.iter().enumerate() {
                for (j, bj) in basis.iter().enumerate() {
                    assert_abs_diff_eq!(
                        hm[(i, j)],
                        h[(bi.flat_index(5), bj.flat_index(5))],
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn two_excitation_manifold_has_six_states() {
        assert_eq!(manifold_basis(5, 2).len(), 6);
        assert_eq!(manifold_basis(5, 0).len(), 1);
        assert_eq!(manifold_basis(5, 1).len(), 3);
    }

    #[test]
    fn flux_map_round_trip_and_sweet_spot() {
        let fm = FluxMap {
            omega_max_ghz: 6.74,
            anharmonicity_ghz: -0.370,
            asymmetry: 0.0,
        };
        assert_abs_diff_eq!(fm.frequency_at(0.0), 6.74, epsilon = 1e-12);
        // d = 0, Phi = 0.25 closed form
        let expect = (6.74 + 0.370) * (std::f64::consts::FRAC_PI_4.cos()).sqrt() - 0.370;
        assert_abs_diff_eq!(fm.frequency_at(0.25), expect, epsilon = 1e-12);
        // first-order insensitive at the sweet spot
        let d = 1e-6;
        let slope = (fm.frequency_at(d) - fm.frequency_at(-d)) / (2.0 * d);
        assert!(slope.abs() < 1e-6);
        // round trip
        for w in [5.0, 5.5, 6.0, 6.5, 6.7] {
            let phi = fm.flux_for_frequency(w).unwrap();
            assert_abs_diff_eq!(fm.frequency_at(phi), w, epsilon = 1e-9);
        }
        assert!(matches!(fm.flux_for_frequency(7.0), Err(Error::Range(_))));
    }

    #[test]
    fn device_json_round_trip() {
        let params = DeviceParams::default();
        let text = serde_json::to_string_pretty(&params).unwrap();
        let back = DeviceParams::from_json(&text).unwrap();
        assert_eq!(back.q1.frequency_ghz, 5.27);
        assert_eq!(back.couplings.g1c_ghz, 0.122);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = DeviceParams::default();
        p.q1.anharmonicity_ghz = 0.1;
        assert!(p.validate().is_err());
        let mut p = DeviceParams::default();
        p.q2.levels = 2;
        assert!(p.validate().is_err());
    }
}
