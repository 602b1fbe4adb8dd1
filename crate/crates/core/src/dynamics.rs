//! Time-domain propagation: flux pulses, exact-exponential stepping inside the
//! excitation-number blocks, Lindblad evolution with coupler-frequency
//! dependent rates, and quantum channels on the ten-state dressed subspace.
//!
//! All propagation happens in the bare coordinates of the N <= 2 subspace,
//! which the Hamiltonian leaves invariant; results are reported in the dressed
//! eigenbasis of the idle Hamiltonian (four computational states |00>, |01>,
//! |10>, |11> followed by six leakage states).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{manifold_basis, BareState, DeviceParams, FluxMap};
use crate::spectrum::{eig_real, labeled_manifold};
use crate::{Error, Result};

/// Default integrator step, ns.
pub const DEFAULT_DT_NS: f64 = 0.002;
/// Unitarity defect bound enforced on propagated unitaries.
pub const UNITARITY_TOL: f64 = 1e-9;
/// Trace-drift bound enforced on Lindblad propagation.
pub const TRACE_TOL: f64 = 1e-8;
/// Trace-preservation defect bound for channels.
pub const TP_TOL: f64 = 1e-8;
/// Most negative admissible Choi eigenvalue.
pub const CP_TOL: f64 = -1e-8;
/// Minimum sample count for quasi-static dephasing averaging.
pub const MIN_QUASI_STATIC_SAMPLES: usize = 64;

const TWO_PI: f64 = std::f64::consts::TAU;

/// Half-period-sinusoid flux pulse Phi(t) = A sin(pi t / tau) on t in [0, tau].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PulseShape {
    /// Peak flux excursion, units of Phi0.
    pub amplitude_phi0: f64,
    /// Gate duration tau, ns.
    pub duration_ns: f64,
}

/// One sample of an exported pulse waveform.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WaveformSample {
    pub time_ns: f64,
    pub flux_phi0: f64,
    pub coupler_frequency_ghz: f64,
}

impl PulseShape {
    pub fn new(amplitude_phi0: f64, duration_ns: f64) -> Result<Self> {
        if !(duration_ns > 0.0) {
            return Err(Error::Validation("pulse duration must be positive".into()));
        }
        Ok(PulseShape {
            amplitude_phi0,
            duration_ns,
        })
    }

    /// Pulse whose peak brings the coupler to `peak_ghz`, using the inverse
    /// flux map.
    pub fn from_peak_frequency(fm: &FluxMap, peak_ghz: f64, duration_ns: f64) -> Result<Self> {
        let amp = fm.flux_for_frequency(peak_ghz)?;
        PulseShape::new(amp, duration_ns)
    }

    /// Flux at time `t_ns`, zero outside [0, tau].
    pub fn flux_at(&self, t_ns: f64) -> f64 {
        if t_ns <= 0.0 || t_ns >= self.duration_ns {
            return 0.0;
        }
        self.amplitude_phi0 * (std::f64::consts::PI * t_ns / self.duration_ns).sin()
    }

    /// Coupler frequency at time `t_ns`, GHz.
    pub fn frequency_at(&self, fm: &FluxMap, t_ns: f64) -> f64 {
        fm.frequency_at(self.flux_at(t_ns))
    }

    /// Coupler frequency at the pulse peak, GHz.
    pub fn peak_frequency_ghz(&self, fm: &FluxMap) -> f64 {
        fm.frequency_at(self.amplitude_phi0)
    }

    /// Uniformly sampled coupler-frequency trajectory (for gap searches and
    /// trajectory-averaged rates).
    pub fn trajectory(&self, fm: &FluxMap, samples: usize) -> Vec<f64> {
        let n = samples.max(2);
        (0..n)
            .map(|k| self.frequency_at(fm, self.duration_ns * k as f64 / (n - 1) as f64))
            .collect()
    }

    /// Sampled waveform for export.
    pub fn waveform(&self, fm: &FluxMap, dt_ns: f64) -> Vec<WaveformSample> {
        let n = (self.duration_ns / dt_ns).round().max(1.0) as usize;
        (0..=n)
            .map(|k| {
                let t = self.duration_ns * k as f64 / n as f64;
                WaveformSample {
                    time_ns: t,
                    flux_phi0: self.flux_at(t),
                    coupler_frequency_ghz: self.frequency_at(fm, t),
                }
            })
            .collect()
    }
}

/// Integrator settings.
#[derive(Debug, Clone, Copy)]
pub struct PropagationOptions {
    pub dt_ns: f64,
    /// When set, the propagation is repeated at half step and the difference
    /// reported as a step-size error estimate (the half-step result is
    /// returned).
    pub richardson: bool,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions {
            dt_ns: DEFAULT_DT_NS,
            richardson: false,
        }
    }
}

impl PropagationOptions {
    fn validate(&self) -> Result<()> {
        if !(self.dt_ns > 0.0) {
            return Err(Error::Validation("dt must be positive".into()));
        }
        Ok(())
    }
}

/// Subspace dimension: 1 + 3 + 6 states with at most two excitations.
pub const SUBSPACE_DIM: usize = 10;
const N1_OFFSET: usize = 1;
const N2_OFFSET: usize = 4;

/// Idle dressed frame on the N <= 2 subspace.
///
/// Columns of the frame matrix are the idle-Hamiltonian eigenstates labeled by
/// their dominant bare state, ordered computational-first:
/// |00>=000, |01>=001, |10>=100, |11>=101, then leakage
/// 010, 002, 011, 020, 110, 200. Propagation coordinates ("bare order")
/// concatenate the N = 0, 1, 2 manifold bases.
#[derive(Debug, Clone)]
pub struct IdleFrame {
    params: DeviceParams,
    /// Bare-order basis states.
    bare_order: Vec<BareState>,
    /// Dressed-order labels.
    labels: Vec<BareState>,
    /// 10 x 10 real orthogonal frame, rows bare order, columns dressed order.
    w: DMatrix<f64>,
    /// Idle dressed energies in dressed order, GHz.
    energies: Vec<f64>,
}

fn dressed_order() -> Vec<BareState> {
    [
        (0, 0, 0),
        (0, 0, 1),
        (1, 0, 0),
        (1, 0, 1),
        (0, 1, 0),
        (0, 0, 2),
        (0, 1, 1),
        (0, 2, 0),
        (1, 1, 0),
        (2, 0, 0),
    ]
    .iter()
    .map(|&(a, b, c)| BareState::new(a, b, c))
    .collect()
}

impl IdleFrame {
    pub fn new(params: &DeviceParams) -> Result<Self> {
        params.validate()?;
        let wc = params.idle_coupler_frequency_ghz();
        let m1 = labeled_manifold(params, wc, 1, None)?;
        let m2 = labeled_manifold(params, wc, 2, None)?;
        let mut bare_order = vec![BareState::new(0, 0, 0)];
        bare_order.extend(manifold_basis(params.levels(), 1));
        bare_order.extend(manifold_basis(params.levels(), 2));
        if bare_order.len() != SUBSPACE_DIM {
            return Err(Error::InvalidDimension(format!(
                "subspace dimension {} != {SUBSPACE_DIM}",
                bare_order.len()
            )));
        }
        let labels = dressed_order();
        let mut w = DMatrix::zeros(SUBSPACE_DIM, SUBSPACE_DIM);
        let mut energies = Vec::with_capacity(SUBSPACE_DIM);
        for (col, label) in labels.iter().enumerate() {
            match label.total_excitations() {
                0 => {
                    w[(0, col)] = 1.0;
                    energies.push(0.0);
                }
                n => {
                    let m = if n == 1 { &m1 } else { &m2 };
                    let offset = if n == 1 { N1_OFFSET } else { N2_OFFSET };
                    let level = m.level(*label).ok_or_else(|| {
                        Error::Validation(format!("missing dressed label {label}"))
                    })?;
                    for (row, v) in level.state.iter().enumerate() {
                        w[(offset + row, col)] = *v;
                    }
                    energies.push(level.energy_ghz);
                }
            }
        }
        Ok(IdleFrame {
            params: params.clone(),
            bare_order,
            labels,
            w,
            energies,
        })
    }

    pub fn params(&self) -> &DeviceParams {
        &self.params
    }

    /// Dressed-order bare labels; indices 0..4 are the computational states.
    pub fn labels(&self) -> &[BareState] {
        &self.labels
    }

    /// Bare-order basis underlying the propagation coordinates.
    pub fn bare_order(&self) -> &[BareState] {
        &self.bare_order
    }

    /// Idle dressed energies in dressed order, GHz.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Frame matrix (rows bare order, columns dressed order).
    pub fn frame(&self) -> &DMatrix<f64> {
        &self.w
    }

    fn frame_complex(&self) -> DMatrix<Complex64> {
        self.w.map(|x| Complex64::new(x, 0.0))
    }

    /// Dressed state as a complex vector in bare-order coordinates.
    pub fn dressed_state(&self, label: BareState) -> Option<DVector<Complex64>> {
        let col = self.labels.iter().position(|l| *l == label)?;
        Some(self.w.column(col).map(|x| Complex64::new(x, 0.0)))
    }

    /// Lowering operator of one qubit (or the coupler) restricted to the
    /// subspace, bare-order coordinates.
    fn lowering(&self, mode: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(SUBSPACE_DIM, SUBSPACE_DIM);
        for (j, s) in self.bare_order.iter().enumerate() {
            let ns = [s.n1, s.nc, s.n2];
            if ns[mode] > 0 {
                let mut t = ns;
                t[mode] -= 1;
                let target = BareState::new(t[0], t[1], t[2]);
                if let Some(i) = self.bare_order.iter().position(|b| *b == target) {
                    a[(i, j)] = (ns[mode] as f64).sqrt();
                }
            }
        }
        a
    }

    /// Number operator of one mode restricted to the subspace (diagonal).
    fn number(&self, mode: usize) -> DMatrix<f64> {
        let mut n = DMatrix::zeros(SUBSPACE_DIM, SUBSPACE_DIM);
        for (j, s) in self.bare_order.iter().enumerate() {
            n[(j, j)] = [s.n1, s.nc, s.n2][mode] as f64;
        }
        n
    }
}

/// Piecewise-linear lookup of a coherence time versus coupler frequency.
/// A single point means a constant value; queries clamp to the table ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateTable {
    /// (coupler_frequency_GHz, time_us) knots, ascending in frequency.
    pub points: Vec<(f64, f64)>,
}

impl RateTable {
    pub fn constant(time_us: f64) -> Self {
        RateTable {
            points: vec![(0.0, time_us)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Validation("rate table needs at least one knot".into()));
        }
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Validation(
                    "rate table knots must ascend in frequency".into(),
                ));
            }
        }
        if self.points.iter().any(|&(_, t)| !(t > 0.0)) {
            return Err(Error::Validation("coherence times must be positive".into()));
        }
        Ok(())
    }

    /// Interpolated coherence time at `wc` GHz, microseconds.
    pub fn time_us_at(&self, wc: f64) -> f64 {
        let pts = &self.points;
        if wc <= pts[0].0 {
            return pts[0].1;
        }
        if wc >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        for w in pts.windows(2) {
            if wc <= w[1].0 {
                let f = (wc - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + f * (w[1].1 - w[0].1);
            }
        }
        pts[pts.len() - 1].1
    }

    /// Decay rate 1/T at `wc`, in 1/ns.
    pub fn rate_per_ns_at(&self, wc: f64) -> f64 {
        1e-3 / self.time_us_at(wc)
    }
}

/// Coherence times of one mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeNoise {
    #[serde(default)]
    pub t1_us: Option<RateTable>,
    #[serde(default)]
    pub tphi_us: Option<RateTable>,
}

impl ModeNoise {
    pub fn none() -> Self {
        ModeNoise {
            t1_us: None,
            tphi_us: None,
        }
    }
}

/// How qubit dephasing enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingKind {
    /// White-noise Lindblad dephasing.
    Markovian,
    /// Static Gaussian frequency offsets averaged over unitary runs; sigma per
    /// qubit is sqrt(2)/(2 pi Tphi) with Tphi quadrature-averaged over the
    /// pulse trajectory.
    QuasiStaticGaussian,
}

/// Decoherence model for the three modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    pub q1: ModeNoise,
    pub q2: ModeNoise,
    #[serde(default = "ModeNoise::none")]
    pub coupler: ModeNoise,
    pub dephasing: DephasingKind,
    /// Sample count for quasi-static averaging; raised to
    /// `MIN_QUASI_STATIC_SAMPLES` when lower.
    #[serde(default = "default_quasi_static_samples")]
    pub quasi_static_samples: usize,
}

fn default_quasi_static_samples() -> usize {
    MIN_QUASI_STATIC_SAMPLES
}

impl NoiseModel {
    pub fn markovian(q1: ModeNoise, q2: ModeNoise, coupler: ModeNoise) -> Self {
        NoiseModel {
            q1,
            q2,
            coupler,
            dephasing: DephasingKind::Markovian,
            quasi_static_samples: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for table in [&self.q1, &self.q2, &self.coupler]
            .iter()
            .flat_map(|m| [m.t1_us.as_ref(), m.tphi_us.as_ref()])
            .flatten()
        {
            table.validate()?;
        }
        Ok(())
    }

    /// Quadrature-averaged qubit dephasing time over a pulse trajectory:
    /// T_eff = < Tphi^-2 >^(-1/2), microseconds.
    pub fn effective_tphi_us(table: &RateTable, trajectory: &[f64]) -> f64 {
        let mean_sq: f64 = trajectory
            .iter()
            .map(|&wc| table.time_us_at(wc).powi(-2))
            .sum::<f64>()
            / trajectory.len() as f64;
        mean_sq.powf(-0.5)
    }
}

/// One pre-computed integrator step.
struct StepData {
    /// Block-diagonal midpoint-exact unitary, bare order.
    u: DMatrix<Complex64>,
    /// Collapse rates at the step midpoint, aligned with the op list.
    gammas: Vec<f64>,
}

fn block_step_unitary(
    params: &DeviceParams,
    wc: f64,
    dt_ns: f64,
) -> DMatrix<Complex64> {
    let mut u = DMatrix::zeros(SUBSPACE_DIM, SUBSPACE_DIM);
    u[(0, 0)] = Complex64::new(1.0, 0.0);
    for (n, offset, dim) in [(1u32, N1_OFFSET, 3usize), (2, N2_OFFSET, 6)] {
        let h = crate::device::manifold_hamiltonian(params, wc, n);
        let (e, v) = eig_real(&h);
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..dim {
                    let phase = -TWO_PI * e[k] * dt_ns;
                    acc += Complex64::from_polar(v[(i, k)] * v[(j, k)], phase);
                }
                u[(offset + i, offset + j)] = acc;
            }
        }
    }
    u
}

/// Collapse-operator set with per-step rates read from the noise model.
struct CollapseOps {
    ops: Vec<DMatrix<Complex64>>,
    /// op, its conjugate-square, and the table the rate comes from
    op_sq: Vec<DMatrix<Complex64>>,
    tables: Vec<(RateTable, RateScale)>,
}

#[derive(Clone, Copy)]
enum RateScale {
    /// gamma = 1/T1
    Relaxation,
    /// gamma = 2/Tphi (collapse operator is the mode number operator)
    Dephasing,
}

fn collapse_ops(frame: &IdleFrame, noise: &NoiseModel, include_dephasing: bool) -> CollapseOps {
    let mut ops = Vec::new();
    let mut tables = Vec::new();
    let modes = [(&noise.q1, 0usize), (&noise.coupler, 1), (&noise.q2, 2)];
    for (mn, mode) in modes {
        if let Some(t1) = &mn.t1_us {
            ops.push(frame.lowering(mode).map(|x| Complex64::new(x, 0.0)));
            tables.push((t1.clone(), RateScale::Relaxation));
        }
        if include_dephasing {
            if let Some(tphi) = &mn.tphi_us {
                ops.push(frame.number(mode).map(|x| Complex64::new(x, 0.0)));
                tables.push((tphi.clone(), RateScale::Dephasing));
            }
        }
    }
    let op_sq = ops.iter().map(|a| a.adjoint() * a).collect();
    CollapseOps { ops, op_sq, tables }
}

impl CollapseOps {
    fn gammas_at(&self, wc: f64) -> Vec<f64> {
        self.tables
            .iter()
            .map(|(t, scale)| match scale {
                RateScale::Relaxation => t.rate_per_ns_at(wc),
                RateScale::Dephasing => 2.0 * t.rate_per_ns_at(wc),
            })
            .collect()
    }

    /// D(rho) = sum_k gamma_k (A rho A^+ - {A^+A, rho}/2).
    fn dissipator(&self, rho: &DMatrix<Complex64>, gammas: &[f64]) -> DMatrix<Complex64> {
        let mut d = DMatrix::zeros(rho.nrows(), rho.ncols());
        for ((a, asq), &g) in self.ops.iter().zip(&self.op_sq).zip(gammas) {
            if g == 0.0 {
                continue;
            }
            let jump = a * rho * a.adjoint();
            let anti = asq * rho + rho * asq;
            d += (jump - anti.scale(0.5)).scale(g);
        }
        d
    }

    /// Second-order Taylor step rho <- rho + h D(rho) + h^2/2 D(D(rho)).
    fn half_step(&self, rho: &mut DMatrix<Complex64>, gammas: &[f64], h: f64) {
        if self.ops.is_empty() {
            return;
        }
        let d1 = self.dissipator(rho, gammas);
        let d2 = self.dissipator(&d1, gammas);
        *rho += d1.scale(h) + d2.scale(0.5 * h * h);
    }
}

fn shifted_params(params: &DeviceParams, offsets_ghz: (f64, f64)) -> DeviceParams {
    let mut p = params.clone();
    p.q1.frequency_ghz += offsets_ghz.0;
    p.q2.frequency_ghz += offsets_ghz.1;
    p
}

fn precompute_steps(
    frame: &IdleFrame,
    pulse: &PulseShape,
    collapse: Option<&CollapseOps>,
    offsets_ghz: (f64, f64),
    dt_ns: f64,
) -> Vec<StepData> {
    let params = shifted_params(frame.params(), offsets_ghz);
    let fm = &params.flux_map;
    let n = (pulse.duration_ns / dt_ns).round().max(1.0) as usize;
    let dt = pulse.duration_ns / n as f64;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let t_mid = (k as f64 + 0.5) * dt;
            let wc = fm.frequency_at(pulse.flux_at(t_mid));
            StepData {
                u: block_step_unitary(&params, wc, dt),
                gammas: collapse.map(|c| c.gammas_at(wc)).unwrap_or_default(),
            }
        })
        .collect()
}

/// Result of a unitary propagation.
#[derive(Debug, Clone)]
pub struct UnitaryResult {
    /// 10 x 10 propagator in the dressed basis (dressed order).
    pub matrix: DMatrix<Complex64>,
    /// Frobenius distance between the full-step and half-step results when
    /// Richardson verification was requested.
    pub step_error: Option<f64>,
}

fn propagate_bare_unitary(
    frame: &IdleFrame,
    pulse: &PulseShape,
    offsets_ghz: (f64, f64),
    dt_ns: f64,
) -> DMatrix<Complex64> {
    let steps = precompute_steps(frame, pulse, None, offsets_ghz, dt_ns);
    let mut u = DMatrix::identity(SUBSPACE_DIM, SUBSPACE_DIM);
    for s in &steps {
        u = &s.u * u;
    }
    u
}

/// Propagate the pulse on the N <= 2 subspace and return the propagator in the
/// idle dressed basis. Unitarity is enforced to `UNITARITY_TOL`.
pub fn propagate_unitary(
    frame: &IdleFrame,
    pulse: &PulseShape,
    opts: &PropagationOptions,
) -> Result<UnitaryResult> {
    opts.validate()?;
    let u_full = propagate_bare_unitary(frame, pulse, (0.0, 0.0), opts.dt_ns);
    let (u_bare, step_error) = if opts.richardson {
        let u_half = propagate_bare_unitary(frame, pulse, (0.0, 0.0), 0.5 * opts.dt_ns);
        let err = (&u_half - &u_full).norm();
        (u_half, Some(err))
    } else {
        (u_full, None)
    };
    let wc = frame.frame_complex();
    let u_dressed = wc.adjoint() * u_bare * wc;
    let defect = (&u_dressed.adjoint() * &u_dressed
        - DMatrix::<Complex64>::identity(SUBSPACE_DIM, SUBSPACE_DIM))
    .norm();
    if defect > UNITARITY_TOL * (SUBSPACE_DIM as f64).sqrt() {
        return Err(Error::Accuracy {
            what: "propagator unitarity".into(),
            achieved: defect,
            required: UNITARITY_TOL * (SUBSPACE_DIM as f64).sqrt(),
        });
    }
    Ok(UnitaryResult {
        matrix: u_dressed,
        step_error,
    })
}

/// Phases and leakage of the computational dressed states after a pulse.
#[derive(Debug, Clone, Serialize)]
pub struct ComputationalTrace {
    /// Continuously unwrapped accumulated phases of |01>, |10>, |11>, rad.
    pub phase_01_rad: f64,
    pub phase_10_rad: f64,
    pub phase_11_rad: f64,
    /// Unwrapped conditional phase phi11 - phi10 - phi01 (phi00 = 0), rad.
    pub conditional_phase_rad: f64,
    /// Final population lost from each initial dressed state.
    pub leakage_01: f64,
    pub leakage_10: f64,
    pub leakage_11: f64,
}

/// Fast path for calibration: evolve the three nontrivial computational
/// dressed states through the pulse, tracking unwrapped phases against the
/// idle dressed targets.
pub fn propagate_computational(
    frame: &IdleFrame,
    pulse: &PulseShape,
    opts: &PropagationOptions,
) -> Result<ComputationalTrace> {
    opts.validate()?;
    let steps = precompute_steps(frame, pulse, None, (0.0, 0.0), opts.dt_ns);
    let targets: Vec<DVector<Complex64>> = [(0, 0, 1), (1, 0, 0), (1, 0, 1)]
        .iter()
        .map(|&(a, b, c)| frame.dressed_state(BareState::new(a, b, c)).unwrap())
        .collect();
    let mut states: Vec<DVector<Complex64>> = targets.clone();
    let mut phases = [0.0_f64; 3];
    let mut refs: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); 3];
    for s in &steps {
        for (i, psi) in states.iter_mut().enumerate() {
            *psi = &s.u * &*psi;
            let z = targets[i].dotc(psi);
            if z.norm() > 1e-12 {
                phases[i] += (z / refs[i]).arg();
                refs[i] = z;
            }
        }
    }
    let overlaps: Vec<f64> = (0..3).map(|i| targets[i].dotc(&states[i]).norm_sqr()).collect();
    Ok(ComputationalTrace {
        phase_01_rad: phases[0],
        phase_10_rad: phases[1],
        phase_11_rad: phases[2],
        conditional_phase_rad: phases[2] - phases[1] - phases[0],
        leakage_01: 1.0 - overlaps[0],
        leakage_10: 1.0 - overlaps[1],
        leakage_11: 1.0 - overlaps[2],
    })
}

/// Markovian Lindblad propagation of a dressed-basis density matrix through a
/// pulse (Strang splitting: half dissipator, exact unitary, half dissipator).
/// The trace is checked to `TRACE_TOL`.
pub fn propagate_lindblad(
    frame: &IdleFrame,
    pulse: &PulseShape,
    noise: &NoiseModel,
    rho_dressed: &DMatrix<Complex64>,
    opts: &PropagationOptions,
) -> Result<DMatrix<Complex64>> {
    opts.validate()?;
    noise.validate()?;
    if rho_dressed.nrows() != SUBSPACE_DIM || rho_dressed.ncols() != SUBSPACE_DIM {
        return Err(Error::InvalidDimension(format!(
            "density matrix must be {SUBSPACE_DIM} x {SUBSPACE_DIM}"
        )));
    }
    if noise.dephasing != DephasingKind::Markovian {
        return Err(Error::Validation(
            "propagate_lindblad handles the markovian model; use channel_from_pulse \
             for quasi-static dephasing"
                .into(),
        ));
    }
    let collapse = collapse_ops(frame, noise, true);
    let steps = precompute_steps(frame, pulse, Some(&collapse), (0.0, 0.0), opts.dt_ns);
    let n = steps.len();
    let dt = pulse.duration_ns / n as f64;
    let wmat = frame.frame_complex();
    let mut rho = &wmat * rho_dressed * wmat.adjoint();
    for s in &steps {
        collapse.half_step(&mut rho, &s.gammas, 0.5 * dt);
        rho = &s.u * rho * s.u.adjoint();
        collapse.half_step(&mut rho, &s.gammas, 0.5 * dt);
    }
    let out = wmat.adjoint() * rho * wmat;
    let drift = (out.trace() - rho_dressed.trace()).norm();
    if drift > TRACE_TOL {
        return Err(Error::Accuracy {
            what: "lindblad trace preservation".into(),
            achieved: drift,
            required: TRACE_TOL,
        });
    }
    Ok(out)
}

/// Completely positive trace-preserving map on the dressed subspace, stored as
/// a d^2 x d^2 superoperator acting on column-stacked density matrices.
#[derive(Debug, Clone)]
pub struct QuantumChannel {
    superop: DMatrix<Complex64>,
    dim: usize,
}

/// vec by column stacking (matches nalgebra's column-major storage).
pub fn vectorize(m: &DMatrix<Complex64>) -> DVector<Complex64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &DVector<Complex64>, dim: usize) -> DMatrix<Complex64> {
    DMatrix::from_column_slice(dim, dim, v.as_slice())
}

impl QuantumChannel {
    pub fn identity(dim: usize) -> Self {
        QuantumChannel {
            superop: DMatrix::identity(dim * dim, dim * dim),
            dim,
        }
    }

    /// Channel rho -> U rho U^+.
    pub fn from_unitary(u: &DMatrix<Complex64>) -> Result<Self> {
        if u.nrows() != u.ncols() {
            return Err(Error::InvalidDimension("unitary must be square".into()));
        }
        let dim = u.nrows();
        let s = u.map(|z| z.conj()).kronecker(u);
        Ok(QuantumChannel { superop: s, dim })
    }

    /// Build a channel from an explicit superoperator.
    pub fn from_superoperator(superop: DMatrix<Complex64>) -> Result<Self> {
        let d2 = superop.nrows();
        let dim = (d2 as f64).sqrt().round() as usize;
        if superop.ncols() != d2 || dim * dim != d2 {
            return Err(Error::InvalidDimension(
                "superoperator must be d^2 x d^2".into(),
            ));
        }
        Ok(QuantumChannel { superop, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn superoperator(&self) -> &DMatrix<Complex64> {
        &self.superop
    }

    /// Apply to a density matrix.
    pub fn apply(&self, rho: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if rho.nrows() != self.dim || rho.ncols() != self.dim {
            return Err(Error::InvalidDimension(format!(
                "density matrix must be {0} x {0}",
                self.dim
            )));
        }
        Ok(unvectorize(&(&self.superop * vectorize(rho)), self.dim))
    }

    /// Apply to an already vectorized density matrix (the hot path in
    /// randomized benchmarking).
    pub fn apply_vec(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.superop * v
    }

    /// self after other.
    pub fn compose(&self, other: &QuantumChannel) -> Result<QuantumChannel> {
        if self.dim != other.dim {
            return Err(Error::InvalidDimension("channel dimension mismatch".into()));
        }
        Ok(QuantumChannel {
            superop: &self.superop * &other.superop,
            dim: self.dim,
        })
    }

    /// Uniform convex mixture.
    pub fn average(channels: &[QuantumChannel]) -> Result<QuantumChannel> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Validation("cannot average zero channels".into()))?;
        let mut s = first.superop.clone();
        for c in &channels[1..] {
            if c.dim != first.dim {
                return Err(Error::InvalidDimension("channel dimension mismatch".into()));
            }
            s += &c.superop;
        }
        Ok(QuantumChannel {
            superop: s.scale(1.0 / channels.len() as f64),
            dim: first.dim,
        })
    }

    /// || S^+ vec(I) - vec(I) ||: zero for exactly trace-preserving maps.
    pub fn trace_preservation_defect(&self) -> f64 {
        let id = vectorize(&DMatrix::identity(self.dim, self.dim));
        (self.superop.adjoint() * &id - id).norm()
    }

    /// Choi matrix sum_ij |i><j| (x) E(|i><j|).
    pub fn choi(&self) -> DMatrix<Complex64> {
        let d = self.dim;
        let mut c = DMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let col = self.superop.column(j * d + i);
                let block = DMatrix::from_column_slice(d, d, col.as_slice());
                c.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            }
        }
        c
    }

    /// Smallest eigenvalue of the Hermitized Choi matrix.
    pub fn min_choi_eigenvalue(&self) -> f64 {
        let c = self.choi();
        let herm = (&c + c.adjoint()).scale(0.5);
        let eig = herm.symmetric_eigen();
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Enforce trace preservation to `TP_TOL` and complete positivity to
    /// `CP_TOL` on the Choi spectrum.
    pub fn validate_cptp(&self) -> Result<()> {
        let tp = self.trace_preservation_defect();
        if tp > TP_TOL * self.dim as f64 {
            return Err(Error::Accuracy {
                what: "channel trace preservation".into(),
                achieved: tp,
                required: TP_TOL * self.dim as f64,
            });
        }
        let min_eig = self.min_choi_eigenvalue();
        if min_eig < CP_TOL {
            return Err(Error::Accuracy {
                what: "channel complete positivity (min Choi eigenvalue)".into(),
                achieved: min_eig,
                required: CP_TOL,
            });
        }
        Ok(())
    }
}

fn channel_from_steps(
    frame: &IdleFrame,
    steps: &[StepData],
    collapse: &CollapseOps,
    duration_ns: f64,
) -> QuantumChannel {
    let d = SUBSPACE_DIM;
    let wmat = frame.frame_complex();
    let dt = duration_ns / steps.len() as f64;
    let columns: Vec<(usize, DVector<Complex64>)> = (0..d * d)
        .into_par_iter()
        .map(|col| {
            let (i, j) = (col % d, col / d);
            let mut e = DMatrix::<Complex64>::zeros(d, d);
            e[(i, j)] = Complex64::new(1.0, 0.0);
            let mut rho = &wmat * e * wmat.adjoint();
            for s in steps {
                collapse.half_step(&mut rho, &s.gammas, 0.5 * dt);
                rho = &s.u * rho * s.u.adjoint();
                collapse.half_step(&mut rho, &s.gammas, 0.5 * dt);
            }
            let out = wmat.adjoint() * rho * &wmat;
            (col, vectorize(&out))
        })
        .collect();
    let mut s = DMatrix::zeros(d * d, d * d);
    for (col, v) in columns {
        s.set_column(col, &v);
    }
    QuantumChannel { superop: s, dim: d }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
}

/// Simulate the pulse as a quantum channel on the dressed subspace.
///
/// With `noise = None` the channel is the coherent propagator. The Markovian
/// model runs a Lindblad propagation of all d^2 basis elements; the
/// quasi-static model averages unitary runs over static Gaussian qubit
/// frequency offsets (relaxation, if configured, stays Markovian within each
/// sample). `seed` fixes the offset draws; the result is deterministic in
/// (seed, parameters).
pub fn channel_from_pulse(
    frame: &IdleFrame,
    pulse: &PulseShape,
    noise: Option<&NoiseModel>,
    seed: u64,
    opts: &PropagationOptions,
) -> Result<QuantumChannel> {
    opts.validate()?;
    let noise = match noise {
        None => {
            let u = propagate_unitary(frame, pulse, opts)?;
            let ch = QuantumChannel::from_unitary(&u.matrix)?;
            ch.validate_cptp()?;
            return Ok(ch);
        }
        Some(n) => n,
    };
    noise.validate()?;
    match noise.dephasing {
        DephasingKind::Markovian => {
            let collapse = collapse_ops(frame, noise, true);
            let steps = precompute_steps(frame, pulse, Some(&collapse), (0.0, 0.0), opts.dt_ns);
            let ch = channel_from_steps(frame, &steps, &collapse, pulse.duration_ns);
            ch.validate_cptp()?;
            Ok(ch)
        }
        DephasingKind::QuasiStaticGaussian => {
            let samples = noise.quasi_static_samples.max(MIN_QUASI_STATIC_SAMPLES);
            let traj = pulse.trajectory(&frame.params().flux_map, 201);
            let sigma = |mn: &ModeNoise| -> f64 {
                mn.tphi_us
                    .as_ref()
                    .map(|t| {
                        let tphi_ns = 1e3 * NoiseModel::effective_tphi_us(t, &traj);
                        2.0_f64.sqrt() / (TWO_PI * tphi_ns)
                    })
                    .unwrap_or(0.0)
            };
            let (s1, s2) = (sigma(&noise.q1), sigma(&noise.q2));
            let collapse = collapse_ops(frame, noise, false);
            let channels: Vec<QuantumChannel> = (0..samples)
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64);
                    let offsets = (s1 * gaussian(&mut rng), s2 * gaussian(&mut rng));
                    let steps =
                        precompute_steps(frame, pulse, Some(&collapse), offsets, opts.dt_ns);
                    channel_from_steps(frame, &steps, &collapse, pulse.duration_ns)
                })
                .collect();
            let ch = QuantumChannel::average(&channels)?;
            ch.validate_cptp()?;
            Ok(ch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn frame() -> IdleFrame {
        IdleFrame::new(&DeviceParams::default()).unwrap()
    }

    #[test]
    fn pulse_shape_endpoints_and_peak() {
        let p = PulseShape::new(0.3, 30.0).unwrap();
        assert_abs_diff_eq!(p.flux_at(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.flux_at(30.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.flux_at(15.0), 0.3, epsilon = 1e-12);
        let fm = DeviceParams::default().flux_map;
        let q = PulseShape::from_peak_frequency(&fm, 5.0, 30.0).unwrap();
        assert_abs_diff_eq!(q.peak_frequency_ghz(&fm), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn idle_frame_is_orthogonal_and_labels_sane() {
        let f = frame();
        let wtw = f.frame().transpose() * f.frame();
        assert!((wtw - DMatrix::<f64>::identity(10, 10)).norm() < 1e-10);
        assert_eq!(f.labels()[0], BareState::new(0, 0, 0));
        assert_eq!(f.labels()[3], BareState::new(1, 0, 1));
        assert_abs_diff_eq!(f.energies()[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_amplitude_pulse_gives_idle_phases() {
        let f = frame();
        let p = PulseShape::new(0.0, 8.0).unwrap();
        let opts = PropagationOptions {
            dt_ns: 0.01,
            ..Default::default()
        };
        let u = propagate_unitary(&f, &p, &opts).unwrap();
        // diagonal in the dressed basis with phases -2 pi E tau
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!(u.matrix[(i, j)].norm() < 1e-9);
                }
            }
            let expect = Complex64::from_polar(1.0, -TWO_PI * f.energies()[i] * 8.0);
            assert!((u.matrix[(i, i)] - expect).norm() < 1e-7);
        }
        let trace = propagate_computational(&f, &p, &opts).unwrap();
        assert!(trace.leakage_11 < 1e-12);
        // unwrapped conditional phase equals -2 pi chi tau exactly (not mod 2 pi)
        let chi = crate::spectrum::chi12_spectral(f.params(), 6.74).unwrap();
        assert_abs_diff_eq!(
            trace.conditional_phase_rad,
            -TWO_PI * chi * 8.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn propagator_matches_independent_reference() {
        // cross-check against a fixed-step reference computed outside this
        // code path: phase and leakage of a 60 ns, 0.29 Phi0 pulse
        let f = frame();
        let p = PulseShape::new(0.29, 60.0).unwrap();
        let trace = propagate_computational(&f, &p, &PropagationOptions::default()).unwrap();
        assert_abs_diff_eq!(trace.conditional_phase_rad, 2.28086, epsilon = 5e-3);
        assert!(trace.leakage_11 < 2e-4, "leakage = {}", trace.leakage_11);
    }

    #[test]
    fn richardson_error_is_small_and_unitarity_holds() {
        let f = frame();
        let p = PulseShape::new(0.25, 12.0).unwrap();
        let opts = PropagationOptions {
            dt_ns: 0.02,
            richardson: true,
        };
        let u = propagate_unitary(&f, &p, &opts).unwrap();
        assert!(u.step_error.unwrap() < 1e-3, "{:?}", u.step_error);
        let defect =
            (u.matrix.adjoint() * &u.matrix - DMatrix::<Complex64>::identity(10, 10)).norm();
        assert!(defect < 1e-9 * 10.0_f64.sqrt());
    }

    fn uncoupled_frame() -> IdleFrame {
        let mut params = DeviceParams::default();
        params.couplings.g12_ghz = 0.0;
        params.couplings.g1c_ghz = 0.0;
        params.couplings.g2c_ghz = 0.0;
        IdleFrame::new(&params).unwrap()
    }

    #[test]
    fn lindblad_reproduces_analytic_t1_and_tphi() {
        let f = uncoupled_frame();
        let tau = 50.0;
        let p = PulseShape::new(0.0, tau).unwrap();
        let noise = NoiseModel::markovian(
            ModeNoise {
                t1_us: Some(RateTable::constant(0.5)),
                tphi_us: Some(RateTable::constant(0.3)),
            },
            ModeNoise::none(),
            ModeNoise::none(),
        );
        // |+> between dressed |00> and |10> (bare |000>, |100| when uncoupled)
        let mut rho = DMatrix::<Complex64>::zeros(10, 10);
        let half = Complex64::new(0.5, 0.0);
        rho[(0, 0)] = half;
        rho[(0, 2)] = half;
        rho[(2, 0)] = half;
        rho[(2, 2)] = half;
        let opts = PropagationOptions {
            dt_ns: 0.01,
            ..Default::default()
        };
        let out = propagate_lindblad(&f, &p, &noise, &rho, &opts).unwrap();
        let g1 = 1e-3 / 0.5;
        let gphi = 1e-3 / 0.3;
        let pop = (-(g1) * tau).exp() * 0.5;
        assert_abs_diff_eq!(out[(2, 2)].re, pop, epsilon = 1e-6);
        // coherence decays at Gamma1/2 + Gamma_phi (times any unitary phase)
        let coh = 0.5 * (-(g1 / 2.0 + gphi) * tau).exp();
        assert_abs_diff_eq!(out[(0, 2)].norm(), coh, epsilon = 1e-6);
        assert_abs_diff_eq!(out.trace().re, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn unitary_channel_is_cptp_and_matches_conjugation() {
        let f = frame();
        let p = PulseShape::new(0.2, 6.0).unwrap();
        let opts = PropagationOptions {
            dt_ns: 0.02,
            ..Default::default()
        };
        let u = propagate_unitary(&f, &p, &opts).unwrap();
        let ch = QuantumChannel::from_unitary(&u.matrix).unwrap();
        ch.validate_cptp().unwrap();
        let mut rho = DMatrix::<Complex64>::zeros(10, 10);
        rho[(3, 3)] = Complex64::new(0.6, 0.0);
        rho[(1, 1)] = Complex64::new(0.4, 0.0);
        rho[(1, 3)] = Complex64::new(0.2, 0.1);
        rho[(3, 1)] = Complex64::new(0.2, -0.1);
        let direct = &u.matrix * &rho * u.matrix.adjoint();
        let via_channel = ch.apply(&rho).unwrap();
        assert!((direct - via_channel).norm() < 1e-10);
    }

    #[test]
    fn markovian_channel_is_cptp() {
        let f = frame();
        let p = PulseShape::new(0.25, 8.0).unwrap();
        let noise = NoiseModel::markovian(
            ModeNoise {
                t1_us: Some(RateTable::constant(20.0)),
                tphi_us: Some(RateTable::constant(2.0)),
            },
            ModeNoise {
                t1_us: Some(RateTable::constant(25.0)),
                tphi_us: Some(RateTable::constant(3.0)),
            },
            ModeNoise::none(),
        );
        let opts = PropagationOptions {
            dt_ns: 0.04,
            ..Default::default()
        };
        let ch = channel_from_pulse(&f, &p, Some(&noise), 1, &opts).unwrap();
        assert!(ch.trace_preservation_defect() < 1e-8 * 10.0);
        assert!(ch.min_choi_eigenvalue() > -1e-8);
        // strictly less pure than the coherent channel
        let coherent = channel_from_pulse(&f, &p, None, 1, &opts).unwrap();
        let d = 10.0;
        let purity = |c: &QuantumChannel| {
            (c.superoperator().adjoint() * c.superoperator()).trace().re / (d * d)
        };
        assert!(purity(&ch) < purity(&coherent));
    }

    #[test]
    fn quasi_static_channel_is_deterministic_in_seed() {
        let f = frame();
        let p = PulseShape::new(0.2, 4.0).unwrap();
        let noise = NoiseModel {
            q1: ModeNoise {
                t1_us: None,
                tphi_us: Some(RateTable::constant(0.5)),
            },
            q2: ModeNoise {
                t1_us: None,
                tphi_us: Some(RateTable::constant(0.8)),
            },
            coupler: ModeNoise::none(),
            dephasing: DephasingKind::QuasiStaticGaussian,
            quasi_static_samples: 64,
        };
        let opts = PropagationOptions {
            dt_ns: 0.1,
            ..Default::default()
        };
        let a = channel_from_pulse(&f, &p, Some(&noise), 7, &opts).unwrap();
        let b = channel_from_pulse(&f, &p, Some(&noise), 7, &opts).unwrap();
        assert_eq!(a.superoperator(), b.superoperator());
        let c = channel_from_pulse(&f, &p, Some(&noise), 8, &opts).unwrap();
        assert!((a.superoperator() - c.superoperator()).norm() > 0.0);
        a.validate_cptp().unwrap();
    }

    #[test]
    fn rate_table_interpolates_and_clamps() {
        let t = RateTable {
            points: vec![(5.0, 10.0), (6.0, 30.0)],
        };
        assert_abs_diff_eq!(t.time_us_at(4.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.time_us_at(7.0), 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.time_us_at(5.5), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.rate_per_ns_at(5.0), 1e-4, epsilon = 1e-18);
    }

    #[test]
    fn effective_tphi_is_quadrature_average() {
        let t = RateTable {
            points: vec![(5.0, 1.0), (6.0, 2.0)],
        };
        let traj = [5.0, 6.0];
        let expect = (0.5_f64 * (1.0 + 0.25)).powf(-0.5);
        assert_abs_diff_eq!(
            NoiseModel::effective_tphi_us(&t, &traj),
            expect,
            epsilon = 1e-12
        );
    }
}
