//! Two-qubit Clifford randomized benchmarking: exhaustive construction of the
//! 11520-element Clifford group from primitive gates, standard and
//! CZ-interleaved sequence simulation on the dressed subspace, decay fitting
//! and error-rate extraction.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{unvectorize, vectorize, QuantumChannel, SUBSPACE_DIM};
use crate::fit::{fit_decay, DecayFit};
use crate::{Error, Result};

/// Order of the two-qubit Clifford group.
pub const CLIFFORD_ORDER: usize = 11520;
/// Exact mean number of CZ gates per Clifford in this decomposition.
pub const MEAN_CZ_PER_CLIFFORD: f64 = 1.5;

/// Primitive single-qubit rotations of the gate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OneQubitGate {
    X90,
    Xm90,
    X180,
    Y90,
    Ym90,
    Y180,
}

impl OneQubitGate {
    pub fn matrix(self) -> DMatrix<Complex64> {
        let (axis, theta) = match self {
            OneQubitGate::X90 => ('x', std::f64::consts::FRAC_PI_2),
            OneQubitGate::Xm90 => ('x', -std::f64::consts::FRAC_PI_2),
            OneQubitGate::X180 => ('x', std::f64::consts::PI),
            OneQubitGate::Y90 => ('y', std::f64::consts::FRAC_PI_2),
            OneQubitGate::Ym90 => ('y', -std::f64::consts::FRAC_PI_2),
            OneQubitGate::Y180 => ('y', std::f64::consts::PI),
        };
        rotation(axis, theta)
    }

    fn index(self) -> usize {
        match self {
            OneQubitGate::X90 => 0,
            OneQubitGate::Xm90 => 1,
            OneQubitGate::X180 => 2,
            OneQubitGate::Y90 => 3,
            OneQubitGate::Ym90 => 4,
            OneQubitGate::Y180 => 5,
        }
    }
}

const ALL_GATES: [OneQubitGate; 6] = [
    OneQubitGate::X90,
    OneQubitGate::Xm90,
    OneQubitGate::X180,
    OneQubitGate::Y90,
    OneQubitGate::Ym90,
    OneQubitGate::Y180,
];

fn rotation(axis: char, theta: f64) -> DMatrix<Complex64> {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let i = Complex64::new(0.0, 1.0);
    let mut m = DMatrix::zeros(2, 2);
    match axis {
        'x' => {
            m[(0, 0)] = Complex64::new(c, 0.0);
            m[(1, 1)] = Complex64::new(c, 0.0);
            m[(0, 1)] = -i * s;
            m[(1, 0)] = -i * s;
        }
        _ => {
            m[(0, 0)] = Complex64::new(c, 0.0);
            m[(1, 1)] = Complex64::new(c, 0.0);
            m[(0, 1)] = Complex64::new(-s, 0.0);
            m[(1, 0)] = Complex64::new(s, 0.0);
        }
    }
    m
}

/// The 24 single-qubit Cliffords as primitive-gate lists, time ordered.
fn c1_gate_lists() -> Vec<Vec<OneQubitGate>> {
    use OneQubitGate::*;
    vec![
        vec![],
        vec![X180],
        vec![Y180],
        vec![Y180, X180],
        vec![X90, Y90],
        vec![X90, Ym90],
        vec![Xm90, Y90],
        vec![Xm90, Ym90],
        vec![Y90, X90],
        vec![Y90, Xm90],
        vec![Ym90, X90],
        vec![Ym90, Xm90],
        vec![X90],
        vec![Xm90],
        vec![Y90],
        vec![Ym90],
        vec![Xm90, Y90, X90],
        vec![Xm90, Ym90, X90],
        vec![X180, Y90],
        vec![X180, Ym90],
        vec![Y180, X90],
        vec![Y180, Xm90],
        vec![X90, Y90, X90],
        vec![Xm90, Y90, Xm90],
    ]
}

fn sequence_unitary(gates: &[OneQubitGate]) -> DMatrix<Complex64> {
    let mut u = DMatrix::identity(2, 2);
    for g in gates {
        u = g.matrix() * u;
    }
    u
}

/// Phase-canonical fixed-point key of a unitary, for group-element lookup.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CanonKey(Vec<(i64, i64)>);

fn canon_key(u: &DMatrix<Complex64>) -> CanonKey {
    let mut phase = Complex64::new(1.0, 0.0);
    'outer: for i in 0..u.nrows() {
        for j in 0..u.ncols() {
            let z = u[(i, j)];
            if z.norm() > 1e-8 {
                phase = z / z.norm();
                break 'outer;
            }
        }
    }
    let v: Vec<(i64, i64)> = u
        .iter_rows_then_cols()
        .map(|z| {
            let w = z / phase;
            ((w.re * 1e6).round() as i64, (w.im * 1e6).round() as i64)
        })
        .collect();
    CanonKey(v)
}

trait RowsThenCols {
    fn iter_rows_then_cols(&self) -> Box<dyn Iterator<Item = Complex64> + '_>;
}

impl RowsThenCols for DMatrix<Complex64> {
    fn iter_rows_then_cols(&self) -> Box<dyn Iterator<Item = Complex64> + '_> {
        let (r, c) = self.shape();
        Box::new((0..r).flat_map(move |i| (0..c).map(move |j| self[(i, j)])))
    }
}

/// Structural class of a two-qubit Clifford in the CZ decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CliffordClass {
    SingleQubit,
    CnotLike,
    IswapLike,
    SwapLike,
}

/// One Clifford element: class plus the single-qubit Clifford indices entering
/// its decomposition.
#[derive(Debug, Clone, Copy)]
pub struct Clifford {
    pub class: CliffordClass,
    /// Base-layer C1 indices (q1, q2).
    pub a: usize,
    pub b: usize,
    /// Ending-layer S1 indices (CNOT- and iSWAP-like classes).
    pub sa: usize,
    pub sb: usize,
}

/// A primitive operation of a decomposed Clifford, time ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveOp {
    Gate { qubit: usize, gate: OneQubitGate },
    Cz,
}

/// The full two-qubit Clifford group with CZ + single-qubit-Clifford
/// decompositions and a unitary lookup for recovery synthesis.
pub struct CliffordGroup {
    elements: Vec<Clifford>,
    unitaries: Vec<DMatrix<Complex64>>,
    index: HashMap<CanonKey, usize>,
    c1_lists: Vec<Vec<OneQubitGate>>,
    s1: [usize; 3],
}

fn cz4() -> DMatrix<Complex64> {
    let mut u = DMatrix::identity(4, 4);
    u[(3, 3)] = Complex64::new(-1.0, 0.0);
    u
}

impl CliffordGroup {
    /// Build the group exhaustively. Fails if the construction does not
    /// produce exactly `CLIFFORD_ORDER` distinct elements.
    pub fn new() -> Result<Self> {
        let c1_lists = c1_gate_lists();
        let c1: Vec<DMatrix<Complex64>> = c1_lists.iter().map(|g| sequence_unitary(g)).collect();

        // axis-cycling rotation r (r X r^+ = Y, r Y r^+ = Z) and its square
        // give the S1 coset representatives
        let x = rotation('x', std::f64::consts::PI).scale(1.0);
        let y = rotation('y', std::f64::consts::PI).scale(1.0);
        let i = Complex64::new(0.0, 1.0);
        let pauli_x = x.map(|z| z * i);
        let pauli_y = y.map(|z| z * i);
        let mut pauli_z = DMatrix::<Complex64>::identity(2, 2);
        pauli_z[(1, 1)] = Complex64::new(-1.0, 0.0);
        let r = c1
            .iter()
            .position(|u| {
                let ux = u * &pauli_x * u.adjoint();
                let uy = u * &pauli_y * u.adjoint();
                (ux - &pauli_y).norm() < 1e-9 && (uy - &pauli_z).norm() < 1e-9
            })
            .ok_or_else(|| Error::Validation("no axis-cycling C1 element found".into()))?;
        let r2_key = canon_key(&(&c1[r] * &c1[r]));
        let r2 = c1
            .iter()
            .position(|u| canon_key(u) == r2_key)
            .ok_or_else(|| Error::Validation("r^2 not found in C1".into()))?;
        let s1 = [0usize, r, r2];

        let cz = cz4();
        let mid_iswap = OneQubitGate::Y90.matrix().kronecker(&OneQubitGate::Xm90.matrix());
        let swap_core = &cz
            * OneQubitGate::Y90.matrix().kronecker(&OneQubitGate::Ym90.matrix())
            * &cz
            * OneQubitGate::Ym90.matrix().kronecker(&OneQubitGate::Y90.matrix())
            * &cz;

        let mut elements = Vec::with_capacity(CLIFFORD_ORDER);
        let mut unitaries = Vec::with_capacity(CLIFFORD_ORDER);
        let mut index: HashMap<CanonKey, usize> = HashMap::with_capacity(CLIFFORD_ORDER);
        let mut duplicates = 0usize;
        let mut add = |cl: Clifford, u: DMatrix<Complex64>| {
            let key = canon_key(&u);
            if index.contains_key(&key) {
                duplicates += 1;
            } else {
                index.insert(key, elements.len());
                elements.push(cl);
                unitaries.push(u);
            }
        };
        for a in 0..24 {
            for b in 0..24 {
                let base = c1[a].kronecker(&c1[b]);
                add(
                    Clifford {
                        class: CliffordClass::SingleQubit,
                        a,
                        b,
                        sa: 0,
                        sb: 0,
                    },
                    base.clone(),
                );
                for &sa in &s1 {
                    for &sb in &s1 {
                        let ending = c1[sa].kronecker(&c1[sb]);
                        add(
                            Clifford {
                                class: CliffordClass::CnotLike,
                                a,
                                b,
                                sa,
                                sb,
                            },
                            &ending * &cz * &base,
                        );
                        add(
                            Clifford {
                                class: CliffordClass::IswapLike,
                                a,
                                b,
                                sa,
                                sb,
                            },
                            &ending * &cz * &mid_iswap * &cz * &base,
                        );
                    }
                }
                add(
                    Clifford {
                        class: CliffordClass::SwapLike,
                        a,
                        b,
                        sa: 0,
                        sb: 0,
                    },
                    &swap_core * &base,
                );
            }
        }
        if elements.len() != CLIFFORD_ORDER || duplicates != 0 {
            return Err(Error::Validation(format!(
                "clifford construction produced {} elements with {} duplicates, expected {CLIFFORD_ORDER} and 0",
                elements.len(),
                duplicates
            )));
        }
        Ok(CliffordGroup {
            elements,
            unitaries,
            index,
            c1_lists,
            s1,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, i: usize) -> &Clifford {
        &self.elements[i]
    }

    /// Computational-basis 4 x 4 unitary of element `i` (up to global phase).
    pub fn unitary(&self, i: usize) -> &DMatrix<Complex64> {
        &self.unitaries[i]
    }

    /// S1 coset-representative indices into the C1 table.
    pub fn s1_indices(&self) -> [usize; 3] {
        self.s1
    }

    /// Time-ordered primitive decomposition of element `i`.
    pub fn primitive_ops(&self, i: usize) -> Vec<PrimitiveOp> {
        use OneQubitGate::*;
        let e = &self.elements[i];
        let mut ops = Vec::new();
        let layer = |ops: &mut Vec<PrimitiveOp>, ga: usize, gb: usize| {
            for &g in &self.c1_lists[ga] {
                ops.push(PrimitiveOp::Gate { qubit: 0, gate: g });
            }
            for &g in &self.c1_lists[gb] {
                ops.push(PrimitiveOp::Gate { qubit: 1, gate: g });
            }
        };
        layer(&mut ops, e.a, e.b);
        match e.class {
            CliffordClass::SingleQubit => {}
            CliffordClass::CnotLike => {
                ops.push(PrimitiveOp::Cz);
                layer(&mut ops, e.sa, e.sb);
            }
            CliffordClass::IswapLike => {
                ops.push(PrimitiveOp::Cz);
                ops.push(PrimitiveOp::Gate { qubit: 0, gate: Y90 });
                ops.push(PrimitiveOp::Gate { qubit: 1, gate: Xm90 });
                ops.push(PrimitiveOp::Cz);
                layer(&mut ops, e.sa, e.sb);
            }
            CliffordClass::SwapLike => {
                ops.push(PrimitiveOp::Cz);
                ops.push(PrimitiveOp::Gate { qubit: 0, gate: Ym90 });
                ops.push(PrimitiveOp::Gate { qubit: 1, gate: Y90 });
                ops.push(PrimitiveOp::Cz);
                ops.push(PrimitiveOp::Gate { qubit: 0, gate: Y90 });
                ops.push(PrimitiveOp::Gate { qubit: 1, gate: Ym90 });
                ops.push(PrimitiveOp::Cz);
            }
        }
        ops
    }

    /// CZ count of element `i`.
    pub fn cz_count(&self, i: usize) -> usize {
        match self.elements[i].class {
            CliffordClass::SingleQubit => 0,
            CliffordClass::CnotLike => 1,
            CliffordClass::IswapLike => 2,
            CliffordClass::SwapLike => 3,
        }
    }

    /// Single-qubit gate count of element `i`.
    pub fn one_qubit_count(&self, i: usize) -> usize {
        self.primitive_ops(i)
            .iter()
            .filter(|op| matches!(op, PrimitiveOp::Gate { .. }))
            .count()
    }

    pub fn mean_cz_count(&self) -> f64 {
        (0..self.len()).map(|i| self.cz_count(i)).sum::<usize>() as f64 / self.len() as f64
    }

    pub fn mean_one_qubit_count(&self) -> f64 {
        (0..self.len()).map(|i| self.one_qubit_count(i)).sum::<usize>() as f64 / self.len() as f64
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut c = [0usize; 4];
        for e in &self.elements {
            c[match e.class {
                CliffordClass::SingleQubit => 0,
                CliffordClass::CnotLike => 1,
                CliffordClass::IswapLike => 2,
                CliffordClass::SwapLike => 3,
            }] += 1;
        }
        c
    }

    /// Index of the group element equal (up to phase) to `u`.
    pub fn find(&self, u: &DMatrix<Complex64>) -> Result<usize> {
        self.index.get(&canon_key(u)).copied().ok_or_else(|| {
            Error::Validation("unitary is not a two-qubit Clifford".into())
        })
    }

    /// Index of the inverse of the accumulated unitary `u`.
    pub fn find_inverse(&self, u: &DMatrix<Complex64>) -> Result<usize> {
        self.find(&u.adjoint())
    }
}

/// Supplies the physical action of primitive gates on the subspace density
/// matrix during sequence simulation.
pub trait ChannelProvider: Sync {
    fn apply_one_qubit(
        &self,
        rho: &mut DMatrix<Complex64>,
        qubit: usize,
        gate: OneQubitGate,
    ) -> Result<()>;
    fn apply_cz(&self, rho: &mut DMatrix<Complex64>) -> Result<()>;
}

/// Embed a 4x4 computational-subspace unitary into the 10-dim dressed
/// subspace, acting trivially on leakage states.
pub fn embed_two_qubit(u4: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut u = DMatrix::identity(SUBSPACE_DIM, SUBSPACE_DIM);
    for i in 0..4 {
        for j in 0..4 {
            u[(i, j)] = u4[(i, j)];
        }
    }
    u
}

/// Gate set with an arbitrary CZ channel, ideal single-qubit unitaries (acting
/// trivially on leakage states) and optional per-gate single-qubit
/// depolarizing noise.
pub struct GateSet {
    cz: QuantumChannel,
    /// Depolarizing probability applied after every single-qubit gate
    /// (average gate error r_1q = p/2).
    pub one_qubit_depolarizing: f64,
    gate_unitaries: Vec<DMatrix<Complex64>>,
    paulis: Vec<Vec<DMatrix<Complex64>>>,
}

impl GateSet {
    pub fn new(cz: QuantumChannel, one_qubit_depolarizing: f64) -> Result<Self> {
        if cz.dim() != SUBSPACE_DIM {
            return Err(Error::InvalidDimension(format!(
                "gate set expects a {SUBSPACE_DIM}-state CZ channel"
            )));
        }
        if !(0.0..=1.0).contains(&one_qubit_depolarizing) {
            return Err(Error::Validation(
                "depolarizing probability must lie in [0, 1]".into(),
            ));
        }
        let id2 = DMatrix::<Complex64>::identity(2, 2);
        let mut gate_unitaries = Vec::with_capacity(12);
        for qubit in 0..2 {
            for g in ALL_GATES {
                let u4 = if qubit == 0 {
                    g.matrix().kronecker(&id2)
                } else {
                    id2.kronecker(&g.matrix())
                };
                gate_unitaries.push(embed_two_qubit(&u4));
            }
        }
        let i = Complex64::new(0.0, 1.0);
        let px = rotation('x', std::f64::consts::PI).map(|z| z * i);
        let py = rotation('y', std::f64::consts::PI).map(|z| z * i);
        let mut pz = DMatrix::<Complex64>::identity(2, 2);
        pz[(1, 1)] = Complex64::new(-1.0, 0.0);
        let paulis = (0..2)
            .map(|qubit| {
                [&px, &py, &pz]
                    .iter()
                    .map(|p| {
                        let u4 = if qubit == 0 {
                            (*p).kronecker(&id2)
                        } else {
                            id2.kronecker(p)
                        };
                        embed_two_qubit(&u4)
                    })
                    .collect()
            })
            .collect();
        Ok(GateSet {
            cz,
            one_qubit_depolarizing,
            gate_unitaries,
            paulis,
        })
    }

    /// Ideal gate set (perfect CZ, perfect single-qubit gates).
    pub fn ideal() -> Result<Self> {
        let cz = QuantumChannel::from_unitary(&embed_two_qubit(&cz4()))?;
        GateSet::new(cz, 0.0)
    }

    pub fn cz_channel(&self) -> &QuantumChannel {
        &self.cz
    }
}

impl ChannelProvider for GateSet {
    fn apply_one_qubit(
        &self,
        rho: &mut DMatrix<Complex64>,
        qubit: usize,
        gate: OneQubitGate,
    ) -> Result<()> {
        if qubit > 1 {
            return Err(Error::Validation(format!("no qubit {qubit}")));
        }
        let u = &self.gate_unitaries[qubit * 6 + gate.index()];
        *rho = u * &*rho * u.adjoint();
        let p = self.one_qubit_depolarizing;
        if p > 0.0 {
            let mut mixed = rho.scale(1.0 - 0.75 * p);
            for pauli in &self.paulis[qubit] {
                mixed += (pauli * &*rho * pauli.adjoint()).scale(0.25 * p);
            }
            *rho = mixed;
        }
        Ok(())
    }

    fn apply_cz(&self, rho: &mut DMatrix<Complex64>) -> Result<()> {
        let v = self.cz.apply_vec(&vectorize(rho));
        *rho = unvectorize(&v, SUBSPACE_DIM);
        Ok(())
    }
}

/// Sequence-length schedule and sampling settings of an RB run.
#[derive(Debug, Clone, Serialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    pub seed: u64,
    /// Interleave the provider's CZ after every random Clifford.
    pub interleave_cz: bool,
}

/// Survival statistics at one sequence length.
#[derive(Debug, Clone, Serialize)]
pub struct RbPoint {
    pub length: usize,
    pub survivals: Vec<f64>,
    pub mean: f64,
    pub std_err: f64,
}

impl RbPoint {
    /// Point with mean and standard error of the mean derived from the
    /// survivals.
    pub fn from_survivals(length: usize, survivals: Vec<f64>) -> Self {
        let n = survivals.len() as f64;
        let mean = survivals.iter().sum::<f64>() / n.max(1.0);
        let std_err = if survivals.len() > 1 {
            let var = survivals.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        RbPoint {
            length,
            survivals,
            mean,
            std_err,
        }
    }
}

fn sequence_survival(
    group: &CliffordGroup,
    gates: &impl ChannelProvider,
    m: usize,
    interleave: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut rho = DMatrix::<Complex64>::zeros(SUBSPACE_DIM, SUBSPACE_DIM);
    rho[(0, 0)] = Complex64::new(1.0, 0.0);
    let mut acc = DMatrix::<Complex64>::identity(4, 4);
    let cz = cz4();
    for _ in 0..m {
        let idx = rng.gen_range(0..group.len());
        for op in group.primitive_ops(idx) {
            match op {
                PrimitiveOp::Gate { qubit, gate } => gates.apply_one_qubit(&mut rho, qubit, gate)?,
                PrimitiveOp::Cz => gates.apply_cz(&mut rho)?,
            }
        }
        acc = group.unitary(idx) * acc;
        if interleave {
            gates.apply_cz(&mut rho)?;
            acc = &cz * acc;
        }
    }
    let rec = group.find_inverse(&acc)?;
    for op in group.primitive_ops(rec) {
        match op {
            PrimitiveOp::Gate { qubit, gate } => gates.apply_one_qubit(&mut rho, qubit, gate)?,
            PrimitiveOp::Cz => gates.apply_cz(&mut rho)?,
        }
    }
    Ok(rho[(0, 0)].re)
}

/// Run randomized benchmarking. The RNG stream of every sequence is derived
/// from (seed, length index, sequence index), so results are deterministic and
/// the reference and interleaved runs of the same seed share their random
/// Clifford draws.
pub fn run_rb(
    group: &CliffordGroup,
    gates: &impl ChannelProvider,
    cfg: &RbConfig,
) -> Result<Vec<RbPoint>> {
    if cfg.lengths.is_empty() || cfg.sequences_per_length == 0 {
        return Err(Error::Validation("empty RB schedule".into()));
    }
    let tasks: Vec<(usize, usize)> = cfg
        .lengths
        .iter()
        .enumerate()
        .flat_map(|(li, _)| (0..cfg.sequences_per_length).map(move |si| (li, si)))
        .collect();
    let survivals: Result<Vec<((usize, usize), f64)>> = tasks
        .par_iter()
        .map(|&(li, si)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((li as u64) << 32) | si as u64);
            let s = sequence_survival(group, gates, cfg.lengths[li], cfg.interleave_cz, &mut rng)?;
            Ok(((li, si), s))
        })
        .collect();
    let survivals = survivals?;
    let mut points: Vec<RbPoint> = cfg
        .lengths
        .iter()
        .map(|&m| RbPoint {
            length: m,
            survivals: Vec::new(),
            mean: 0.0,
            std_err: 0.0,
        })
        .collect();
    for ((li, _), s) in survivals {
        points[li].survivals.push(s);
    }
    let points = points
        .into_iter()
        .map(|p| RbPoint::from_survivals(p.length, p.survivals))
        .collect();
    Ok(points)
}

/// Fitted RB decay and the derived average error per Clifford.
#[derive(Debug, Clone, Serialize)]
pub struct RbFit {
    pub a: f64,
    pub p: f64,
    pub b: f64,
    /// r = (3/4)(1 - p).
    pub error_per_clifford: f64,
    pub residual_rms: f64,
}

/// Fit F = A p^m + B to RB points, weighting by inverse standard errors when
/// they are all resolved.
pub fn fit_rb(points: &[RbPoint]) -> Result<RbFit> {
    let m: Vec<f64> = points.iter().map(|p| p.length as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let use_weights = points.iter().all(|p| p.std_err > 1e-9);
    let w: Vec<f64> = points.iter().map(|p| 1.0 / p.std_err.max(1e-9)).collect();
    let fit: DecayFit = fit_decay(&m, &y, if use_weights { Some(&w) } else { None })?;
    Ok(RbFit {
        a: fit.a,
        p: fit.p,
        b: fit.b,
        error_per_clifford: clifford_error_from_decay(fit.p),
        residual_rms: fit.residual_rms,
    })
}

/// Average error per Clifford from the depolarizing decay constant.
pub fn clifford_error_from_decay(p: f64) -> f64 {
    0.75 * (1.0 - p)
}

/// Interleaved-RB gate error r = (3/4)(1 - p_int/p_ref).
pub fn interleaved_gate_error(p_ref: f64, p_int: f64) -> f64 {
    0.75 * (1.0 - p_int / p_ref)
}

/// CZ error implied by a reference-RB error and a known single-qubit gate
/// error, using r_ref = 1.5 r_cz + 8.25 r_1q.
pub fn cz_error_from_reference(r_ref: f64, r_1q: f64) -> f64 {
    (r_ref - 8.25 * r_1q) / 1.5
}

/// Reference-RB error predicted from per-gate errors (the consistency check
/// on the interleaved result).
pub fn reference_error_prediction(r_cz: f64, r_1q: f64) -> f64 {
    1.5 * r_cz + 8.25 * r_1q
}

/// Interleaved-RB analysis summary.
#[derive(Debug, Clone, Serialize)]
pub struct InterleavedAnalysis {
    pub p_ref: f64,
    pub p_int: f64,
    pub r_ref: f64,
    pub r_cz: f64,
    pub cz_fidelity: f64,
}

pub fn analyze_interleaved(reference: &RbFit, interleaved: &RbFit) -> InterleavedAnalysis {
    let r_cz = interleaved_gate_error(reference.p, interleaved.p);
    InterleavedAnalysis {
        p_ref: reference.p,
        p_int: interleaved.p,
        r_ref: reference.error_per_clifford,
        r_cz,
        cz_fidelity: 1.0 - r_cz,
    }
}

/// Bootstrap the CZ-fidelity uncertainty by resampling sequences (with
/// replacement) within every length of both runs and refitting.
pub fn bootstrap_cz_uncertainty(
    reference: &[RbPoint],
    interleaved: &[RbPoint],
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    if resamples < 2 {
        return Err(Error::Validation("need at least 2 bootstrap resamples".into()));
    }
    let resample = |points: &[RbPoint], rng: &mut ChaCha8Rng| -> Vec<RbPoint> {
        points
            .iter()
            .map(|p| {
                let n = p.survivals.len();
                let draws: Vec<f64> = (0..n)
                    .map(|_| p.survivals[rng.gen_range(0..n)])
                    .collect();
                let mean = draws.iter().sum::<f64>() / n as f64;
                let std_err = if n > 1 {
                    (draws.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
                        / (n as f64 - 1.0)
                        / n as f64)
                        .sqrt()
                } else {
                    0.0
                };
                RbPoint {
                    length: p.length,
                    survivals: draws,
                    mean,
                    std_err,
                }
            })
            .collect()
    };
    let mut fidelities = Vec::with_capacity(resamples);
    for k in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let rf = fit_rb(&resample(reference, &mut rng));
        let intf = fit_rb(&resample(interleaved, &mut rng));
        if let (Ok(rf), Ok(intf)) = (rf, intf) {
            fidelities.push(analyze_interleaved(&rf, &intf).cz_fidelity);
        }
    }
    if fidelities.len() < 2 {
        return Err(Error::Fit("too few successful bootstrap refits".into()));
    }
    let n = fidelities.len() as f64;
    let mean = fidelities.iter().sum::<f64>() / n;
    Ok((fidelities.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}
