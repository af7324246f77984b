//! Exact many-body oracle for small lattices: a particle-number-truncated
//! fermionic Fock space tensored with the ancilla qubits `A_1..A_M`,
//! `B_1..B_M`, the encoder and decoder unitaries, the full signal schedule,
//! reduced qubit states, average fidelity and the t–J interaction checks.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Result, WireError};
use crate::lattice::{build_hopping, diagonalize, propagate, Lattice, SingleParticleState, Spectrum};
use crate::protocol::ProtocolPlan;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Amplitude lost from a gate before the truncation is declared violated.
pub const LEAKAGE_TOLERANCE: f64 = 1e-10;

/// Occupation basis with at most `max_particles` fermions. Site `j` is bit
/// `j−1`; states are ordered by particle number, then lexicographically on
/// the occupation string `n_1 n_2 … n_N`, so the vacuum is index 0 and each
/// particle-number sector is a contiguous block.
#[derive(Debug, Clone, PartialEq)]
pub struct FockBasis {
    n_sites: usize,
    max_particles: usize,
    states: Vec<u64>,
    index: HashMap<u64, usize>,
    sectors: Vec<Range<usize>>,
}

impl FockBasis {
    pub fn new(n_sites: usize, max_particles: usize) -> Result<Self> {
        if n_sites == 0 || n_sites > 62 {
            return invalid(format!("unsupported number of sites {n_sites}"));
        }
        if max_particles > n_sites {
            return invalid(format!("{max_particles} particles do not fit on {n_sites} sites"));
        }
        let mut states = Vec::new();
        let mut sectors = Vec::new();
        for p in 0..=max_particles {
            let start = states.len();
            let mut sector = Vec::new();
            subsets(n_sites, p, 0, 0, &mut sector);
            // lexicographic on n_1 n_2 … n_N: site 1 is the most significant
            sector.sort_by_key(|&s| s.reverse_bits() >> (64 - n_sites));
            states.extend(sector);
            sectors.push(start..states.len());
        }
        let index = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        Ok(Self { n_sites, max_particles, states, index, sectors })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn max_particles(&self) -> usize {
        self.max_particles
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Occupation bitmask of basis state `i`.
    pub fn state(&self, i: usize) -> u64 {
        self.states[i]
    }

    pub fn index_of(&self, occupation: u64) -> Option<usize> {
        self.index.get(&occupation).copied()
    }

    pub fn particle_number(&self, i: usize) -> usize {
        self.states[i].count_ones() as usize
    }

    /// Index range of the `p`-particle sector.
    pub fn sector(&self, p: usize) -> Range<usize> {
        self.sectors[p].clone()
    }
}

fn subsets(n: usize, remaining: usize, from: usize, mask: u64, out: &mut Vec<u64>) {
    if remaining == 0 {
        out.push(mask);
        return;
    }
    for site in from..=n - remaining {
        subsets(n, remaining - 1, site + 1, mask | 1 << site, out);
    }
}

/// Sign `(−1)^{#occupied sites before bit}` of moving an operator on `bit`
/// through the creation string.
fn string_sign(occupation: u64, bit: usize) -> f64 {
    if (occupation & ((1u64 << bit) - 1)).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `Σ_j c_j a_j` on the truncated basis.
pub fn mode_annihilator(coeffs: &[Complex64], basis: &FockBasis) -> Result<CsrMatrix<Complex64>> {
    if coeffs.len() != basis.n_sites() {
        return Err(WireError::LengthMismatch { expected: basis.n_sites(), found: coeffs.len() });
    }
    let dim = basis.dim();
    let mut coo = CooMatrix::new(dim, dim);
    for col in 0..dim {
        let s = basis.state(col);
        for (bit, &c) in coeffs.iter().enumerate() {
            if c == ZERO || s & (1 << bit) == 0 {
                continue;
            }
            let row = basis.index_of(s ^ (1 << bit)).expect("removing a particle stays in the basis");
            coo.push(row, col, c * string_sign(s, bit));
        }
    }
    Ok(CsrMatrix::from(&coo))
}

/// Annihilator of the mode whose one-particle state `g†|Ω⟩` is `state`.
pub fn mode_of(state: &SingleParticleState, basis: &FockBasis) -> Result<CsrMatrix<Complex64>> {
    let coeffs: Vec<Complex64> = state.amplitudes().iter().map(|a| a.conj()).collect();
    mode_annihilator(&coeffs, basis)
}

pub fn adjoint(op: &CsrMatrix<Complex64>) -> CsrMatrix<Complex64> {
    let mut t = op.transpose();
    for v in t.values_mut() {
        *v = v.conj();
    }
    t
}

/// `y += op·x`.
fn spmv_add(op: &CsrMatrix<Complex64>, x: &[Complex64], y: &mut [Complex64]) {
    for (row, out) in op.row_iter().zip(y.iter_mut()) {
        for (&col, &v) in row.col_indices().iter().zip(row.values()) {
            *out += v * x[col];
        }
    }
}

fn spmv(op: &CsrMatrix<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![ZERO; op.nrows()];
    spmv_add(op, x, &mut y);
    y
}

/// Ancilla qubit, 1-based within its register bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Register {
    Alice(usize),
    Bob(usize),
}

impl Register {
    /// Bit of the ancilla configuration holding this qubit, given `M`
    /// signals: `A_α` at `α−1`, `B_β` at `M+β−1`.
    pub fn bit(self, m_signals: usize) -> Result<usize> {
        let (i, offset) = match self {
            Register::Alice(i) => (i, 0),
            Register::Bob(i) => (i, m_signals),
        };
        if i == 0 || i > m_signals {
            return invalid(format!("{self:?} outside 1..={m_signals}"));
        }
        Ok(offset + i - 1)
    }
}

/// Amplitudes over ancilla configurations × Fock basis, stored as
/// `config·fock_dim + fock_index`. Configuration bits follow
/// [`Register::bit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    fock_dim: usize,
    m_signals: usize,
    amplitudes: Vec<Complex64>,
}

impl FockVector {
    /// Fock-only vector with no ancillas.
    pub fn from_fock(amplitudes: Vec<Complex64>) -> Self {
        Self { fock_dim: amplitudes.len(), m_signals: 0, amplitudes }
    }

    pub fn from_parts(fock_dim: usize, m_signals: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        let expected = fock_dim << (2 * m_signals);
        if amplitudes.len() != expected {
            return Err(WireError::LengthMismatch { expected, found: amplitudes.len() });
        }
        Ok(Self { fock_dim, m_signals, amplitudes })
    }

    /// `a†(φ_1)⋯a†(φ_k)|Ω⟩` with no ancillas.
    pub fn from_modes(basis: &FockBasis, modes: &[SingleParticleState]) -> Result<Self> {
        if modes.len() > basis.max_particles() {
            return invalid(format!("{} particles exceed the truncation {}", modes.len(), basis.max_particles()));
        }
        let mut v = vec![ZERO; basis.dim()];
        v[0] = ONE;
        for mode in modes.iter().rev() {
            v = spmv(&adjoint(&mode_of(mode, basis)?), &v);
        }
        Ok(Self::from_fock(v))
    }

    /// `|ψ_1⟩_{A_1}⋯|ψ_M⟩_{A_M}|Ω⟩|0⟩_B`.
    pub fn initial(fock_dim: usize, messages: &[Qubit]) -> Self {
        let m = messages.len();
        let mut amplitudes = vec![ZERO; fock_dim << (2 * m)];
        for config in 0..1usize << m {
            let amp = messages
                .iter()
                .enumerate()
                .map(|(a, q)| if config >> a & 1 == 1 { q.d } else { q.c })
                .product();
            amplitudes[config * fock_dim] = amp;
        }
        Self { fock_dim, m_signals: m, amplitudes }
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn m_signals(&self) -> usize {
        self.m_signals
    }

    pub fn n_configs(&self) -> usize {
        1 << (2 * self.m_signals)
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Fock amplitudes for one ancilla configuration.
    pub fn slice(&self, config: usize) -> &[Complex64] {
        &self.amplitudes[config * self.fock_dim..(config + 1) * self.fock_dim]
    }

    fn slice_mut(&mut self, config: usize) -> &mut [Complex64] {
        &mut self.amplitudes[config * self.fock_dim..(config + 1) * self.fock_dim]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &FockVector) -> Result<Complex64> {
        self.check_shape(other)?;
        Ok(self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum())
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &FockVector) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }

    fn check_shape(&self, other: &FockVector) -> Result<()> {
        if self.fock_dim != other.fock_dim || self.m_signals != other.m_signals {
            return Err(WireError::LengthMismatch { expected: self.amplitudes.len(), found: other.amplitudes.len() });
        }
        Ok(())
    }

    fn require_normalized(&self) -> Result<()> {
        let norm_sqr = self.norm_sqr();
        if (norm_sqr - 1.0).abs() > 1e-10 {
            return Err(WireError::NotNormalized { norm_sqr });
        }
        Ok(())
    }

    /// Phase `−1` on configurations with both bits set.
    pub fn apply_cz(&mut self, a: Register, b: Register) -> Result<()> {
        let (ba, bb) = (a.bit(self.m_signals)?, b.bit(self.m_signals)?);
        for config in 0..self.n_configs() {
            if config >> ba & 1 == 1 && config >> bb & 1 == 1 {
                for x in self.slice_mut(config) {
                    *x = -*x;
                }
            }
        }
        Ok(())
    }
}

/// Qubit pure state `c|0⟩ + d|1⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qubit {
    pub c: Complex64,
    pub d: Complex64,
}

impl Qubit {
    pub fn new(c: Complex64, d: Complex64) -> Result<Self> {
        let norm_sqr = c.norm_sqr() + d.norm_sqr();
        if (norm_sqr - 1.0).abs() > 1e-10 {
            return Err(WireError::NotNormalized { norm_sqr });
        }
        Ok(Self { c, d })
    }

    pub fn zero() -> Self {
        Self { c: ONE, d: ZERO }
    }

    pub fn one() -> Self {
        Self { c: ZERO, d: ONE }
    }
}

/// The six Pauli-axis states, a spherical 2-design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AxisState {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
    PlusZ,
    MinusZ,
}

impl AxisState {
    pub const ALL: [AxisState; 6] = [
        AxisState::PlusX,
        AxisState::MinusX,
        AxisState::PlusY,
        AxisState::MinusY,
        AxisState::PlusZ,
        AxisState::MinusZ,
    ];

    pub fn qubit(self) -> Qubit {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (c, d) = match self {
            AxisState::PlusX => (Complex64::new(h, 0.0), Complex64::new(h, 0.0)),
            AxisState::MinusX => (Complex64::new(h, 0.0), Complex64::new(-h, 0.0)),
            AxisState::PlusY => (Complex64::new(h, 0.0), Complex64::new(0.0, h)),
            AxisState::MinusY => (Complex64::new(h, 0.0), Complex64::new(0.0, -h)),
            AxisState::PlusZ => (ONE, ZERO),
            AxisState::MinusZ => (ZERO, ONE),
        };
        Qubit { c, d }
    }
}

/// Single-qubit density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    rho: Matrix2<Complex64>,
}

impl QubitState {
    pub fn new(rho: Matrix2<Complex64>) -> Result<Self> {
        let herm = (rho - rho.adjoint()).norm();
        let trace = rho.trace();
        if herm > 1e-10 || (trace.re - 1.0).abs() > 1e-10 || trace.im.abs() > 1e-10 {
            return invalid(format!("not a unit-trace Hermitian matrix (trace {trace}, asymmetry {herm:.2e})"));
        }
        let state = Self { rho };
        let low = state.eigenvalues()[0];
        if low < -1e-10 {
            return invalid(format!("negative eigenvalue {low:.3e}"));
        }
        Ok(state)
    }

    pub fn pure(q: &Qubit) -> Self {
        let v = [q.c, q.d];
        Self { rho: Matrix2::from_fn(|i, j| v[i] * v[j].conj()) }
    }

    pub fn rho(&self) -> &Matrix2<Complex64> {
        &self.rho
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.rho[(0, 0)].re;
        let d = self.rho[(1, 1)].re;
        let b = self.rho[(0, 1)].norm();
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mean - r, mean + r]
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn fidelity_with(&self, q: &Qubit) -> f64 {
        let v = [q.c, q.d];
        let mut f = ZERO;
        for i in 0..2 {
            for j in 0..2 {
                f += v[i].conj() * self.rho[(i, j)] * v[j];
            }
        }
        f.re
    }
}

/// Reduced density matrix of one ancilla.
pub fn reduced_qubit(state: &FockVector, register: Register) -> Result<QubitState> {
    state.require_normalized()?;
    let bit = register.bit(state.m_signals())?;
    let mut rho = Matrix2::<Complex64>::zeros();
    for config in 0..state.n_configs() {
        if config >> bit & 1 == 1 {
            continue;
        }
        let (s0, s1) = (state.slice(config), state.slice(config | 1 << bit));
        for (x, y) in s0.iter().zip(s1) {
            rho[(0, 0)] += Complex64::from(x.norm_sqr());
            rho[(1, 1)] += Complex64::from(y.norm_sqr());
            rho[(0, 1)] += x * y.conj();
        }
    }
    rho[(1, 0)] = rho[(0, 1)].conj();
    QubitState::new(rho)
}

/// `(1/6)Σ⟨ψ_i|ρ_i|ψ_i⟩` over the six axis states.
pub fn average_fidelity(outputs: &BTreeMap<AxisState, QubitState>) -> Result<f64> {
    let mut total = 0.0;
    for axis in AxisState::ALL {
        let rho = outputs.get(&axis).ok_or_else(|| WireError::InvalidArgument(format!("missing output for {axis:?}")))?;
        total += rho.fidelity_with(&axis.qubit());
    }
    Ok(total / 6.0)
}

/// Encoder or decoder `𝕀 − σ⁺σ⁻gg† − σ⁻σ⁺g†g + σ⁺g + σ⁻g†` on one ancilla,
/// with `σ⁺ = |1⟩⟨0|`.
#[derive(Debug, Clone)]
pub struct ModeSwap {
    register: Register,
    annihilator: CsrMatrix<Complex64>,
    creator: CsrMatrix<Complex64>,
    max_particles: usize,
    top_start: usize,
}

pub fn build_encoder(alpha: usize, mode: &SingleParticleState, basis: &FockBasis) -> Result<ModeSwap> {
    ModeSwap::new(Register::Alice(alpha), mode, basis)
}

pub fn build_decoder(beta: usize, mode: &SingleParticleState, basis: &FockBasis) -> Result<ModeSwap> {
    ModeSwap::new(Register::Bob(beta), mode, basis)
}

impl ModeSwap {
    pub fn new(register: Register, mode: &SingleParticleState, basis: &FockBasis) -> Result<Self> {
        let norm_sqr = mode.norm_sqr();
        if (norm_sqr - 1.0).abs() > 1e-10 {
            return Err(WireError::Construction(format!(
                "mode norm^2 {norm_sqr:.3e} breaks {{g, g†}} = 1"
            )));
        }
        let annihilator = mode_of(mode, basis)?;
        let creator = adjoint(&annihilator);
        Ok(Self {
            register,
            annihilator,
            creator,
            max_particles: basis.max_particles(),
            top_start: basis.sector(basis.max_particles()).start,
        })
    }

    pub fn register(&self) -> Register {
        self.register
    }

    pub fn annihilator(&self) -> &CsrMatrix<Complex64> {
        &self.annihilator
    }

    pub fn creator(&self) -> &CsrMatrix<Complex64> {
        &self.creator
    }

    /// Applies the gate, failing if amplitude is pushed past the particle
    /// truncation.
    pub fn apply(&self, state: &mut FockVector) -> Result<()> {
        let leaked = self.leakage(state)?;
        if leaked > LEAKAGE_TOLERANCE {
            return Err(WireError::Truncation { leaked, m_max: self.max_particles });
        }
        self.apply_unchecked(state)
    }

    /// Norm of `g†w` beyond the truncation, where `w` ranges over the raised
    /// ancilla branches in the top particle sector: `‖w‖² − ‖gw‖²`.
    fn leakage(&self, state: &FockVector) -> Result<f64> {
        let bit = self.register.bit(state.m_signals())?;
        let top = self.top_sector_start();
        let mut total = 0.0;
        for config in (0..state.n_configs()).filter(|c| c >> bit & 1 == 1) {
            let mut w = state.slice(config).to_vec();
            w[..top].fill(ZERO);
            let kept: f64 = spmv(&self.annihilator, &w).iter().map(|a| a.norm_sqr()).sum();
            let full: f64 = w.iter().map(|a| a.norm_sqr()).sum();
            total += (full - kept).max(0.0);
        }
        Ok(total.sqrt())
    }

    fn top_sector_start(&self) -> usize {
        self.top_start
    }

    pub(crate) fn apply_unchecked(&self, state: &mut FockVector) -> Result<()> {
        let bit = self.register.bit(state.m_signals())?;
        for config in 0..state.n_configs() {
            if config >> bit & 1 == 1 {
                continue;
            }
            let u = state.slice(config).to_vec();
            let w = state.slice(config | 1 << bit).to_vec();
            let gu = spmv(&self.annihilator, &u);
            let gdw = spmv(&self.creator, &w);
            // |0⟩: u − g†g u + g† w
            let mut u_new = u.clone();
            let gdgu = spmv(&self.creator, &gu);
            for ((x, a), b) in u_new.iter_mut().zip(&gdgu).zip(&gdw) {
                *x += b - a;
            }
            // |1⟩: w − g g† w + g u
            let mut w_new = w;
            let ggdw = spmv(&self.annihilator, &gdw);
            for ((x, a), b) in w_new.iter_mut().zip(&ggdw).zip(&gu) {
                *x += b - a;
            }
            state.slice_mut(config).copy_from_slice(&u_new);
            state.slice_mut(config | 1 << bit).copy_from_slice(&w_new);
        }
        Ok(())
    }

    /// Dense matrix over ancilla configurations × Fock basis for `m_signals`
    /// signals.
    pub fn matrix(&self, m_signals: usize) -> Result<DMatrix<Complex64>> {
        let fock_dim = self.annihilator.nrows();
        let dim = fock_dim << (2 * m_signals);
        let mut out = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut e = vec![ZERO; dim];
            e[col] = ONE;
            let mut v = FockVector::from_parts(fock_dim, m_signals, e)?;
            self.apply_unchecked(&mut v)?;
            out.set_column(col, &nalgebra::DVector::from_vec(v.amplitudes));
        }
        Ok(out)
    }
}

/// Indices of product-space states with at most `max` total excitations
/// (fermions plus raised ancillas).
pub fn excitation_subspace(basis: &FockBasis, m_signals: usize, max: usize) -> Vec<usize> {
    let fock_dim = basis.dim();
    (0..fock_dim << (2 * m_signals))
        .filter(|&i| (i / fock_dim).count_ones() as usize + basis.particle_number(i % fock_dim) <= max)
        .collect()
}

/// `‖P(U†U − 𝕀)P‖_F` on the subspace with at most `m_max` excitations, where
/// the truncation is exact.
pub fn unitarity_defect(u: &DMatrix<Complex64>, subspace: &[usize]) -> f64 {
    let k = subspace.len();
    let sub = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, subspace[c])]);
    (sub.adjoint() * &sub - DMatrix::<Complex64>::identity(k, k)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HamiltonianKind {
    TightBinding,
    /// `t_hop Σ(a_j†a_{j'} + h.c.) + J Σ n_j n_{j'}` over the lattice bonds.
    TJ { t_hop: f64, j_coupling: f64 },
}

struct Block {
    range: Range<usize>,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

/// Second-quantized `Σ Δ_{jj'} a_j†a_{j'}` (optionally with nearest-neighbour
/// density interaction) on a truncated basis, with its per-sector
/// eigendecomposition.
pub struct ManyBodyHamiltonian {
    kind: HamiltonianKind,
    lattice: Lattice,
    basis: FockBasis,
    matrix: CsrMatrix<f64>,
    blocks: Vec<Block>,
}

impl std::fmt::Debug for ManyBodyHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManyBodyHamiltonian")
            .field("kind", &self.kind)
            .field("lattice", &self.lattice)
            .field("dim", &self.basis.dim())
            .finish()
    }
}

impl ManyBodyHamiltonian {
    pub fn tight_binding(lattice: Lattice, basis: FockBasis) -> Result<Self> {
        Self::new(HamiltonianKind::TightBinding, lattice, basis)
    }

    pub fn t_j(lattice: Lattice, basis: FockBasis, t_hop: f64, j_coupling: f64) -> Result<Self> {
        Self::new(HamiltonianKind::TJ { t_hop, j_coupling }, lattice, basis)
    }

    pub fn new(kind: HamiltonianKind, lattice: Lattice, basis: FockBasis) -> Result<Self> {
        if lattice.n_sites() != basis.n_sites() {
            return Err(WireError::LengthMismatch { expected: lattice.n_sites(), found: basis.n_sites() });
        }
        let (t_hop, j_coupling) = match kind {
            HamiltonianKind::TightBinding => (1.0, 0.0),
            HamiltonianKind::TJ { t_hop, j_coupling } => (t_hop, j_coupling),
        };
        let bonds = lattice.bonds();
        let dim = basis.dim();
        let mut coo = CooMatrix::new(dim, dim);
        for col in 0..dim {
            let s = basis.state(col);
            let mut diag = 0.0;
            for &(a, b) in &bonds {
                for (from, to) in [(a, b), (b, a)] {
                    if s >> from & 1 == 1 && s >> to & 1 == 0 {
                        let removed = s ^ (1 << from);
                        let sign = string_sign(s, from) * string_sign(removed, to);
                        let row = basis.index_of(removed | 1 << to).expect("hopping conserves particle number");
                        coo.push(row, col, t_hop * sign);
                    }
                }
                if s >> a & 1 == 1 && s >> b & 1 == 1 {
                    diag += j_coupling;
                }
            }
            if diag != 0.0 {
                coo.push(col, col, diag);
            }
        }
        let matrix = CsrMatrix::from(&coo);

        let mut blocks = Vec::new();
        for p in 0..=basis.max_particles() {
            let range = basis.sector(p);
            let len = range.len();
            let mut dense = DMatrix::zeros(len, len);
            for row in range.clone() {
                let r = matrix.row(row);
                for (&col, &v) in r.col_indices().iter().zip(r.values()) {
                    dense[(row - range.start, col - range.start)] += v;
                }
            }
            let eig = SymmetricEigen::try_new(dense, 1e-14, 10_000).ok_or(WireError::EigenSolver { dim: len })?;
            blocks.push(Block {
                range,
                values: eig.eigenvalues.iter().copied().collect(),
                vectors: eig.eigenvectors,
            });
        }
        Ok(Self { kind, lattice, basis, matrix, blocks })
    }

    pub fn kind(&self) -> HamiltonianKind {
        self.kind
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    /// Single-particle spectrum of the underlying lattice.
    pub fn spectrum(&self) -> Result<Spectrum> {
        diagonalize(&build_hopping(self.lattice))
    }

    /// `e^{−iHt}` on every ancilla configuration.
    pub fn evolve(&self, state: &mut FockVector, t: f64) -> Result<()> {
        if state.fock_dim() != self.basis.dim() {
            return Err(WireError::LengthMismatch { expected: self.basis.dim(), found: state.fock_dim() });
        }
        if t == 0.0 {
            return Ok(());
        }
        for config in 0..state.n_configs() {
            let slice = state.slice_mut(config);
            for block in &self.blocks {
                let x = &slice[block.range.clone()];
                let len = x.len();
                let coeffs: Vec<Complex64> = (0..len)
                    .map(|k| {
                        let c: Complex64 = block.vectors.column(k).iter().zip(x).map(|(&v, &a)| a * v).sum();
                        c * Complex64::from_polar(1.0, -block.values[k] * t)
                    })
                    .collect();
                let y: Vec<Complex64> = (0..len)
                    .map(|i| (0..len).map(|k| coeffs[k] * block.vectors[(i, k)]).sum())
                    .collect();
                slice[block.range.clone()].copy_from_slice(&y);
            }
        }
        Ok(())
    }

    /// Diagonal of `Σ_bonds n_j n_{j'}`.
    pub fn interaction_diagonal(&self) -> Vec<f64> {
        let bonds = self.lattice.bonds();
        (0..self.basis.dim())
            .map(|i| {
                let s = self.basis.state(i);
                bonds.iter().filter(|&&(a, b)| s >> a & 1 == 1 && s >> b & 1 == 1).count() as f64
            })
            .collect()
    }
}

/// Timing and modes for an oracle run.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSchedule {
    pub wait: f64,
    pub decode_time: f64,
    /// One-particle state `g†|Ω⟩` used by every encoder.
    pub encode_mode: SingleParticleState,
    /// One-particle state `h†|Ω⟩` used by every decoder.
    pub decode_mode: SingleParticleState,
    /// Undo the fermionic string phase Bob's decoders pick up from signals
    /// still in flight.
    pub sign_correction: bool,
}

impl OracleSchedule {
    pub fn from_plan(plan: &ProtocolPlan, spectrum: &Spectrum) -> Result<Self> {
        let (h, _) = plan.decode(spectrum)?;
        Ok(Self {
            wait: plan.wait,
            decode_time: plan.decode_time,
            encode_mode: plan.initial_packet()?,
            decode_mode: h,
            sign_correction: true,
        })
    }

    /// Pairs `(a, b)` of 1-based signals where `b` is encoded before `a` is
    /// decoded.
    pub fn crossing_pairs(&self, m: usize) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                if (b as f64) * self.wait < a as f64 * self.wait + self.decode_time {
                    pairs.push((a + 1, b + 1));
                }
            }
        }
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Encode(usize),
    Decode(usize),
}

/// Runs `M` encodings and decodings under `H`: encoder `α` fires at
/// `(α−1)t`, decoder `β` at `(β−1)t + T`, encoders first on ties.
pub fn run_protocol(messages: &[Qubit], schedule: &OracleSchedule, hamiltonian: &ManyBodyHamiltonian) -> Result<FockVector> {
    let m = messages.len();
    let basis = hamiltonian.basis();
    if m == 0 {
        return invalid("at least one message is required");
    }
    if m > basis.max_particles() {
        return invalid(format!("{m} signals exceed the particle truncation {}", basis.max_particles()));
    }
    if !(schedule.wait >= 0.0) || !(schedule.decode_time >= 0.0) {
        return invalid("times must be non-negative");
    }
    let encoders: Vec<ModeSwap> = (1..=m).map(|a| build_encoder(a, &schedule.encode_mode, basis)).collect::<Result<_>>()?;
    let decoders: Vec<ModeSwap> = (1..=m).map(|b| build_decoder(b, &schedule.decode_mode, basis)).collect::<Result<_>>()?;

    let mut events: Vec<(f64, Event)> = (1..=m)
        .flat_map(|i| {
            let enc = (i - 1) as f64 * schedule.wait;
            [(enc, Event::Encode(i)), (enc + schedule.decode_time, Event::Decode(i))]
        })
        .collect();
    events.sort_by(|x, y| {
        x.0.total_cmp(&y.0).then_with(|| match (x.1, y.1) {
            (Event::Encode(_), Event::Decode(_)) => std::cmp::Ordering::Less,
            (Event::Decode(_), Event::Encode(_)) => std::cmp::Ordering::Greater,
            _ => std::cmp::Ordering::Equal,
        })
    });

    let mut state = FockVector::initial(basis.dim(), messages);
    let mut now = 0.0;
    for (time, event) in events {
        hamiltonian.evolve(&mut state, time - now)?;
        now = time;
        match event {
            Event::Encode(a) => encoders[a - 1].apply(&mut state)?,
            Event::Decode(b) => decoders[b - 1].apply(&mut state)?,
        }
    }
    if schedule.sign_correction {
        for (a, b) in schedule.crossing_pairs(m) {
            state.apply_cz(Register::Bob(a), Register::Bob(b))?;
        }
    }
    Ok(state)
}

/// Average fidelity of each of Bob's registers, with all `M` messages set to
/// the same axis state in each of the six runs.
pub fn protocol_fidelities(m: usize, schedule: &OracleSchedule, hamiltonian: &ManyBodyHamiltonian) -> Result<Vec<f64>> {
    let outputs: Vec<(AxisState, Vec<QubitState>)> = AxisState::ALL
        .par_iter()
        .map(|&axis| {
            let state = run_protocol(&vec![axis.qubit(); m], schedule, hamiltonian)?;
            let rhos = (1..=m).map(|b| reduced_qubit(&state, Register::Bob(b))).collect::<Result<_>>()?;
            Ok((axis, rhos))
        })
        .collect::<Result<_>>()?;
    (0..m)
        .map(|b| {
            let map = outputs.iter().map(|(axis, rhos)| (*axis, rhos[b])).collect();
            average_fidelity(&map)
        })
        .collect()
}

/// `U_M e^{−iHt}⋯e^{−iHt}U_1|ψ_1⟩⋯|ψ_M⟩|Ω⟩`, with Bob's registers in `|0⟩`.
pub fn encode_signals(
    messages: &[Qubit],
    encode_mode: &SingleParticleState,
    wait: f64,
    hamiltonian: &ManyBodyHamiltonian,
) -> Result<FockVector> {
    let basis = hamiltonian.basis();
    if messages.len() > basis.max_particles() {
        return invalid(format!("{} signals exceed the particle truncation {}", messages.len(), basis.max_particles()));
    }
    let mut state = FockVector::initial(basis.dim(), messages);
    for a in 1..=messages.len() {
        if a > 1 {
            hamiltonian.evolve(&mut state, wait)?;
        }
        build_encoder(a, encode_mode, basis)?.apply(&mut state)?;
    }
    Ok(state)
}

/// `|0⟩_A ⊗ (c_M + d_M g†(0))⋯(c_1 + d_1 g†((M−1)t))|Ω⟩`, unnormalized.
pub fn ideal_encoded_state(
    messages: &[Qubit],
    encode_mode: &SingleParticleState,
    wait: f64,
    hamiltonian: &ManyBodyHamiltonian,
) -> Result<FockVector> {
    let basis = hamiltonian.basis();
    let m = messages.len();
    if m > basis.max_particles() {
        return invalid(format!("{m} signals exceed the particle truncation {}", basis.max_particles()));
    }
    let spectrum = hamiltonian.spectrum()?;
    let mut fock = vec![ZERO; basis.dim()];
    fock[0] = ONE;
    for (i, q) in messages.iter().enumerate() {
        let g = propagate(encode_mode, (m - 1 - i) as f64 * wait, &spectrum)?;
        let created = spmv(&adjoint(&mode_of(&g, basis)?), &fock);
        for (x, y) in fock.iter_mut().zip(&created) {
            *x = q.c * *x + q.d * y;
        }
    }
    let mut amplitudes = vec![ZERO; basis.dim() << (2 * m)];
    amplitudes[..basis.dim()].copy_from_slice(&fock);
    FockVector::from_parts(basis.dim(), m, amplitudes)
}

/// `‖Γ_M‖ = ‖actual − ideal‖`.
pub fn gamma_norm(actual: &FockVector, ideal: &FockVector) -> Result<f64> {
    actual.distance(ideal)
}

/// `ε_I = ‖Σ n_j n_{j'}|Ψ⟩‖` over the Hamiltonian's bonds.
pub fn tj_interaction_error(state: &FockVector, hamiltonian: &ManyBodyHamiltonian) -> Result<f64> {
    state.require_normalized()?;
    if state.fock_dim() != hamiltonian.basis().dim() {
        return Err(WireError::LengthMismatch { expected: hamiltonian.basis().dim(), found: state.fock_dim() });
    }
    let diag = hamiltonian.interaction_diagonal();
    Ok((0..state.n_configs())
        .flat_map(|c| state.slice(c).iter().zip(&diag).map(|(a, d)| (a * d).norm_sqr()))
        .sum::<f64>()
        .sqrt())
}

/// `‖e^{−iH_{t−J}s}|Ψ⟩ − e^{−iHs}|Ψ⟩‖`.
pub fn evolution_difference(
    state: &FockVector,
    s: f64,
    free: &ManyBodyHamiltonian,
    interacting: &ManyBodyHamiltonian,
) -> Result<f64> {
    state.require_normalized()?;
    if free.basis() != interacting.basis() {
        return invalid("Hamiltonians act on different bases");
    }
    let mut a = state.clone();
    let mut b = state.clone();
    free.evolve(&mut a, s)?;
    interacting.evolve(&mut b, s)?;
    a.distance(&b)
}

/// Both sides of `‖e^{−iH_{t−J}s}Ψ − e^{−iHs}Ψ‖ ≤ |s|ε_I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TjComparison {
    pub s: f64,
    pub difference: f64,
    pub bound: f64,
    pub violated: bool,
}

pub fn tj_bound_check(
    state: &FockVector,
    s: f64,
    free: &ManyBodyHamiltonian,
    interacting: &ManyBodyHamiltonian,
    slack: f64,
) -> Result<TjComparison> {
    let j = match interacting.kind() {
        HamiltonianKind::TJ { j_coupling, .. } => j_coupling,
        HamiltonianKind::TightBinding => 0.0,
    };
    let difference = evolution_difference(state, s, free, interacting)?;
    let bound = s.abs() * j.abs() * tj_interaction_error(state, interacting)?;
    let violated = difference > bound + slack;
    if violated {
        log::warn!("t-J bound violated at s = {s}: difference {difference:.3e} > {bound:.3e}");
    }
    Ok(TjComparison { s, difference, bound, violated })
}
