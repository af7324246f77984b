//! Tight-binding lattice: hopping matrix, spectral data and exact
//! single-particle time evolution.
//!
//! Sites are labelled `1..=N` and sit at physical positions `x_j = j/N` on a
//! ring of unit length. Fourier modes are labelled by the integer mode index
//! `k` in `1..=N`; the variable conjugate to `k` is the ring angle `2πx`, so
//! `dω/dk` is an angular speed (radians of ring per unit time).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result, WireError};

/// Tolerance on `|‖φ‖² − 1|` for a state to count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Periodic: site `N+1` is site `1`.
    Ring,
    /// Open ends.
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    n_sites: usize,
    boundary: Boundary,
}

impl Lattice {
    pub fn new(n_sites: usize, boundary: Boundary) -> Result<Self> {
        if n_sites < 3 {
            return invalid(format!("lattice needs at least 3 sites, got {n_sites}"));
        }
        Ok(Self { n_sites, boundary })
    }

    pub fn ring(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, Boundary::Ring)
    }

    pub fn chain(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, Boundary::Chain)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Physical position `j/N` of site `j`.
    pub fn position(&self, site: usize) -> f64 {
        site as f64 / self.n_sites as f64
    }

    /// Nearest-neighbour bonds as zero-based site pairs.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let n = self.n_sites;
        let mut bonds: Vec<_> = (0..n - 1).map(|j| (j, j + 1)).collect();
        if self.boundary == Boundary::Ring {
            bonds.push((n - 1, 0));
        }
        bonds
    }

    /// Fails unless `4 | N`, which every `k₀ = N/4` construction needs.
    pub fn require_quarter_modes(&self) -> Result<()> {
        require_quarter_modes(self.n_sites)
    }
}

pub(crate) fn require_quarter_modes(n: usize) -> Result<()> {
    if !n.is_multiple_of(4) {
        return invalid(format!("N = {n} must be divisible by 4"));
    }
    Ok(())
}

/// The single-particle hopping matrix `Δ`, `[Δ]_{jj'} = δ_{j,j'+1} + δ_{j,j'−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoppingMatrix {
    lattice: Lattice,
    entries: DMatrix<f64>,
}

impl HoppingMatrix {
    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

pub fn build_hopping(lattice: Lattice) -> HoppingMatrix {
    let n = lattice.n_sites();
    let mut entries = DMatrix::zeros(n, n);
    for (a, b) in lattice.bonds() {
        entries[(a, b)] = 1.0;
        entries[(b, a)] = 1.0;
    }
    HoppingMatrix { lattice, entries }
}

/// Band used by a Fourier spectrum. `Linearized` replaces the cosine band by
/// its tangent line at `k0`, giving dispersionless transport; it exists for
/// checking shape-retention diagnostics against an exactly rigid packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    TightBinding,
    Linearized { k0: usize },
}

#[derive(Clone)]
enum SpectrumKind {
    Fourier {
        band: Band,
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
    },
    Dense {
        values: Vec<f64>,
        /// Orthonormal eigenvectors as columns, ordered by mode index.
        vectors: DMatrix<f64>,
    },
}

/// One eigenmode of `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub index: usize,
    pub omega: f64,
    pub vector: Vec<Complex64>,
}

/// Spectral decomposition of `Δ`. Ring spectra use the closed-form Fourier
/// modes `W(k)_j = μ^{jk}/√N`; chain spectra come from a dense symmetric
/// eigensolve with modes numbered by decreasing energy.
#[derive(Clone)]
pub struct Spectrum {
    n: usize,
    kind: SpectrumKind,
}

impl fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            SpectrumKind::Fourier { band, .. } => format!("Fourier({band:?})"),
            SpectrumKind::Dense { .. } => "Dense".to_string(),
        };
        f.debug_struct("Spectrum").field("n", &self.n).field("kind", &kind).finish()
    }
}

pub fn diagonalize(h: &HoppingMatrix) -> Result<Spectrum> {
    let lattice = h.lattice();
    match lattice.boundary() {
        Boundary::Ring => Ok(Spectrum::fourier(lattice.n_sites(), Band::TightBinding)),
        Boundary::Chain => Spectrum::dense(h.entries().clone()),
    }
}

impl Spectrum {
    fn fourier(n: usize, band: Band) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Self {
            n,
            kind: SpectrumKind::Fourier { band, forward, inverse },
        }
    }

    /// Ring spectrum with the band replaced by its tangent at `k0`.
    pub fn linearized(n: usize, k0: usize) -> Result<Self> {
        check_mode(k0, n)?;
        Ok(Self::fourier(n, Band::Linearized { k0 }))
    }

    fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        let eig = SymmetricEigen::try_new(matrix, 1e-14, 10_000)
            .ok_or(WireError::EigenSolver { dim })?;
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(dim, dim);
        for (col, &i) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(i).into_owned();
            // fix the sign so the first nonzero component is positive
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            vectors.set_column(col, &v);
        }
        Ok(Self {
            n: dim,
            kind: SpectrumKind::Dense { values, vectors },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_fourier(&self) -> bool {
        matches!(self.kind, SpectrumKind::Fourier { .. })
    }

    /// Energy of mode `k` (1-based).
    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        check_mode(k, self.n)?;
        Ok(self.omega_unchecked(k))
    }

    fn omega_unchecked(&self, k: usize) -> f64 {
        match &self.kind {
            SpectrumKind::Fourier { band, .. } => match band {
                Band::TightBinding => cosine_band(k, self.n),
                Band::Linearized { k0 } => {
                    cosine_band(*k0, self.n)
                        + cosine_slope(*k0, self.n) * (k as f64 - *k0 as f64)
                }
            },
            SpectrumKind::Dense { values, .. } => values[k - 1],
        }
    }

    pub fn eigenvector(&self, k: usize) -> Result<Vec<Complex64>> {
        check_mode(k, self.n)?;
        Ok(match &self.kind {
            SpectrumKind::Fourier { .. } => {
                let norm = 1.0 / (self.n as f64).sqrt();
                (1..=self.n)
                    .map(|j| Complex64::from_polar(norm, 2.0 * PI * ((j * k) % self.n) as f64 / self.n as f64))
                    .collect()
            }
            SpectrumKind::Dense { vectors, .. } => {
                vectors.column(k - 1).iter().map(|&x| Complex64::new(x, 0.0)).collect()
            }
        })
    }

    /// All modes with their eigenvectors. Allocates `N²` amplitudes.
    pub fn modes(&self) -> Vec<Mode> {
        (1..=self.n)
            .map(|k| Mode {
                index: k,
                omega: self.omega_unchecked(k),
                vector: self.eigenvector(k).expect("mode index in range"),
            })
            .collect()
    }

    /// Third derivative `d³ω/dk³` at mode `k`, when the band is analytic.
    pub fn third_derivative(&self, k: usize) -> Option<f64> {
        match &self.kind {
            SpectrumKind::Fourier { band: Band::TightBinding, .. } => {
                let q = 2.0 * PI / self.n as f64;
                Some(2.0 * q.powi(3) * (q * k as f64).sin())
            }
            SpectrumKind::Fourier { band: Band::Linearized { .. }, .. } => Some(0.0),
            SpectrumKind::Dense { .. } => None,
        }
    }

    /// Group velocity `dω/dk` at mode `k` (ring angle per unit time), when the
    /// band is analytic.
    pub fn velocity(&self, k: usize) -> Option<f64> {
        match &self.kind {
            SpectrumKind::Fourier { band: Band::TightBinding, .. } => Some(cosine_slope(k, self.n)),
            SpectrumKind::Fourier { band: Band::Linearized { k0 }, .. } => {
                Some(cosine_slope(*k0, self.n))
            }
            SpectrumKind::Dense { .. } => None,
        }
    }

    /// Mode coefficients `⟨W(k)|φ⟩`, entry `k−1` for mode `k`.
    pub fn mode_amplitudes(&self, amplitudes: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(amplitudes.len())?;
        Ok(match &self.kind {
            SpectrumKind::Fourier { forward, .. } => {
                let n = self.n;
                let mut buf = amplitudes.to_vec();
                forward.process(&mut buf);
                let scale = 1.0 / (n as f64).sqrt();
                // site j ↦ buffer index j−1 contributes an extra μ^{-k}
                (1..=n)
                    .map(|k| {
                        let phase = Complex64::from_polar(scale, -2.0 * PI * (k % n) as f64 / n as f64);
                        buf[k % n] * phase
                    })
                    .collect()
            }
            SpectrumKind::Dense { vectors, .. } => (0..self.n)
                .map(|col| {
                    vectors
                        .column(col)
                        .iter()
                        .zip(amplitudes)
                        .map(|(&v, &a)| a * v)
                        .sum()
                })
                .collect(),
        })
    }

    /// Applies `e^{−itΔ}` to raw amplitudes without a normalization check.
    pub(crate) fn evolve(&self, amplitudes: &[Complex64], t: f64) -> Vec<Complex64> {
        let n = self.n;
        match &self.kind {
            SpectrumKind::Fourier { forward, inverse, .. } => {
                let mut buf = amplitudes.to_vec();
                forward.process(&mut buf);
                let scale = 1.0 / n as f64;
                for k in 1..=n {
                    let phase = Complex64::from_polar(scale, -self.omega_unchecked(k) * t);
                    buf[k % n] *= phase;
                }
                inverse.process(&mut buf);
                buf
            }
            SpectrumKind::Dense { values, vectors } => {
                let coeffs: Vec<Complex64> = (0..n)
                    .map(|col| {
                        let c: Complex64 = vectors
                            .column(col)
                            .iter()
                            .zip(amplitudes)
                            .map(|(&v, &a)| a * v)
                            .sum();
                        c * Complex64::from_polar(1.0, -values[col] * t)
                    })
                    .collect();
                (0..n)
                    .map(|row| (0..n).map(|col| coeffs[col] * vectors[(row, col)]).sum())
                    .collect()
            }
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(WireError::LengthMismatch { expected: self.n, found: len });
        }
        Ok(())
    }
}

fn cosine_band(k: usize, n: usize) -> f64 {
    2.0 * (2.0 * PI * k as f64 / n as f64).cos()
}

fn cosine_slope(k: usize, n: usize) -> f64 {
    -(4.0 * PI / n as f64) * (2.0 * PI * k as f64 / n as f64).sin()
}

fn check_mode(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return invalid(format!("mode index {k} outside 1..={n}"));
    }
    Ok(())
}

/// `ω(k) = 2cos(2πk/N)`.
pub fn dispersion(k: usize, n: usize) -> Result<f64> {
    check_mode(k, n)?;
    Ok(cosine_band(k, n))
}

/// `v(k) = dω/dk = −(4π/N)sin(2πk/N)`, in ring angle per unit time. The
/// speed in ring lengths per unit time is `v/2π`, i.e. at most two sites per
/// unit time.
pub fn group_velocity(k: usize, n: usize) -> Result<f64> {
    check_mode(k, n)?;
    Ok(cosine_slope(k, n))
}

/// `N/(8π)`: half a ring length divided by `|v(N/4)|`.
pub fn transit_time(n: usize) -> Result<f64> {
    require_quarter_modes(n)?;
    Ok(n as f64 / (8.0 * PI))
}

/// Third derivative of the band at `k₀ = N/4`, `2(2π/N)³`.
pub fn third_order_dispersion(n: usize) -> f64 {
    2.0 * (2.0 * PI / n as f64).powi(3)
}

/// A vector of `N` complex site amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleParticleState {
    amplitudes: Vec<Complex64>,
}

impl SingleParticleState {
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Self {
        Self { amplitudes }
    }

    /// Rescales to unit norm; fails on the zero vector.
    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return invalid("cannot normalize a zero or non-finite vector");
        }
        Ok(Self {
            amplitudes: amplitudes.into_iter().map(|a| a / norm).collect(),
        })
    }

    /// `|j⟩` for 1-based site `j`.
    pub fn site(n: usize, j: usize) -> Result<Self> {
        if j == 0 || j > n {
            return invalid(format!("site {j} outside 1..={n}"));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); n];
        amplitudes[j - 1] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Amplitude at 1-based site `j`.
    pub fn amplitude(&self, j: usize) -> Complex64 {
        self.amplitudes[j - 1]
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOLERANCE
    }

    pub(crate) fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(WireError::NotNormalized { norm_sqr: self.norm_sqr() })
        }
    }

    /// Multiplies every amplitude by `e^{iθ}`.
    pub fn with_global_phase(&self, theta: f64) -> Self {
        let phase = Complex64::from_polar(1.0, theta);
        Self {
            amplitudes: self.amplitudes.iter().map(|a| a * phase).collect(),
        }
    }
}

/// `e^{−itΔ}φ` through the spectral decomposition.
pub fn propagate(state: &SingleParticleState, t: f64, spectrum: &Spectrum) -> Result<SingleParticleState> {
    state.require_normalized()?;
    spectrum.check_len(state.len())?;
    Ok(SingleParticleState {
        amplitudes: spectrum.evolve(state.amplitudes(), t),
    })
}
