//! State metrics and the two-qubit tomography chain.
//!
//! Tomography uses the 16 two-qubit Pauli settings. Setting `PQ` rotates the
//! electron so that `P` becomes σ_z, rotates the nitrogen likewise for `Q`,
//! folds the nitrogen bit into the electron with a nitrogen-controlled flip
//! and reads the electron population. The m_s = 0 population is then
//! `(1 + ⟨P⊗Q⟩)/2`, i.e. the setting measures the projector `(1 + P⊗Q)/2`.
//! The photon-count readout follows the bright/dark reference normalisation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spincore::{c64, hermiticity_error, identity, kron, trace_norm, ComplexMatrix};

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        crate::spincore::check_finite(&m)?;
        if !m.is_square() {
            return Err(Error::invalid("density matrix must be square"));
        }
        let herm = hermiticity_error(&m);
        if herm > 1e-10 {
            return Err(Error::invalid(format!("density matrix not Hermitian (deviation {herm:.3e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("density matrix trace {} != 1", tr.re)));
        }
        let min = min_eigenvalue(&m);
        if min < -1e-9 {
            return Err(Error::invalid(format!("density matrix has negative eigenvalue {min:.3e}")));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix without checks; metrics on it may fail.
    pub fn from_matrix_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(identity(dim).scale(1.0 / dim as f64))
    }

    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let v = DVector::from_column_slice(psi);
        let norm = v.norm();
        if !(norm > 0.0) {
            return Err(Error::invalid("state vector has zero norm"));
        }
        let v = v.unscale(norm);
        Self::new(&v * v.adjoint())
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        crate::spincore::hermitian_eigenvalues(&self.0)
    }
}

fn min_eigenvalue(m: &ComplexMatrix) -> f64 {
    crate::spincore::hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

const PSD_NOISE_FLOOR: f64 = 1e-14;

/// Principal square root of a Hermitian PSD matrix (negative eigenvalues clamped).
fn psd_sqrt(m: &ComplexMatrix) -> ComplexMatrix {
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut v = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        // eigenvalues at rounding level are treated as exact zeros
        let s = if lam > PSD_NOISE_FLOOR { lam.sqrt() } else { 0.0 };
        for z in v.column_mut(j).iter_mut() {
            *z *= s;
        }
    }
    v * eig.eigenvectors.adjoint()
}

fn sigma_y_sigma_y() -> ComplexMatrix {
    let y = ComplexMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(0.0, -1.0), c64(0.0, 1.0), c64(0.0, 0.0)]);
    kron(&y, &y)
}

/// Spin-flipped state (σ_y⊗σ_y) ρ* (σ_y⊗σ_y), conjugation in the computational basis.
pub fn spin_flip(rho: &ComplexMatrix) -> ComplexMatrix {
    let yy = sigma_y_sigma_y();
    &yy * rho.conjugate() * &yy
}

/// Two-qubit concurrence.
///
/// The square roots of the eigenvalues of ρ·ρ̃ are the singular values of
/// √ρ·√ρ̃, which the SVD returns with absolute accuracy near zero. Input
/// eigenvalues below −1e-6 mean the input is not a state.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    let m = rho.matrix();
    if m.nrows() != 4 || m.ncols() != 4 {
        return Err(Error::invalid("concurrence is defined for 4x4 two-qubit states"));
    }
    let min = min_eigenvalue(m);
    if min < -1e-6 {
        return Err(Error::Numerical(format!("input eigenvalue {min:.3e} is below -1e-6")));
    }
    let root = psd_sqrt(m);
    let yy = sigma_y_sigma_y();
    let root_flip = &yy * root.conjugate() * &yy;
    let product = &root * &root_flip;
    let mut s: Vec<f64> = product.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok((s[0] - s[1] - s[2] - s[3]).clamp(0.0, 1.0))
}

pub fn trace_distance(r1: &DensityMatrix, r2: &DensityMatrix) -> Result<f64> {
    if r1.dim() != r2.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", r1.dim(), r2.dim())));
    }
    Ok(0.5 * trace_norm(&(r1.matrix() - r2.matrix())))
}

/// Uhlmann fidelity (Tr√(√ρ σ √ρ))², computed as ‖√ρ √σ‖₁².
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let s = trace_norm(&(psd_sqrt(rho.matrix()) * psd_sqrt(sigma.matrix())));
    Ok(s * s)
}

/// Total increase of a time-ordered distinguishability trace,
/// Σ max(0, d_{i+1} − d_i). Points must be ordered by time.
pub fn blp_measure(trace: &[(f64, f64)]) -> f64 {
    trace.windows(2).map(|w| (w[1].1 - w[0].1).max(0.0)).sum()
}

/// Single-qubit state with populations ½ and coherence `w/2`, or its
/// orthogonal partner when `sign` is negative.
pub fn dephased_qubit(w: f64, sign: f64) -> Result<DensityMatrix> {
    let m = ComplexMatrix::from_row_slice(
        2,
        2,
        &[c64(0.5, 0.0), c64(0.5 * sign * w, 0.0), c64(0.5 * sign * w, 0.0), c64(0.5, 0.0)],
    );
    DensityMatrix::new(m)
}

/// Pure dephasing of a single qubit: coherences scaled by `w`.
pub fn dephasing_channel(rho: &DensityMatrix, w: f64) -> Result<DensityMatrix> {
    let mut m = rho.matrix().clone();
    if m.nrows() != 2 {
        return Err(Error::invalid("dephasing channel acts on a single qubit"));
    }
    m[(0, 1)] *= w;
    m[(1, 0)] *= w;
    DensityMatrix::new(m)
}

// ---------------------------------------------------------------------------
// readout

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> ComplexMatrix {
        let (o, l, i) = (c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 1.0));
        match self {
            Pauli::I => identity(2),
            Pauli::X => ComplexMatrix::from_row_slice(2, 2, &[o, l, l, o]),
            Pauli::Y => ComplexMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
            Pauli::Z => ComplexMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
        }
    }

    fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn from_symbol(ch: char) -> Option<Self> {
        match ch {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// Pauli pair measured on (electron, nitrogen).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Setting {
    pub electron: Pauli,
    pub nitrogen: Pauli,
}

impl Setting {
    pub fn new(electron: Pauli, nitrogen: Pauli) -> Self {
        Self { electron, nitrogen }
    }

    pub fn observable(&self) -> ComplexMatrix {
        kron(&self.electron.matrix(), &self.nitrogen.matrix())
    }

    /// Effective projector whose expectation is the m_s = 0 population.
    pub fn projector(&self) -> ComplexMatrix {
        (identity(4) + self.observable()).scale(0.5)
    }

    pub fn probability(&self, rho: &DensityMatrix) -> f64 {
        (self.projector() * rho.matrix()).trace().re
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.electron.symbol(), self.nitrogen.symbol())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next().and_then(Pauli::from_symbol), chars.next().and_then(Pauli::from_symbol), chars.next()) {
            (Some(e), Some(n), None) => Ok(Setting::new(e, n)),
            _ => Err(Error::invalid(format!("unknown measurement setting `{s}`"))),
        }
    }
}

/// All 16 Pauli settings, electron index slowest.
pub fn pauli_settings() -> Vec<Setting> {
    Pauli::ALL
        .iter()
        .flat_map(|&e| Pauli::ALL.iter().map(move |&n| Setting::new(e, n)))
        .collect()
}

/// Mean photons per shot in the readout window for m_s = 0 (bright) and
/// m_s = −1 (dark).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutCalibration {
    pub rate_bright: f64,
    pub rate_dark: f64,
    /// Emit exact expected counts instead of Poisson draws.
    pub noiseless: bool,
}

impl Default for ReadoutCalibration {
    /// Typical room-temperature values; not measured quantities.
    fn default() -> Self {
        Self { rate_bright: 0.03, rate_dark: 0.02, noiseless: false }
    }
}

impl ReadoutCalibration {
    /// Noiseless readout that reports the quantum probability exactly.
    pub fn exact() -> Self {
        Self { rate_bright: 1.0, rate_dark: 0.0, noiseless: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_dark >= 0.0) || !(self.rate_bright > self.rate_dark) || !self.rate_bright.is_finite() {
            return Err(Error::invalid("readout calibration needs rate_bright > rate_dark >= 0"));
        }
        Ok(())
    }

    pub fn contrast(&self) -> f64 {
        self.rate_bright - self.rate_dark
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountsRecord {
    pub setting: Setting,
    pub shots: u64,
    pub c_signal: f64,
    pub c_bright: f64,
    pub c_dark: f64,
}

impl CountsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::invalid("counts record needs at least one shot"));
        }
        let counts = [self.c_signal, self.c_bright, self.c_dark];
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("photon counts must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// (C_signal − C_dark)/(C_bright − C_dark), unclipped.
pub fn readout_probability(rec: &CountsRecord) -> Result<f64> {
    let contrast = rec.c_bright - rec.c_dark;
    if contrast == 0.0 || !contrast.is_finite() {
        return Err(Error::invalid("zero readout contrast"));
    }
    Ok((rec.c_signal - rec.c_dark) / contrast)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng)
}

/// Photon-count records for each setting. Each setting draws from its own
/// ChaCha stream of `seed`, so results do not depend on evaluation order.
pub fn simulate_counts(
    rho: &DensityMatrix,
    settings: &[Setting],
    shots: u64,
    cal: &ReadoutCalibration,
    seed: u64,
) -> Result<Vec<CountsRecord>> {
    if rho.dim() != 4 {
        return Err(Error::invalid("tomography simulation needs a 4x4 state"));
    }
    if shots == 0 {
        return Err(Error::invalid("shots must be at least 1"));
    }
    cal.validate()?;
    let n = shots as f64;
    Ok(settings
        .par_iter()
        .enumerate()
        .map(|(idx, &setting)| {
            let p = setting.probability(rho).clamp(0.0, 1.0);
            let mean_signal = n * (p * cal.rate_bright + (1.0 - p) * cal.rate_dark);
            let (c_signal, c_bright, c_dark) = if cal.noiseless {
                (mean_signal, n * cal.rate_bright, n * cal.rate_dark)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(idx as u64);
                let s = poisson(&mut rng, mean_signal);
                let b = poisson(&mut rng, n * cal.rate_bright);
                let d = poisson(&mut rng, n * cal.rate_dark);
                (s, b, d)
            };
            CountsRecord { setting, shots, c_signal, c_bright, c_dark }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// maximum likelihood

/// Maps 16 real parameters to a lower-triangular T; ρ = T†T / Tr(T†T).
#[derive(Debug, Clone, Copy)]
struct CholeskyLayout;

impl CholeskyLayout {
    const LEN: usize = 16;

    /// (row, col, is_imaginary) for each parameter slot.
    fn slots() -> Vec<(usize, usize, bool)> {
        let mut out: Vec<(usize, usize, bool)> = (0..4).map(|i| (i, i, false)).collect();
        for i in 0..4 {
            for j in 0..i {
                out.push((i, j, false));
                out.push((i, j, true));
            }
        }
        out
    }

    fn to_t(theta: &[f64]) -> ComplexMatrix {
        let mut t = ComplexMatrix::zeros(4, 4);
        for (&(i, j, imag), &v) in Self::slots().iter().zip(theta) {
            if imag {
                t[(i, j)].im = v;
            } else {
                t[(i, j)].re = v;
            }
        }
        t
    }

    fn from_t(t: &ComplexMatrix) -> Vec<f64> {
        Self::slots()
            .iter()
            .map(|&(i, j, imag)| if imag { t[(i, j)].im } else { t[(i, j)].re })
            .collect()
    }

    fn rho(theta: &[f64]) -> ComplexMatrix {
        let t = Self::to_t(theta);
        let a = t.adjoint() * &t;
        let tr = a.trace().re;
        a.unscale(tr)
    }

    /// T lower-triangular with T†T = ρ (ρ must be positive definite).
    fn from_rho(rho: &ComplexMatrix) -> Option<Vec<f64>> {
        // Reverse the basis so an ordinary Cholesky factor becomes the
        // "upper-lower" factor we need.
        let rev = ComplexMatrix::from_fn(4, 4, |i, j| rho[(3 - i, 3 - j)]);
        let l = rev.cholesky()?.unpack();
        let u = ComplexMatrix::from_fn(4, 4, |i, j| l[(3 - i, 3 - j)]);
        // ρ = U U† with U upper, so T = U† is lower and T†T = ρ.
        let mut t = u.adjoint();
        // make the diagonal real and positive
        for i in 0..4 {
            let d = t[(i, i)];
            if d.norm() > 0.0 {
                let phase = d / d.norm();
                for j in 0..4 {
                    t[(i, j)] /= phase;
                }
            }
        }
        Some(Self::from_t(&t))
    }
}

#[derive(Debug, Clone)]
pub struct MleDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub log_likelihood: f64,
}

struct Likelihood<'a> {
    records: &'a [CountsRecord],
    projectors: Vec<ComplexMatrix>,
    cal: ReadoutCalibration,
    total_shots: f64,
}

impl<'a> Likelihood<'a> {
    fn new(records: &'a [CountsRecord], cal: ReadoutCalibration) -> Self {
        Self {
            records,
            projectors: records.iter().map(|r| r.setting.projector()).collect(),
            cal,
            total_shots: records.iter().map(|r| r.shots as f64).sum(),
        }
    }

    fn means(&self, probs: &[f64]) -> Vec<f64> {
        self.records
            .iter()
            .zip(probs)
            .map(|(r, &p)| {
                let p = p.clamp(0.0, 1.0);
                (r.shots as f64 * (self.cal.rate_dark + p * self.cal.contrast())).max(1e-300)
            })
            .collect()
    }

    fn probabilities(&self, rho: &ComplexMatrix) -> Vec<f64> {
        self.projectors.iter().map(|e| (e * rho).trace().re).collect()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let rho = CholeskyLayout::rho(theta);
        let mu = self.means(&self.probabilities(&rho));
        self.records
            .iter()
            .zip(&mu)
            .map(|(r, &m)| {
                let c = r.c_signal;
                if c > 0.0 {
                    c * m.ln() - m
                } else {
                    -m
                }
            })
            .sum()
    }

    /// Jacobian of probabilities wrt θ, plus probabilities and means.
    fn jacobian(&self, theta: &[f64]) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let t = CholeskyLayout::to_t(theta);
        let a = t.adjoint() * &t;
        let tau = a.trace().re;
        let rho = a.unscale(tau);
        let probs = self.probabilities(&rho);
        let mu = self.means(&probs);
        let t_dag = t.adjoint();
        let et: Vec<ComplexMatrix> = self.projectors.iter().map(|e| e * &t_dag).collect();
        let slots = CholeskyLayout::slots();
        let mut jac = DMatrix::zeros(self.records.len(), CholeskyLayout::LEN);
        for (k, &(i, j, imag)) in slots.iter().enumerate() {
            let val = if imag { c64(0.0, 1.0) } else { c64(1.0, 0.0) };
            // d Tr(A) = 2 Re (T†)_{j i}·val
            let dtr = 2.0 * (t_dag[(j, i)] * val).re;
            for s in 0..self.records.len() {
                let de = 2.0 * (et[s][(j, i)] * val).re;
                jac[(s, k)] = (de - probs[s] * dtr) / tau;
            }
        }
        (jac, probs, mu)
    }

    /// Gradient of the log-likelihood wrt probabilities and Fisher weights.
    fn score(&self, mu: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let contrast = self.cal.contrast();
        let g = DVector::from_iterator(
            mu.len(),
            self.records.iter().zip(mu).map(|(r, &m)| r.shots as f64 * contrast * (r.c_signal / m - 1.0)),
        );
        let w = DVector::from_iterator(
            mu.len(),
            self.records.iter().zip(mu).map(|(r, &m)| (r.shots as f64 * contrast).powi(2) / m),
        );
        (g, w)
    }
}

fn normalize_theta(theta: &mut [f64]) {
    let norm: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        theta.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Linear inversion from readout probabilities, projected onto the state space.
pub fn linear_inversion(records: &[CountsRecord]) -> Result<DensityMatrix> {
    let mut m = identity(4).scale(0.25);
    let mut seen = std::collections::BTreeMap::new();
    for rec in records {
        let p = readout_probability(rec)?;
        seen.entry(rec.setting).or_insert_with(Vec::new).push(p);
    }
    for (setting, ps) in &seen {
        if setting.electron == Pauli::I && setting.nitrogen == Pauli::I {
            continue;
        }
        let p = ps.iter().sum::<f64>() / ps.len() as f64;
        let expectation = 2.0 * p - 1.0;
        m += setting.observable().scale(0.25 * expectation);
    }
    Ok(project_to_states(&m))
}

/// Clip negative eigenvalues and renormalise.
pub fn project_to_states(m: &ComplexMatrix) -> DensityMatrix {
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let n = m.nrows();
    if total <= 0.0 {
        return DensityMatrix::maximally_mixed(n);
    }
    let mut v = eig.eigenvectors.clone();
    for (j, &l) in clipped.iter().enumerate() {
        let s = (l / total).sqrt();
        for z in v.column_mut(j).iter_mut() {
            *z *= s;
        }
    }
    let out = &v * v.adjoint();
    DensityMatrix::from_matrix_unchecked((&out + out.adjoint()).scale(0.5))
}

pub const MLE_MAX_ITERATIONS: usize = 2000;
pub const MLE_GRADIENT_TOL: f64 = 1e-8;

/// Maximum-likelihood two-qubit state from photon counts.
///
/// The log-likelihood is Poissonian in the signal counts with means
/// `shots·(rate_dark + p·contrast)`. Ascent is Fisher scoring with
/// Levenberg damping on the Cholesky parameters, starting from the projected
/// linear inversion. Convergence is declared when the likelihood gradient per
/// shot drops below 1e-8.
pub fn mle_reconstruct(records: &[CountsRecord], cal: &ReadoutCalibration) -> Result<DensityMatrix> {
    mle_reconstruct_with_diagnostics(records, cal).map(|(rho, _)| rho)
}

pub fn mle_reconstruct_with_diagnostics(
    records: &[CountsRecord],
    cal: &ReadoutCalibration,
) -> Result<(DensityMatrix, MleDiagnostics)> {
    cal.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("no counts records"));
    }
    for r in records {
        r.validate()?;
    }
    let distinct: std::collections::BTreeSet<_> = records
        .iter()
        .filter(|r| !(r.setting.electron == Pauli::I && r.setting.nitrogen == Pauli::I))
        .map(|r| r.setting)
        .collect();
    if distinct.len() < 15 {
        return Err(Error::invalid(format!(
            "settings are not informationally complete ({} of 15 non-trivial Pauli settings)",
            distinct.len()
        )));
    }

    let lik = Likelihood::new(records, *cal);
    let start = linear_inversion(records)?;
    let mixed = start.matrix().scale(1.0 - 1e-3) + identity(4).scale(1e-3 / 4.0);
    let mut theta = CholeskyLayout::from_rho(&mixed)
        .ok_or_else(|| Error::Numerical("initial state is not positive definite".into()))?;
    normalize_theta(&mut theta);

    let mut value = lik.value(&theta);
    let mut lambda = 1e-3;
    let mut grad_norm = f64::INFINITY;
    for iteration in 0..MLE_MAX_ITERATIONS {
        let (jac, _, mu) = lik.jacobian(&theta);
        let (g, w) = lik.score(&mu);
        let grad = jac.transpose() * &g;
        grad_norm = grad.norm() / lik.total_shots;
        if grad_norm < MLE_GRADIENT_TOL {
            let rho = DensityMatrix::new(CholeskyLayout::rho(&theta))?;
            return Ok((rho, MleDiagnostics { iterations: iteration, gradient_norm: grad_norm, log_likelihood: value }));
        }
        let weighted = DMatrix::from_fn(jac.nrows(), jac.ncols(), |r, c| jac[(r, c)] * w[r]);
        let fisher = jac.transpose() * weighted;
        let scale = (fisher.trace() / CholeskyLayout::LEN as f64).max(1e-300);

        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = fisher.clone();
            for d in 0..CholeskyLayout::LEN {
                damped[(d, d)] += lambda * scale;
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            normalize_theta(&mut trial);
            let trial_value = lik.value(&trial);
            if trial_value >= value {
                theta = trial;
                value = trial_value;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No ascent direction left at machine precision.
            break;
        }
    }
    let final_grad = {
        let (jac, _, mu) = lik.jacobian(&theta);
        let (g, _) = lik.score(&mu);
        (jac.transpose() * g).norm() / lik.total_shots
    };
    if final_grad < MLE_GRADIENT_TOL {
        let rho = DensityMatrix::new(CholeskyLayout::rho(&theta))?;
        return Ok((rho, MleDiagnostics { iterations: MLE_MAX_ITERATIONS, gradient_norm: final_grad, log_likelihood: value }));
    }
    Err(Error::NonConvergence { iterations: MLE_MAX_ITERATIONS, gradient_norm: final_grad.min(grad_norm), best: theta })
}

/// Density matrix corresponding to a best-iterate parameter vector carried by
/// [`Error::NonConvergence`].
pub fn state_from_parameters(theta: &[f64]) -> Result<DensityMatrix> {
    if theta.len() != CholeskyLayout::LEN {
        return Err(Error::invalid("expected 16 parameters"));
    }
    DensityMatrix::new(CholeskyLayout::rho(theta))
}
