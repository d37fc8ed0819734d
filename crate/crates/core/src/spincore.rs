//! Dense complex linear algebra and spin-operator primitives.
//!
//! Every operator, state and propagator in the crate is a [`ComplexMatrix`].
//! Frequencies are angular (rad/µs) and times are µs, so `h * t` is a phase.
//! Basis states are ordered by decreasing magnetic quantum number.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn real_diag(values: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| c64(v, 0.0)),
    ))
}

/// Largest absolute entry.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_error(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    max_abs(&(m - m.adjoint()))
}

pub fn is_hermitian(m: &ComplexMatrix, tol: f64) -> bool {
    hermiticity_error(m) <= tol
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a * b - b * a
}

pub fn trace(m: &ComplexMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Rejects empty or non-finite matrices.
pub fn check_finite(m: &ComplexMatrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid("matrix must have at least one row and column"));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spin {
    Half,
    One,
}

impl Spin {
    pub fn from_f64(s: f64) -> Result<Self> {
        if s == 0.5 {
            Ok(Spin::Half)
        } else if s == 1.0 {
            Ok(Spin::One)
        } else {
            Err(Error::invalid(format!("unsupported spin quantum number {s}")))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Spin::Half => 0.5,
            Spin::One => 1.0,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Spin::Half => 2,
            Spin::One => 3,
        }
    }

    /// Magnetic quantum numbers in basis order (decreasing).
    pub fn m_values(self) -> Vec<f64> {
        let s = self.value();
        (0..self.dim()).map(|k| s - k as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub spin: Spin,
    pub ix: ComplexMatrix,
    pub iy: ComplexMatrix,
    pub iz: ComplexMatrix,
}

impl SpinOperators {
    pub fn raising(&self) -> ComplexMatrix {
        &self.ix + &self.iy * I
    }

    pub fn identity(&self) -> ComplexMatrix {
        identity(self.spin.dim())
    }
}

/// Angular-momentum matrices for spin 1/2 or 1.
pub fn spin_operators(s: f64) -> Result<SpinOperators> {
    let spin = Spin::from_f64(s)?;
    let m = spin.m_values();
    let d = spin.dim();
    let iz = real_diag(&m);

    // <m+1| I+ |m> = sqrt(s(s+1) - m(m+1)); row index k-1 holds m+1.
    let mut raising = ComplexMatrix::zeros(d, d);
    for k in 1..d {
        let mk = m[k];
        raising[(k - 1, k)] = c64((s * (s + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let lowering = raising.adjoint();
    let ix = (&raising + &lowering).scale(0.5);
    let iy = (&raising - &lowering) * c64(0.0, -0.5);
    Ok(SpinOperators { spin, ix, iy, iz })
}

/// Kronecker product; `a`'s index varies slowest.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    factors
        .into_iter()
        .fold(identity(1), |acc, f| kron(&acc, f))
}

/// Spectral decomposition of a Hermitian generator, reusable for many times.
#[derive(Debug, Clone)]
pub struct HermitianPropagator {
    pub energies: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianPropagator {
    pub fn new(h: &ComplexMatrix) -> Result<Self> {
        check_finite(h)?;
        let err = hermiticity_error(h);
        if err > 1e-10 {
            return Err(Error::invalid(format!(
                "generator is not Hermitian (max deviation {err:.3e})"
            )));
        }
        let sym = (h + h.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(sym);
        Ok(Self {
            energies: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    /// e^{-i h t}
    pub fn at(&self, t: f64) -> ComplexMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &e) in self.energies.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -e * t);
            for z in scaled.column_mut(j).iter_mut() {
                *z *= phase;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// e^{-i h t} for Hermitian `h` (rad/µs) and `t` (µs).
pub fn expm_hermitian(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    Ok(HermitianPropagator::new(h)?.at(t))
}

/// Integer matrix power by repeated squaring.
pub fn matrix_power(m: &ComplexMatrix, mut k: usize) -> ComplexMatrix {
    let mut result = identity(m.nrows());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Reduced matrix on the subsystems listed in `keep` (any order; output is in
/// ascending subsystem order).
pub fn partial_trace(rho: &ComplexMatrix, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
    if !rho.is_square() {
        return Err(Error::invalid("partial trace needs a square matrix"));
    }
    let total: usize = dims.iter().product();
    if dims.is_empty() || total != rho.nrows() {
        return Err(Error::invalid(format!(
            "subsystem dimensions {dims:?} do not multiply to {}",
            rho.nrows()
        )));
    }
    if keep.is_empty() {
        return Err(Error::invalid("keep set must be non-empty"));
    }
    let mut kept = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.iter().any(|&k| k >= dims.len()) {
        return Err(Error::invalid(format!("keep index out of range for {} subsystems", dims.len())));
    }

    let mut strides = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !kept.contains(k)).collect();

    let offsets = |subsystems: &[usize]| -> Vec<usize> {
        let mut out = vec![0usize];
        for &s in subsystems {
            let stride = strides[s];
            out = out
                .iter()
                .flat_map(|&base| (0..dims[s]).map(move |d| base + d * stride))
                .collect();
        }
        out
    };
    let keep_off = offsets(&kept);
    let trace_off = offsets(&traced);

    let n = keep_off.len();
    let mut out = ComplexMatrix::zeros(n, n);
    for (i, &ri) in keep_off.iter().enumerate() {
        for (j, &cj) in keep_off.iter().enumerate() {
            out[(i, j)] = trace_off.iter().map(|&t| rho[(ri + t, cj + t)]).sum();
        }
    }
    Ok(out)
}

/// Sum of singular values.
pub fn trace_norm(a: &ComplexMatrix) -> f64 {
    a.clone().singular_values().iter().sum()
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
