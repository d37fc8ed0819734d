//! Pulse-sequence propagation of the electron–nitrogen pair in the carbon bath.
//!
//! Two routes compute the same physics:
//!
//! * the factorized path: every carbon evolves under one of two conditional
//!   2×2 Hamiltonians depending on the electron level, so the electron
//!   coherence is a product of per-carbon overlaps;
//! * [`full_oracle_propagate`]: the full register Hamiltonian is exponentiated
//!   and the carbons are traced out at the end.
//!
//! The qubit encoding is electron |0⟩ = m_s 0, |1⟩ = m_s −1 and nitrogen
//! |0⟩ = m_I +1, |1⟩ = m_I 0. Pulses are instantaneous ideal X gates.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    build_full_hamiltonian, larmor_frequency, CarbonParams, Frame,
    PhysicalConstants, SystemConfig,
};
use crate::spincore::{
    c64, identity, kron, matrix_power, partial_trace, ComplexMatrix, HermitianPropagator,
};
use crate::tomography::{concurrence, DensityMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseSequence {
    /// Free evolution for `t` µs.
    Free { t: f64 },
    /// τ − π − τ.
    Hahn { tau: f64 },
    /// n repetitions of τ − π − τ; total time 2nτ.
    Cpmg { tau: f64, n: usize },
    /// τ₁ − π − τ₁ − [conditional nitrogen π] − τ₁ − π − τ₁.
    Prep { tau1: f64 },
}

impl PulseSequence {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PulseSequence::Free { t } => t.is_finite() && t >= 0.0,
            PulseSequence::Hahn { tau } => tau.is_finite() && tau > 0.0,
            PulseSequence::Cpmg { tau, n } => tau.is_finite() && tau > 0.0 && n >= 1,
            PulseSequence::Prep { tau1 } => tau1.is_finite() && tau1 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid pulse sequence {self:?}")))
        }
    }

    pub fn total_time(&self) -> f64 {
        match *self {
            PulseSequence::Free { t } => t,
            PulseSequence::Hahn { tau } => 2.0 * tau,
            PulseSequence::Cpmg { tau, n } => 2.0 * n as f64 * tau,
            PulseSequence::Prep { tau1 } => 4.0 * tau1,
        }
    }

    /// Number of electron π pulses.
    pub fn pulse_count(&self) -> usize {
        match *self {
            PulseSequence::Free { .. } => 0,
            PulseSequence::Hahn { .. } => 1,
            PulseSequence::Cpmg { n, .. } => n,
            PulseSequence::Prep { .. } => 2,
        }
    }
}

/// What the scan's x axis holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceAxis {
    /// Half inter-pulse spacing τ at fixed n.
    Tau,
    /// Total evolution time t.
    Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceTrace {
    pub axis: TraceAxis,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub n: usize,
    pub carbons: Vec<String>,
    pub frame: String,
}

impl CoherenceTrace {
    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.w.len() {
            return Err(Error::invalid("trace x and w lengths differ"));
        }
        if let Some(bad) = self.w.iter().find(|w| !(w.abs() <= 1.0 + 1e-9)) {
            return Err(Error::invalid(format!("coherence {bad} outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.w.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntanglementTrace {
    pub tau: f64,
    pub n: Vec<usize>,
    pub t: Vec<f64>,
    pub c: Vec<f64>,
}

// ---------------------------------------------------------------------------
// factorized path

type Su2 = Matrix2<Complex64>;

/// e^{-i(z·Iz + x·Ix)t} in closed form.
fn su2_propagator(z: f64, x: f64, t: f64) -> Su2 {
    let omega = (z * z + x * x).sqrt();
    let half = 0.5 * omega * t;
    let (s, co) = half.sin_cos();
    let (nz, nx) = if omega > 0.0 { (z / omega, x / omega) } else { (0.0, 0.0) };
    // cos(θ/2)·1 − i sin(θ/2)(nz σz + nx σx)
    Su2::new(
        c64(co, -s * nz),
        c64(0.0, -s * nx),
        c64(0.0, -s * nx),
        c64(co, s * nz),
    )
}

fn su2_power(m: &Su2, mut k: usize) -> Su2 {
    let mut result = Su2::identity();
    let mut base = *m;
    while k > 0 {
        if k & 1 == 1 {
            result *= base;
        }
        k >>= 1;
        if k > 0 {
            base = base * base;
        }
    }
    result
}

fn to_dense(m: &Su2) -> ComplexMatrix {
    ComplexMatrix::from_fn(2, 2, |r, c| m[(r, c)])
}

/// Field components (z, x) of the conditional carbon generator.
fn conditional_field(k: &CarbonParams, c: &PhysicalConstants, ms: f64) -> (f64, f64) {
    (larmor_frequency(c) + ms * k.a_zz_angular(), ms * k.a_xz_angular())
}

fn unit_pair(k: &CarbonParams, c: &PhysicalConstants, tau: f64) -> (Su2, Su2) {
    let (z0, x0) = conditional_field(k, c, 0.0);
    let (z1, x1) = conditional_field(k, c, -1.0);
    let a0 = su2_propagator(z0, x0, tau);
    let b0 = su2_propagator(z0, x0, 2.0 * tau);
    let a1 = su2_propagator(z1, x1, tau);
    let b1 = su2_propagator(z1, x1, 2.0 * tau);
    (a0 * b1 * a0, a1 * b0 * a1)
}

/// Carbon propagators for one τ − π − 2τ − π − τ block, with the electron
/// starting in m_s = 0 (`v0`) or m_s = −1 (`v1`).
pub fn cpmg_unit_propagators(
    k: &CarbonParams,
    c: &PhysicalConstants,
    tau: f64,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let (v0, v1) = unit_pair(k, c, tau);
    Ok((to_dense(&v0), to_dense(&v1)))
}

fn check_even(n: usize) -> Result<()> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "the factorized CPMG path needs an even pulse count >= 2, got {n}"
        )));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Optional bath exposure during entangling-state preparation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Preparation {
    #[default]
    Ideal,
    /// Preparation block τ₁ − π − 2τ₁ − π − τ₁ evolves under the bath.
    WithBath { tau1: f64 },
}

fn branch_unitaries(k: &CarbonParams, c: &PhysicalConstants, tau: f64, n: usize, prep: Preparation) -> (Su2, Su2) {
    let (v0, v1) = unit_pair(k, c, tau);
    let mut u0 = su2_power(&v0, n / 2);
    let mut u1 = su2_power(&v1, n / 2);
    if let Preparation::WithBath { tau1 } = prep {
        let (p0, p1) = unit_pair(k, c, tau1);
        u0 *= p0;
        u1 *= p1;
    }
    (u0, u1)
}

/// Electron coherence left by one maximally mixed carbon after an n-pulse CPMG
/// sequence: Re ½Tr[U₀U₁†].
pub fn carbon_coherence_factor(k: &CarbonParams, c: &PhysicalConstants, tau: f64, n: usize) -> Result<f64> {
    carbon_coherence_factor_with_prep(k, c, tau, n, Preparation::Ideal)
}

pub fn carbon_coherence_factor_with_prep(
    k: &CarbonParams,
    c: &PhysicalConstants,
    tau: f64,
    n: usize,
    prep: Preparation,
) -> Result<f64> {
    check_tau(tau)?;
    check_even(n)?;
    if let Preparation::WithBath { tau1 } = prep {
        check_tau(tau1)?;
    }
    let (u0, u1) = branch_unitaries(k, c, tau, n, prep);
    Ok(0.5 * (u0 * u1.adjoint()).trace().re)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathCoherence {
    pub w: f64,
    /// Readout probability of m_s = 0, (W + 1)/2.
    pub p0: f64,
}

impl BathCoherence {
    fn from_w(w: f64) -> Self {
        Self { w, p0: 0.5 * (w + 1.0) }
    }
}

/// Product of per-carbon factors.
pub fn bath_coherence(carbons: &[CarbonParams], c: &PhysicalConstants, tau: f64, n: usize) -> Result<BathCoherence> {
    bath_coherence_with_prep(carbons, c, tau, n, Preparation::Ideal)
}

pub fn bath_coherence_with_prep(
    carbons: &[CarbonParams],
    c: &PhysicalConstants,
    tau: f64,
    n: usize,
    prep: Preparation,
) -> Result<BathCoherence> {
    check_tau(tau)?;
    check_even(n)?;
    let mut w = 1.0;
    for k in carbons {
        w *= carbon_coherence_factor_with_prep(k, c, tau, n, prep)?;
    }
    Ok(BathCoherence::from_w(w))
}

/// Coherence versus τ at fixed n. Points are evaluated in parallel.
pub fn coherence_scan(carbons: &[CarbonParams], c: &PhysicalConstants, taus: &[f64], n: usize) -> Result<CoherenceTrace> {
    check_even(n)?;
    let w = taus
        .par_iter()
        .map(|&tau| bath_coherence(carbons, c, tau, n).map(|b| b.w))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoherenceTrace {
        axis: TraceAxis::Tau,
        x: taus.to_vec(),
        w,
        n,
        carbons: carbons.iter().map(|k| k.label.clone()).collect(),
        frame: "rotating".into(),
    })
}

/// Uniform grid from `start` to `stop` inclusive, built from integer steps.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

/// First-order CPMG resonance with bare carbon precession, τ = π / (2|ω_L|).
pub fn first_order_resonance_tau(c: &PhysicalConstants) -> f64 {
    std::f64::consts::PI / (2.0 * larmor_frequency(c).abs())
}

/// Deterministic phase of the |00⟩⟨11| coherence from the parallel nitrogen
/// hyperfine after an even-n CPMG of total time `t`.
pub fn pair_phase(c: &PhysicalConstants, t: f64) -> f64 {
    0.5 * c.a_parallel() * t
}

/// Bell pair whose coherence has been scaled by `w` and rotated by `phi`.
pub fn dephased_bell_state(w: f64, phi: f64) -> Result<DensityMatrix> {
    if !(w.abs() <= 1.0) {
        return Err(Error::invalid(format!("coherence {w} outside [-1, 1]")));
    }
    let mut m = ComplexMatrix::zeros(4, 4);
    m[(0, 0)] = c64(0.5, 0.0);
    m[(3, 3)] = c64(0.5, 0.0);
    let coh = Complex64::from_polar(0.5 * w, phi);
    m[(0, 3)] = coh;
    m[(3, 0)] = coh.conj();
    DensityMatrix::new(m)
}

/// Concurrence after each CPMG length in `n_values`.
pub fn entanglement_trace(
    carbons: &[CarbonParams],
    c: &PhysicalConstants,
    tau: f64,
    n_values: &[usize],
) -> Result<EntanglementTrace> {
    entanglement_trace_with_prep(carbons, c, tau, n_values, Preparation::Ideal)
}

pub fn entanglement_trace_with_prep(
    carbons: &[CarbonParams],
    c: &PhysicalConstants,
    tau: f64,
    n_values: &[usize],
    prep: Preparation,
) -> Result<EntanglementTrace> {
    check_tau(tau)?;
    for pair in n_values.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::invalid("pulse counts must be strictly ascending"));
        }
    }
    let c_values = n_values
        .par_iter()
        .map(|&n| {
            let w = bath_coherence_with_prep(carbons, c, tau, n, prep)?.w;
            let t = 2.0 * n as f64 * tau;
            concurrence(&dephased_bell_state(w.clamp(-1.0, 1.0), pair_phase(c, t))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EntanglementTrace {
        tau,
        n: n_values.to_vec(),
        t: n_values.iter().map(|&n| 2.0 * n as f64 * tau).collect(),
        c: c_values,
    })
}

/// Even pulse counts 2, 4, …, up to `n_max`.
pub fn even_counts(n_max: usize) -> Vec<usize> {
    (1..=n_max / 2).map(|k| 2 * k).collect()
}

/// Gaussian free-induction decay from a quasi-static detuning with standard
/// deviation `sigma` (rad/µs): exp(−σ²t²/2).
pub fn quasi_static_coherence(sigma: f64, t: f64) -> f64 {
    (-0.5 * sigma * sigma * t * t).exp()
}

/// σ giving the decay exp(−(t/T_c)²).
pub fn sigma_for_coherence_time(tc: f64) -> f64 {
    std::f64::consts::SQRT_2 / tc
}

// ---------------------------------------------------------------------------
// full-register oracle

/// Row index of electron qubit level `q` inside the retained electron levels.
fn electron_index(levels: usize, q: usize) -> usize {
    if levels == 3 {
        q + 1
    } else {
        q
    }
}

fn pair_embedding(cfg: &SystemConfig) -> Vec<usize> {
    let nl = cfg.nitrogen_levels;
    let mut idx = Vec::with_capacity(4);
    for e in 0..2 {
        for n in 0..2 {
            idx.push(electron_index(cfg.electron_levels, e) * nl + n);
        }
    }
    idx
}

/// Electron X on the qubit levels, identity on m_s = +1.
fn electron_flip(levels: usize) -> ComplexMatrix {
    let mut x = identity(levels);
    let (a, b) = (electron_index(levels, 0), electron_index(levels, 1));
    x[(a, a)] = c64(0.0, 0.0);
    x[(b, b)] = c64(0.0, 0.0);
    x[(a, b)] = c64(1.0, 0.0);
    x[(b, a)] = c64(1.0, 0.0);
    x
}

/// Nitrogen qubit flip conditioned on electron qubit |0⟩.
fn conditional_nitrogen_flip(cfg: &SystemConfig) -> ComplexMatrix {
    let d = cfg.electron_levels * cfg.nitrogen_levels;
    let mut g = identity(d);
    let e0 = electron_index(cfg.electron_levels, 0) * cfg.nitrogen_levels;
    g[(e0, e0)] = c64(0.0, 0.0);
    g[(e0 + 1, e0 + 1)] = c64(0.0, 0.0);
    g[(e0, e0 + 1)] = c64(1.0, 0.0);
    g[(e0 + 1, e0)] = c64(1.0, 0.0);
    g
}

fn sequence_unitary(
    seq: &PulseSequence,
    prop: &HermitianPropagator,
    flip: &ComplexMatrix,
    rf_gate: &ComplexMatrix,
) -> ComplexMatrix {
    match *seq {
        PulseSequence::Free { t } => prop.at(t),
        PulseSequence::Hahn { tau } => {
            let u = prop.at(tau);
            &u * flip * &u
        }
        PulseSequence::Cpmg { tau, n } => {
            let u = prop.at(tau);
            matrix_power(&(&u * flip * &u), n)
        }
        PulseSequence::Prep { tau1 } => {
            let u = prop.at(tau1);
            &u * flip * &u * rf_gate * &u * flip * &u
        }
    }
}

/// Exact propagation of the full register through `seq`, returning the
/// reduced electron–nitrogen qubit state.
pub fn full_oracle_propagate(cfg: &SystemConfig, seq: &PulseSequence, initial: &DensityMatrix) -> Result<DensityMatrix> {
    full_oracle_propagate_schedule(cfg, std::slice::from_ref(seq), initial)
}

/// As [`full_oracle_propagate`], applying the sequences in order.
pub fn full_oracle_propagate_schedule(
    cfg: &SystemConfig,
    schedule: &[PulseSequence],
    initial: &DensityMatrix,
) -> Result<DensityMatrix> {
    cfg.validate()?;
    for seq in schedule {
        seq.validate()?;
    }
    if initial.dim() != 4 {
        return Err(Error::invalid("initial state must be a 4x4 electron-nitrogen state"));
    }
    let tr = initial.matrix().trace();
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(Error::invalid(format!("initial state is not normalized (trace {tr})")));
    }

    let pair_dim = cfg.electron_levels * cfg.nitrogen_levels;
    let bath_dim = 1usize << cfg.carbons.len();
    let embed = pair_embedding(cfg);
    let mut pair = ComplexMatrix::zeros(pair_dim, pair_dim);
    for (i, &ri) in embed.iter().enumerate() {
        for (j, &cj) in embed.iter().enumerate() {
            pair[(ri, cj)] = initial.matrix()[(i, j)];
        }
    }
    let rho = kron(&pair, &identity(bath_dim).scale(1.0 / bath_dim as f64));

    let h = build_full_hamiltonian(cfg, Frame::Rotating)?;
    let prop = HermitianPropagator::new(&h)?;
    let flip = kron(&kron(&electron_flip(cfg.electron_levels), &identity(cfg.nitrogen_levels)), &identity(bath_dim));
    let rf_gate = kron(&conditional_nitrogen_flip(cfg), &identity(bath_dim));

    let mut u = identity(pair_dim * bath_dim);
    for seq in schedule {
        u = sequence_unitary(seq, &prop, &flip, &rf_gate) * u;
    }
    let evolved = &u * rho * u.adjoint();
    let reduced = partial_trace(&evolved, &[pair_dim, bath_dim], &[0])?;

    let out = ComplexMatrix::from_fn(4, 4, |i, j| reduced[(embed[i], embed[j])]);
    DensityMatrix::new(out)
}

/// Signed coherence recovered from an oracle output for a Bell input after an
/// even CPMG of total time `t`.
pub fn oracle_coherence(rho: &DensityMatrix, c: &PhysicalConstants, t: f64) -> Complex64 {
    2.0 * rho.matrix()[(0, 3)] * Complex64::from_polar(1.0, -pair_phase(c, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{carbon_hamiltonian_for_ms, default_config, table_carbons};
    use crate::spincore::{expm_hermitian, max_abs};
    use crate::tomography::fidelity;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn bell() -> DensityMatrix {
        dephased_bell_state(1.0, 0.0).unwrap()
    }

    #[test]
    fn closed_form_units_match_eigendecomposition() {
        let c = consts();
        for k in table_carbons() {
            let tau = 0.731;
            let h0 = carbon_hamiltonian_for_ms(&k, &c, 0.0);
            let h1 = carbon_hamiltonian_for_ms(&k, &c, -1.0);
            let e = |h: &ComplexMatrix, t: f64| expm_hermitian(h, t).unwrap();
            let v0 = e(&h0, tau) * e(&h1, 2.0 * tau) * e(&h0, tau);
            let v1 = e(&h1, tau) * e(&h0, 2.0 * tau) * e(&h1, tau);
            let (a, b) = cpmg_unit_propagators(&k, &c, tau).unwrap();
            assert!(max_abs(&(a.clone() - v0)) < 1e-12);
            assert!(max_abs(&(b.clone() - v1)) < 1e-12);
            assert!(max_abs(&(a.adjoint() * &a - identity(2))) < 1e-10);
            assert!(max_abs(&(b.adjoint() * &b - identity(2))) < 1e-10);
        }
    }

    #[test]
    fn zero_transverse_units_coincide() {
        let c = consts();
        let k = CarbonParams::new("z", 40.0, 0.0);
        let (v0, v1) = cpmg_unit_propagators(&k, &c, 0.9).unwrap();
        assert!(max_abs(&(v0 - v1)) < 1e-12);
    }

    #[test]
    fn uncoupled_carbon_precesses_freely() {
        let c = consts();
        let k = CarbonParams::new("free", 0.0, 0.0);
        let tau = 1.1;
        let (v0, v1) = cpmg_unit_propagators(&k, &c, tau).unwrap();
        let half = crate::spincore::spin_operators(0.5).unwrap();
        let expected = expm_hermitian(&half.iz.scale(larmor_frequency(&c)), 4.0 * tau).unwrap();
        assert!(max_abs(&(v0 - &expected)) < 1e-12);
        assert!(max_abs(&(v1 - &expected)) < 1e-12);
    }

    /// Rotation axis of an SU(2) element from its Pauli components.
    fn rotation_axis(u: &ComplexMatrix) -> [f64; 3] {
        // U = a·1 − i(bx σx + by σy + bz σz)
        let bx = -0.5 * (u[(0, 1)] + u[(1, 0)]).im;
        let by = 0.5 * (u[(0, 1)] - u[(1, 0)]).re;
        let bz = -0.5 * (u[(0, 0)] - u[(1, 1)]).im;
        let n = (bx * bx + by * by + bz * bz).sqrt();
        [bx / n, by / n, bz / n]
    }

    #[test]
    fn carbon_one_resonance_axes_are_opposed() {
        let c = consts();
        let k = &table_carbons()[0];
        let (v0, v1) = cpmg_unit_propagators(k, &c, 2.579).unwrap();
        let (a, b) = (rotation_axis(&v0), rotation_axis(&v1));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(dot < 0.0, "axis overlap {dot}");
    }

    #[test]
    fn factor_trivial_cases() {
        let c = consts();
        let k = CarbonParams::new("z", -30.0, 0.0);
        for n in [2, 4, 16, 64] {
            assert!((carbon_coherence_factor(&k, &c, 0.47, n).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(carbon_coherence_factor(&table_carbons()[0], &c, 0.5, 3).is_err());
        assert!(carbon_coherence_factor(&table_carbons()[0], &c, 0.5, 0).is_err());
        assert!(carbon_coherence_factor(&table_carbons()[0], &c, -0.5, 2).is_err());
    }

    #[test]
    fn carbon_one_dip_near_fig4_tau() {
        let c = consts();
        let k = &table_carbons()[0];
        let taus = grid(2.4, 2.8, 0.001);
        let scan = coherence_scan(std::slice::from_ref(k), &c, &taus, 16).unwrap();
        let (imin, wmin) = scan
            .w
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, &w)| (i, w))
            .unwrap();
        assert!(wmin < -0.8, "dip depth {wmin}");
        assert!((taus[imin] - 2.579).abs() < 0.03, "dip at {}", taus[imin]);
    }

    #[test]
    fn bath_coherence_products() {
        let c = consts();
        let none = bath_coherence(&[], &c, 0.5, 16).unwrap();
        assert_eq!((none.w, none.p0), (1.0, 1.0));
        let k = table_carbons()[2].clone();
        let single = bath_coherence(std::slice::from_ref(&k), &c, 0.5, 16).unwrap();
        assert_eq!(single.w, carbon_coherence_factor(&k, &c, 0.5, 16).unwrap());
        assert!((single.p0 - 0.5 * (single.w + 1.0)).abs() < 1e-15);

        let all = table_carbons();
        let (a, b) = all.split_at(2);
        let wa = bath_coherence(a, &c, 0.46, 20).unwrap().w;
        let wb = bath_coherence(b, &c, 0.46, 20).unwrap().w;
        let wab = bath_coherence(&all, &c, 0.46, 20).unwrap().w;
        assert!((wab - wa * wb).abs() < 1e-15);
    }

    #[test]
    fn factor_invariant_under_transverse_sign() {
        let c = consts();
        for k in table_carbons() {
            let flipped = CarbonParams { a_xz: -k.a_xz, ..k.clone() };
            for (tau, n) in [(0.44, 16), (2.579, 32), (1.3, 6)] {
                let a = carbon_coherence_factor(&k, &c, tau, n).unwrap();
                let b = carbon_coherence_factor(&flipped, &c, tau, n).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dephased_bell_family() {
        assert!((concurrence(&dephased_bell_state(1.0, 0.0).unwrap()).unwrap() - 1.0).abs() < 1e-10);
        assert!(concurrence(&dephased_bell_state(0.0, 0.0).unwrap()).unwrap().abs() < 1e-10);
        for phi in [0.0, 0.7, -2.1, 3.0] {
            let c = concurrence(&dephased_bell_state(0.6, phi).unwrap()).unwrap();
            assert!((c - 0.6).abs() < 1e-9);
        }
        assert!(dephased_bell_state(1.2, 0.0).is_err());
    }

    #[test]
    fn empty_bath_keeps_full_entanglement() {
        let trace = entanglement_trace(&[], &consts(), 0.47, &even_counts(40)).unwrap();
        assert!(trace.c.iter().all(|&c| (c - 1.0).abs() < 1e-9));
        assert!(entanglement_trace(&[], &consts(), 0.47, &[4, 2]).is_err());
    }

    #[test]
    fn oracle_without_bath_returns_bell_state_up_to_phase() {
        let cfg = default_config().with_carbons(vec![]);
        for (tau, n) in [(0.3, 2), (1.7, 16), (0.47, 8)] {
            let out = full_oracle_propagate(&cfg, &PulseSequence::Cpmg { tau, n }, &bell()).unwrap();
            let t = 2.0 * n as f64 * tau;
            let expected = dephased_bell_state(1.0, pair_phase(&cfg.constants, t)).unwrap();
            assert!((fidelity(&out, &expected).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_matches_factor_for_one_carbon() {
        let cfg = default_config();
        for (i, tau) in [(0usize, 0.44), (1, 0.51), (0, 2.579), (3, 1.23)] {
            let one = cfg.with_carbons(vec![cfg.carbons[i].clone()]);
            let n = 16;
            let out = full_oracle_propagate(&one, &PulseSequence::Cpmg { tau, n }, &bell()).unwrap();
            let w = oracle_coherence(&out, &cfg.constants, 2.0 * n as f64 * tau);
            let m = carbon_coherence_factor(&cfg.carbons[i], &cfg.constants, tau, n).unwrap();
            assert!((w.re - m).abs() < 1e-8, "{} vs {m}", w.re);
            assert!(w.im.abs() < 1e-8);
        }
    }

    #[test]
    fn oracle_with_spin_one_levels_matches_qubit_oracle() {
        let mut cfg = default_config().with_carbons(table_carbons()[..2].to_vec());
        let seq = PulseSequence::Cpmg { tau: 0.47, n: 6 };
        let small = full_oracle_propagate(&cfg, &seq, &bell()).unwrap();
        cfg.electron_levels = 3;
        cfg.nitrogen_levels = 3;
        let big = full_oracle_propagate(&cfg, &seq, &bell()).unwrap();
        assert!(max_abs(&(small.matrix() - big.matrix())) < 1e-9);
    }

    #[test]
    fn oracle_rejects_bad_initial_state() {
        let cfg = default_config().with_carbons(vec![]);
        let m = bell().matrix().scale(2.0);
        let unnormalized = DensityMatrix::from_matrix_unchecked(m);
        assert!(full_oracle_propagate(&cfg, &PulseSequence::Cpmg { tau: 1.0, n: 2 }, &unnormalized).is_err());
    }

    #[test]
    fn preparation_with_bath_matches_oracle() {
        let cfg = default_config().with_carbons(table_carbons()[..2].to_vec());
        // |+⟩_e ⊗ |0⟩_n
        let mut m = ComplexMatrix::zeros(4, 4);
        for &(i, j) in &[(0, 0), (0, 2), (2, 0), (2, 2)] {
            m[(i, j)] = c64(0.5, 0.0);
        }
        let start = DensityMatrix::new(m).unwrap();
        let (tau1, tau, n) = (0.35, 0.47, 4);
        let out = full_oracle_propagate_schedule(
            &cfg,
            &[PulseSequence::Prep { tau1 }, PulseSequence::Cpmg { tau, n }],
            &start,
        )
        .unwrap();
        let w = bath_coherence_with_prep(&cfg.carbons, &cfg.constants, tau, n, Preparation::WithBath { tau1 })
            .unwrap()
            .w;
        assert!((2.0 * out.matrix()[(0, 3)].norm() - w.abs()).abs() < 1e-8);
        assert!((concurrence(&out).unwrap() - w.abs()).abs() < 1e-8);
    }

    #[test]
    fn hahn_is_available_in_the_time_domain() {
        let cfg = default_config().with_carbons(table_carbons()[..1].to_vec());
        let out = full_oracle_propagate(&cfg, &PulseSequence::Hahn { tau: 2.0 }, &bell()).unwrap();
        // one π pulse moves the coherence onto |01⟩⟨10|
        assert!(out.matrix()[(0, 3)].norm() < 1e-12);
        assert!(out.matrix()[(1, 2)].norm() > 0.4);
        assert!((out.matrix().trace().re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quasi_static_decay() {
        assert_eq!(quasi_static_coherence(0.0, 10.0), 1.0);
        let sigma = sigma_for_coherence_time(3.7);
        assert!((sigma - 2f64.sqrt() / 3.7).abs() < 1e-15);
        assert!((quasi_static_coherence(sigma, 3.7) - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn quasi_static_matches_monte_carlo_average() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let sigma = 0.4;
        let t = 3.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let normal = Normal::new(0.0f64, sigma).unwrap();
        let samples = 100_000;
        let mean: f64 = (0..samples).map(|_| (normal.sample(&mut rng) * t).cos()).sum::<f64>() / samples as f64;
        let exact = quasi_static_coherence(sigma, t);
        assert!((mean - exact).abs() / exact < 0.01, "{mean} vs {exact}");
    }

    #[test]
    fn resonance_tau_from_constants() {
        let tau = first_order_resonance_tau(&consts());
        assert!((tau - 1.0 / (4.0 * 0.51253)).abs() < 1e-12);
    }

    #[test]
    fn grid_is_inclusive() {
        let g = grid(0.2, 3.0, 0.01);
        assert_eq!(g.len(), 281);
        assert!((g[280] - 3.0).abs() < 1e-12);
    }
}
