//! Filter functions, spectral overlap integrals and first-harmonic spectrum
//! reconstruction.
//!
//! Frequencies are angular (rad/µs). A spectrum is given on an ascending grid
//! and interpolated linearly; it is zero outside the grid.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::dynamics::{CoherenceTrace, TraceAxis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    pub omega: Vec<f64>,
    pub s: Vec<f64>,
}

impl NoiseSpectrum {
    pub fn new(omega: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        let spec = Self { omega, s };
        spec.validate()?;
        Ok(spec)
    }

    /// Samples `f` on `omega`.
    pub fn from_fn(omega: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let s = omega.iter().map(|&w| f(w)).collect();
        Self::new(omega, s)
    }

    pub fn zero(omega: Vec<f64>) -> Result<Self> {
        let s = vec![0.0; omega.len()];
        Self::new(omega, s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega.len() != self.s.len() {
            return Err(Error::invalid("spectrum omega and s lengths differ"));
        }
        if self.omega.len() < 2 {
            return Err(Error::invalid("spectrum needs at least two grid points"));
        }
        if self.omega.iter().any(|w| !w.is_finite()) || self.omega.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spectrum grid must be finite and strictly increasing"));
        }
        if let Some(bad) = self.s.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spectral density {bad} is negative or not finite")));
        }
        Ok(())
    }

    /// Linear interpolation, zero outside the grid.
    pub fn at(&self, w: f64) -> f64 {
        let (lo, hi) = (self.omega[0], self.omega[self.omega.len() - 1]);
        if w < lo || w > hi {
            return 0.0;
        }
        let i = self.omega.partition_point(|&x| x <= w).clamp(1, self.omega.len() - 1);
        let (x0, x1) = (self.omega[i - 1], self.omega[i]);
        let f = (w - x0) / (x1 - x0);
        self.s[i - 1] + f * (self.s[i] - self.s[i - 1])
    }

    /// Grid index with the largest density.
    pub fn peak_index(&self) -> usize {
        self.s
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterEvaluation {
    pub omega_t: Vec<f64>,
    pub f: Vec<f64>,
    pub n: usize,
}

fn check_even(n: usize) -> Result<()> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("pulse count {n} must be even and at least 2")));
    }
    Ok(())
}

/// sin(Nθ)/cos θ for even N, finite at the poles of the quotient.
fn sin_ratio(n: usize, theta: f64) -> f64 {
    let c = theta.cos();
    if c.abs() > 1e-3 {
        return (n as f64 * theta).sin() / c;
    }
    let mut acc = 0.0;
    for k in 0..n / 2 {
        let term = ((n - 1 - 2 * k) as f64 * theta).sin();
        acc += if k % 2 == 0 { term } else { -term };
    }
    2.0 * acc
}

/// CPMG filter F_N(x) = 8 sin²(x/2)·sin⁴(x/4N)/cos²(x/2N).
pub fn filter_function(omega_t: f64, n: usize) -> Result<f64> {
    check_even(n)?;
    if !omega_t.is_finite() {
        return Err(Error::invalid("ωt must be finite"));
    }
    Ok(filter_unchecked(omega_t, n))
}

fn filter_unchecked(x: f64, n: usize) -> f64 {
    let theta = x / (2.0 * n as f64);
    let r = sin_ratio(n, theta);
    let s = (0.5 * theta).sin();
    let s2 = s * s;
    8.0 * r * r * s2 * s2
}

pub fn evaluate_filter(omega_t: &[f64], n: usize) -> Result<FilterEvaluation> {
    check_even(n)?;
    let f = omega_t.iter().map(|&x| filter_function(x, n)).collect::<Result<Vec<_>>>()?;
    Ok(FilterEvaluation { omega_t: omega_t.to_vec(), f, n })
}

/// Angular frequency of the filter harmonic `j` (0-based) for total time `t`.
pub fn harmonic_frequency(j: usize, n: usize, t: f64) -> f64 {
    (2 * j + 1) as f64 * n as f64 * PI / t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decay {
    pub chi: f64,
    pub w: f64,
    pub p0: f64,
}

impl Decay {
    fn from_chi(chi: f64) -> Self {
        let w = (-chi).exp();
        Self { chi, w, p0: 0.5 * (w + 1.0) }
    }
}

pub const CHI_TOLERANCE: f64 = 1e-6;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    adaptive_simpson(f, a, fa, b, fb, m, fm, whole, tol, 40)
}

/// χ = (1/π)∫ dω S(ω)/ω² · F_N(ωt), with W = e^{−χ} and P₀ = (W+1)/2.
///
/// The integration range is cut at every spectrum grid point and at every
/// zero of sin(ωt/2), so each piece holds at most one filter lobe and one
/// linear piece of S; each piece is integrated by adaptive Simpson with a
/// share of the absolute tolerance proportional to its length.
///
/// Fails with [`Error::Coverage`] unless the grid spans the first three
/// harmonics with a margin of 10/t on either side.
pub fn chi_from_spectrum(spec: &NoiseSpectrum, t: f64, n: usize) -> Result<Decay> {
    check_even(n)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid("total time must be positive"));
    }
    spec.validate()?;
    let (lo, hi) = (spec.omega[0], spec.omega[spec.omega.len() - 1]);
    let need_lo = harmonic_frequency(0, n, t) - 10.0 / t;
    let need_hi = harmonic_frequency(2, n, t) + 10.0 / t;
    if lo > need_lo.max(0.0) || hi < need_hi {
        return Err(Error::Coverage(format!(
            "spectrum grid [{lo:.4}, {hi:.4}] rad/us does not cover [{:.4}, {need_hi:.4}] rad/us",
            need_lo.max(0.0)
        )));
    }
    if spec.s.iter().all(|&s| s == 0.0) {
        return Ok(Decay::from_chi(0.0));
    }

    let start = lo.max(0.0);
    let step = 2.0 * PI / t;
    let mut cuts: Vec<f64> = spec.omega.iter().copied().filter(|&w| w > start && w < hi).collect();
    let mut k = (start / step).floor() as i64 + 1;
    loop {
        let w = k as f64 * step;
        if w >= hi {
            break;
        }
        cuts.push(w);
        k += 1;
    }
    cuts.push(start);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let integrand = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        spec.at(w) * filter_unchecked(w * t, n) / (w * w)
    };
    let span = hi - start;
    // the 1/π prefactor is applied after integration
    let tol = CHI_TOLERANCE * PI;
    let chi: f64 = cuts
        .par_windows(2)
        .map(|seg| integrate(&integrand, seg[0], seg[1], tol * (seg[1] - seg[0]) / span))
        .sum::<f64>()
        / PI;
    Ok(Decay::from_chi(chi.max(0.0)))
}

/// First-harmonic inverse: S(ω₀) = π²(−ln W)/(4t) at ω₀ = π/(2τ), t = 2nτ.
pub fn first_harmonic_density(w: f64, t: f64) -> f64 {
    PI * PI * (-w.ln()).max(0.0) / (4.0 * t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPoint {
    pub tau: f64,
    pub n: usize,
    pub w: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub spectrum: NoiseSpectrum,
    pub skipped: Vec<SkippedPoint>,
}

/// Spectrum from CPMG decays at varying τ.
///
/// Points with W ≤ 0 are skipped and reported. Higher harmonics are not
/// deconvolved, so narrow features also leave images at odd fractions of
/// their frequency. Points landing on the same ω₀ are averaged.
pub fn reconstruct_spectrum(traces: &[CoherenceTrace]) -> Result<Reconstruction> {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for trace in traces {
        trace.validate()?;
        check_even(trace.n)?;
        for (x, w) in trace.points() {
            let tau = match trace.axis {
                TraceAxis::Tau => x,
                TraceAxis::Time => x / (2.0 * trace.n as f64),
            };
            if !(tau > 0.0) {
                return Err(Error::invalid(format!("interval {tau} must be positive")));
            }
            if w <= 0.0 {
                skipped.push(SkippedPoint { tau, n: trace.n, w, reason: "non-positive coherence".into() });
                continue;
            }
            let t = 2.0 * trace.n as f64 * tau;
            points.push((PI / (2.0 * tau), first_harmonic_density(w.min(1.0), t)));
        }
    }
    if points.len() < 2 {
        return Err(Error::invalid("fewer than two usable points for reconstruction"));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut omega: Vec<f64> = Vec::new();
    let mut s: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (w0, value) in points {
        match omega.last() {
            Some(&last) if (w0 - last).abs() <= 1e-12 * w0.abs() => {
                let i = s.len() - 1;
                s[i] += value;
                counts[i] += 1;
            }
            _ => {
                omega.push(w0);
                s.push(value);
                counts.push(1);
            }
        }
    }
    for (v, c) in s.iter_mut().zip(&counts) {
        *v /= *c as f64;
    }
    if omega.len() < 2 {
        return Err(Error::invalid("fewer than two distinct frequencies for reconstruction"));
    }
    Ok(Reconstruction { spectrum: NoiseSpectrum::new(omega, s)?, skipped })
}

/// Gaussian line a·exp(−(ω−ω₀)²/(2σ²)).
pub fn gaussian_line(a: f64, omega0: f64, sigma: f64) -> impl Fn(f64) -> f64 {
    move |w| a * (-(w - omega0).powi(2) / (2.0 * sigma * sigma)).exp()
}

/// Uniform grid of `points` frequencies on [lo, hi].
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct formula, no guarding.
    fn raw_filter(x: f64, n: usize) -> f64 {
        let nf = n as f64;
        8.0 * (x / 2.0).sin().powi(2) * (x / (4.0 * nf)).sin().powi(4) / (x / (2.0 * nf)).cos().powi(2)
    }

    /// Composite midpoint rule with a fixed, very fine step.
    fn brute_chi(spec: &NoiseSpectrum, t: f64, n: usize, steps: usize) -> f64 {
        let (lo, hi) = (spec.omega[0].max(0.0), *spec.omega.last().unwrap());
        let h = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let w = lo + (i as f64 + 0.5) * h;
            acc += spec.at(w) * raw_filter(w * t, n) / (w * w);
        }
        acc * h / PI
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_function(0.0, 16).unwrap(), 0.0);
        let peak = filter_function(16.0 * PI, 16).unwrap();
        assert!((peak - 512.0).abs() < 1e-9, "{peak}");
        let d = 1e-4;
        let avg = 0.5 * (raw_filter(16.0 * PI + d, 16) + raw_filter(16.0 * PI - d, 16));
        assert!((avg - 512.0).abs() < 1e-4, "{avg}");
        assert!(filter_function(8.0 * PI, 16).unwrap().abs() < 1e-12);
        assert!(filter_function(1.0, 3).is_err());
        assert!(filter_function(1.0, 0).is_err());
    }

    #[test]
    fn guarded_filter_matches_raw_away_from_poles() {
        for n in [2, 4, 16, 64] {
            for i in 1..2000 {
                let x = i as f64 * 0.0731 * n as f64;
                let theta = x / (2.0 * n as f64);
                if theta.cos().abs() < 1e-2 {
                    continue;
                }
                let (a, b) = (filter_function(x, n).unwrap(), raw_filter(x, n));
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "n={n} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn higher_harmonic_limits() {
        // at x = (2j+1)Nπ the limit is 8N²·sin⁴((2j+1)π/4) = 2N²
        for j in 0..4 {
            let x = (2 * j + 1) as f64 * 16.0 * PI;
            assert!((filter_function(x, 16).unwrap() - 512.0).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_spectrum_gives_unit_coherence() {
        let spec = NoiseSpectrum::zero(linear_grid(0.0, 40.0, 50)).unwrap();
        let d = chi_from_spectrum(&spec, 10.0, 16).unwrap();
        assert_eq!((d.chi, d.w, d.p0), (0.0, 1.0, 1.0));
    }

    #[test]
    fn quadrature_matches_brute_force() {
        let t = 16.0;
        let n = 16;
        let w0 = PI * n as f64 / t;
        let spec = NoiseSpectrum::from_fn(linear_grid(0.0, 18.0, 600), gaussian_line(0.02, w0, 0.3)).unwrap();
        let fast = chi_from_spectrum(&spec, t, n).unwrap().chi;
        let slow = brute_chi(&spec, t, n, 2_000_000);
        assert!((fast - slow).abs() < 2e-6, "{fast} vs {slow}");
    }

    #[test]
    fn white_noise_limit() {
        let s0 = 0.01;
        for n in [32, 64] {
            let t = 20.0;
            // many harmonics so the truncated tail stays below a percent
            let hi = harmonic_frequency(200, n, t);
            let spec = NoiseSpectrum::from_fn(linear_grid(0.0, hi, 200), |_| s0).unwrap();
            let chi = chi_from_spectrum(&spec, t, n).unwrap().chi;
            let expected = s0 * t / 2.0;
            assert!((chi / expected - 1.0).abs() < 0.02, "n={n}: {chi} vs {expected}");
        }
    }

    #[test]
    fn first_harmonic_constant() {
        // S broad compared with the filter lobe width 2π/t but narrow compared
        // with the harmonic spacing.
        let n = 512;
        let tau = 0.5;
        let t = 2.0 * n as f64 * tau;
        let w0 = PI / (2.0 * tau);
        let a = 1e-4;
        let spec = NoiseSpectrum::from_fn(linear_grid(0.0, 6.0 * w0, 6000), gaussian_line(a, w0, 0.15)).unwrap();
        let chi = chi_from_spectrum(&spec, t, n).unwrap().chi;
        let approx = a * 4.0 * t / (PI * PI);
        assert!((chi / approx - 1.0).abs() < 0.03, "{chi} vs {approx}");
        assert!((first_harmonic_density((-chi).exp(), t) / a - 1.0).abs() < 0.03);
    }

    #[test]
    fn coverage_is_checked() {
        let spec = NoiseSpectrum::from_fn(linear_grid(0.0, 3.0, 50), |_| 1e-3).unwrap();
        assert!(matches!(chi_from_spectrum(&spec, 16.0, 16), Err(Error::Coverage(_))));
        let late = NoiseSpectrum::from_fn(linear_grid(3.2, 40.0, 50), |_| 1e-3).unwrap();
        assert!(matches!(chi_from_spectrum(&late, 16.0, 16), Err(Error::Coverage(_))));
    }

    #[test]
    fn spectrum_validation() {
        assert!(NoiseSpectrum::new(vec![0.0, 1.0], vec![0.0, -1.0]).is_err());
        assert!(NoiseSpectrum::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(NoiseSpectrum::new(vec![0.0], vec![0.0]).is_err());
        let s = NoiseSpectrum::new(vec![0.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(s.at(1.0), 2.0);
        assert_eq!(s.at(-1.0), 0.0);
        assert_eq!(s.at(2.0), 3.0);
    }

    #[test]
    fn unit_coherence_reconstructs_to_zero() {
        let trace = CoherenceTrace {
            axis: TraceAxis::Tau,
            x: vec![0.4, 0.5, 0.6],
            w: vec![1.0; 3],
            n: 32,
            carbons: vec![],
            frame: "rotating".into(),
        };
        let r = reconstruct_spectrum(&[trace]).unwrap();
        assert!(r.spectrum.s.iter().all(|&s| s == 0.0));
        assert!(r.spectrum.omega.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn non_positive_points_are_skipped() {
        let trace = CoherenceTrace {
            axis: TraceAxis::Tau,
            x: vec![0.4, 0.5, 0.6],
            w: vec![0.5, -0.1, 0.9],
            n: 16,
            carbons: vec![],
            frame: "rotating".into(),
        };
        let r = reconstruct_spectrum(&[trace]).unwrap();
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.spectrum.omega.len(), 2);
    }

    #[test]
    fn gaussian_round_trip() {
        let n = 32;
        let omega0 = 3.2;
        let a = 2e-3;
        let truth = NoiseSpectrum::from_fn(linear_grid(0.0, 30.0, 3000), gaussian_line(a, omega0, 0.5)).unwrap();
        let taus: Vec<f64> = (0..=60).map(|i| 0.38 + 0.002 * i as f64).collect();
        let w: Vec<f64> = taus.iter().map(|&tau| chi_from_spectrum(&truth, 2.0 * n as f64 * tau, n).unwrap().w).collect();
        let trace = CoherenceTrace { axis: TraceAxis::Tau, x: taus.clone(), w, n, carbons: vec![], frame: "rotating".into() };
        let r = reconstruct_spectrum(&[trace]).unwrap().spectrum;
        let i = r.peak_index();
        assert!((r.s[i] / a - 1.0).abs() < 0.10, "peak {} vs {a}", r.s[i]);
        let step = r.omega[i.min(r.omega.len() - 2) + 1] - r.omega[i.min(r.omega.len() - 2)];
        assert!((r.omega[i] - omega0).abs() <= step.abs() + 1e-12, "peak at {}", r.omega[i]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn filter_is_nonnegative(x in 0.0f64..5000.0, half in 1usize..=32) {
            let v = filter_function(x, 2 * half).unwrap();
            prop_assert!(v >= -1e-12 && v.is_finite());
        }

        #[test]
        fn monotone_in_spectrum(scale in 1.0f64..5.0, bump in 0.0f64..0.01, centre in 2.0f64..6.0) {
            let grid = linear_grid(0.0, 20.0, 200);
            let base = NoiseSpectrum::from_fn(grid.clone(), gaussian_line(1e-3, 3.0, 0.5)).unwrap();
            let bigger = NoiseSpectrum::from_fn(grid, |w| {
                scale * gaussian_line(1e-3, 3.0, 0.5)(w) + gaussian_line(bump, centre, 0.3)(w)
            })
            .unwrap();
            let (a, b) = (chi_from_spectrum(&base, 8.0, 8).unwrap(), chi_from_spectrum(&bigger, 8.0, 8).unwrap());
            prop_assert!(b.w <= a.w + 1e-9);
        }
    }

    #[test]
    fn filter_nonnegative_on_dense_random_samples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1_000_000 {
            let n = 2 * rng.random_range(1..=32);
            let x = rng.random_range(0.0..(400.0 * n as f64));
            assert!(filter_unchecked(x, n) >= -1e-12);
        }
    }

    #[test]
    fn slope_six_near_zero() {
        for n in [2, 16, 64] {
            let (x1, x2) = (1e-3, 2e-3);
            let slope = (filter_function(x2, n).unwrap() / filter_function(x1, n).unwrap()).ln() / (x2 / x1).ln();
            assert!((slope - 6.0).abs() < 0.1, "n={n}: {slope}");
        }
    }
}
