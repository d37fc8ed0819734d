//! Least-squares fitting: Gaussian coherence decays and single-carbon
//! hyperfine calibration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{bath_coherence, carbon_coherence_factor, CoherenceTrace, TraceAxis};
use crate::error::{Error, Result};
use crate::model::{CarbonParams, PhysicalConstants};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.sigmas[i])
    }
}

/// `value(sigma)` with the uncertainty expressed in the last quoted digit,
/// e.g. 114.53 ± 0.1 → `114.5(1)`.
pub fn format_with_uncertainty(value: f64, sigma: f64) -> String {
    if !(sigma > 0.0) || !sigma.is_finite() || !value.is_finite() {
        return format!("{value}");
    }
    let exp = sigma.log10().floor() as i32;
    let mut digit = (sigma / 10f64.powi(exp)).round() as i64;
    let mut exp = exp;
    if digit >= 10 {
        digit = 1;
        exp += 1;
    }
    if exp >= 0 {
        let scale = 10f64.powi(exp);
        format!("{}({})", (value / scale).round() * scale, digit as f64 * scale)
    } else {
        let decimals = (-exp) as usize;
        format!("{value:.decimals$}({digit})")
    }
}

// ---------------------------------------------------------------------------
// damped least squares

pub const DEFAULT_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub x_tol: f64,
    pub f_tol: f64,
    pub g_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: DEFAULT_MAX_ITERATIONS, x_tol: 1e-12, f_tol: 1e-15, g_tol: 1e-14 }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg–Marquardt on `residuals(x)` with Jacobian `jac(x)` (rows are
/// residuals). Trial points are clipped into `bounds` when given.
pub fn levenberg_marquardt<R, J>(
    residuals: R,
    jac: J,
    x0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: LmOptions,
) -> Result<LmOutcome>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let clip = |x: &mut [f64]| {
        if let Some(b) = bounds {
            for (v, &(lo, hi)) in x.iter_mut().zip(b) {
                *v = v.clamp(lo, hi);
            }
        }
    };
    let mut x = x0.to_vec();
    clip(&mut x);
    let mut r = residuals(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("residuals not finite at the starting point".into()));
    }
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let p = x.len();
    for iteration in 0..opts.max_iterations {
        let j = jac(&x);
        let rv = DVector::from_column_slice(&r);
        let jt = j.transpose();
        let g = &jt * &rv;
        let a = &jt * &j;
        if g.amax() <= opts.g_tol * (1.0 + cost) {
            return Ok(LmOutcome { x, residuals: r, jacobian: j, iterations: iteration, converged: true });
        }
        let mut improved = false;
        let mut tiny_step = false;
        for _ in 0..30 {
            let mut damped = a.clone();
            for d in 0..p {
                damped[(d, d)] += lambda * a[(d, d)].max(1e-12 * a.diagonal().amax().max(1e-300));
            }
            let Some(step) = damped.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clip(&mut trial);
            let dx: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dx <= opts.x_tol * (xn + opts.x_tol) {
                tiny_step = true;
                break;
            }
            let tr = residuals(&trial);
            let tc = sum_sq(&tr);
            if tc.is_finite() && tc < cost {
                let rel = (cost - tc) / cost.max(1e-300);
                x = trial;
                r = tr;
                cost = tc;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel < opts.f_tol || dx <= opts.x_tol * (xn + opts.x_tol) {
                    tiny_step = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if tiny_step || !improved {
            let j = jac(&x);
            return Ok(LmOutcome { x, residuals: r, jacobian: j, iterations: iteration + 1, converged: true });
        }
    }
    let g = jac(&x).transpose() * DVector::from_column_slice(&r);
    Err(Error::NonConvergence { iterations: opts.max_iterations, gradient_norm: g.norm(), best: x })
}

/// 1-σ uncertainties from s²·(JᵀJ)⁻¹ with s² = RSS/(m − p).
pub fn covariance_sigmas(jac: &DMatrix<f64>, residuals: &[f64]) -> Option<Vec<f64>> {
    let (m, p) = jac.shape();
    let dof = m.saturating_sub(p).max(1) as f64;
    let s2 = sum_sq(residuals) / dof;
    let inv = (jac.transpose() * jac).try_inverse()?;
    Some((0..p).map(|i| (s2 * inv[(i, i)]).max(0.0).sqrt()).collect())
}

/// Central finite-difference Jacobian with per-parameter steps.
pub fn numeric_jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let base = f(x);
    let mut j = DMatrix::zeros(base.len(), x.len());
    for k in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += steps[k];
        xm[k] -= steps[k];
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..base.len() {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * steps[k]);
        }
    }
    j
}

// ---------------------------------------------------------------------------
// Gaussian decay

/// a·exp(−(t/T)²) [+ floor]; parameters ordered (a, T[, floor]).
pub fn gaussian_decay_model(p: &[f64], t: f64) -> f64 {
    let base = p[0] * (-(t / p[1]).powi(2)).exp();
    base + p.get(2).copied().unwrap_or(0.0)
}

pub(crate) fn gaussian_decay_jacobian(p: &[f64], ts: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(ts.len(), p.len(), |i, k| {
        let t = ts[i];
        let e = (-(t / p[1]).powi(2)).exp();
        match k {
            0 => e,
            1 => p[0] * e * 2.0 * t * t / p[1].powi(3),
            _ => 1.0,
        }
    })
}

/// Least-squares fit of a Gaussian decay.
///
/// Fails with [`Error::Unbounded`] when the decay time runs away (flat data),
/// and with [`Error::NonConvergence`] after 500 iterations.
pub fn fit_gaussian_decay(trace: &[(f64, f64)], with_floor: bool) -> Result<FitResult> {
    if trace.len() < 4 {
        return Err(Error::invalid("Gaussian decay fit needs at least 4 points"));
    }
    if trace.iter().any(|&(t, y)| !(t >= 0.0) || !t.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("times must be nonnegative and values finite"));
    }
    let ts: Vec<f64> = trace.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    if !(t_max > 0.0) {
        return Err(Error::invalid("time span must be positive"));
    }

    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
    let floor0 = if with_floor { ys.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0).max(-1.0) } else { 0.0 };
    let a0 = ys[order[0]] - floor0;
    let target = floor0 + a0 / std::f64::consts::E;
    let t0 = order
        .iter()
        .find(|&&i| if a0 >= 0.0 { ys[i] <= target } else { ys[i] >= target })
        .map(|&i| ts[i].max(t_max / ts.len() as f64))
        .unwrap_or(2.0 * t_max);
    let mut x0 = vec![if a0 != 0.0 { a0 } else { 1.0 }, t0];
    if with_floor {
        x0.push(floor0);
    }

    let resid = |p: &[f64]| -> Vec<f64> { ts.iter().zip(&ys).map(|(&t, &y)| gaussian_decay_model(p, t) - y).collect() };
    let jac = |p: &[f64]| gaussian_decay_jacobian(p, &ts);
    let outcome = levenberg_marquardt(resid, jac, &x0, None, LmOptions::default())?;
    let decay = outcome.x[1].abs();
    if decay > 1e3 * t_max || !decay.is_finite() {
        return Err(Error::Unbounded(format!(
            "decay time diverges ({decay:.3e} against a time span of {t_max:.3e}); the data show no decay"
        )));
    }
    let mut params = outcome.x.clone();
    params[1] = decay;
    let sigmas = covariance_sigmas(&outcome.jacobian, &outcome.residuals)
        .ok_or_else(|| Error::Unbounded("fit covariance is singular".into()))?;
    let mut names = vec!["a".to_string(), "T".to_string()];
    if with_floor {
        names.push("floor".into());
    }
    Ok(FitResult {
        names,
        params,
        sigmas,
        residual_norm: sum_sq(&outcome.residuals).sqrt(),
        converged: outcome.converged,
        iterations: outcome.iterations,
    })
}

// ---------------------------------------------------------------------------
// hyperfine calibration

/// Search box in kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineBounds {
    pub a_zz: (f64, f64),
    pub a_xz: (f64, f64),
}

impl HyperfineBounds {
    /// Box of half-widths `dzz`, `dxz` around a carbon's nominal values.
    pub fn around(k: &CarbonParams, dzz: f64, dxz: f64) -> Self {
        Self { a_zz: (k.a_zz - dzz, k.a_zz + dzz), a_xz: (k.a_xz - dxz, k.a_xz + dxz) }
    }

    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.a_zz, self.a_xz] {
            if !lo.is_finite() || !hi.is_finite() || !(hi > lo) {
                return Err(Error::invalid("calibration bounds must be finite with lower < upper"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub grid: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { grid: 41 }
    }
}

/// Fits (A_zz, A_xz) of one carbon against a measured CPMG trace with the
/// remaining carbons fixed. `k_index` is the target's position among the
/// simulated carbons; the product of coherence factors does not depend on
/// order, so it only labels the result.
pub fn calibrate_hyperfine(
    measured: &CoherenceTrace,
    constants: &PhysicalConstants,
    k_index: usize,
    bounds: &HyperfineBounds,
    fixed_others: &[CarbonParams],
    opts: CalibrationOptions,
) -> Result<FitResult> {
    measured.validate()?;
    bounds.validate()?;
    if opts.grid < 3 {
        return Err(Error::invalid("calibration grid needs at least 3 points per axis"));
    }
    if k_index > fixed_others.len() {
        return Err(Error::invalid(format!("carbon slot {k_index} beyond {} fixed carbons", fixed_others.len())));
    }
    let n = measured.n;
    let taus: Vec<f64> = measured
        .x
        .iter()
        .map(|&x| match measured.axis {
            TraceAxis::Tau => x,
            TraceAxis::Time => x / (2.0 * n as f64),
        })
        .collect();
    if taus.len() < 3 {
        return Err(Error::invalid("calibration needs at least 3 trace points"));
    }
    let background: Vec<f64> =
        taus.iter().map(|&tau| bath_coherence(fixed_others, constants, tau, n).map(|b| b.w)).collect::<Result<_>>()?;

    let label = format!("C{}", k_index + 1);
    let simulate = |p: &[f64]| -> Vec<f64> {
        let k = CarbonParams::new(&label, p[0], p[1]);
        taus.iter()
            .zip(&background)
            .zip(&measured.w)
            .map(|((&tau, &bg), &w)| bg * carbon_coherence_factor(&k, constants, tau, n).unwrap_or(f64::NAN) - w)
            .collect()
    };

    let g = opts.grid;
    let axis = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (g - 1) as f64;
    let costs: Vec<(usize, usize, f64)> = (0..g * g)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / g, idx % g);
            let p = [axis(bounds.a_zz, i), axis(bounds.a_xz, j)];
            (i, j, sum_sq(&simulate(&p)))
        })
        .collect();
    let &(bi, bj, best_cost) = costs
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| Error::Numerical("empty calibration grid".into()))?;
    if !best_cost.is_finite() {
        return Err(Error::Numerical("simulated trace is not finite".into()));
    }
    if bi == 0 || bi == g - 1 || bj == 0 || bj == g - 1 {
        return Err(Error::BoundaryHit(format!(
            "best grid point (A_zz, A_xz) = ({:.4}, {:.4}) kHz lies on the bounds box",
            axis(bounds.a_zz, bi),
            axis(bounds.a_xz, bj)
        )));
    }
    // flat residual along A_zz at the best A_xz means the data carry no information on it
    let row: Vec<f64> = costs.iter().filter(|c| c.1 == bj).map(|c| c.2).collect();
    let spread = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - row.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale: f64 = measured.w.iter().map(|w| w * w).sum::<f64>().max(1e-300);
    if spread <= 1e-10 * scale {
        return Err(Error::Unbounded("A_zz is not constrained by the trace (flat residual)".into()));
    }

    let x0 = [axis(bounds.a_zz, bi), axis(bounds.a_xz, bj)];
    let box_ = [bounds.a_zz, bounds.a_xz];
    let steps = [1e-6 * (bounds.a_zz.1 - bounds.a_zz.0), 1e-6 * (bounds.a_xz.1 - bounds.a_xz.0)];
    let jac = |p: &[f64]| numeric_jacobian(&simulate, p, &steps);
    let outcome = levenberg_marquardt(simulate, jac, &x0, Some(&box_), LmOptions::default())?;
    let cost = sum_sq(&outcome.residuals);
    debug_assert!(cost <= best_cost);
    let sigmas = covariance_sigmas(&outcome.jacobian, &outcome.residuals)
        .ok_or_else(|| Error::Unbounded("calibration curvature is singular".into()))?;
    Ok(FitResult {
        names: vec!["a_zz_khz".into(), "a_xz_khz".into()],
        params: outcome.x,
        sigmas,
        residual_norm: cost.sqrt(),
        converged: outcome.converged,
        iterations: outcome.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{coherence_scan, grid};
    use crate::model::{table_carbons, PhysicalConstants};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn samples(tc: f64, t_max: f64, points: usize) -> Vec<(f64, f64)> {
        (0..points)
            .map(|i| {
                let t = t_max * i as f64 / (points - 1) as f64;
                (t, (-(t / tc).powi(2)).exp())
            })
            .collect()
    }

    #[test]
    fn exact_gaussian_is_recovered() {
        let fit = fit_gaussian_decay(&samples(3.7, 10.0, 20), false).unwrap();
        assert!((fit.get("T").unwrap() - 3.7).abs() < 1e-6);
        assert!((fit.get("a").unwrap() - 1.0).abs() < 1e-9);
        assert!(fit.converged);
        assert!(fit.residual_norm < 1e-9);
    }

    #[test]
    fn floor_is_fitted() {
        let data: Vec<(f64, f64)> = samples(5.0, 15.0, 30).into_iter().map(|(t, y)| (t, 0.7 * y + 0.1)).collect();
        let fit = fit_gaussian_decay(&data, true).unwrap();
        assert!((fit.get("T").unwrap() - 5.0).abs() < 1e-6);
        assert!((fit.get("floor").unwrap() - 0.1).abs() < 1e-8);
        assert!((fit.get("a").unwrap() - 0.7).abs() < 1e-8);
    }

    #[test]
    fn flat_trace_is_unbounded() {
        let data: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(fit_gaussian_decay(&data, false), Err(Error::Unbounded(_))));
    }

    #[test]
    fn too_few_points() {
        assert!(fit_gaussian_decay(&samples(1.0, 3.0, 3), false).is_err());
    }

    #[test]
    fn noisy_decay_within_five_percent() {
        let normal = Normal::new(0.0, 0.02).unwrap();
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<(f64, f64)> =
                samples(602.0, 1500.0, 60).into_iter().map(|(t, y)| (t, y + normal.sample(&mut rng))).collect();
            let fit = fit_gaussian_decay(&data, false).unwrap();
            if (fit.get("T").unwrap() / 602.0 - 1.0).abs() < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn gaussian_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ts: Vec<f64> = (0..15).map(|i| 0.4 * i as f64).collect();
        for _ in 0..10 {
            let p: [f64; 3] = [rng.random_range(0.2..2.0), rng.random_range(0.5..5.0), rng.random_range(-0.3..0.3)];
            let f = |q: &[f64]| ts.iter().map(|&t| gaussian_decay_model(q, t)).collect::<Vec<_>>();
            let steps: Vec<f64> = p.iter().map(|v| 1e-6 * v.abs().max(1.0)).collect();
            let num = numeric_jacobian(&f, &p, &steps);
            let ana = gaussian_decay_jacobian(&p, &ts);
            for (a, b) in ana.iter().zip(num.iter()) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn uncertainty_formatting() {
        assert_eq!(format_with_uncertainty(114.53, 0.1), "114.5(1)");
        assert_eq!(format_with_uncertainty(-77.021, 0.03), "-77.02(3)");
        assert_eq!(format_with_uncertainty(602.0, 12.0), "600(10)");
        assert_eq!(format_with_uncertainty(1.0, 0.0), "1");
    }

    fn carbon_one_trace() -> CoherenceTrace {
        let c = PhysicalConstants::default();
        coherence_scan(&table_carbons()[..1], &c, &grid(2.3, 2.9, 0.01), 16).unwrap()
    }

    #[test]
    fn calibrates_carbon_one() {
        let c = PhysicalConstants::default();
        let truth = &table_carbons()[0];
        let bounds = HyperfineBounds::around(truth, 7.3, 23.0);
        let fit = calibrate_hyperfine(&carbon_one_trace(), &c, 0, &bounds, &[], CalibrationOptions::default()).unwrap();
        assert!((fit.get("a_zz_khz").unwrap() - truth.a_zz).abs() < 0.05);
        assert!((fit.get("a_xz_khz").unwrap() - truth.a_xz).abs() < 0.5);
    }

    #[test]
    fn calibration_boundary_hit() {
        let c = PhysicalConstants::default();
        let bounds = HyperfineBounds { a_zz: (-60.0, -40.0), a_xz: (100.0, 130.0) };
        let err = calibrate_hyperfine(&carbon_one_trace(), &c, 0, &bounds, &[], CalibrationOptions::default());
        assert!(matches!(err, Err(Error::BoundaryHit(_))), "{err:?}");
    }

    #[test]
    fn calibration_degenerate_without_transverse_coupling() {
        let c = PhysicalConstants::default();
        let flat = CarbonParams::new("C1", -77.02, 0.0);
        let trace = coherence_scan(&[flat], &c, &grid(2.3, 2.9, 0.01), 16).unwrap();
        let bounds = HyperfineBounds { a_zz: (-90.0, -60.0), a_xz: (-20.0, 20.0) };
        let err = calibrate_hyperfine(&trace, &c, 0, &bounds, &[], CalibrationOptions::default());
        assert!(matches!(err, Err(Error::Unbounded(_)) | Err(Error::BoundaryHit(_))), "{err:?}");
    }

    #[test]
    fn calibrates_carbon_two_among_six() {
        let c = PhysicalConstants::default();
        let table = table_carbons();
        let trace = coherence_scan(&table, &c, &grid(2.15, 2.45, 0.01), 16).unwrap();
        let others: Vec<CarbonParams> = table.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, k)| k.clone()).collect();
        let bounds = HyperfineBounds::around(&table[1], 7.3, 23.0);
        let fit = calibrate_hyperfine(&trace, &c, 1, &bounds, &others, CalibrationOptions::default()).unwrap();
        assert!((fit.get("a_zz_khz").unwrap() - 71.03).abs() < 0.1, "{fit:?}");
        assert!((fit.get("a_xz_khz").unwrap() - 58.7).abs() < 1.0, "{fit:?}");
    }

    #[test]
    fn calibration_never_regresses_past_grid_and_is_reproducible() {
        let c = PhysicalConstants::default();
        let truth = &table_carbons()[0];
        let bounds = HyperfineBounds::around(truth, 7.3, 23.0);
        let mut trace = carbon_one_trace();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 0.02).unwrap();
        trace.w.iter_mut().for_each(|w| *w = (*w + normal.sample(&mut rng)).clamp(-1.0, 1.0));
        let opts = CalibrationOptions { grid: 11 };
        let a = calibrate_hyperfine(&trace, &c, 0, &bounds, &[], opts).unwrap();
        let b = calibrate_hyperfine(&trace, &c, 0, &bounds, &[], opts).unwrap();
        assert_eq!(a, b);
        let g = 11;
        for i in 0..g {
            for j in 0..g {
                let zz = bounds.a_zz.0 + (bounds.a_zz.1 - bounds.a_zz.0) * i as f64 / (g - 1) as f64;
                let xz = bounds.a_xz.0 + (bounds.a_xz.1 - bounds.a_xz.0) * j as f64 / (g - 1) as f64;
                let k = CarbonParams::new("C1", zz, xz);
                let cost: f64 = trace
                    .points()
                    .map(|(tau, w)| (carbon_coherence_factor(&k, &c, tau, 16).unwrap() - w).powi(2))
                    .sum();
                assert!(a.residual_norm.powi(2) <= cost + 1e-12);
            }
        }
    }
}
