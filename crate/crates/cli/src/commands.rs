use std::f64::consts::PI;

use serde_json::json;
use spinbath::dynamics::{
    coherence_scan, entanglement_trace, even_counts, grid, quasi_static_coherence, sigma_for_coherence_time,
    CoherenceTrace, EntanglementTrace,
};
use spinbath::fit::{calibrate_hyperfine, fit_gaussian_decay, format_with_uncertainty, CalibrationOptions, HyperfineBounds};
use spinbath::io::{
    coherence_trace_table, entanglement_trace_table, fit_result_json, fit_result_key_values, parse_coherence_trace,
    parse_xy, spectrum_table, write_counts, write_density_matrix, CsvTable,
};
use spinbath::model::{CarbonParams, SystemConfig};
use spinbath::spectrum::{evaluate_filter, reconstruct_spectrum};
use spinbath::tomography::{
    concurrence, fidelity, mle_reconstruct_with_diagnostics, pauli_settings, simulate_counts, trace_distance,
    DensityMatrix, ReadoutCalibration,
};

use crate::args::{CalibrateArgs, EntanglementArgs, FitDecayArgs, ScanArgs, StateKind, Target, TomographyArgs};
use crate::output::Run;
use crate::CliError;

fn core<T>(r: spinbath::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::new(e.to_string()))
}

fn select_carbons(cfg: &SystemConfig, picks: &Option<Vec<usize>>) -> Result<Vec<CarbonParams>, CliError> {
    match picks {
        None => Ok(cfg.carbons.clone()),
        Some(list) => list
            .iter()
            .map(|&i| {
                cfg.carbons
                    .get(i.wrapping_sub(1))
                    .cloned()
                    .ok_or_else(|| CliError::new(format!("carbon index {i} outside 1..={}", cfg.carbons.len())))
            })
            .collect(),
    }
}

fn scan_grid(a: &ScanArgs) -> Result<Vec<f64>, CliError> {
    if !(a.tau_step > 0.0) || !(a.tau_stop >= a.tau_start) || !(a.tau_start > 0.0) {
        return Err(CliError::new("tau range must satisfy 0 < start <= stop with a positive step"));
    }
    let taus = grid(a.tau_start, a.tau_stop, a.tau_step);
    if taus.len() > 10_000_000 {
        return Err(CliError::new("tau grid too large"));
    }
    Ok(taus)
}

fn coherence_table_with_concurrence(trace: &CoherenceTrace) -> CsvTable {
    let mut t = coherence_trace_table(trace);
    t.columns.push("concurrence".into());
    for row in &mut t.rows {
        row.push(row[1].abs().min(1.0));
    }
    t
}

pub fn coherence_scan_cmd(cfg: &SystemConfig, a: &ScanArgs, run: &mut Run) -> Result<(), CliError> {
    let carbons = select_carbons(cfg, &a.carbons)?;
    let trace = core(coherence_scan(&carbons, &cfg.constants, &scan_grid(a)?, a.n))?;
    run.write("coherence_scan.csv", &coherence_trace_table(&trace).to_csv())
}

fn entanglement(cfg: &SystemConfig, carbons: &[CarbonParams], tau: f64, n_max: usize) -> Result<EntanglementTrace, CliError> {
    let counts = even_counts(n_max);
    if counts.is_empty() {
        return Err(CliError::new("n-max must be at least 2"));
    }
    core(entanglement_trace(carbons, &cfg.constants, tau, &counts))
}

pub fn entanglement_cmd(cfg: &SystemConfig, a: &EntanglementArgs, run: &mut Run) -> Result<(), CliError> {
    let carbons = select_carbons(cfg, &a.carbons)?;
    let trace = entanglement(cfg, &carbons, a.tau, a.n_max)?;
    run.write("entanglement.csv", &entanglement_trace_table(&trace).to_csv())
}

pub fn spectrum_cmd(cfg: &SystemConfig, a: &ScanArgs, run: &mut Run) -> Result<(), CliError> {
    let carbons = select_carbons(cfg, &a.carbons)?;
    let trace = core(coherence_scan(&carbons, &cfg.constants, &scan_grid(a)?, a.n))?;
    let rec = core(reconstruct_spectrum(std::slice::from_ref(&trace)))?;
    let mut table = spectrum_table(&rec.spectrum);
    table.metadata.push(("n".into(), a.n.to_string()));
    table.metadata.push(("skipped_points".into(), rec.skipped.len().to_string()));
    run.write("coherence_scan.csv", &coherence_trace_table(&trace).to_csv())?;
    run.write("spectrum.csv", &table.to_csv())
}

fn target_state(a: &TomographyArgs) -> Result<DensityMatrix, CliError> {
    match a.state {
        StateKind::Bell => core(spinbath::dynamics::dephased_bell_state(1.0, 0.0)),
        StateKind::Dephased => core(spinbath::dynamics::dephased_bell_state(a.w, 0.0)),
        StateKind::Mixed => Ok(DensityMatrix::maximally_mixed(4)),
    }
}

pub fn tomography_cmd(a: &TomographyArgs, seed: u64, run: &mut Run) -> Result<(), CliError> {
    let truth = target_state(a)?;
    let cal = if a.exact {
        ReadoutCalibration::exact()
    } else {
        ReadoutCalibration { rate_bright: a.rate_bright, rate_dark: a.rate_dark, noiseless: false }
    };
    let records = core(simulate_counts(&truth, &pauli_settings(), a.shots, &cal, seed))?;
    let (rho, diag) = core(mle_reconstruct_with_diagnostics(&records, &cal))?;
    let eig = rho.eigenvalues();
    let metrics = json!({
        "state": format!("{:?}", a.state).to_lowercase(),
        "shots": a.shots,
        "seed": seed,
        "rate_bright": cal.rate_bright,
        "rate_dark": cal.rate_dark,
        "exact_counts": cal.noiseless,
        "concurrence": core(concurrence(&rho))?,
        "target_concurrence": core(concurrence(&truth))?,
        "fidelity": core(fidelity(&rho, &truth))?,
        "trace_distance": core(trace_distance(&rho, &truth))?,
        "min_eigenvalue": eig[0],
        "trace": rho.matrix().trace().re,
        "mle_iterations": diag.iterations,
        "mle_gradient_norm": diag.gradient_norm,
    });
    run.write("counts.csv", &write_counts(&records))?;
    run.write("rho_mle.txt", &write_density_matrix(&rho))?;
    run.write("rho_target.txt", &write_density_matrix(&truth))?;
    run.write("metrics.json", &(serde_json::to_string_pretty(&metrics).expect("metrics") + "\n"))
}

fn read_input(run: &mut Run, role: &str, path: &std::path::Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
    run.input(role, path, &bytes);
    String::from_utf8(bytes).map_err(|_| CliError::new(format!("{} is not UTF-8", path.display())))
}

pub fn calibrate_cmd(cfg: &SystemConfig, a: &CalibrateArgs, run: &mut Run) -> Result<(), CliError> {
    let text = read_input(run, "trace", &a.trace)?;
    let mut trace = parse_coherence_trace(&text).map_err(|e| CliError::new(format!("{}: {e}", a.trace.display())))?;
    if let Some(n) = a.n {
        trace.n = n;
    }
    if trace.n == 0 {
        return Err(CliError::new("trace has no pulse count; pass --n"));
    }
    let idx = a.carbon.wrapping_sub(1);
    let Some(target) = cfg.carbons.get(idx) else {
        return Err(CliError::new(format!("carbon index {} outside 1..={}", a.carbon, cfg.carbons.len())));
    };
    let others: Vec<CarbonParams> =
        cfg.carbons.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, k)| k.clone()).collect();
    let bounds = HyperfineBounds::around(target, a.dzz, a.dxz);
    let fit = core(calibrate_hyperfine(&trace, &cfg.constants, idx, &bounds, &others, CalibrationOptions { grid: a.grid }))?;
    let mut kv = format!("# carbon: {}\n", target.label);
    for ((name, v), s) in fit.names.iter().zip(&fit.params).zip(&fit.sigmas) {
        kv.push_str(&format!("# {name}: {}\n", format_with_uncertainty(*v, *s)));
    }
    kv.push_str(&fit_result_key_values(&fit));
    run.write("calibration.txt", &kv)?;
    run.write("calibration.json", &(fit_result_json(&fit) + "\n"))
}

pub fn fit_decay_cmd(a: &FitDecayArgs, run: &mut Run) -> Result<(), CliError> {
    let text = read_input(run, "trace", &a.trace)?;
    let data = parse_xy(&text).map_err(|e| CliError::new(format!("{}: {e}", a.trace.display())))?;
    let fit = core(fit_gaussian_decay(&data, a.floor))?;
    run.write("fit.txt", &fit_result_key_values(&fit))?;
    run.write("fit.json", &(fit_result_json(&fit) + "\n"))
}

// ---------------------------------------------------------------------------
// figure panels

fn phenomenological_decay(run: &mut Run, name: &str, tc: f64, t_max: f64, points: usize) -> Result<(), CliError> {
    let sigma = sigma_for_coherence_time(tc);
    let rows: Vec<Vec<f64>> = (0..points)
        .map(|i| {
            let t = t_max * i as f64 / (points - 1) as f64;
            vec![t, quasi_static_coherence(sigma, t)]
        })
        .collect();
    let data: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
    let fit = core(fit_gaussian_decay(&data, false))?;
    let table = CsvTable {
        metadata: vec![
            ("kind".into(), "concurrence".into()),
            ("model".into(), "quasi-static Gaussian dephasing".into()),
            ("t_c_us".into(), spinbath::io::fmt_num(tc)),
        ],
        columns: vec!["t_us".into(), "concurrence".into()],
        rows,
    };
    run.write(&format!("{name}.csv"), &table.to_csv())?;
    run.write(&format!("{name}_fit.txt"), &fit_result_key_values(&fit))
}

/// Concurrence of the whole bath and of each carbon alone, versus pulse count.
fn per_carbon_table(cfg: &SystemConfig, tau: f64, n_max: usize, only: Option<&[usize]>) -> Result<CsvTable, CliError> {
    let all = entanglement(cfg, &cfg.carbons, tau, n_max)?;
    let picks: Vec<usize> = match only {
        Some(list) => list.to_vec(),
        None => (0..cfg.carbons.len()).collect(),
    };
    let singles: Vec<(String, EntanglementTrace)> = picks
        .iter()
        .filter_map(|&i| cfg.carbons.get(i))
        .map(|k| entanglement(cfg, std::slice::from_ref(k), tau, n_max).map(|t| (k.label.clone(), t)))
        .collect::<Result<_, _>>()?;
    let mut columns = vec!["n".to_string(), "t_us".to_string(), "concurrence_all".to_string()];
    columns.extend(singles.iter().map(|(l, _)| format!("concurrence_{l}")));
    let rows = (0..all.n.len())
        .map(|i| {
            let mut r = vec![all.n[i] as f64, all.t[i], all.c[i]];
            r.extend(singles.iter().map(|(_, t)| t.c[i]));
            r
        })
        .collect();
    Ok(CsvTable {
        metadata: vec![("kind".into(), "concurrence".into()), ("tau_us".into(), spinbath::io::fmt_num(tau))],
        columns,
        rows,
    })
}

fn scan(cfg: &SystemConfig, start: f64, stop: f64, n: usize) -> Result<CoherenceTrace, CliError> {
    core(coherence_scan(&cfg.carbons, &cfg.constants, &grid(start, stop, 0.01), n))
}

pub fn reproduce_cmd(cfg: &SystemConfig, target: Target, run: &mut Run) -> Result<(), CliError> {
    match target {
        Target::Fig1c => phenomenological_decay(run, "fig1c", 3.7, 12.0, 121),
        Target::Fig1d => phenomenological_decay(run, "fig1d", 602.0, 1500.0, 151),
        Target::Fig2b => {
            let t = entanglement(cfg, &cfg.carbons, 2.0, 340)?;
            run.write("fig2b.csv", &entanglement_trace_table(&t).to_csv())
        }
        Target::Fig2c | Target::Fig2d | Target::Fig2e => {
            let (name, tau) = match target {
                Target::Fig2c => ("fig2c", 0.47),
                Target::Fig2d => ("fig2d", 0.44),
                _ => ("fig2e", 0.51),
            };
            let t = entanglement(cfg, &cfg.carbons, tau, 120)?;
            run.write(&format!("{name}.csv"), &entanglement_trace_table(&t).to_csv())
        }
        Target::Fig3a => {
            let trace = scan(cfg, 0.3, 0.7, 16)?;
            run.write("fig3a.csv", &coherence_table_with_concurrence(&trace).to_csv())
        }
        Target::Fig3b => {
            let trace = scan(cfg, 0.3, 0.7, 16)?;
            let rec = core(reconstruct_spectrum(std::slice::from_ref(&trace)))?;
            let mut spec = spectrum_table(&rec.spectrum);
            spec.metadata.push(("skipped_points".into(), rec.skipped.len().to_string()));
            run.write("fig3b_spectrum.csv", &spec.to_csv())?;
            // filter for N = 16 at the first-order resonance, versus ω/2π
            let tau = spinbath::dynamics::first_order_resonance_tau(&cfg.constants);
            let t = 32.0 * tau;
            let freqs: Vec<f64> = (1..=600).map(|i| i as f64 * 0.0025).collect();
            let omega_t: Vec<f64> = freqs.iter().map(|f| 2.0 * PI * f * t).collect();
            let f = core(evaluate_filter(&omega_t, 16))?;
            let table = CsvTable {
                metadata: vec![("kind".into(), "filter".into()), ("n".into(), "16".into()), ("tau_us".into(), spinbath::io::fmt_num(tau))],
                columns: vec!["omega_over_2pi_MHz".into(), "filter".into()],
                rows: freqs.iter().zip(&f.f).map(|(&a, &b)| vec![a, b]).collect(),
            };
            run.write("fig3b_filter.csv", &table.to_csv())
        }
        Target::Fig3c | Target::Fig3d | Target::Fig3e => {
            let (name, tau) = match target {
                Target::Fig3c => ("fig3c", 0.47),
                Target::Fig3d => ("fig3d", 0.44),
                _ => ("fig3e", 0.51),
            };
            run.write(&format!("{name}.csv"), &per_carbon_table(cfg, tau, 120, None)?.to_csv())
        }
        Target::Fig4a => {
            let trace = scan(cfg, 0.2, 3.0, 16)?;
            run.write("fig4a.csv", &coherence_trace_table(&trace).to_csv())
        }
        Target::Fig4b => run.write("fig4b.csv", &per_carbon_table(cfg, 2.253, 64, Some(&[1]))?.to_csv()),
        Target::Fig4c => run.write("fig4c.csv", &per_carbon_table(cfg, 2.579, 64, Some(&[0]))?.to_csv()),
    }
}
