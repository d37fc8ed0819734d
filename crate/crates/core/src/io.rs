//! Text formats: CSV tables with `#` metadata, density matrices, photon
//! counts and fit results.
//!
//! Numbers are written in scientific notation with 9 significant digits.
//! Parsers never panic on malformed input; they return [`Error::Parse`] with
//! a 1-based line number.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::dynamics::{CoherenceTrace, EntanglementTrace, TraceAxis};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::spectrum::NoiseSpectrum;
use crate::spincore::{c64, ComplexMatrix};
use crate::tomography::{CountsRecord, DensityMatrix, Setting};

/// Upper bound on dimensions accepted from text.
pub const MAX_TEXT_DIMENSION: usize = 1024;

pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

fn parse_num(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::parse(line, format!("invalid number `{}`", s.trim())))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt_num(x)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = CsvTable::default();
        let mut header_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(meta) = trimmed.strip_prefix('#') {
                if header_seen {
                    continue;
                }
                if let Some((k, v)) = meta.split_once(':') {
                    table.metadata.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if !header_seen {
                table.columns = trimmed.split(',').map(|c| c.trim().to_string()).collect();
                if table.columns.iter().any(|c| c.is_empty()) {
                    return Err(Error::parse(line, "empty column name"));
                }
                header_seen = true;
                continue;
            }
            let cells: Vec<&str> = trimmed.split(',').collect();
            if cells.len() != table.columns.len() {
                return Err(Error::parse(
                    line,
                    format!("expected {} fields, found {}", table.columns.len(), cells.len()),
                ));
            }
            table.rows.push(cells.iter().map(|c| parse_num(c, line)).collect::<Result<_>>()?);
        }
        if !header_seen {
            return Err(Error::parse(1, "missing column header"));
        }
        Ok(table)
    }
}

// ---------------------------------------------------------------------------
// traces

fn axis_column(axis: TraceAxis) -> &'static str {
    match axis {
        TraceAxis::Tau => "tau_us",
        TraceAxis::Time => "t_us",
    }
}

pub fn coherence_trace_table(trace: &CoherenceTrace) -> CsvTable {
    let mut metadata = vec![
        ("kind".to_string(), "coherence".to_string()),
        ("n".to_string(), trace.n.to_string()),
        ("frame".to_string(), trace.frame.clone()),
    ];
    if !trace.carbons.is_empty() {
        metadata.push(("carbons".to_string(), trace.carbons.join(" ")));
    }
    CsvTable {
        metadata,
        columns: vec![axis_column(trace.axis).to_string(), "w".to_string()],
        rows: trace.points().map(|(x, w)| vec![x, w]).collect(),
    }
}

pub fn write_coherence_trace(trace: &CoherenceTrace) -> String {
    coherence_trace_table(trace).to_csv()
}

/// Reads a two-column trace. The first column is `tau_us` or `t_us`; the
/// second is the value. The pulse count comes from `# n:` metadata and
/// defaults to 0 when absent.
pub fn parse_coherence_trace(text: &str) -> Result<CoherenceTrace> {
    let table = CsvTable::parse(text)?;
    if table.columns.len() != 2 {
        return Err(Error::parse(1, "trace needs exactly two columns"));
    }
    let axis = match table.columns[0].as_str() {
        "tau_us" => TraceAxis::Tau,
        "t_us" => TraceAxis::Time,
        other => return Err(Error::parse(1, format!("unknown axis column `{other}`"))),
    };
    let n = match table.meta("n") {
        Some(v) => v.parse::<usize>().map_err(|_| Error::parse(1, format!("invalid pulse count `{v}`")))?,
        None => 0,
    };
    let carbons = table.meta("carbons").map(|v| v.split_whitespace().map(String::from).collect()).unwrap_or_default();
    let frame = table.meta("frame").unwrap_or("rotating").to_string();
    let trace = CoherenceTrace {
        axis,
        x: table.rows.iter().map(|r| r[0]).collect(),
        w: table.rows.iter().map(|r| r[1]).collect(),
        n,
        carbons,
        frame,
    };
    Ok(trace)
}

/// Generic (x, y) pairs from a two-column CSV.
pub fn parse_xy(text: &str) -> Result<Vec<(f64, f64)>> {
    let table = CsvTable::parse(text)?;
    if table.columns.len() != 2 {
        return Err(Error::parse(1, "expected exactly two columns"));
    }
    Ok(table.rows.iter().map(|r| (r[0], r[1])).collect())
}

pub fn entanglement_trace_table(trace: &EntanglementTrace) -> CsvTable {
    CsvTable {
        metadata: vec![("kind".into(), "concurrence".into()), ("tau_us".into(), fmt_num(trace.tau))],
        columns: vec!["n".into(), "t_us".into(), "concurrence".into()],
        rows: trace.n.iter().zip(&trace.t).zip(&trace.c).map(|((&n, &t), &c)| vec![n as f64, t, c]).collect(),
    }
}

/// Spectrum as (ω/2π in MHz, S in rad/µs).
pub fn spectrum_table(spec: &NoiseSpectrum) -> CsvTable {
    CsvTable {
        metadata: vec![("kind".into(), "spectrum".into()), ("s_unit".into(), "rad/us".into())],
        columns: vec!["omega_over_2pi_MHz".into(), "s_value".into()],
        rows: spec.omega.iter().zip(&spec.s).map(|(&w, &s)| vec![w / (2.0 * PI), s]).collect(),
    }
}

pub fn parse_spectrum(text: &str) -> Result<NoiseSpectrum> {
    let table = CsvTable::parse(text)?;
    let (Some(f), Some(s)) = (table.column("omega_over_2pi_MHz"), table.column("s_value")) else {
        return Err(Error::parse(1, "spectrum needs omega_over_2pi_MHz and s_value columns"));
    };
    NoiseSpectrum::new(f.iter().map(|v| v * 2.0 * PI).collect(), s)
}

// ---------------------------------------------------------------------------
// density matrices

/// `dimension N` followed by N² lines `row col re im` (0-based indices).
pub fn write_density_matrix(rho: &DensityMatrix) -> String {
    let m = rho.matrix();
    let mut out = format!("dimension {}\n", m.nrows());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            let _ = writeln!(out, "{i} {j} {} {}", fmt_num(z.re), fmt_num(z.im));
        }
    }
    out
}

/// Parses the density-matrix text format without physical validation.
pub fn parse_matrix_text(text: &str) -> Result<ComplexMatrix> {
    let mut dim: Option<usize> = None;
    let mut m = ComplexMatrix::zeros(0, 0);
    let mut seen: Vec<bool> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match dim {
            None => {
                if fields.len() != 2 || fields[0] != "dimension" {
                    return Err(Error::parse(line, "expected `dimension N`"));
                }
                let n: usize = fields[1].parse().map_err(|_| Error::parse(line, "invalid dimension"))?;
                if n == 0 || n > MAX_TEXT_DIMENSION {
                    return Err(Error::parse(line, format!("dimension {n} outside 1..={MAX_TEXT_DIMENSION}")));
                }
                dim = Some(n);
                m = ComplexMatrix::zeros(n, n);
                seen = vec![false; n * n];
            }
            Some(n) => {
                if fields.len() != 4 {
                    return Err(Error::parse(line, "expected `row col re im`"));
                }
                let i: usize = fields[0].parse().map_err(|_| Error::parse(line, "invalid row index"))?;
                let j: usize = fields[1].parse().map_err(|_| Error::parse(line, "invalid column index"))?;
                if i >= n || j >= n {
                    return Err(Error::parse(line, format!("index ({i}, {j}) outside {n}x{n}")));
                }
                if seen[i * n + j] {
                    return Err(Error::parse(line, format!("duplicate entry ({i}, {j})")));
                }
                let re = parse_num(fields[2], line)?;
                let im = parse_num(fields[3], line)?;
                if !re.is_finite() || !im.is_finite() {
                    return Err(Error::parse(line, "entry is not finite"));
                }
                m[(i, j)] = c64(re, im);
                seen[i * n + j] = true;
            }
        }
    }
    if dim.is_none() {
        return Err(Error::parse(1, "missing `dimension` line"));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let n = m.nrows();
        return Err(Error::parse(text.lines().count().max(1), format!("missing entry ({}, {})", missing / n, missing % n)));
    }
    Ok(m)
}

pub fn parse_density_matrix(text: &str) -> Result<DensityMatrix> {
    DensityMatrix::new(parse_matrix_text(text)?)
}

// ---------------------------------------------------------------------------
// counts

pub const COUNTS_HEADER: &str = "setting,shots,c_signal,c_bright,c_dark";

pub fn write_counts(records: &[CountsRecord]) -> String {
    let mut out = String::from("# kind: photon-counts\n");
    out.push_str(COUNTS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.setting,
            r.shots,
            fmt_num(r.c_signal),
            fmt_num(r.c_bright),
            fmt_num(r.c_dark)
        );
    }
    out
}

pub fn parse_counts(text: &str) -> Result<Vec<CountsRecord>> {
    let mut header = false;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !header {
            let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if cols.join(",") != COUNTS_HEADER {
                return Err(Error::parse(line, format!("expected header `{COUNTS_HEADER}`")));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(Error::parse(line, format!("expected 5 fields, found {}", f.len())));
        }
        let setting: Setting = f[0].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
        let shots: u64 = f[1].parse().map_err(|_| Error::parse(line, "invalid shot count"))?;
        let rec = CountsRecord {
            setting,
            shots,
            c_signal: parse_num(f[2], line)?,
            c_bright: parse_num(f[3], line)?,
            c_dark: parse_num(f[4], line)?,
        };
        rec.validate().map_err(|e| Error::parse(line, e.to_string()))?;
        out.push(rec);
    }
    if !header {
        return Err(Error::parse(1, "missing counts header"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// fit results

/// Flat `key = value` block.
pub fn fit_result_key_values(fit: &FitResult) -> String {
    let mut out = String::new();
    for ((name, v), s) in fit.names.iter().zip(&fit.params).zip(&fit.sigmas) {
        let _ = writeln!(out, "{name} = {}", fmt_num(*v));
        let _ = writeln!(out, "{name}_sigma = {}", fmt_num(*s));
    }
    let _ = writeln!(out, "residual_norm = {}", fmt_num(fit.residual_norm));
    let _ = writeln!(out, "converged = {}", fit.converged);
    let _ = writeln!(out, "iterations = {}", fit.iterations);
    out
}

pub fn parse_fit_result_key_values(text: &str) -> Result<FitResult> {
    let mut names = Vec::new();
    let mut params = Vec::new();
    let mut sigmas: Vec<Option<f64>> = Vec::new();
    let mut residual_norm = None;
    let mut converged = None;
    let mut iterations = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((k, v)) = trimmed.split_once('=') else {
            return Err(Error::parse(line, "expected `key = value`"));
        };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "residual_norm" => residual_norm = Some(parse_num(v, line)?),
            "converged" => converged = Some(v.parse::<bool>().map_err(|_| Error::parse(line, "invalid flag"))?),
            "iterations" => iterations = Some(v.parse::<usize>().map_err(|_| Error::parse(line, "invalid count"))?),
            _ => {
                if let Some(base) = k.strip_suffix("_sigma") {
                    let Some(i) = names.iter().position(|n: &String| n == base) else {
                        return Err(Error::parse(line, format!("sigma for unknown parameter `{base}`")));
                    };
                    sigmas[i] = Some(parse_num(v, line)?);
                } else {
                    if names.iter().any(|n| n == k) {
                        return Err(Error::parse(line, format!("duplicate parameter `{k}`")));
                    }
                    names.push(k.to_string());
                    params.push(parse_num(v, line)?);
                    sigmas.push(None);
                }
            }
        }
    }
    let last = text.lines().count().max(1);
    Ok(FitResult {
        sigmas: sigmas
            .into_iter()
            .zip(&names)
            .map(|(s, n)| s.ok_or_else(|| Error::parse(last, format!("missing sigma for `{n}`"))))
            .collect::<Result<_>>()?,
        names,
        params,
        residual_norm: residual_norm.ok_or_else(|| Error::parse(last, "missing residual_norm"))?,
        converged: converged.ok_or_else(|| Error::parse(last, "missing converged"))?,
        iterations: iterations.ok_or_else(|| Error::parse(last, "missing iterations"))?,
    })
}

pub fn fit_result_json(fit: &FitResult) -> String {
    serde_json::to_string_pretty(fit).expect("fit result serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::dephased_bell_state;
    use crate::tomography::{pauli_settings, simulate_counts, ReadoutCalibration};
    use proptest::prelude::*;

    #[test]
    fn number_format_has_nine_significant_digits() {
        assert_eq!(fmt_num(0.488), "4.88000000e-1");
        assert_eq!(fmt_num(-1234.5678912345), "-1.23456789e3");
        assert_eq!(fmt_num(0.0), "0.00000000e0");
    }

    #[test]
    fn coherence_trace_round_trip() {
        let trace = CoherenceTrace {
            axis: TraceAxis::Tau,
            x: vec![0.3, 0.31, 0.32],
            w: vec![1.0, 0.5, -0.25],
            n: 16,
            carbons: vec!["C1".into(), "C2".into()],
            frame: "rotating".into(),
        };
        let text = write_coherence_trace(&trace);
        assert!(text.starts_with("# kind: coherence\n"));
        assert_eq!(parse_coherence_trace(&text).unwrap(), trace);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = CsvTable::parse("# a: b\nx,y\n1,2\n3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
        let err = CsvTable::parse("x,y\n1,zz\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(CsvTable::parse("# only: metadata\n").is_err());
        assert!(parse_coherence_trace("freq,w\n1,2\n").is_err());
    }

    #[test]
    fn spectrum_round_trip() {
        let spec = NoiseSpectrum::new(vec![1.0, 2.0, 3.5], vec![0.0, 0.25, 1e-4]).unwrap();
        let back = parse_spectrum(&spectrum_table(&spec).to_csv()).unwrap();
        for (a, b) in back.omega.iter().zip(&spec.omega) {
            assert!((a - b).abs() < 1e-8 * b);
        }
        assert_eq!(back.s, spec.s);
    }

    #[test]
    fn density_matrix_round_trip() {
        let rho = dephased_bell_state(0.6, 0.3).unwrap();
        let back = parse_density_matrix(&write_density_matrix(&rho)).unwrap();
        assert!(crate::spincore::max_abs(&(back.matrix() - rho.matrix())) < 1e-9);
    }

    #[test]
    fn density_matrix_errors() {
        assert!(parse_matrix_text("").is_err());
        assert!(parse_matrix_text("dimension 2\n0 0 1 0\n").is_err());
        assert!(parse_matrix_text("dimension 99999999\n").is_err());
        assert!(parse_matrix_text("dimension 1\n0 0 1 0\n0 0 1 0\n").is_err());
        assert!(parse_matrix_text("dimension 1\n3 0 1 0\n").is_err());
        assert!(parse_matrix_text("dimension 1\n0 0 inf 0\n").is_err());
        // parses but is not a state
        assert!(parse_density_matrix("dimension 1\n0 0 2 0\n").is_err());
    }

    #[test]
    fn counts_round_trip() {
        let rho = dephased_bell_state(0.6, 0.0).unwrap();
        let recs = simulate_counts(&rho, &pauli_settings(), 1000, &ReadoutCalibration::default(), 2).unwrap();
        assert_eq!(parse_counts(&write_counts(&recs)).unwrap(), recs);
        assert!(parse_counts("setting,shots\n").is_err());
        assert!(parse_counts(&format!("{COUNTS_HEADER}\nQQ,1,1,2,1\n")).is_err());
        assert!(parse_counts(&format!("{COUNTS_HEADER}\nXX,0,1,1,1\n")).is_err());
        assert!(parse_counts(&format!("{COUNTS_HEADER}\nXX,1,-1,1,1\n")).is_err());
    }

    #[test]
    fn fit_result_round_trips() {
        let fit = FitResult {
            names: vec!["a".into(), "T".into()],
            params: vec![1.0, 3.7],
            sigmas: vec![1e-3, 2e-2],
            residual_norm: 1e-4,
            converged: true,
            iterations: 12,
        };
        assert_eq!(parse_fit_result_key_values(&fit_result_key_values(&fit)).unwrap(), fit);
        let json: FitResult = serde_json::from_str(&fit_result_json(&fit)).unwrap();
        assert_eq!(json, fit);
        assert!(parse_fit_result_key_values("a = 1\n").is_err());
    }

    proptest! {
        #[test]
        fn parsers_do_not_panic(text in "\\PC{0,200}") {
            let _ = CsvTable::parse(&text);
            let _ = parse_matrix_text(&text);
            let _ = parse_counts(&text);
            let _ = parse_fit_result_key_values(&text);
        }

        #[test]
        fn numbers_round_trip_to_nine_digits(x in -1e12f64..1e12) {
            let back: f64 = fmt_num(x).parse().unwrap();
            prop_assert!((back - x).abs() <= 1e-8 * x.abs().max(1e-300));
        }
    }
}
