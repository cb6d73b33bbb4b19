//! CSV and JSON emission. Numeric CSV fields carry 17 significant digits so
//! re-parsing reproduces the f64 values bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use covbridge_core::bridge::BridgeSolution;
use covbridge_core::sim::PathEnsemble;

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Row-major headers like `K11,K12,K21,...` for an `r x c` matrix.
fn matrix_headers(prefix: &str, r: usize, c: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(r * c);
    for i in 1..=r {
        for j in 1..=c {
            out.push(format!("{prefix}{i}{j}"));
        }
    }
    out
}

fn push_matrix_row_major(row: &mut Vec<String>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(fmt_f64(m[(i, j)]));
        }
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{}", header.join(","))?;
    for row in rows {
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_gain_csv(path: &Path, times: &[f64], gains: &[DMatrix<f64>]) -> Result<(), CliError> {
    let (m, n) = (gains[0].nrows(), gains[0].ncols());
    let mut header = vec!["t".to_string()];
    header.extend(matrix_headers("K", m, n));
    let rows = times
        .iter()
        .zip(gains)
        .map(|(t, k)| {
            let mut row = vec![fmt_f64(*t)];
            push_matrix_row_major(&mut row, k);
            row
        })
        .collect::<Vec<_>>();
    write_csv(path, &header, &rows)
}

pub fn write_covariance_csv(
    path: &Path,
    times: &[f64],
    sigmas: &[DMatrix<f64>],
) -> Result<(), CliError> {
    let n = sigmas[0].nrows();
    let mut header = vec!["t".to_string()];
    header.extend(matrix_headers("S", n, n));
    let rows = times
        .iter()
        .zip(sigmas)
        .map(|(t, s)| {
            let mut row = vec![fmt_f64(*t)];
            push_matrix_row_major(&mut row, s);
            row
        })
        .collect::<Vec<_>>();
    write_csv(path, &header, &rows)
}

/// Covariance slices of the spread tube `{x : x' Sigma(t)^{-1} x <= level^2}`,
/// thinned to at most `max_slices` rows.
pub fn write_tube_csv(
    path: &Path,
    times: &[f64],
    sigmas: &[DMatrix<f64>],
    level: f64,
    max_slices: usize,
) -> Result<(), CliError> {
    let n = sigmas[0].nrows();
    let stride = times.len().div_ceil(max_slices).max(1);
    let mut header = vec!["t".to_string(), "level".to_string()];
    header.extend(matrix_headers("S", n, n));
    let mut rows = Vec::new();
    let mut k = 0;
    while k < times.len() {
        let mut row = vec![fmt_f64(times[k]), fmt_f64(level)];
        push_matrix_row_major(&mut row, &sigmas[k]);
        rows.push(row);
        if k == times.len() - 1 {
            break;
        }
        k = (k + stride).min(times.len() - 1);
    }
    write_csv(path, &header, &rows)
}

/// Per-path rows `(path_id, t, x_1..x_n, u_1..u_m)` for the first
/// `display_paths` paths.
pub fn write_paths_csv(
    path: &Path,
    ens: &PathEnsemble,
    display_paths: usize,
) -> Result<(), CliError> {
    let n = ens.state_dim();
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    if ens.controls.is_some() {
        header.extend((1..=ens.control_dim()).map(|i| format!("u{i}")));
    }
    let shown = display_paths.min(ens.paths);
    let mut rows = Vec::with_capacity(shown * ens.times.len());
    for p in 0..shown {
        for (r, t) in ens.times.iter().enumerate() {
            let mut row = vec![p.to_string(), fmt_f64(*t)];
            for i in 0..n {
                row.push(fmt_f64(ens.states[p][(i, r)]));
            }
            if let Some(controls) = &ens.controls {
                for i in 0..ens.control_dim() {
                    row.push(fmt_f64(controls[p][(i, r)]));
                }
            }
            rows.push(row);
        }
    }
    write_csv(path, &header, &rows)
}

#[derive(Serialize)]
struct SchedulesFile {
    branch: &'static str,
    degenerate: bool,
    times: Vec<f64>,
    pi: Option<Vec<Vec<Vec<f64>>>>,
    q: Option<Vec<Vec<Vec<f64>>>>,
    p: Vec<Vec<Vec<f64>>>,
    sigma: Option<Vec<Vec<Vec<f64>>>>,
    gain: Option<Vec<Vec<Vec<f64>>>>,
}

fn schedule_rows(s: &[DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    s.iter().map(matrix_rows).collect()
}

pub fn write_schedules_json(path: &Path, solution: &BridgeSolution) -> Result<(), CliError> {
    let file = SchedulesFile {
        branch: solution.branch.label(),
        degenerate: solution.degenerate,
        times: solution.times.clone(),
        pi: solution.pi_sched.as_deref().map(schedule_rows),
        q: solution.q_sched.as_deref().map(schedule_rows),
        p: schedule_rows(&solution.p_sched),
        sigma: solution.sigma_sched.as_deref().map(schedule_rows),
        gain: solution.gain_sched.as_deref().map(schedule_rows),
    };
    write_json(path, &file)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("serialization failed: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}
