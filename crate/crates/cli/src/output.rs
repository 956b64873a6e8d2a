//! Field and table writers.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ptopt_core::driver::{BenchmarkRow, IterationRecord};

use crate::CliError;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Element field as CSV: `ny` lines of `nx` values, bottom row first,
/// 17 significant digits.
pub fn field_csv(values: &[f64], nx: usize) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for row in values.chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_field_csv(path: &Path, values: &[f64], nx: usize) -> Result<(), CliError> {
    write_file(path, field_csv(values, nx).as_bytes())
}

/// Reads a field written by [`field_csv`].
pub fn read_field_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("{}:{}: bad value '{tok}': {e}", path.display(), i + 1)))?;
            out.push(v);
        }
    }
    Ok(out)
}

/// 8-bit binary PGM; density 1 renders black, 0 white, top row is `y = L`.
pub fn pgm(values: &[f64], nx: usize, ny: usize) -> Vec<u8> {
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for row in (0..ny).rev() {
        for v in &values[row * nx..(row + 1) * nx] {
            out.push((255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8);
        }
    }
    out
}

pub fn write_pgm(path: &Path, values: &[f64], nx: usize, ny: usize) -> Result<(), CliError> {
    write_file(path, &pgm(values, nx, ny))
}

/// Legacy ASCII VTK structured points with one cell scalar.
pub fn vtk(values: &[f64], nx: usize, ny: usize, h: f64) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "# vtk DataFile Version 3.0\ndensity\nASCII\nDATASET STRUCTURED_POINTS\n\
         DIMENSIONS {} {} 1\nORIGIN 0 0 0\nSPACING {h:.16e} {h:.16e} 1\n\
         CELL_DATA {}\nSCALARS density double 1\nLOOKUP_TABLE default\n",
        nx + 1,
        ny + 1,
        values.len()
    );
    for v in values {
        let _ = writeln!(s, "{v:.16e}");
    }
    s
}

pub fn write_vtk(path: &Path, values: &[f64], nx: usize, ny: usize, h: f64) -> Result<(), CliError> {
    write_file(path, vtk(values, nx, ny, h).as_bytes())
}

pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut s = String::from("iter,theta_est,theta_true,t_primal_s,t_adjoint_s,t_mma_s\n");
    for h in history {
        let truth = h.theta_true.map(|t| format!("{t:.16e}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:.16e},{truth},{:.6e},{:.6e},{:.6e}",
            h.iter, h.theta_est, h.t_primal_s, h.t_adjoint_s, h.t_mma_s
        );
    }
    s
}

pub fn write_history(path: &Path, history: &[IterationRecord]) -> Result<(), CliError> {
    write_file(path, history_csv(history).as_bytes())
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut s = String::from("n_tau,k,err_obj,err_sens,t_parareal_s,t_sequential_s,speedup\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.16e},{:.16e},{:.6e},{:.6e},{:.6e}",
            r.n_tau, r.k, r.err_obj, r.err_sens, r.t_parareal_s, r.t_sequential_s, r.speedup
        );
    }
    s
}

pub fn write_benchmark(path: &Path, rows: &[BenchmarkRow]) -> Result<(), CliError> {
    write_file(path, benchmark_csv(rows).as_bytes())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(path, format!("{text}\n").as_bytes())
}
