//! CSV trajectories and JSON reports.

use crate::CliError;
use dlps_core::DiscretePath;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows `k, ε_k..., m_{k+1}..., residual_norm`.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &DiscretePath,
    residuals: &[f64],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (ne, nm) = traj
        .pairs
        .first()
        .map_or((0, 0), |p| (p.eps.len(), p.m.len()));
    let mut header = vec!["k".to_string()];
    header.extend((0..ne).map(|i| format!("eps_{i}")));
    header.extend((0..nm).map(|i| format!("m_{i}")));
    header.push("residual_norm".into());
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for (k, p) in traj.pairs.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(p.eps.iter().chain(p.m.iter()).map(|&x| fmt_f64(x)));
        row.push(fmt_f64(residuals.get(k).copied().unwrap_or(0.0)));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn prepare_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}
