//! CSV and JSON writers for command outputs. All files use `.` as the
//! decimal separator, `\n` newlines and UTF-8; floats print in shortest
//! round-trip form so data files are bit-stable across reruns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use fiekit_core::fie::EstimateRecord;

use crate::CliError;

/// One row of the shared estimate schema
/// `t, z_hat_*, objective, iterations, converged, wall_time_ms, source`.
/// Non-optimization estimators leave the solver fields empty; steps without
/// an estimate yet leave the `z_hat` fields empty.
pub struct EstimateRow {
    pub t: u64,
    pub z_hat: Option<DVector<f64>>,
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub wall_time_ms: Option<f64>,
    pub source: &'static str,
}

impl EstimateRow {
    pub fn from_record(record: &EstimateRecord) -> Self {
        EstimateRow {
            t: record.t,
            z_hat: Some(record.z_hat.clone()),
            objective: Some(record.objective_value),
            iterations: Some(record.solver_stats.iterations),
            converged: Some(record.solver_stats.converged),
            wall_time_ms: Some(record.solver_stats.wall_time.as_secs_f64() * 1e3),
            source: "fie",
        }
    }

    pub fn plain(t: u64, z_hat: Option<f64>, source: &'static str) -> Self {
        EstimateRow {
            t,
            z_hat: z_hat.map(|z| DVector::from_element(1, z)),
            objective: None,
            iterations: None,
            converged: None,
            wall_time_ms: None,
            source,
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::runtime(format!("creating {}: {e}", parent.display())))?;
    }
    let file = File::create(path)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

pub fn write_estimates_csv(path: &Path, n_z: usize, rows: &[EstimateRow]) -> Result<(), CliError> {
    let mut out = create(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n_z).map(|i| format!("z_hat_{i}")));
    header.extend(
        ["objective", "iterations", "converged", "wall_time_ms", "source"]
            .iter()
            .map(|s| s.to_string()),
    );
    let io_err = |e: std::io::Error| CliError::runtime(format!("writing {}: {e}", path.display()));
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for row in rows {
        let mut fields = vec![format!("{}", row.t)];
        match &row.z_hat {
            Some(z) => fields.extend(z.iter().map(|v| format!("{v}"))),
            None => fields.extend(std::iter::repeat(String::new()).take(n_z)),
        }
        fields.push(row.objective.map_or(String::new(), |v| format!("{v}")));
        fields.push(row.iterations.map_or(String::new(), |v| format!("{v}")));
        fields.push(row.converged.map_or(String::new(), |v| format!("{v}")));
        fields.push(row.wall_time_ms.map_or(String::new(), |v| format!("{v:.3}")));
        fields.push(row.source.to_string());
        writeln!(out, "{}", fields.join(",")).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_timing_csv(path: &Path, rows: &[(u64, f64)]) -> Result<(), CliError> {
    let mut out = create(path)?;
    let io_err = |e: std::io::Error| CliError::runtime(format!("writing {}: {e}", path.display()));
    writeln!(out, "t,wall_time_ms").map_err(io_err)?;
    for (t, ms) in rows {
        writeln!(out, "{t},{ms:.3}").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = create(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("serializing {}: {e}", path.display())))?;
    writeln!(out, "{text}")
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}
