//! JSON and CSV readers/writers for parameter, scenario and result files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::calibration::{CalibrationTargets, ParamBounds};
use crate::engine::EnsembleResult;
use crate::error::{Error, Result};
use crate::metrics::SummaryRow;
use crate::model::ModelParams;
use crate::scenario::ScenarioFile;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e))
}

fn write_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Write {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(write_error(dir))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(write_error(path))
}

/// Reads and validates a parameter file.
pub fn read_params(path: &Path) -> Result<ModelParams> {
    let params: ModelParams = read_json(path)?;
    params.validate().map_err(|e| with_path(path, e))?;
    Ok(params)
}

pub fn read_scenarios(path: &Path) -> Result<ScenarioFile> {
    let file: ScenarioFile = read_json(path)?;
    file.validate().map_err(|e| with_path(path, e))?;
    Ok(file)
}

pub fn read_targets(path: &Path) -> Result<CalibrationTargets> {
    let text = read_text(path)?;
    CalibrationTargets::from_json(&text).map_err(|e| match e {
        Error::Json(j) => parse_error(path, j),
        other => with_path(path, other),
    })
}

pub fn read_bounds(path: &Path) -> Result<ParamBounds> {
    let text = read_text(path)?;
    ParamBounds::from_json(&text).map_err(|e| match e {
        Error::Json(j) => parse_error(path, j),
        other => with_path(path, other),
    })
}

pub fn read_result(path: &Path) -> Result<EnsembleResult> {
    read_json(path)
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::InvalidParam { field, reason } => Error::InvalidParam {
            field: format!("{}: {field}", path.display()),
            reason,
        },
        other => other,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(write_error(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(write_error(path))
}

/// `path_index,terminal_K,terminal_H,terminal_S,terminal_R`
pub fn write_terminal_csv(path: &Path, ensemble: &EnsembleResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["path_index", "terminal_K", "terminal_H", "terminal_S", "terminal_R"])?;
    for (i, (k, s)) in ensemble.terminal_k.iter().zip(&ensemble.terminal_states).enumerate() {
        w.write_record([i.to_string(), k.to_string(), s.h.to_string(), s.s.to_string(), s.r.to_string()])?;
    }
    finish(w, path)
}

/// `time,mean_K,p05,p95,crisis_prob`
pub fn write_series_csv(path: &Path, ensemble: &EnsembleResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["time", "mean_K", "p05", "p95", "crisis_prob"])?;
    for i in 0..ensemble.grid.len() {
        w.write_record([
            ensemble.grid[i].to_string(),
            ensemble.mean_k_series[i].to_string(),
            ensemble.p05_series[i].to_string(),
            ensemble.p95_series[i].to_string(),
            ensemble.crisis_curve[i].to_string(),
        ])?;
    }
    finish(w, path)
}

/// Writes `result.json`, `terminal.csv` and `series.csv` into `dir`.
pub fn write_ensemble(dir: &Path, ensemble: &EnsembleResult) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let files = [dir.join("result.json"), dir.join("terminal.csv"), dir.join("series.csv")];
    write_json(&files[0], ensemble)?;
    write_terminal_csv(&files[1], ensemble)?;
    write_series_csv(&files[2], ensemble)?;
    Ok(files.to_vec())
}

/// Sharpe as written to CSV: `n/a` when undefined.
pub fn sharpe_cell(sharpe: Option<f64>) -> String {
    sharpe.map_or_else(|| "n/a".to_string(), |s| s.to_string())
}

/// `scenario,mean_K,sd_K,cv_pct,sharpe,crisis_pct,first_passage_pct`
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "scenario",
        "mean_K",
        "sd_K",
        "cv_pct",
        "sharpe",
        "crisis_pct",
        "first_passage_pct",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.mean_k.to_string(),
            r.sd_k.to_string(),
            r.cv_pct.to_string(),
            sharpe_cell(r.sharpe),
            r.crisis_pct.to_string(),
            r.first_passage_pct.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Writes rows of preformatted cells under `header`.
pub fn write_table_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::default_start;

    #[test]
    fn params_parse_errors_carry_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        fs::write(&path, "{\n  \"alpha_h\": 5.0,\n  \"delta_h\": oops\n}").unwrap();
        match read_params(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_params_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut p = default_start();
        p.gamma_s = 0.0;
        write_json(&path, &p).unwrap();
        let msg = read_params(&path).unwrap_err().to_string();
        assert!(msg.contains("gamma_s"), "{msg}");
    }

    #[test]
    fn missing_file_is_a_read_error() {
        let err = read_params(Path::new("/nonexistent/params.json")).unwrap_err();
        assert!(matches!(err, Error::Read { .. }));
        assert!(err.is_usage());
    }
}
