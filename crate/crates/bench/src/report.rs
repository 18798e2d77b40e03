//! CSV and plot-file output.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::experiment::{RunReport, TrialRow};

pub const HEADER: [&str; 6] = ["sample", "init", "converged", "best_objective", "time_to_best_s", "iterations"];
const MISSING: &str = "NA";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |v| v.to_string())
}

fn record(row: &TrialRow, timing: bool) -> [String; 6] {
    [
        row.sample.to_string(),
        row.init.to_string(),
        row.converged.to_string(),
        opt(row.best_objective),
        if timing { opt(row.time_to_best_s) } else { MISSING.to_string() },
        row.iterations.to_string(),
    ]
}

/// CSV bytes: one row per trial, then a comment line with the convergence
/// proportion. An empty report renders as just the header.
pub fn render_csv(report: &RunReport) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for row in &report.rows {
        w.write_record(record(row, report.timing))?;
    }
    let mut bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    if let Some(p) = report.proportion() {
        bytes.extend(format!("# convergence_proportion={p:.4} ({}/{})\n", report.converged(), report.rows.len()).into_bytes());
    }
    Ok(bytes)
}

pub fn write_csv(report: &RunReport, path: &Path) -> Result<(), ReportError> {
    let bytes = render_csv(report).map_err(|source| ReportError::Csv { path: path.to_path_buf(), source })?;
    fs::write(path, bytes).map_err(io_at(path))
}

/// One `k objective` file per trial, named `sample<S>_init<J>.dat`.
pub fn write_plots(report: &RunReport, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    for row in &report.rows {
        let path = dir.join(format!("sample{}_init{}.dat", row.sample, row.init));
        let body: String = row.objectives.iter().map(|(k, f)| format!("{k} {f}\n")).collect();
        fs::write(&path, body).map_err(io_at(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sample: usize, converged: bool, best: Option<f64>) -> TrialRow {
        TrialRow {
            sample,
            init: 0,
            converged,
            best_objective: best,
            time_to_best_s: best.map(|_| 0.25),
            iterations: 10,
            final_kkt: None,
            objectives: vec![(0, 2.0), (1, 1.5)],
            error: None,
        }
    }

    #[test]
    fn missing_values_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let report = RunReport { rows: vec![row(0, true, Some(-1.5)), row(1, false, None)], timing: true };
        write_csv(&report, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "sample,init,converged,best_objective,time_to_best_s,iterations");
        assert_eq!(lines[1], "0,0,true,-1.5,0.25,10");
        assert_eq!(lines[2], "1,0,false,NA,NA,10");
        assert_eq!(lines[3], "# convergence_proportion=0.5000 (1/2)");
    }

    #[test]
    fn timing_off_blanks_the_time_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&RunReport { rows: vec![row(0, true, Some(1.0))], timing: false }, &path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains("0,0,true,1,NA,10"));
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&RunReport { rows: vec![], timing: true }, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn plot_files_list_each_iterate() {
        let dir = tempfile::tempdir().unwrap();
        write_plots(&RunReport { rows: vec![row(2, true, Some(1.0))], timing: true }, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("sample2_init0.dat")).unwrap(), "0 2\n1 1.5\n");
    }

    #[test]
    fn unwritable_path_names_the_file() {
        let path = Path::new("/nonexistent-dir/r.csv");
        let err = write_csv(&RunReport { rows: vec![], timing: true }, path).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/r.csv"));
    }
}
