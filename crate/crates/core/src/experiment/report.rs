use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pipeline::{PipelineError, RunStats};
use crate::sim::Table;

/// Outcome of report generation over a directory of runs.
#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub runs: Vec<String>,
    pub missing: Vec<String>,
    pub report_dir: PathBuf,
    pub summary_text: String,
}

fn read_stats(dir: &Path) -> Option<RunStats> {
    let text = std::fs::read_to_string(dir.join("stats.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_plot_csv(
    path: &Path,
    headers: &[String],
    columns: &[Vec<f64>],
) -> Result<(), PipelineError> {
    let mut out = String::new();
    out.push_str(&headers.join(","));
    out.push('\n');
    let rows = columns.first().map_or(0, Vec::len);
    for r in 0..rows {
        for (c, col) in columns.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", col.get(r).copied().unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn emit_run_plots(run_dir: &Path, out_dir: &Path) -> Result<(), PipelineError> {
    let table = Table::read_csv(&run_dir.join("trace.csv"))?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", out_dir.display())))?;
    let t = table.column("t_s").unwrap_or_default();

    // Actuated tracking: measured angles plus the reference reconstructed
    // from the logged errors.
    let q_cols = table.column_group("q");
    let ea_cols = table.column_group("ea");
    let mut headers = vec!["t_s".to_string()];
    let mut columns = vec![t.clone()];
    for (i, (name, q)) in q_cols.iter().take(ea_cols.len()).enumerate() {
        headers.push(name.clone());
        columns.push(q.clone());
        let (_, ea) = &ea_cols[i];
        headers.push(format!("qd{}_rad", i + 1));
        columns.push(q.iter().zip(ea).map(|(qv, e)| qv - e).collect());
    }
    write_plot_csv(&out_dir.join("tracking.csv"), &headers, &columns)?;

    // Balance coordinates against the estimated equilibrium.
    let n_a = ea_cols.len();
    let mut headers = vec!["t_s".to_string()];
    let mut columns = vec![t.clone()];
    for (name, col) in q_cols.iter().skip(n_a) {
        headers.push(name.clone());
        columns.push(col.clone());
    }
    for (name, col) in table.column_group("que") {
        headers.push(name);
        columns.push(col);
    }
    write_plot_csv(&out_dir.join("balance.csv"), &headers, &columns)?;

    // Tracking errors.
    let mut headers = vec!["t_s".to_string()];
    let mut columns = vec![t.clone()];
    for (name, col) in table.column_group("ea").into_iter().chain(table.column_group("eu")) {
        headers.push(name);
        columns.push(col);
    }
    write_plot_csv(&out_dir.join("errors.csv"), &headers, &columns)?;

    // Transformed coordinates with the kernel components and singular
    // values.
    let mut headers = vec!["t_s".to_string()];
    let mut columns = vec![t];
    for (name, col) in table
        .column_group("pa")
        .into_iter()
        .chain(table.column_group("ker"))
        .chain(table.column_group("sv"))
    {
        headers.push(name);
        columns.push(col);
    }
    write_plot_csv(&out_dir.join("transformed.csv"), &headers, &columns)?;

    // Error plane comes straight from the run directory.
    if run_dir.join("error_plane.csv").exists() {
        std::fs::copy(run_dir.join("error_plane.csv"), out_dir.join("error_plane.csv"))
            .map_err(|e| PipelineError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Aggregate every run directory under `root` into plot-ready CSV files and
/// a tracking-error comparison table.
pub fn cmd_report(root: &Path, quiet: bool) -> Result<ReportSummary, PipelineError> {
    let report_dir = root.join("report");
    std::fs::create_dir_all(&report_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", report_dir.display())))?;

    let mut entries: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n != "report"))
        .collect();
    entries.sort();

    let mut runs = Vec::new();
    let mut missing = Vec::new();
    let mut summary = String::new();
    let _ = writeln!(summary, "{:<24} {:<10} {:<10} per-joint |e| mean +/- std (rad)", "run", "status", "ticks");

    for dir in &entries {
        let name = dir.file_name().unwrap().to_string_lossy().to_string();
        let Some(stats) = read_stats(dir) else {
            missing.push(name);
            continue;
        };
        if !dir.join("trace.csv").exists() {
            missing.push(name);
            continue;
        }
        emit_run_plots(dir, &report_dir.join(&name))?;
        let status = if stats.status.diverged {
            "diverged"
        } else if stats.status.controller_error.is_some() {
            "ctrl-err"
        } else {
            "ok"
        };
        let mut cells = String::new();
        if let Some(es) = &stats.error_stats {
            for s in es.actuated.iter().chain(es.unactuated.iter()) {
                let _ = write!(cells, "{:.4}+/-{:.4}  ", s.mean_abs, s.std_abs);
            }
        } else {
            cells.push_str("(no post-transient window)");
        }
        let _ = writeln!(summary, "{:<24} {:<10} {:<10} {}", stats.name, status, stats.ticks, cells);
        runs.push(name);
    }
    if !missing.is_empty() {
        let _ = writeln!(summary, "\nmissing or incomplete runs: {}", missing.join(", "));
    }
    std::fs::write(report_dir.join("summary.txt"), &summary)
        .map_err(|e| PipelineError::Io(e.to_string()))?;
    if !quiet {
        print!("{summary}");
        println!("report -> {}", report_dir.display());
    }
    Ok(ReportSummary { runs, missing, report_dir, summary_text: summary })
}
