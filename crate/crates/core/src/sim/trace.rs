use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use super::SimError;
use crate::dynamics::Dims;
use crate::eic::TickDiag;

/// One logged control tick.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// Sensor-side acceleration (previous-step finite difference; zeros on
    /// the first tick).
    pub qddot: DVector<f64>,
    pub u: DVector<f64>,
    pub diag: TickDiag,
}

/// Run outcome flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TraceStatus {
    pub diverged: bool,
    pub bem_failed: bool,
    pub controller_error: Option<String>,
    pub end_time: f64,
    pub completed: bool,
}

/// Time-indexed closed-loop record at the control rate.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub dims: Dims,
    pub control_dt: f64,
    pub rows: Vec<TraceRow>,
    pub status: TraceStatus,
}

impl SimTrace {
    pub fn new(dims: Dims, control_dt: f64) -> Self {
        Self { dims, control_dt, rows: Vec::new(), status: TraceStatus::default() }
    }

    pub fn column_names(&self) -> Vec<String> {
        let Dims { n, m } = self.dims;
        let mut cols = vec!["t_s".to_string()];
        let push_series = |cols: &mut Vec<String>, prefix: &str, count: usize, unit: &str| {
            for i in 1..=count {
                cols.push(format!("{prefix}{i}_{unit}"));
            }
        };
        push_series(&mut cols, "q", n + m, "rad");
        push_series(&mut cols, "qd", n + m, "radps");
        push_series(&mut cols, "qdd", n + m, "radps2");
        push_series(&mut cols, "u", n, "Nm");
        push_series(&mut cols, "que", m, "rad");
        push_series(&mut cols, "quedot", m, "radps");
        push_series(&mut cols, "ea", n, "rad");
        push_series(&mut cols, "eadot", n, "radps");
        push_series(&mut cols, "eu", m, "rad");
        push_series(&mut cols, "eudot", m, "radps");
        push_series(&mut cols, "siga", n, "var");
        push_series(&mut cols, "sigu", m, "var");
        push_series(&mut cols, "pa", n, "rad");
        push_series(&mut cols, "sv", m, "kgm2");
        push_series(&mut cols, "ker", n - m, "rad");
        push_series(&mut cols, "kp1", n, "gain");
        push_series(&mut cols, "kd1", n, "gain");
        push_series(&mut cols, "kp2", m, "gain");
        push_series(&mut cols, "kd2", m, "gain");
        cols.push("bemres_norm".to_string());
        cols.push("bemiters_count".to_string());
        cols
    }

    fn row_values(&self, row: &TraceRow) -> Vec<f64> {
        let mut vals = vec![row.t];
        let mut extend = |v: &DVector<f64>| vals.extend(v.iter().copied());
        extend(&row.q);
        extend(&row.qdot);
        extend(&row.qddot);
        extend(&row.u);
        extend(&row.diag.qu_e);
        extend(&row.diag.qu_e_dot);
        extend(&row.diag.e_a);
        extend(&row.diag.e_a_dot);
        extend(&row.diag.e_u);
        extend(&row.diag.e_u_dot);
        extend(&row.diag.sigma_a);
        extend(&row.diag.sigma_u);
        extend(&row.diag.p_a);
        extend(&row.diag.singular_values);
        extend(&row.diag.kernel_components);
        extend(&row.diag.kp1);
        extend(&row.diag.kd1);
        extend(&row.diag.kp2);
        extend(&row.diag.kd2);
        vals.push(row.diag.bem_residual);
        vals.push(row.diag.bem_iterations as f64);
        vals
    }

    /// Write the trace as UTF-8 CSV with LF line endings; floats use the
    /// shortest representation that round-trips exactly.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let file = std::fs::File::create(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let mut w = std::io::BufWriter::new(file);
        let io_err = |e: std::io::Error| SimError::Io(e.to_string());
        w.write_all(self.column_names().join(",").as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
        for row in &self.rows {
            let vals = self.row_values(row);
            let mut line = String::with_capacity(vals.len() * 12);
            for (i, v) in vals.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

/// Generic numeric table for reading trace CSVs back.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read_csv(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        let headers: Vec<String> = lines
            .next()
            .ok_or_else(|| SimError::Csv("empty file".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| SimError::Csv(format!("line {}: {e}", ln + 2)))?;
            if row.len() != headers.len() {
                return Err(SimError::Csv(format!(
                    "line {}: {} fields, expected {}",
                    ln + 2,
                    row.len(),
                    headers.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// All columns whose name starts with `prefix` followed by an index,
    /// in index order.
    pub fn column_group(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        let mut named: Vec<(usize, String)> = self
            .headers
            .iter()
            .filter(|h| {
                h.starts_with(prefix)
                    && h[prefix.len()..].chars().next().is_some_and(|c| c.is_ascii_digit())
            })
            .map(|h| {
                let digits: String =
                    h[prefix.len()..].chars().take_while(|c| c.is_ascii_digit()).collect();
                (digits.parse::<usize>().unwrap_or(0), h.clone())
            })
            .collect();
        named.sort();
        named
            .into_iter()
            .filter_map(|(_, name)| self.column(&name).map(|c| (name, c)))
            .collect()
    }
}

/// Per-joint absolute-error statistics over a time window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointStats {
    pub mean_abs: f64,
    pub std_abs: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorStats {
    pub actuated: Vec<JointStats>,
    pub unactuated: Vec<JointStats>,
    pub window: (f64, f64),
    pub samples: usize,
}

fn stats_of(values: &[f64]) -> JointStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    JointStats {
        mean_abs: mean,
        std_abs: var.sqrt(),
        max_abs: values.iter().fold(0.0f64, |acc, v| acc.max(*v)),
    }
}

/// Mean/std/max of per-joint `|e|` over `window` (seconds).
pub fn error_stats(trace: &SimTrace, window: (f64, f64)) -> Result<ErrorStats, SimError> {
    let rows: Vec<&TraceRow> =
        trace.rows.iter().filter(|r| r.t >= window.0 && r.t <= window.1).collect();
    if rows.is_empty() {
        return Err(SimError::EmptyWindow);
    }
    let Dims { n, m } = trace.dims;
    let mut actuated = Vec::with_capacity(n);
    for i in 0..n {
        let vals: Vec<f64> = rows.iter().map(|r| r.diag.e_a[i].abs()).collect();
        actuated.push(stats_of(&vals));
    }
    let mut unactuated = Vec::with_capacity(m);
    for j in 0..m {
        let vals: Vec<f64> = rows.iter().map(|r| r.diag.e_u[j].abs()).collect();
        unactuated.push(stats_of(&vals));
    }
    Ok(ErrorStats { actuated, unactuated, window, samples: rows.len() })
}

/// Error-plane trajectory: per tick `(|e_q|, |ė_q|)`, with an optional
/// ultimate-bound radius for the overlay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorPlane {
    pub points: Vec<(f64, f64)>,
    pub bound_radius: Option<f64>,
}

pub fn error_plane(trace: &SimTrace, bound_radius: Option<f64>) -> ErrorPlane {
    let points = trace
        .rows
        .iter()
        .map(|r| {
            let e_q = (r.diag.e_a.norm_squared() + r.diag.e_u.norm_squared()).sqrt();
            let ed_q = (r.diag.e_a_dot.norm_squared() + r.diag.e_u_dot.norm_squared()).sqrt();
            (e_q, ed_q)
        })
        .collect();
    ErrorPlane { points, bound_radius }
}
