//! Per-iteration metric rows and their CSV form.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{dist, norm};
use crate::metrics::{infeasibility, minty_gap, theta_error, GapKind, GapOracleConfig};
use crate::problem::{evaluate_kkt_residual, ProblemInstance};

pub const TRACE_HEADER: &str = "k,x_norm_err,infeas_last,infeas_ergodic,gap_last,gap_ergodic,\
kkt_residual,lambda_norm,theta_err,wall_clock_ns";

/// One sampled iteration. `*_last` columns are evaluated at the current
/// iterate, `*_ergodic` at the running average of `x_1..x_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub k: usize,
    /// Distance of the last iterate to the oracle solution, when known.
    pub x_norm_err: Option<f64>,
    pub infeas_last: f64,
    pub infeas_ergodic: f64,
    pub gap_last: f64,
    pub gap_ergodic: f64,
    pub kkt_residual: f64,
    pub lambda_norm: f64,
    pub theta_err: f64,
    pub wall_clock_ns: u64,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl IterationTrace {
    pub fn to_csv_row(&self) -> String {
        let x_err = self.x_norm_err.map(fmt_float).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.k,
            x_err,
            fmt_float(self.infeas_last),
            fmt_float(self.infeas_ergodic),
            fmt_float(self.gap_last),
            fmt_float(self.gap_ergodic),
            fmt_float(self.kkt_residual),
            fmt_float(self.lambda_norm),
            fmt_float(self.theta_err),
            self.wall_clock_ns
        )
    }

    pub fn from_csv_row(line: &str) -> std::result::Result<Self, String> {
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != 10 {
            return Err(format!("expected 10 columns, got {}", cells.len()));
        }
        let float = |i: usize| -> std::result::Result<f64, String> {
            cells[i]
                .parse::<f64>()
                .map_err(|e| format!("column {i} ({:?}): {e}", cells[i]))
        };
        Ok(Self {
            k: cells[0].parse().map_err(|e| format!("column k: {e}"))?,
            x_norm_err: if cells[1].is_empty() { None } else { Some(float(1)?) },
            infeas_last: float(2)?,
            infeas_ergodic: float(3)?,
            gap_last: float(4)?,
            gap_ergodic: float(5)?,
            kkt_residual: float(6)?,
            lambda_norm: float(7)?,
            theta_err: float(8)?,
            wall_clock_ns: cells[9]
                .parse()
                .map_err(|e| format!("column wall_clock_ns: {e}"))?,
        })
    }
}

/// Header plus one line per row, `\n`-terminated.
pub fn write_csv(rows: &[IterationTrace]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> std::result::Result<Vec<IterationTrace>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == TRACE_HEADER => {}
        Some(h) => return Err(format!("unexpected header {h:?}")),
        None => return Err("empty trace".into()),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| IterationTrace::from_csv_row(l).map_err(|e| format!("row {}: {e}", i + 1)))
        .collect()
}

/// Evaluates trace rows against the true parameter.
#[derive(Debug, Clone)]
pub struct Tracer {
    pub theta_star: Vec<f64>,
    pub oracle_x: Option<Vec<f64>>,
    pub gap: GapOracleConfig,
    /// Record elapsed time; off keeps traces byte-reproducible.
    pub timing: bool,
    started: Instant,
}

/// Iterate snapshot handed to [`Tracer::row`].
pub struct Snapshot<'a> {
    pub k: usize,
    pub x: &'a [f64],
    pub x_ergodic: &'a [f64],
    pub lambda: &'a [f64],
    pub theta: &'a [f64],
}

impl Tracer {
    pub fn new(theta_star: Vec<f64>, oracle_x: Option<Vec<f64>>, gap: GapOracleConfig) -> Self {
        Self {
            theta_star,
            oracle_x,
            gap,
            timing: false,
            started: Instant::now(),
        }
    }

    pub fn with_timing(mut self, timing: bool) -> Self {
        self.timing = timing;
        self
    }

    pub fn restart_clock(&mut self) {
        self.started = Instant::now();
    }

    /// Whether gap columns are exact or sampled lower bounds for `problem`.
    pub fn gap_kind(&self, problem: &ProblemInstance) -> GapKind {
        match crate::metrics::enlarged_region(problem, &self.theta_star, 0.0) {
            Err(crate::Error::NotAffine(_)) => GapKind::GapLowerBound,
            _ => GapKind::Exact,
        }
    }

    pub fn row(&self, problem: &ProblemInstance, s: &Snapshot<'_>) -> Result<IterationTrace> {
        let infeas_last = infeasibility(problem, s.x, &self.theta_star)?;
        let infeas_ergodic = infeasibility(problem, s.x_ergodic, &self.theta_star)?;
        let gap_last = minty_gap(problem, s.x, &self.theta_star, &self.gap)?.value;
        let gap_ergodic = minty_gap(problem, s.x_ergodic, &self.theta_star, &self.gap)?.value;
        let kkt_residual = evaluate_kkt_residual(problem, s.x, s.theta, s.lambda)?;
        Ok(IterationTrace {
            k: s.k,
            x_norm_err: self.oracle_x.as_ref().map(|xs| dist(s.x, xs)),
            infeas_last,
            infeas_ergodic,
            gap_last,
            gap_ergodic,
            kkt_residual,
            lambda_norm: norm(s.lambda),
            theta_err: theta_error(s.theta, &self.theta_star)?,
            wall_clock_ns: if self.timing {
                self.started.elapsed().as_nanos() as u64
            } else {
                0
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_oracle_column_is_empty() {
        let row = IterationTrace {
            k: 3,
            x_norm_err: None,
            infeas_last: 0.0,
            infeas_ergodic: 0.25,
            gap_last: 1e-300,
            gap_ergodic: -0.0,
            kkt_residual: 1.0 / 3.0,
            lambda_norm: 2.0,
            theta_err: 0.0,
            wall_clock_ns: 17,
        };
        let line = row.to_csv_row();
        assert!(line.starts_with("3,,"));
        assert_eq!(IterationTrace::from_csv_row(&line).unwrap(), row);
    }

    #[test]
    fn header_is_checked() {
        assert!(parse_csv("k,x\n1,2\n").is_err());
        assert!(parse_csv("").is_err());
        assert_eq!(parse_csv(&write_csv(&[])).unwrap(), vec![]);
    }
}
