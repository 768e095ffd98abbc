//! Per-stage timing rows and their CSV serialization.

use super::amdahl::AmdahlFit;
use std::io::Write;

pub const CSV_HEADER: &str = "stage,level,seconds,calls,dofs,dofs_per_rank";

/// One timing row: multigrid stages carry their level, everything else
/// level -1.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub stage: String,
    pub level: i64,
    pub seconds: f64,
    pub calls: u64,
    pub dofs: usize,
    pub dofs_per_rank: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn seconds(&self, stage: &str) -> f64 {
        self.rows
            .iter()
            .find(|r| r.stage == stage)
            .map_or(0.0, |r| r.seconds)
    }

    pub fn row(&self, stage: &str) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }

    /// Per-stage minimum across repetitions of the same configuration.
    pub fn min_over(reports: &[TimingReport]) -> TimingReport {
        let mut out = reports.first().cloned().unwrap_or_default();
        for rep in &reports[1..] {
            for row in &mut out.rows {
                if let Some(other) = rep.rows.iter().find(|r| r.stage == row.stage) {
                    if other.seconds < row.seconds {
                        row.seconds = other.seconds;
                    }
                }
            }
        }
        out
    }
}

/// Summary of one benchmark run for the report.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub ranks: usize,
    pub total_dofs: usize,
    pub iterations: usize,
    pub l2_error: f64,
    pub report: TimingReport,
}

/// Writes the CSV: a header, then per run a `run_summary` row followed by
/// the stage rows, then optionally the three Amdahl rows. Every row has
/// exactly the six header fields.
pub fn emit_report(
    runs: &[RunSummary],
    fit: Option<&AmdahlFit>,
    w: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for run in runs {
        writeln!(
            w,
            "run_summary,-1,{:.9e},{},{},{:.3}",
            run.report.seconds("total_solve"),
            run.iterations,
            run.total_dofs,
            run.total_dofs as f64 / run.ranks as f64
        )?;
        for row in &run.report.rows {
            writeln!(
                w,
                "{},{},{:.9e},{},{},{:.3}",
                row.stage, row.level, row.seconds, row.calls, row.dofs, row.dofs_per_rank
            )?;
        }
    }
    if let Some(fit) = fit {
        writeln!(w, "amdahl_s,-1,{:.9e},0,0,0", fit.serial)?;
        writeln!(w, "amdahl_p,-1,{:.9e},0,0,0", fit.parallel)?;
        writeln!(w, "amdahl_residual,-1,{:.9e},0,0,0", fit.residual)?;
    }
    Ok(())
}
