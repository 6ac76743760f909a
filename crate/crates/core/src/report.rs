//! Distribution report rendering.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::pipeline::{DistributionReport, ReportMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Renders a report as an aligned `Class / No. of images / Percentage`
/// table, or as pretty JSON.
///
/// Unguided percentages are group shares with two decimals. Guided tables
/// add an `Attempts` row and the percentage row shows each group's
/// acceptance rate with one decimal.
pub fn render_report(report: &DistributionReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Text => render_text(report),
    }
}

fn render_text(report: &DistributionReport) -> String {
    let mut rows: Vec<(&str, Vec<String>)> = vec![
        ("Class", report.groups.iter().map(|g| g.name.clone()).collect()),
        (
            "No. of images",
            report.groups.iter().map(|g| g.count.to_string()).collect(),
        ),
    ];
    let mode = match report.mode {
        ReportMode::Unguided => "unguided",
        ReportMode::Guided => "guided",
    };
    match report.mode {
        ReportMode::Unguided => {
            rows.push((
                "Percentage",
                report.groups.iter().map(|g| format!("{:.2}%", g.percentage)).collect(),
            ));
        }
        ReportMode::Guided => {
            rows.push((
                "Attempts",
                report
                    .groups
                    .iter()
                    .map(|g| g.attempts.map_or("-".into(), |a| a.to_string()))
                    .collect(),
            ));
            rows.push((
                "Percentage",
                report
                    .groups
                    .iter()
                    .map(|g| g.acceptance_rate.map_or("-".into(), |r| format!("{:.1}%", 100.0 * r)))
                    .collect(),
            ));
        }
    }

    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..report.groups.len())
        .map(|c| rows.iter().map(|(_, cells)| cells[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Generated distribution ({mode}, total {}, seed {})",
        report.total, report.seed
    );
    for (label, cells) in &rows {
        let _ = write!(out, "{label:<label_w$}");
        for (cell, w) in cells.iter().zip(&widths) {
            let _ = write!(out, " | {cell:>w$}");
        }
        out.push('\n');
    }
    out
}

/// Recomputes the distribution of a manifest's latest, accepted records.
/// Attempts come from the run report stored in the header, when present.
pub fn report_from_manifest(manifest: &Manifest) -> Result<DistributionReport> {
    let groups = &manifest.header.groups;
    let records: Vec<_> = manifest.latest_records().filter(|r| !r.rejected).collect();
    let seed = manifest.header.root_seed;
    let guided = manifest
        .header
        .run_report
        .as_ref()
        .filter(|r| r.mode == ReportMode::Guided);
    match guided {
        Some(run) => {
            let labels: Vec<_> = run
                .groups
                .iter()
                .map(|t| groups.label(t.index))
                .collect::<Result<_>>()?;
            let accepted: Vec<usize> = labels
                .iter()
                .map(|l| {
                    records
                        .iter()
                        .filter(|r| r.steered_toward.as_ref().map(|s| s.index) == Some(l.index))
                        .count()
                })
                .collect();
            let attempts: Vec<usize> = run.groups.iter().map(|t| t.attempts.unwrap_or(t.count)).collect();
            DistributionReport::guided(&labels, &accepted, &attempts, seed)
        }
        None => {
            let mut counts = vec![0usize; groups.len()];
            for r in &records {
                counts[r.group.index] += 1;
            }
            DistributionReport::from_counts(groups, &counts, seed)
        }
    }
}
