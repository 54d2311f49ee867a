// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV and SVG rendering of experiment results.

use std::path::Path;

use super::runner::{AttentionStudy, InterventionReport, ResultRow, ResultTable, SweepReport};
use super::svg;
use crate::error::{Error, Result};
use crate::model::Group;
use crate::oracle::OracleSweepReport;

pub const RESULT_HEADER: [&str; 6] = ["policy", "lambda", "mode", "accuracy", "n", "seed"];

fn csv_error(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.into(),
        message: e.to_string(),
    }
}

fn to_string(rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    rows(&mut w).map_err(|e| csv_error("<memory>", e))?;
    let bytes = w.into_inner().map_err(|e| csv_error("<memory>", e))?;
    String::from_utf8(bytes).map_err(|e| csv_error("<memory>", e))
}

/// Result table as CSV, header always present.
pub fn results_csv(table: &ResultTable) -> Result<String> {
    to_string(|w| {
        w.write_record(RESULT_HEADER)?;
        for row in &table.rows {
            w.serialize(row)?;
        }
        Ok(())
    })
}

pub fn parse_results_csv(text: &str) -> Result<ResultTable> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_error("<input>", e))?;
    if header.iter().ne(RESULT_HEADER) {
        return Err(Error::Schema(format!("unexpected header {header:?}")));
    }
    let rows = r
        .deserialize::<ResultRow>()
        .collect::<csv::Result<Vec<_>>>()
        .map_err(|e| csv_error("<input>", e))?;
    Ok(ResultTable { rows })
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<ResultTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text).map_err(|e| match e {
        Error::Csv { message, .. } => csv_error(&path.display().to_string(), message),
        other => other,
    })
}

/// Writes `contents`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the table as CSV and, when given, an SVG alongside.
pub fn emit_results(table: &ResultTable, csv_path: &Path, svg: Option<(&Path, &str)>) -> Result<()> {
    write_file(csv_path, &results_csv(table)?)?;
    if let Some((path, doc)) = svg {
        write_file(path, doc)?;
    }
    Ok(())
}

fn row_label(row: &ResultRow) -> String {
    match row.lambda {
        Some(l) => format!("{} λ={l}", row.policy),
        None => row.policy.clone(),
    }
}

pub fn comparison_svg(table: &ResultTable) -> String {
    let bars: Vec<(String, f64)> = table.rows.iter().map(|r| (row_label(r), r.accuracy)).collect();
    let mode = table.rows.first().map(|r| r.mode.as_str()).unwrap_or("none");
    svg::bar_chart(&format!("Accuracy by policy ({mode})"), "accuracy", &bars, 1.0)
}

pub fn intervention_svg(report: &InterventionReport) -> String {
    let labels: Vec<String> = report
        .summaries
        .iter()
        .map(|s| match s.lambda {
            Some(l) => format!("{} λ={l}", s.policy),
            None => s.policy.clone(),
        })
        .collect();
    let series = vec![
        ("original".to_string(), report.summaries.iter().map(|s| s.original).collect()),
        ("swapped".to_string(), report.summaries.iter().map(|s| s.swapped).collect()),
    ];
    svg::grouped_bar_chart("Rationale swap", "accuracy", &labels, &series, 1.0)
}

pub fn sweep_svg(report: &SweepReport) -> String {
    let lambdas = report.curves.first().map(|c| c.lambdas.clone()).unwrap_or_default();
    let x_labels: Vec<String> = lambdas.iter().map(|l| format!("λ={l}")).collect();
    let series: Vec<(String, Vec<f64>)> = report
        .curves
        .iter()
        .map(|c| (c.kind.as_str().to_string(), c.accuracies.clone()))
        .collect();
    let markers: Vec<(usize, usize)> = report.curves.iter().enumerate().map(|(s, c)| (s, c.best)).collect();
    let baselines = vec![
        ("image-only".to_string(), report.image_only),
        ("rationale-only".to_string(), report.rationale_only),
    ];
    svg::line_chart("Accuracy over λ", "accuracy", &x_labels, &series, &baselines, &markers, 1.0)
}

const SHARE_GROUPS: [Group; 3] = [Group::Image, Group::Rationale, Group::Query];

pub fn attention_csv(studies: &[AttentionStudy]) -> Result<String> {
    to_string(|w| {
        w.write_record(["configuration", "group", "total", "percentage"])?;
        for s in studies {
            for g in SHARE_GROUPS {
                w.write_record([
                    s.configuration.to_string(),
                    g.as_str().to_string(),
                    s.report.total(g).to_string(),
                    s.report.percentage(g).to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn attention_svg(studies: &[AttentionStudy]) -> String {
    let configs: Vec<String> = studies.iter().map(|s| s.configuration.to_string()).collect();
    let series: Vec<(String, Vec<f64>)> = SHARE_GROUPS
        .iter()
        .map(|&g| (g.as_str().to_string(), studies.iter().map(|s| s.report.percentage(g)).collect()))
        .collect();
    let layer = studies.first().map(|s| s.report.layer).unwrap_or(0);
    svg::grouped_bar_chart(
        &format!("Attention contribution at layer {layer}"),
        "share (%)",
        &configs,
        &series,
        100.0,
    )
}

pub fn oracle_csv(report: &OracleSweepReport) -> Result<String> {
    to_string(|w| {
        w.write_record(["metric", "value"])?;
        let rows = [
            ("instances", report.instances.to_string()),
            ("max_difference", report.max_difference.to_string()),
            ("certify_instances", report.certify_instances.to_string()),
            ("perturbations", report.perturbations.to_string()),
            ("worst_violation", report.worst_violation.to_string()),
            ("violations", report.violations.to_string()),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()])?;
        }
        Ok(())
    })
}
