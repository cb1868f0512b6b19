use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport, MetricSet};
use crate::corpus::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    /// Rows are training recipes, one four-column block per test set.
    Table1,
    /// Rows are training recipes, a single test block.
    Table2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// Which reports and test blocks go into a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub layout: TableLayout,
    /// Experiment names, in row order. Empty means every report in order.
    #[serde(default)]
    pub rows: Vec<String>,
    /// Test labels, in block order. Empty means every label seen, in order of
    /// first appearance.
    #[serde(default)]
    pub blocks: Vec<String>,
}

const NOT_REPORTED: &str = "/";
const NOT_FEASIBLE: &str = "-";

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn cells(m: Option<&MetricSet>) -> [String; 4] {
    match m {
        None => std::array::from_fn(|_| NOT_FEASIBLE.to_string()),
        Some(m) => [
            fmt(m.f1_macro_fa_ag),
            m.accuracy
                .map(fmt)
                .unwrap_or_else(|| NOT_REPORTED.to_string()),
            fmt(m.favor_f1),
            fmt(m.against_f1),
        ],
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders mean metrics. A missing block renders "-", a block without
/// accuracy renders "/" in that column.
pub fn emit_table(
    reports: &[EvalReport],
    spec: &TableSpec,
    format: TableFormat,
) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let rows: Vec<&EvalReport> = if spec.rows.is_empty() {
        reports.iter().collect()
    } else {
        spec.rows
            .iter()
            .map(|name| {
                reports
                    .iter()
                    .find(|r| &r.experiment == name)
                    .ok_or_else(|| EvalError::MissingRow(name.clone()))
            })
            .collect::<Result<_, _>>()?
    };
    let mut blocks: Vec<String> = spec.blocks.clone();
    if blocks.is_empty() {
        for r in &rows {
            for t in &r.results {
                if !blocks.contains(&t.label) {
                    blocks.push(t.label.clone());
                }
            }
        }
    }
    if spec.layout == TableLayout::Table2 {
        blocks.truncate(1);
    }
    let columns: [&str; 4] = match spec.layout {
        TableLayout::Table1 => ["F1-score", "Accuracy", "FAVOR-F1-score", "AGAINST-F1-score"],
        TableLayout::Table2 => ["F1-score", "Accuracy", "FA-F1-score", "AG-F1-score"],
    };
    let body: Vec<(String, Vec<String>)> = rows
        .iter()
        .map(|r| {
            let vals = blocks
                .iter()
                .flat_map(|b| cells(r.result(b).map(|t| &t.mean)))
                .collect();
            (r.experiment.clone(), vals)
        })
        .collect();

    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            let mut header = vec!["Trained On".to_string()];
            for b in &blocks {
                for c in columns {
                    header.push(if blocks.len() > 1 {
                        format!("{b} {c}")
                    } else {
                        c.to_string()
                    });
                }
            }
            out.push_str(&format!("| {} |\n", header.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
            for (name, vals) in body {
                out.push_str(&format!("| {name} | {} |\n", vals.join(" | ")));
            }
        }
        TableFormat::Csv => {
            let mut header = vec!["trained_on".to_string()];
            for b in &blocks {
                for c in columns {
                    header.push(csv_field(&format!("{b}:{c}")));
                }
            }
            out.push_str(&header.join(","));
            out.push('\n');
            for (name, vals) in body {
                out.push_str(&csv_field(&name));
                for v in vals {
                    out.push(',');
                    out.push_str(&v);
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn write_table(
    path: &Path,
    reports: &[EvalReport],
    spec: &TableSpec,
    format: TableFormat,
) -> Result<(), EvalError> {
    let text = emit_table(reports, spec, format)?;
    write_atomic(path, text.as_bytes()).map_err(EvalError::from)
}
