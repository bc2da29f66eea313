//! Before/after tables for a finished run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use drs_core::sim::OutcomeKind;

use crate::eval::EvalReport;
use crate::experiment::{EVAL_AFTER, EVAL_BEFORE};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("run directory is missing {0:?}")]
    MissingArtifacts(Vec<String>),
    #[error("{file}: {source}")]
    Parse { file: String, source: serde_json::Error },
    #[error("{file}: outcome counts sum to {counted}, report lists {listed} tasks")]
    Inconsistent { file: String, counted: usize, listed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One table row in machine-readable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub pass_at_1: f64,
    pub parse_error: usize,
    pub simulation_error: usize,
    pub completion_error: usize,
    pub success: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub text: String,
    pub rows: Vec<ReportRow>,
}

fn row(model: &str, r: &EvalReport) -> ReportRow {
    ReportRow {
        model: model.to_string(),
        pass_at_1: r.pass_at_1,
        parse_error: r.outcomes.parse_error,
        simulation_error: r.outcomes.simulation_error,
        completion_error: r.outcomes.completion_error,
        success: r.outcomes.success,
        total: r.tasks.len(),
    }
}

/// Pass@1 and the four-column outcome table, worst outcome first.
pub fn render_reports(before: &EvalReport, after: &EvalReport) -> Rendered {
    let rows = vec![row("pretrained", before), row("fine-tuned", after)];
    let labels: Vec<&str> = OutcomeKind::ALL.iter().map(|k| k.label()).collect();
    let mut text = String::from("pass@1\n");
    for r in &rows {
        text.push_str(&format!("  {:<12}{:.3}\n", r.model, r.pass_at_1));
    }
    text.push_str(&format!("\n{:<14}", "outcomes"));
    for l in &labels {
        text.push_str(&format!("{:>w$}", l, w = l.len() + 2));
    }
    text.push_str(&format!("{:>7}\n", "Total"));
    for r in &rows {
        text.push_str(&format!("  {:<12}", r.model));
        let counts = [r.parse_error, r.simulation_error, r.completion_error, r.success];
        for (l, c) in labels.iter().zip(counts) {
            text.push_str(&format!("{:>w$}", c, w = l.len() + 2));
        }
        text.push_str(&format!("{:>7}\n", r.total));
    }
    Rendered { text, rows }
}

fn load(dir: &Path, file: &str) -> Result<EvalReport, ReportError> {
    let text = std::fs::read_to_string(dir.join(file))?;
    let r: EvalReport = serde_json::from_str(&text).map_err(|source| ReportError::Parse {
        file: file.to_string(),
        source,
    })?;
    if r.outcomes.total() != r.tasks.len() {
        return Err(ReportError::Inconsistent {
            file: file.to_string(),
            counted: r.outcomes.total(),
            listed: r.tasks.len(),
        });
    }
    Ok(r)
}

/// Renders the tables of a completed run directory.
pub fn report(dir: &Path) -> Result<Rendered, ReportError> {
    let missing: Vec<String> = [EVAL_BEFORE, EVAL_AFTER]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ReportError::MissingArtifacts(missing));
    }
    Ok(render_reports(&load(dir, EVAL_BEFORE)?, &load(dir, EVAL_AFTER)?))
}
