//! Cost table, ledger persistence and the per-command run report.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use paperx_core::gateway::{CostLedger, StageGroup, Totals};
use serde::Serialize;

use crate::error::CliError;

pub const LEDGER_FILE: &str = "costs.csv";
pub const RUN_REPORT_FILE: &str = "run_report.jsonl";

/// One row per stage group in report order, then a `total` row.
pub fn cost_rows(ledger: &CostLedger) -> Vec<(String, Totals)> {
    let mut rows: Vec<(String, Totals)> = ledger.backend_totals().into_iter().map(|(g, t)| (g.as_str().to_string(), t)).collect();
    let mut total = Totals::default();
    for (_, t) in &rows {
        total.add(t);
    }
    rows.push(("total".into(), total));
    rows
}

pub fn cost_table(ledger: &CostLedger) -> String {
    let mut out = format!("{:<8} {:>12} {:>12} {:>10}\n", "stage", "input (K)", "output (K)", "cost ($)");
    for (name, t) in cost_rows(ledger) {
        out.push_str(&format!("{:<8} {:>12.2} {:>12.2} {:>10.2}\n", name, t.input_k(), t.output_k(), t.cost_2dp()));
    }
    out
}

pub fn read_ledger(out_dir: &Path) -> Result<Option<CostLedger>, CliError> {
    let path = out_dir.join(LEDGER_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    CostLedger::from_csv(&text).map(Some).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Writes `costs.csv`: entries of `groups` come from `fresh`, every other
/// group keeps what an earlier command recorded.
pub fn write_ledger(out_dir: &Path, fresh: &CostLedger, groups: &[StageGroup]) -> Result<CostLedger, CliError> {
    let mut merged = CostLedger::default();
    if let Some(previous) = read_ledger(out_dir)? {
        for e in previous.entries() {
            if !groups.contains(&e.stage.group()) {
                merged.push(e.clone());
            }
        }
    }
    for e in fresh.entries() {
        if groups.contains(&e.stage.group()) {
            merged.push(e.clone());
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("{}: {e}", out_dir.display())))?;
    let path = out_dir.join(LEDGER_FILE);
    fs::write(&path, merged.to_csv()).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok(merged)
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub model_calls: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
}

pub fn append_run_report(out_dir: &Path, report: &RunReport) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("{}: {e}", out_dir.display())))?;
    let path = out_dir.join(RUN_REPORT_FILE);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let line = serde_json::to_string(report).map_err(CliError::io)?;
    writeln!(file, "{line}").map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}
