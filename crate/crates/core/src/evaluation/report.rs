use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::ExperimentResult;
use super::score::Condition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Every input that shaped the run.
    pub config: serde_json::Value,
    pub results: Vec<ExperimentResult>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }

    pub fn has_empty_arms(&self) -> bool {
        self.results.iter().any(|r| !r.empty_arms.is_empty())
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Plain-text table: one row per strategy, one column per condition plus
/// the mean over the conditions that have a score.
pub fn render_table(results: &[ExperimentResult]) -> String {
    let mut header = vec!["Method".to_string()];
    header.extend(Condition::ALL.iter().map(|c| c.title().to_string()));
    header.push("Average".into());
    let mut rows = vec![header];
    for r in results {
        let scores: Vec<Option<f64>> = Condition::ALL.iter().map(|&c| r.report(c).map(|x| x.score)).collect();
        let present: Vec<f64> = scores.iter().flatten().copied().collect();
        let avg = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        let mut row = vec![r.strategy.display_name().to_string()];
        row.extend(scores.into_iter().map(cell));
        row.push(cell(avg));
        rows.push(row);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|i| rows.iter().map(|row| row[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if n == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

/// Writes `report.json`, `report.txt`, `records/<strategy>.json` and one
/// `traces/*.json` file per trial.
pub fn write_outputs(dir: &Path, report: &RunReport) -> io::Result<()> {
    fs::create_dir_all(dir.join("records"))?;
    fs::create_dir_all(dir.join("traces"))?;
    fs::write(dir.join("report.json"), report.to_json())?;
    fs::write(dir.join("report.txt"), render_table(&report.results))?;
    for result in &report.results {
        let records = serde_json::to_string_pretty(&result.records).expect("records serialize") + "\n";
        fs::write(dir.join("records").join(format!("{}.json", result.strategy.key())), records)?;
        for (reference, transcript) in &result.transcripts {
            let record = result.records.iter().find(|r| &r.transcript_ref == reference);
            let body = serde_json::json!({
                "transcript": transcript,
                "sacd_trace": record.and_then(|r| r.trace.as_ref()),
            });
            fs::write(dir.join(reference), serde_json::to_string_pretty(&body).expect("trace serializes") + "\n")?;
        }
    }
    Ok(())
}
