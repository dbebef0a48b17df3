//! JSONL task datasets.
//!
//! One JSON object per line:
//!
//! ```text
//! {"id": "...", "domain": "finance|healthcare|legal|other", "instruction": "...",
//!  "context": "...", "options": [{"label": "A", "text": "..."}, ...],
//!  "gold_label": "A", "biased_target_label": "B"}
//! ```
//!
//! `biased_target_label` is optional; when absent it is derived as the
//! lexicographically smallest non-gold label. Unknown fields are rejected and
//! blank lines are skipped.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{AnswerOption, Domain, TaskInstance};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{} invalid line(s): {}", .0.len(), .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Schema(Vec<Diagnostic>),
    #[error("duplicate id `{id}` on lines {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("instance `{0}` has fewer than two options")]
    SingleOption(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("sample size {requested} exceeds dataset size {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    id: String,
    domain: Domain,
    instruction: String,
    context: String,
    options: Vec<AnswerOption>,
    gold_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    biased_target_label: Option<String>,
}

/// Lexicographically smallest option label other than the gold one.
pub fn derive_target(id: &str, options: &[AnswerOption], gold: &str) -> Result<String, DatasetError> {
    if options.len() < 2 {
        return Err(DatasetError::SingleOption(id.to_string()));
    }
    options
        .iter()
        .map(|o| o.label.as_str())
        .filter(|l| *l != gold)
        .min()
        .map(str::to_string)
        .ok_or_else(|| DatasetError::SingleOption(id.to_string()))
}

fn parse_line(line: &str) -> Result<TaskInstance, String> {
    let raw: RawInstance = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.id.trim().is_empty() {
        return Err("field `id` is empty".into());
    }
    let target = match raw.biased_target_label {
        Some(t) => t,
        None => derive_target(&raw.id, &raw.options, &raw.gold_label).map_err(|e| e.to_string())?,
    };
    let inst = TaskInstance {
        id: raw.id,
        domain: raw.domain,
        instruction: raw.instruction,
        context: raw.context,
        options: raw.options,
        gold_label: raw.gold_label,
        biased_target_label: target,
    };
    inst.validate().map_err(|e| e.to_string())?;
    Ok(inst)
}

/// Parses JSONL text. All lines are checked; any failure rejects the whole
/// input with one diagnostic per bad line.
pub fn parse_jsonl(text: &str) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut out: Vec<(usize, TaskInstance)> = Vec::new();
    let mut diagnostics = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(inst) => out.push((n + 1, inst)),
            Err(reason) => diagnostics.push(Diagnostic { line: n + 1, reason }),
        }
    }
    if !diagnostics.is_empty() {
        return Err(DatasetError::Schema(diagnostics));
    }
    for (i, (line, inst)) in out.iter().enumerate() {
        if let Some((first, _)) = out[..i].iter().find(|(_, o)| o.id == inst.id) {
            return Err(DatasetError::DuplicateId { id: inst.id.clone(), first: *first, second: *line });
        }
    }
    Ok(out.into_iter().map(|(_, i)| i).collect())
}

pub fn load(path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    parse_jsonl(&text)
}

pub fn to_jsonl(instances: &[TaskInstance]) -> String {
    instances
        .iter()
        .map(|i| serde_json::to_string(i).expect("instance serializes") + "\n")
        .collect()
}

/// Seeded sample of `n` instances, returned in id order.
pub fn sample(instances: &[TaskInstance], n: usize, seed: u64) -> Result<Vec<TaskInstance>, DatasetError> {
    if n > instances.len() {
        return Err(DatasetError::SampleTooLarge { requested: n, available: instances.len() });
    }
    let mut sorted = instances.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<TaskInstance> = sorted.choose_multiple(&mut rng, n).cloned().collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub domain: Domain,
    pub path: PathBuf,
    pub count: usize,
    pub schema_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub datasets: Vec<DatasetManifest>,
}

impl ManifestFile {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| DatasetError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        serde_json::from_str(&raw).map_err(|e| DatasetError::Manifest(e.to_string()))
    }

    /// Loads every listed dataset (paths relative to `base`) and checks its
    /// count, domain and schema version.
    pub fn verify(&self, base: &Path) -> Result<(), DatasetError> {
        let names: BTreeSet<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        if names.len() != self.datasets.len() {
            return Err(DatasetError::Manifest("dataset names are not unique".into()));
        }
        for entry in &self.datasets {
            if entry.schema_version != SCHEMA_VERSION {
                return Err(DatasetError::Manifest(format!(
                    "{}: unsupported schema version {}",
                    entry.name, entry.schema_version
                )));
            }
            let instances = load(&base.join(&entry.path))?;
            if instances.len() != entry.count {
                return Err(DatasetError::Manifest(format!(
                    "{}: declares {} instances, file has {}",
                    entry.name,
                    entry.count,
                    instances.len()
                )));
            }
            if let Some(bad) = instances.iter().find(|i| i.domain != entry.domain) {
                return Err(DatasetError::Manifest(format!("{}: instance {} is not {}", entry.name, bad.id, entry.domain.as_str())));
            }
        }
        Ok(())
    }
}
