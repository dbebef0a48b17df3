//! Versioned instruction-template catalog.
//!
//! The built-in catalog ships in `templates/catalog.toml`; a replacement file
//! with the same keys can be supplied through the `templates_path` setting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

const BUILTIN: &str = include_str!("../templates/catalog.toml");

/// Every key the strategies use, with the placeholders it may reference.
pub const REQUIRED: &[(&str, &[&str])] = &[
    ("decision", &["prompt"]),
    ("few_shot", &["exemplars", "prompt"]),
    ("few_shot_exemplar", &["prompt", "answer"]),
    ("cot", &["prompt"]),
    ("reflexion_feedback", &["prompt", "answer"]),
    ("reflexion_revise", &["prompt", "answer", "feedback"]),
    ("debate_propose", &["agent", "prompt"]),
    ("debate_rebut", &["agent", "prompt", "own", "others"]),
    ("debate_aggregate", &["prompt", "responses"]),
    ("zero_shot_debias", &["prompt"]),
    ("few_shot_debias", &["exemplars", "prompt"]),
    ("few_shot_debias_exemplar", &["prompt", "answer", "note"]),
    ("self_help_rewrite", &["prompt"]),
    ("sacd_determination", &["sentences"]),
    ("sacd_determination_retry", &["problem", "last_index"]),
    ("sacd_analysis", &["prompt", "sentences"]),
    ("sacd_debias", &["prompt", "judgment", "sentences"]),
    ("sacd_debias_retry", &["problem"]),
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template catalog {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("template catalog is not valid TOML: {0}")]
    Parse(String),
    #[error("template catalog is missing key `{0}`")]
    MissingKey(String),
    #[error("template `{key}` uses unknown placeholder `{{{placeholder}}}`")]
    UnknownPlaceholder { key: String, placeholder: String },
    #[error("template `{key}` has an unclosed placeholder")]
    Unclosed { key: String },
}

#[derive(Deserialize)]
struct CatalogFile {
    version: String,
    templates: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    version: String,
    entries: BTreeMap<String, String>,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> Result<Vec<Piece<'_>>, ()> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { return Err(()) };
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            // not a placeholder, keep the brace literally
            out.push(Piece::Text(&rest[..open + 1]));
            rest = after;
            continue;
        }
        out.push(Piece::Text(&rest[..open]));
        out.push(Piece::Slot(name));
        rest = &after[close + 1..];
    }
    out.push(Piece::Text(rest));
    Ok(out)
}

impl Templates {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, TemplateError> {
        let file: CatalogFile = toml::from_str(raw).map_err(|e| TemplateError::Parse(e.to_string()))?;
        for (key, allowed) in REQUIRED {
            let template = file.templates.get(*key).ok_or_else(|| TemplateError::MissingKey(key.to_string()))?;
            let parsed = pieces(template).map_err(|_| TemplateError::Unclosed { key: key.to_string() })?;
            for piece in parsed {
                if let Piece::Slot(name) = piece {
                    if !allowed.contains(&name) {
                        return Err(TemplateError::UnknownPlaceholder {
                            key: key.to_string(),
                            placeholder: name.to_string(),
                        });
                    }
                }
            }
        }
        Ok(Templates { version: file.version, entries: file.templates })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Substitutes placeholders in one pass; inserted values are never rescanned.
    pub fn render(&self, key: &str, values: &[(&str, &str)]) -> String {
        let template = self.entries.get(key).unwrap_or_else(|| panic!("unknown template key `{key}`"));
        let mut out = String::with_capacity(template.len());
        for piece in pieces(template).expect("validated at load") {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => panic!("template `{key}` needs a value for `{name}`"),
                },
            }
        }
        out
    }
}
