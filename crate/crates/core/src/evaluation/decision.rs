use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::bias::AnswerOption;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "label", rename_all = "snake_case")]
pub enum Decision {
    Chosen(String),
    Unparsed,
}

impl Decision {
    pub fn label(&self) -> Option<&str> {
        match self {
            Decision::Chosen(l) => Some(l),
            Decision::Unparsed => None,
        }
    }

    pub fn is(&self, label: &str) -> bool {
        self.label() == Some(label)
    }
}

fn option_mention() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\boption\s+([^\s,;:!?()\[\]]+)").expect("valid regex"))
}

fn clean(token: &str) -> &str {
    token.trim().trim_matches(|c: char| matches!(c, '*' | '`' | '"' | '\'' | '.' | ',' | ';' | ':' | '!' | '?'))
}

fn match_label<'a>(token: &str, options: &'a [AnswerOption]) -> Option<&'a str> {
    let token = clean(token);
    options
        .iter()
        .find(|o| o.label == token)
        .or_else(|| options.iter().find(|o| o.label.eq_ignore_ascii_case(token)))
        .map(|o| o.label.as_str())
}

fn mentions<'a>(text: &str, options: &'a [AnswerOption]) -> Vec<&'a str> {
    option_mention().captures_iter(text).filter_map(|c| match_label(&c[1], options)).collect()
}

/// Exact match of the whole text against a label or an option's text.
fn exact<'a>(text: &str, options: &'a [AnswerOption]) -> Result<Option<&'a str>, ()> {
    let text = clean(text);
    if text.is_empty() {
        return Ok(None);
    }
    let hits: BTreeSet<&str> = options
        .iter()
        .filter(|o| o.label.eq_ignore_ascii_case(text) || clean(&o.text).eq_ignore_ascii_case(text))
        .map(|o| o.label.as_str())
        .collect();
    match hits.len() {
        0 => Ok(None),
        1 => Ok(hits.into_iter().next()),
        _ => Err(()),
    }
}

fn answer_line(raw: &str) -> Option<&str> {
    raw.lines().rev().find_map(|line| {
        let line = line.trim().trim_start_matches(['*', '`', '#', '>', '-', ' ']);
        let head = line.get(..7)?;
        head.eq_ignore_ascii_case("answer:").then(|| &line[7..])
    })
}

/// Extracts the chosen option from a model reply.
///
/// Priority: the last `Answer:` line, then the last `Option <label>` mention
/// anywhere, then an exact match of the whole reply against a label or an
/// option text. Conflicting labels at the deciding level yield `Unparsed`.
pub fn parse_decision(raw: &str, options: &[AnswerOption]) -> Decision {
    if let Some(rest) = answer_line(raw) {
        let found: BTreeSet<&str> = mentions(rest, options).into_iter().collect();
        match found.len() {
            1 => return Decision::Chosen(found.into_iter().next().unwrap().to_string()),
            0 => match exact(rest, options) {
                Ok(Some(label)) => return Decision::Chosen(label.to_string()),
                Err(()) => return Decision::Unparsed,
                Ok(None) => {}
            },
            _ => return Decision::Unparsed,
        }
    }
    if let Some(last) = mentions(raw, options).last() {
        return Decision::Chosen(last.to_string());
    }
    match exact(raw, options) {
        Ok(Some(label)) => Decision::Chosen(label.to_string()),
        _ => Decision::Unparsed,
    }
}
