//! Line-oriented formats exchanged with the model during debiasing.
//!
//! Requests list sentences as `[<index>] <sentence>` and quote whole prompts
//! between `"""` fences. Replies use `|`-separated lines:
//!
//! * determination: `<index> | biased` or `<index> | unbiased`
//! * analysis: `<index> | <types csv> | <confidence> | <rationale>`
//! * debiasing: `<index> | <rewritten sentence>` (empty text deletes)

use std::collections::BTreeMap;

pub const FENCE: &str = "\"\"\"";

/// Wraps a prompt in triple-quote fences on their own lines.
pub fn quote(prompt: &str) -> String {
    format!("{FENCE}\n{prompt}\n{FENCE}")
}

/// Content of the first fenced block, if any.
pub fn extract_quoted(text: &str) -> Option<&str> {
    let open = text.find(FENCE)?;
    let after = &text[open + FENCE.len()..];
    let after = after.strip_prefix("\r\n").or_else(|| after.strip_prefix('\n')).unwrap_or(after);
    let close = after.find(FENCE)?;
    let body = &after[..close];
    Some(body.strip_suffix('\n').map(|b| b.strip_suffix('\r').unwrap_or(b)).unwrap_or(body))
}

pub fn format_listing<'a>(items: impl IntoIterator<Item = (usize, &'a str)>) -> String {
    items.into_iter().map(|(i, s)| format!("[{i}] {s}")).collect::<Vec<_>>().join("\n")
}

/// Parses `[<index>] <sentence>` lines anywhere in `text`.
pub fn parse_listing(text: &str) -> Vec<(usize, String)> {
    text.lines()
        .filter_map(|line| {
            let rest = line.trim_start().strip_prefix('[')?;
            let close = rest.find(']')?;
            let index = rest[..close].trim().parse().ok()?;
            Some((index, rest[close + 1..].trim().to_string()))
        })
        .collect()
}

/// Splits a reply line into an index and the remaining `|` fields.
fn indexed_fields(line: &str, max_fields: usize) -> Option<(usize, Vec<&str>)> {
    let mut parts = line.splitn(max_fields + 1, '|');
    let head = parts.next()?.trim();
    let head = head.trim_start_matches(['-', '*', ' ']).trim();
    let head = head.strip_prefix('[').and_then(|h| h.strip_suffix(']')).unwrap_or(head);
    let index = head.parse().ok()?;
    let fields: Vec<&str> = parts.map(str::trim).collect();
    if fields.is_empty() {
        return None;
    }
    Some((index, fields))
}

/// Parses a determination reply. Every index in `0..count` must appear
/// exactly once; other lines are ignored.
pub fn parse_determination(reply: &str, count: usize) -> Result<Vec<bool>, String> {
    let mut found: BTreeMap<usize, bool> = BTreeMap::new();
    for line in reply.lines() {
        let Some((index, fields)) = indexed_fields(line, 1) else { continue };
        let word = fields[0].trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase();
        let biased = match word.as_str() {
            "biased" | "yes" | "true" | "1" => true,
            "unbiased" | "not biased" | "no" | "false" | "0" => false,
            _ => return Err(format!("line `{}` has an unknown judgment", line.trim())),
        };
        if index >= count {
            return Err(format!("index {index} is out of range 0..{}", count.saturating_sub(1)));
        }
        if found.insert(index, biased).is_some() {
            return Err(format!("index {index} is judged twice"));
        }
    }
    if found.len() != count {
        let missing: Vec<String> =
            (0..count).filter(|i| !found.contains_key(i)).map(|i| i.to_string()).collect();
        return Err(format!("missing judgments for sentence(s) {}", missing.join(", ")));
    }
    Ok(found.into_values().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisLine {
    pub index: usize,
    pub types: Vec<String>,
    pub confidence: Option<f64>,
    pub rationale: String,
}

pub fn parse_analysis(reply: &str) -> Vec<AnalysisLine> {
    reply
        .lines()
        .filter_map(|line| {
            let (index, fields) = indexed_fields(line, 3)?;
            let types = fields[0]
                .split(',')
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .collect();
            let confidence = fields.get(1).and_then(|c| c.trim().parse::<f64>().ok()).filter(|c| c.is_finite());
            let rationale = fields.get(2).map(|r| r.to_string()).unwrap_or_default();
            Some(AnalysisLine { index, types, confidence, rationale })
        })
        .collect()
}

/// Parses a rewrite reply into `(index, replacement)` pairs.
pub fn parse_rewrites(reply: &str) -> Vec<(usize, String)> {
    reply
        .lines()
        .filter_map(|line| {
            let (index, fields) = indexed_fields(line, 1)?;
            Some((index, fields[0].to_string()))
        })
        .collect()
}
