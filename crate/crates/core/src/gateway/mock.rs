//! Rule-scripted deterministic backend.
//!
//! A [`MockScript`] is an ordered rule list. For each request the first rule
//! whose conditions match *and* whose action produces a reply wins; if none
//! does, `default_reply` is returned. Conditions test the request's purpose
//! and the text of its final user message. Scripts load from JSON:
//!
//! ```json
//! {"rules": [{"purposes": ["decision"], "contains_any": ["Most people think"],
//!             "action": {"type": "reply", "text": "Answer: Option B"}}],
//!  "default_reply": "Answer: Option A"}
//! ```

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, CallPurpose, ChatRequest, ChatResponse, GatewayError};
use crate::protocol;
use crate::segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MockAction {
    /// Fixed reply.
    Reply { text: String },
    /// Determination reply flagging listed sentences that contain any phrase.
    FlagSentences { phrases: Vec<String> },
    /// Analysis reply labeling listed sentences by keyword; unmatched
    /// sentences get `fallback_label`.
    LabelSentences {
        keywords: Vec<KeywordLabel>,
        #[serde(default = "default_unknown")]
        fallback_label: String,
    },
    /// Rewrite reply deleting every listed sentence.
    DeleteListed,
    /// Rewrite reply returning every listed sentence unchanged.
    KeepListed,
    /// Self-help style rewrite of the fenced prompt: removes the sentences
    /// containing whichever phrase occurs earliest in the prompt.
    RemoveFirstCue { phrases: Vec<String> },
    /// Self-help style rewrite removing every sentence containing any phrase.
    RemoveAllCues { phrases: Vec<String> },
    /// Returns the fenced prompt unchanged.
    EchoPrompt,
    /// `Answer: Option <label>` using capture group 1 of the first pattern
    /// that matches, scanning patterns in order. Declines if none match.
    AnswerFromCue { patterns: Vec<String> },
}

fn default_unknown() -> String {
    "unknown".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordLabel {
    pub phrase: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// Empty matches every purpose.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub purposes: Vec<CallPurpose>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains_any: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains_all: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub not_contains: Vec<String>,
    pub action: MockAction,
}

impl MockRule {
    pub fn new(action: MockAction) -> Self {
        MockRule { purposes: vec![], contains_any: vec![], contains_all: vec![], not_contains: vec![], action }
    }

    pub fn on(mut self, purposes: &[CallPurpose]) -> Self {
        self.purposes = purposes.to_vec();
        self
    }

    pub fn if_any<S: Into<String> + Clone>(mut self, phrases: &[S]) -> Self {
        self.contains_any = phrases.iter().cloned().map(Into::into).collect();
        self
    }

    pub fn unless<S: Into<String> + Clone>(mut self, phrases: &[S]) -> Self {
        self.not_contains = phrases.iter().cloned().map(Into::into).collect();
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        let text = request.last_user();
        (self.purposes.is_empty() || self.purposes.contains(&request.purpose))
            && (self.contains_any.is_empty() || self.contains_any.iter().any(|p| text.contains(p.as_str())))
            && self.contains_all.iter().all(|p| text.contains(p.as_str()))
            && !self.not_contains.iter().any(|p| text.contains(p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_reply: String,
}

impl MockScript {
    pub fn fixed(text: impl Into<String>) -> Self {
        MockScript { rules: vec![], default_reply: text.into() }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }
}

#[derive(Debug)]
pub struct ScriptedMock {
    script: MockScript,
    /// Compiled `AnswerFromCue` patterns, indexed by rule.
    patterns: Vec<Vec<Regex>>,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        Self::try_new(script).expect("mock script patterns compile")
    }

    pub fn try_new(script: MockScript) -> Result<Self, GatewayError> {
        let patterns = script
            .rules
            .iter()
            .map(|rule| match &rule.action {
                MockAction::AnswerFromCue { patterns } => patterns
                    .iter()
                    .map(|p| Regex::new(p).map_err(|e| GatewayError::Script(format!("pattern `{p}`: {e}"))))
                    .collect(),
                _ => Ok(vec![]),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScriptedMock { script, patterns })
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn run(&self, rule_index: usize, action: &MockAction, text: &str) -> Option<String> {
        match action {
            MockAction::Reply { text } => Some(text.clone()),
            MockAction::FlagSentences { phrases } => {
                let listing = protocol::parse_listing(text);
                if listing.is_empty() {
                    return None;
                }
                Some(
                    listing
                        .iter()
                        .map(|(i, s)| {
                            let biased = phrases.iter().any(|p| s.contains(p.as_str()));
                            format!("{i} | {}", if biased { "biased" } else { "unbiased" })
                        })
                        .collect::<Vec<_>>()
                        .join("\n"),
                )
            }
            MockAction::LabelSentences { keywords, fallback_label } => {
                let listing = protocol::parse_listing(text);
                if listing.is_empty() {
                    return None;
                }
                Some(
                    listing
                        .iter()
                        .map(|(i, s)| {
                            let labels: Vec<&str> = keywords
                                .iter()
                                .filter(|k| s.contains(k.phrase.as_str()))
                                .map(|k| k.label.as_str())
                                .collect();
                            if labels.is_empty() {
                                format!("{i} | {fallback_label} | 0.5 | no keyword matched")
                            } else {
                                format!("{i} | {} | 1.0 | keyword match", labels.join(", "))
                            }
                        })
                        .collect::<Vec<_>>()
                        .join("\n"),
                )
            }
            MockAction::DeleteListed => {
                let listing = protocol::parse_listing(text);
                Some(listing.iter().map(|(i, _)| format!("{i} | ")).collect::<Vec<_>>().join("\n"))
            }
            MockAction::KeepListed => {
                let listing = protocol::parse_listing(text);
                Some(listing.iter().map(|(i, s)| format!("{i} | {s}")).collect::<Vec<_>>().join("\n"))
            }
            MockAction::RemoveFirstCue { phrases } => {
                let prompt = protocol::extract_quoted(text)?;
                let first = phrases
                    .iter()
                    .filter_map(|p| prompt.find(p.as_str()).map(|pos| (pos, p.as_str())))
                    .min_by_key(|(pos, _)| *pos)
                    .map(|(_, p)| p);
                let rewritten = match first {
                    Some(phrase) => remove_sentences(prompt, &[phrase]),
                    None => prompt.to_string(),
                };
                Some(protocol::quote(&rewritten))
            }
            MockAction::RemoveAllCues { phrases } => {
                let prompt = protocol::extract_quoted(text)?;
                let phrases: Vec<&str> = phrases.iter().map(String::as_str).collect();
                Some(protocol::quote(&remove_sentences(prompt, &phrases)))
            }
            MockAction::EchoPrompt => protocol::extract_quoted(text).map(protocol::quote),
            MockAction::AnswerFromCue { .. } => self.patterns[rule_index]
                .iter()
                .find_map(|re| re.captures(text).and_then(|c| c.get(1)).map(|m| m.as_str().to_string()))
                .map(|label| format!("Answer: Option {label}")),
        }
    }
}

/// Drops every sentence containing any phrase, line by line.
fn remove_sentences(prompt: &str, phrases: &[&str]) -> String {
    prompt
        .lines()
        .filter_map(|line| {
            let kept: Vec<&str> = segment::sentences(line)
                .into_iter()
                .filter(|s| !phrases.iter().any(|p| s.contains(p)))
                .collect();
            if kept.is_empty() && !line.trim().is_empty() {
                None
            } else {
                Some(kept.join(" "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl Backend for ScriptedMock {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let text = request.last_user();
        let content = self
            .script
            .rules
            .iter()
            .enumerate()
            .filter(|(_, rule)| rule.matches(request))
            .find_map(|(i, rule)| self.run(i, &rule.action, text))
            .unwrap_or_else(|| self.script.default_reply.clone());
        Ok(ChatResponse { content, backend_id: "mock".into(), cached: false, latency_ms: 0 })
    }
}
