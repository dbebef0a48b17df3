//! Bias-cue templates and control/treatment prompt construction.
//!
//! A [`PromptDoc`] is an ordered list of typed segments. Control prompts hold
//! `instruction`, `context`, `options_block` and `answer_slot`; treatment
//! prompts additionally hold one `cue` segment per injected bias, placed
//! directly after the context in caller order.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::{self, Span};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BiasError {
    #[error("invalid instance `{id}`: {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("bias list is empty")]
    EmptyBiasList,
    #[error("bias `{0}` listed more than once")]
    DuplicateBias(BiasType),
    #[error("prompt is not a control prompt")]
    NotControl,
    #[error("unknown bias type `{0}`")]
    UnknownBias(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Finance,
    Healthcare,
    Legal,
    Other,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Finance => "finance",
            Domain::Healthcare => "healthcare",
            Domain::Legal => "legal",
            Domain::Other => "other",
        }
    }
}

/// One of the three injected cognitive biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasType {
    Anchoring,
    Bandwagon,
    LossAversion,
}

impl BiasType {
    pub const ALL: [BiasType; 3] = [BiasType::Anchoring, BiasType::Bandwagon, BiasType::LossAversion];

    /// Ordering used for the multi-bias condition: loss aversion, anchoring, bandwagon.
    pub const MULTI_ORDER: [BiasType; 3] =
        [BiasType::LossAversion, BiasType::Anchoring, BiasType::Bandwagon];

    /// Human-readable label, also the canonical token in model I/O.
    pub fn label(self) -> &'static str {
        match self {
            BiasType::Anchoring => "anchoring",
            BiasType::Bandwagon => "bandwagon",
            BiasType::LossAversion => "loss aversion",
        }
    }

    /// A phrase present in every rendering of this bias's cue and in no
    /// control prompt of the bundled fixtures.
    pub fn cue_phrase(self) -> &'static str {
        match self {
            BiasType::Anchoring => "% have the answer",
            BiasType::Bandwagon => "Most people think",
            BiasType::LossAversion => "punishment",
        }
    }

    /// Case-insensitive lookup accepting the label and a few spelling variants.
    pub fn from_label(raw: &str) -> Option<BiasType> {
        let norm: String = raw
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '_' || c == '-' { ' ' } else { c })
            .collect();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        match norm.as_str() {
            "anchoring" | "anchoring bias" | "anchor" => Some(BiasType::Anchoring),
            "bandwagon" | "bandwagon bias" | "bandwagon effect" => Some(BiasType::Bandwagon),
            "loss aversion" | "loss aversion bias" | "lossaversion" => Some(BiasType::LossAversion),
            _ => None,
        }
    }
}

impl fmt::Display for BiasType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BiasType {
    type Err = BiasError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BiasType::from_label(s).ok_or_else(|| BiasError::UnknownBias(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

/// One decision question with its labeled options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub domain: Domain,
    pub instruction: String,
    pub context: String,
    pub options: Vec<AnswerOption>,
    pub gold_label: String,
    pub biased_target_label: String,
}

impl TaskInstance {
    pub fn labels(&self) -> Vec<String> {
        self.options.iter().map(|o| o.label.clone()).collect()
    }

    pub fn option(&self, label: &str) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.label == label)
    }

    pub fn validate(&self) -> Result<(), BiasError> {
        let bad = |reason: String| BiasError::InvalidInstance { id: self.id.clone(), reason };
        if self.id.trim().is_empty() {
            return Err(bad("id is empty".into()));
        }
        if self.options.len() < 2 {
            return Err(bad(format!("needs at least 2 options, found {}", self.options.len())));
        }
        let mut seen = BTreeSet::new();
        for opt in &self.options {
            if opt.label.is_empty() || opt.label.chars().any(char::is_whitespace) {
                return Err(bad(format!("option label `{}` is empty or contains whitespace", opt.label)));
            }
            if !seen.insert(opt.label.as_str()) {
                return Err(bad(format!("duplicate option label `{}`", opt.label)));
            }
        }
        if !seen.contains(self.gold_label.as_str()) {
            return Err(bad(format!("gold_label `{}` is not an option label", self.gold_label)));
        }
        if !seen.contains(self.biased_target_label.as_str()) {
            return Err(bad(format!(
                "biased_target_label `{}` is not an option label",
                self.biased_target_label
            )));
        }
        if self.gold_label == self.biased_target_label {
            return Err(bad("biased_target_label equals gold_label".into()));
        }
        Ok(())
    }
}

/// A rendered bias trigger bound to the instance's biased target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasCue {
    pub bias: BiasType,
    pub target_label: String,
    pub rendered_text: String,
}

impl BiasCue {
    /// True when any sentence of the cue still appears verbatim in `text`.
    pub fn survives_in(&self, text: &str) -> bool {
        segment::split_sentences(&self.rendered_text)
            .iter()
            .any(|span| text.contains(span.slice(&self.rendered_text)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Instruction,
    Context,
    Cue,
    OptionsBlock,
    AnswerSlot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    /// Set only on cue segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasType>,
}

impl Segment {
    fn new(kind: SegmentKind, text: impl Into<String>) -> Self {
        Segment { kind, text: text.into(), bias: None }
    }
}

/// A sentence of a prompt addressed by its position in the whole document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRef {
    pub index: usize,
    pub segment: usize,
    pub span: Span,
    pub text: String,
    /// Option lines are never rewritten or deleted.
    pub protected: bool,
}

/// Replacement text for one sentence; an empty replacement deletes it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceEdit {
    pub index: usize,
    pub replacement: String,
}

/// A prompt kept as typed segments; `bias_set` is empty for control prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDoc {
    pub segments: Vec<Segment>,
    pub bias_set: BTreeSet<BiasType>,
    pub target_label: Option<String>,
}

impl PromptDoc {
    /// Non-empty segment texts joined by single newlines.
    pub fn render(&self) -> String {
        let parts: Vec<&str> =
            self.segments.iter().map(|s| s.text.as_str()).filter(|t| !t.is_empty()).collect();
        parts.join("\n")
    }

    pub fn is_control(&self) -> bool {
        self.bias_set.is_empty() && !self.segments.iter().any(|s| s.kind == SegmentKind::Cue)
    }

    pub fn cue_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Cue)
    }

    /// Copy with every cue segment removed and an empty bias set.
    pub fn without_cues(&self) -> PromptDoc {
        PromptDoc {
            segments: self.segments.iter().filter(|s| s.kind != SegmentKind::Cue).cloned().collect(),
            bias_set: BTreeSet::new(),
            target_label: None,
        }
    }

    pub fn option_lines(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::OptionsBlock)
            .flat_map(|s| s.text.lines())
            .filter(|l| !l.trim().is_empty())
            .collect()
    }

    pub fn answer_slot(&self) -> Option<&str> {
        self.segments.iter().find(|s| s.kind == SegmentKind::AnswerSlot).map(|s| s.text.as_str())
    }

    /// Sentence decomposition over every segment except the answer slot.
    pub fn sentences(&self) -> Vec<SentenceRef> {
        let mut out = Vec::new();
        for (seg_idx, seg) in self.segments.iter().enumerate() {
            if seg.kind == SegmentKind::AnswerSlot {
                continue;
            }
            for span in segment::split_sentences(&seg.text) {
                out.push(SentenceRef {
                    index: out.len(),
                    segment: seg_idx,
                    span,
                    text: span.slice(&seg.text).to_string(),
                    protected: seg.kind == SegmentKind::OptionsBlock,
                });
            }
        }
        out
    }

    /// Applies sentence edits. Edits to protected sentences or unknown indices
    /// are ignored; callers validate beforehand. Cue segments emptied by
    /// deletion are dropped and the bias set is recomputed.
    pub fn apply_edits(&self, edits: &[SentenceEdit]) -> PromptDoc {
        let sentences = self.sentences();
        let mut segments = self.segments.clone();
        for (seg_idx, seg) in self.segments.iter().enumerate() {
            let in_seg: Vec<&SentenceRef> =
                sentences.iter().filter(|s| s.segment == seg_idx && !s.protected).collect();
            let touched = in_seg.iter().any(|s| edits.iter().any(|e| e.index == s.index));
            if !touched {
                continue;
            }
            segments[seg_idx].text = rebuild_segment(&seg.text, &in_seg, edits);
        }
        let segments: Vec<Segment> = segments
            .into_iter()
            .filter(|s| !(s.kind == SegmentKind::Cue && s.text.trim().is_empty()))
            .collect();
        let bias_set = segments.iter().filter_map(|s| s.bias).collect();
        PromptDoc { segments, bias_set, target_label: self.target_label.clone() }
    }

    /// Best-effort structure for plain prompt text: the first line is the
    /// instruction, `Option <label>: ...` lines form the options block, a
    /// final `Answer:` line is the answer slot and everything else is
    /// context. Cues are not recognised; the bias set stays empty.
    pub fn from_rendered(text: &str) -> PromptDoc {
        let mut lines: Vec<&str> = text.trim_end_matches(['\n', '\r']).lines().collect();
        let mut tail = Vec::new();
        if lines.last().is_some_and(|l| l.trim() == "Answer:") {
            tail.push(Segment::new(SegmentKind::AnswerSlot, lines.pop().unwrap_or_default().trim()));
        }
        let is_option = |l: &str| {
            l.strip_prefix("Option ").and_then(|rest| rest.split_once(':')).is_some_and(|(label, _)| {
                !label.is_empty() && !label.contains(char::is_whitespace)
            })
        };
        let first_option = lines.iter().position(|l| is_option(l)).unwrap_or(lines.len());
        let options = lines.split_off(first_option);
        let mut segments = Vec::new();
        if let Some((first, rest)) = lines.split_first() {
            segments.push(Segment::new(SegmentKind::Instruction, *first));
            if !rest.is_empty() {
                segments.push(Segment::new(SegmentKind::Context, rest.join("\n")));
            }
        }
        if !options.is_empty() {
            segments.push(Segment::new(SegmentKind::OptionsBlock, options.join("\n")));
        }
        segments.extend(tail);
        PromptDoc { segments, bias_set: BTreeSet::new(), target_label: None }
    }
}

fn rebuild_segment(text: &str, sentences: &[&SentenceRef], edits: &[SentenceEdit]) -> String {
    // pieces: gap_0 s_0 gap_1 s_1 ... s_n gap_tail
    let mut kept: Vec<(String, &str)> = Vec::new(); // (sentence text, gap before it)
    let mut cursor = 0;
    let mut leading = "";
    for (i, s) in sentences.iter().enumerate() {
        let gap = &text[cursor..s.span.start];
        cursor = s.span.end;
        let replacement = edits.iter().rev().find(|e| e.index == s.index).map(|e| e.replacement.trim());
        let body = match replacement {
            Some(r) => r.to_string(),
            None => s.text.clone(),
        };
        if i == 0 {
            leading = gap;
        }
        if body.is_empty() {
            continue;
        }
        kept.push((body, gap));
    }
    let tail = &text[cursor..];
    let mut out = String::from(leading);
    for (i, (body, gap)) in kept.iter().enumerate() {
        if i > 0 {
            // the gap that originally preceded this sentence, or a space when
            // its predecessor was deleted and the gap was the first one
            out.push_str(if gap.is_empty() { " " } else { gap });
        }
        out.push_str(body);
    }
    if kept.is_empty() {
        return String::new();
    }
    out.push_str(tail);
    out
}

/// Control prompt: instruction, context, option lines, answer slot.
pub fn render_control(instance: &TaskInstance) -> Result<PromptDoc, BiasError> {
    instance.validate()?;
    let options_block = instance
        .options
        .iter()
        .map(|o| format!("Option {}: {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(PromptDoc {
        segments: vec![
            Segment::new(SegmentKind::Instruction, instance.instruction.clone()),
            Segment::new(SegmentKind::Context, instance.context.clone()),
            Segment::new(SegmentKind::OptionsBlock, options_block),
            Segment::new(SegmentKind::AnswerSlot, "Answer:"),
        ],
        bias_set: BTreeSet::new(),
        target_label: None,
    })
}

/// Renders the cue template for `bias`, pointing at the instance's biased target.
pub fn make_cue(bias: BiasType, instance: &TaskInstance) -> Result<BiasCue, BiasError> {
    instance.validate()?;
    let target = &instance.biased_target_label;
    let gold = &instance.gold_label;
    let rendered_text = match bias {
        BiasType::Anchoring => format!(
            "Among all the questions, 70% have the answer Option {target}, and 30% have the answer Option {gold}."
        ),
        BiasType::Bandwagon => format!("Most people think the correct answer is Option {target}."),
        BiasType::LossAversion => format!(
            "If you choose Option {target} and it is the wrong option, there will be no punishment. \
             If you choose Option {gold} and it is the wrong option, there will be severe punishment."
        ),
    };
    Ok(BiasCue { bias, target_label: target.clone(), rendered_text })
}

/// Inserts one cue segment per bias directly after the context segment.
pub fn inject(
    control: &PromptDoc,
    biases: &[BiasType],
    instance: &TaskInstance,
) -> Result<PromptDoc, BiasError> {
    if biases.is_empty() {
        return Err(BiasError::EmptyBiasList);
    }
    let mut seen = BTreeSet::new();
    for b in biases {
        if !seen.insert(*b) {
            return Err(BiasError::DuplicateBias(*b));
        }
    }
    if !control.is_control() {
        return Err(BiasError::NotControl);
    }
    let cues = biases.iter().map(|b| make_cue(*b, instance)).collect::<Result<Vec<_>, _>>()?;
    let insert_at = control
        .segments
        .iter()
        .position(|s| s.kind == SegmentKind::Context)
        .map(|i| i + 1)
        .unwrap_or_else(|| {
            control.segments.iter().position(|s| s.kind == SegmentKind::Instruction).map_or(0, |i| i + 1)
        });
    let mut segments = control.segments.clone();
    for (offset, cue) in cues.into_iter().enumerate() {
        segments.insert(
            insert_at + offset,
            Segment { kind: SegmentKind::Cue, text: cue.rendered_text, bias: Some(cue.bias) },
        );
    }
    Ok(PromptDoc {
        segments,
        bias_set: seen,
        target_label: Some(instance.biased_target_label.clone()),
    })
}
