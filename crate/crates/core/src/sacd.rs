//! Iterative detection and rewriting of biased prompt sentences.
//!
//! Each iteration asks the model which sentences are biased. A clean verdict
//! ends the loop; otherwise the flagged sentences are typed, rewritten under
//! a guard that leaves the options and every unflagged sentence intact,
//! and the loop repeats on the rewritten prompt until the iteration budget
//! runs out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::bias::{BiasType, PromptDoc, SentenceEdit};
use crate::gateway::{CallPurpose, ChatMessage, GatewayError, Session};
use crate::protocol;

pub const DEFAULT_T_MAX: usize = 3;

#[derive(Debug, Error)]
pub enum SacdError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("prompt renders empty")]
    EmptyPrompt,
    #[error("no sentence was judged biased")]
    NoBiasedSentences,
    #[error("bias analysis is empty")]
    EmptyAnalysis,
    #[error("iteration budget must be at least 1, got {0}")]
    InvalidBudget(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceVerdict {
    pub index: usize,
    pub sentence: String,
    pub biased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub index: usize,
    pub bias_types: BTreeSet<BiasType>,
    /// Recorded for inspection only; never used for control flow.
    pub confidence: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasAnalysis {
    pub entries: Vec<AnalysisEntry>,
}

impl BiasAnalysis {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&AnalysisEntry> {
        self.entries.iter().find(|e| e.index == index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SacdVariant {
    /// determine, analyze, rewrite; repeated
    Full,
    /// one analysis pass over every sentence, one rewrite, no loop
    NoBD,
    /// determine and rewrite without bias types; repeated
    NoBA,
}

impl fmt::Display for SacdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SacdVariant::Full => "full",
            SacdVariant::NoBD => "no_bd",
            SacdVariant::NoBA => "no_ba",
        })
    }
}

impl FromStr for SacdVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(SacdVariant::Full),
            "no_bd" | "nobd" => Ok(SacdVariant::NoBD),
            "no_ba" | "noba" => Ok(SacdVariant::NoBA),
            other => Err(format!("unknown variant `{other}` (expected full, no_bd or no_ba)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    CleanDetermination,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacdIteration {
    pub determination: Vec<SentenceVerdict>,
    pub analysis: Option<BiasAnalysis>,
    /// Edits applied to the previous prompt to obtain `rewritten`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edits: Vec<SentenceEdit>,
    pub rewritten: Option<PromptDoc>,
    /// True when the rewrite fell back to deleting the flagged sentences.
    #[serde(default)]
    pub used_fallback: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SacdIteration {
    pub fn flagged(&self) -> impl Iterator<Item = &SentenceVerdict> {
        self.determination.iter().filter(|v| v.biased)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacdTrace {
    pub variant: SacdVariant,
    pub t_max: usize,
    pub initial_prompt: PromptDoc,
    pub iterations: Vec<SacdIteration>,
    pub termination: Termination,
    pub final_prompt: PromptDoc,
}

impl SacdTrace {
    /// Re-applies each iteration's edits to the initial prompt.
    pub fn replay(&self) -> PromptDoc {
        self.iterations.iter().fold(self.initial_prompt.clone(), |doc, it| match &it.rewritten {
            Some(_) => doc.apply_edits(&it.edits),
            None => doc,
        })
    }

    /// Prompt in force after `t` iterations (`t = 0` is the input).
    pub fn prompt_after(&self, t: usize) -> &PromptDoc {
        self.iterations[..t.min(self.iterations.len())]
            .iter()
            .rev()
            .find_map(|it| it.rewritten.as_ref())
            .unwrap_or(&self.initial_prompt)
    }

    pub fn rewrite_count(&self) -> usize {
        self.iterations.iter().filter(|it| it.rewritten.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Determination {
    pub verdicts: Vec<SentenceVerdict>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Debiased {
    pub prompt: PromptDoc,
    pub edits: Vec<SentenceEdit>,
    pub used_fallback: bool,
    pub warnings: Vec<String>,
}

/// Asks for a biased/unbiased verdict on every sentence. An unreadable reply
/// is reprompted once; a second failure yields all-unbiased plus a warning.
pub fn determine(prompt: &PromptDoc, session: &mut Session<'_>) -> Result<Determination, SacdError> {
    if prompt.render().trim().is_empty() {
        return Err(SacdError::EmptyPrompt);
    }
    let sentences = prompt.sentences();
    let listing = protocol::format_listing(sentences.iter().map(|s| (s.index, s.text.as_str())));
    let request = session.templates.render("sacd_determination", &[("sentences", &listing)]);
    let reply = session.ask_user("determination", CallPurpose::Determination, request.clone())?;
    let mut warnings = Vec::new();
    let flags = match protocol::parse_determination(&reply, sentences.len()) {
        Ok(flags) => flags,
        Err(problem) => {
            let last_index = sentences.len().saturating_sub(1).to_string();
            let retry = session
                .templates
                .render("sacd_determination_retry", &[("problem", &problem), ("last_index", &last_index)]);
            let second = session.ask(
                "determination",
                CallPurpose::Determination,
                vec![ChatMessage::user(request), ChatMessage::assistant(reply), ChatMessage::user(retry)],
            )?;
            match protocol::parse_determination(&second, sentences.len()) {
                Ok(flags) => flags,
                Err(problem) => {
                    let msg = format!("determination unreadable after reprompt ({problem}); treating all sentences as unbiased");
                    warn!("{msg}");
                    warnings.push(msg);
                    vec![false; sentences.len()]
                }
            }
        }
    };
    let verdicts = sentences
        .iter()
        .zip(flags)
        .map(|(s, biased)| SentenceVerdict { index: s.index, sentence: s.text.clone(), biased })
        .collect();
    Ok(Determination { verdicts, warnings })
}

fn map_types(raw: &[String]) -> Option<BTreeSet<BiasType>> {
    let known: BTreeSet<BiasType> = raw.iter().filter_map(|t| BiasType::from_label(t)).collect();
    if known.is_empty() {
        None
    } else {
        Some(known)
    }
}

fn is_none_label(raw: &[String]) -> bool {
    raw.len() == 1 && matches!(raw[0].to_ascii_lowercase().as_str(), "none" | "unbiased" | "no bias")
}

fn request_analysis(
    prompt: &PromptDoc,
    candidates: &[&SentenceVerdict],
    session: &mut Session<'_>,
) -> Result<Vec<protocol::AnalysisLine>, SacdError> {
    let listing = protocol::format_listing(candidates.iter().map(|v| (v.index, v.sentence.as_str())));
    let rendered = prompt.render();
    let request = session.templates.render("sacd_analysis", &[("prompt", &rendered), ("sentences", &listing)]);
    let reply = session.ask_user("analysis", CallPurpose::Analysis, request)?;
    Ok(protocol::parse_analysis(&reply))
}

fn uncertain(index: usize, rationale: &str) -> AnalysisEntry {
    AnalysisEntry { index, bias_types: BiasType::ALL.into_iter().collect(), confidence: 0.0, rationale: rationale.into() }
}

/// Types every flagged sentence in a single call. Unrecognised type names
/// leave the entry maximally uncertain: all three types, confidence 0.
pub fn analyze(
    prompt: &PromptDoc,
    verdicts: &[SentenceVerdict],
    session: &mut Session<'_>,
) -> Result<BiasAnalysis, SacdError> {
    let flagged: Vec<&SentenceVerdict> = verdicts.iter().filter(|v| v.biased).collect();
    if flagged.is_empty() {
        return Err(SacdError::NoBiasedSentences);
    }
    let lines = request_analysis(prompt, &flagged, session)?;
    let entries = flagged
        .iter()
        .map(|v| match lines.iter().find(|l| l.index == v.index) {
            None => uncertain(v.index, "no analysis returned"),
            Some(line) => match map_types(&line.types) {
                Some(bias_types) => AnalysisEntry {
                    index: v.index,
                    bias_types,
                    confidence: line.confidence.unwrap_or(0.0).clamp(0.0, 1.0),
                    rationale: line.rationale.clone(),
                },
                None => uncertain(v.index, &line.rationale),
            },
        })
        .collect();
    Ok(BiasAnalysis { entries })
}

/// Analysis over every rewritable sentence; sentences labelled "none" are
/// treated as unbiased. Used by the variant without determination.
fn analyze_all(prompt: &PromptDoc, session: &mut Session<'_>) -> Result<(Vec<SentenceVerdict>, BiasAnalysis), SacdError> {
    let sentences = prompt.sentences();
    let candidates: Vec<SentenceVerdict> = sentences
        .iter()
        .filter(|s| !s.protected)
        .map(|s| SentenceVerdict { index: s.index, sentence: s.text.clone(), biased: true })
        .collect();
    let refs: Vec<&SentenceVerdict> = candidates.iter().collect();
    let lines = if refs.is_empty() { vec![] } else { request_analysis(prompt, &refs, session)? };
    let mut entries = Vec::new();
    for line in &lines {
        if !candidates.iter().any(|c| c.index == line.index) || is_none_label(&line.types) || line.types.is_empty() {
            continue;
        }
        if entries.iter().any(|e: &AnalysisEntry| e.index == line.index) {
            continue;
        }
        entries.push(match map_types(&line.types) {
            Some(bias_types) => AnalysisEntry {
                index: line.index,
                bias_types,
                confidence: line.confidence.unwrap_or(0.0).clamp(0.0, 1.0),
                rationale: line.rationale.clone(),
            },
            None => uncertain(line.index, &line.rationale),
        });
    }
    entries.sort_by_key(|e| e.index);
    let verdicts = sentences
        .iter()
        .map(|s| SentenceVerdict {
            index: s.index,
            sentence: s.text.clone(),
            biased: entries.iter().any(|e| e.index == s.index),
        })
        .collect();
    Ok((verdicts, BiasAnalysis { entries }))
}

fn judgment_text(targets: &[(usize, Option<&AnalysisEntry>)]) -> String {
    targets
        .iter()
        .map(|(index, entry)| match entry {
            Some(e) => {
                let types: Vec<&str> = e.bias_types.iter().map(|b| b.label()).collect();
                let reason = if e.rationale.is_empty() { String::new() } else { format!(": {}", e.rationale) };
                format!("- sentence {index}: {} (confidence {:.2}){reason}", types.join(", "), e.confidence)
            }
            None => format!("- sentence {index}: judged biased"),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Checks a reply's edits against the rewrite constraints.
fn vet_edits(reply: &str, targets: &BTreeSet<usize>) -> Result<Vec<SentenceEdit>, String> {
    let parsed = protocol::parse_rewrites(reply);
    if parsed.is_empty() {
        return Err("no \"<index> | <rewritten sentence>\" lines found".into());
    }
    let mut seen = BTreeSet::new();
    let mut edits = Vec::new();
    for (index, replacement) in parsed {
        if !targets.contains(&index) {
            return Err(format!("sentence {index} was not flagged for rewriting"));
        }
        if !seen.insert(index) {
            return Err(format!("sentence {index} was rewritten twice"));
        }
        edits.push(SentenceEdit { index, replacement });
    }
    Ok(edits)
}

/// Post-rewrite guard: option lines and the answer slot survive verbatim and
/// every sentence outside `targets` is unchanged.
pub fn check_guard(original: &PromptDoc, rewritten: &PromptDoc, targets: &BTreeSet<usize>) -> Result<(), String> {
    let text = rewritten.render();
    let lines: Vec<&str> = text.lines().collect();
    for opt in original.option_lines() {
        if !lines.contains(&opt) {
            return Err(format!("option line `{opt}` was altered"));
        }
    }
    if original.answer_slot() != rewritten.answer_slot() {
        return Err("answer slot was altered".into());
    }
    for s in original.sentences().iter().filter(|s| !targets.contains(&s.index)) {
        if !text.contains(s.text.as_str()) {
            return Err(format!("unflagged sentence {} was altered", s.index));
        }
    }
    Ok(())
}

fn rewrite(
    prompt: &PromptDoc,
    targets: &[(usize, Option<&AnalysisEntry>)],
    session: &mut Session<'_>,
) -> Result<Debiased, SacdError> {
    let sentences = prompt.sentences();
    let rewritable: Vec<(usize, Option<&AnalysisEntry>)> = targets
        .iter()
        .copied()
        .filter(|(i, _)| sentences.get(*i).is_some_and(|s| !s.protected))
        .collect();
    if rewritable.is_empty() {
        return Ok(Debiased { prompt: prompt.clone(), edits: vec![], used_fallback: false, warnings: vec![] });
    }
    let target_set: BTreeSet<usize> = rewritable.iter().map(|(i, _)| *i).collect();
    let listing = protocol::format_listing(rewritable.iter().map(|(i, _)| (*i, sentences[*i].text.as_str())));
    let judgment = judgment_text(&rewritable);
    let rendered = prompt.render();
    let request = session
        .templates
        .render("sacd_debias", &[("prompt", &rendered), ("judgment", &judgment), ("sentences", &listing)]);
    let reply = session.ask_user("debiasing", CallPurpose::Debias, request.clone())?;

    let attempt = |reply: &str| -> Result<(PromptDoc, Vec<SentenceEdit>), String> {
        let edits = vet_edits(reply, &target_set)?;
        let out = prompt.apply_edits(&edits);
        check_guard(prompt, &out, &target_set)?;
        Ok((out, edits))
    };

    let mut warnings = Vec::new();
    match attempt(&reply) {
        Ok((out, edits)) => return Ok(Debiased { prompt: out, edits, used_fallback: false, warnings }),
        Err(problem) => {
            warnings.push(format!("rewrite rejected: {problem}"));
            let retry = session.templates.render("sacd_debias_retry", &[("problem", &problem)]);
            let second = session.ask(
                "debiasing",
                CallPurpose::Debias,
                vec![ChatMessage::user(request), ChatMessage::assistant(reply), ChatMessage::user(retry)],
            )?;
            match attempt(&second) {
                Ok((out, edits)) => return Ok(Debiased { prompt: out, edits, used_fallback: false, warnings }),
                Err(problem) => warnings.push(format!("constrained rewrite rejected: {problem}; deleting flagged sentences")),
            }
        }
    }
    let edits: Vec<SentenceEdit> =
        target_set.iter().map(|&index| SentenceEdit { index, replacement: String::new() }).collect();
    let out = prompt.apply_edits(&edits);
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Debiased { prompt: out, edits, used_fallback: true, warnings })
}

/// Rewrites the sentences covered by `analysis`.
pub fn debias(prompt: &PromptDoc, analysis: &BiasAnalysis, session: &mut Session<'_>) -> Result<Debiased, SacdError> {
    if analysis.is_empty() {
        return Err(SacdError::EmptyAnalysis);
    }
    let targets: Vec<(usize, Option<&AnalysisEntry>)> = analysis.entries.iter().map(|e| (e.index, Some(e))).collect();
    rewrite(prompt, &targets, session)
}

/// Runs the debiasing loop on `prompt`. The final decision call is left to
/// the caller.
pub fn run_sacd(
    prompt: &PromptDoc,
    session: &mut Session<'_>,
    t_max: usize,
    variant: SacdVariant,
) -> Result<SacdTrace, SacdError> {
    if t_max == 0 {
        return Err(SacdError::InvalidBudget(t_max));
    }
    let mut iterations = Vec::new();
    let mut current = prompt.clone();
    let mut termination = Termination::BudgetExhausted;

    if variant == SacdVariant::NoBD {
        if current.render().trim().is_empty() {
            return Err(SacdError::EmptyPrompt);
        }
        let (determination, analysis) = analyze_all(&current, session)?;
        if analysis.is_empty() {
            iterations.push(SacdIteration {
                determination,
                analysis: None,
                edits: vec![],
                rewritten: None,
                used_fallback: false,
                warnings: vec![],
            });
            termination = Termination::CleanDetermination;
        } else {
            let out = debias(&current, &analysis, session)?;
            current = out.prompt.clone();
            iterations.push(SacdIteration {
                determination,
                analysis: Some(analysis),
                edits: out.edits,
                rewritten: Some(out.prompt),
                used_fallback: out.used_fallback,
                warnings: out.warnings,
            });
        }
        return Ok(SacdTrace { variant, t_max, initial_prompt: prompt.clone(), iterations, termination, final_prompt: current });
    }

    for _ in 0..t_max {
        let det = determine(&current, session)?;
        if !det.verdicts.iter().any(|v| v.biased) {
            iterations.push(SacdIteration {
                determination: det.verdicts,
                analysis: None,
                edits: vec![],
                rewritten: None,
                used_fallback: false,
                warnings: det.warnings,
            });
            termination = Termination::CleanDetermination;
            break;
        }
        let (analysis, out) = match variant {
            SacdVariant::Full => {
                let analysis = analyze(&current, &det.verdicts, session)?;
                let out = debias(&current, &analysis, session)?;
                (Some(analysis), out)
            }
            _ => {
                let targets: Vec<(usize, Option<&AnalysisEntry>)> =
                    det.verdicts.iter().filter(|v| v.biased).map(|v| (v.index, None)).collect();
                (None, rewrite(&current, &targets, session)?)
            }
        };
        let mut warnings = det.warnings;
        warnings.extend(out.warnings);
        current = out.prompt.clone();
        iterations.push(SacdIteration {
            determination: det.verdicts,
            analysis,
            edits: out.edits,
            rewritten: Some(out.prompt),
            used_fallback: out.used_fallback,
            warnings,
        });
    }
    Ok(SacdTrace { variant, t_max, initial_prompt: prompt.clone(), iterations, termination, final_prompt: current })
}

/// Counts of flagged sentences per iteration, for quick inspection.
pub fn flag_counts(trace: &SacdTrace) -> BTreeMap<usize, usize> {
    trace.iterations.iter().enumerate().map(|(i, it)| (i + 1, it.flagged().count())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::tests::fomc;
    use crate::bias::{inject, render_control};
    use crate::gateway::mock::{MockAction, MockRule, MockScript, ScriptedMock};
    use crate::gateway::scripts::{always_flag_script, keyword_script, RewriteMode};
    use crate::gateway::CallParams;
    use crate::segment;
    use crate::templates::Templates;

    fn run(doc: &PromptDoc, script: MockScript, t_max: usize, variant: SacdVariant) -> Result<SacdTrace, SacdError> {
        let templates = Templates::builtin();
        let mock = ScriptedMock::new(script);
        let mut session = Session::new(&mock, &templates, CallParams::default());
        run_sacd(doc, &mut session, t_max, variant)
    }

    fn with_session<R>(script: MockScript, f: impl FnOnce(&mut Session<'_>) -> R) -> (R, usize) {
        let templates = Templates::builtin();
        let mock = ScriptedMock::new(script);
        let mut session = Session::new(&mock, &templates, CallParams::default());
        let out = f(&mut session);
        (out, session.transcript().len())
    }

    fn keyword() -> MockScript {
        keyword_script(&[fomc()], RewriteMode::AllCues)
    }

    fn bandwagon() -> PromptDoc {
        let inst = fomc();
        inject(&render_control(&inst).unwrap(), &[BiasType::Bandwagon], &inst).unwrap()
    }

    #[test]
    fn control_prompt_has_no_flags() {
        let control = render_control(&fomc()).unwrap();
        let (det, calls) = with_session(keyword(), |s| determine(&control, s).unwrap());
        assert_eq!(calls, 1);
        assert!(det.verdicts.iter().all(|v| !v.biased));
    }

    #[test]
    fn only_the_cue_sentence_is_flagged() {
        let doc = bandwagon();
        let (det, _) = with_session(keyword(), |s| determine(&doc, s).unwrap());
        let flagged: Vec<&str> = det.verdicts.iter().filter(|v| v.biased).map(|v| v.sentence.as_str()).collect();
        assert_eq!(flagged, ["Most people think the correct answer is Option B."]);
    }

    #[test]
    fn one_verdict_per_segmented_sentence() {
        let doc = render_control(&fomc()).unwrap();
        let expected = segment::sentences(&doc.segments[0].text).len()
            + 1
            + doc.option_lines().len();
        let (det, _) = with_session(keyword(), |s| determine(&doc, s).unwrap());
        assert_eq!(det.verdicts.len(), expected);
    }

    #[test]
    fn unreadable_determination_falls_back_after_one_reprompt() {
        let doc = bandwagon();
        let (det, calls) = with_session(MockScript::fixed("I cannot tell."), |s| determine(&doc, s).unwrap());
        assert_eq!(calls, 2);
        assert!(det.verdicts.iter().all(|v| !v.biased));
        assert_eq!(det.warnings.len(), 1);
    }

    #[test]
    fn analysis_types_by_keyword() {
        let inst = fomc();
        let doc = inject(&render_control(&inst).unwrap(), &[BiasType::Anchoring, BiasType::Bandwagon], &inst).unwrap();
        let (analysis, _) = with_session(keyword(), |s| {
            let det = determine(&doc, s).unwrap();
            analyze(&doc, &det.verdicts, s).unwrap()
        });
        let types: Vec<Vec<BiasType>> = analysis.entries.iter().map(|e| e.bias_types.iter().copied().collect()).collect();
        assert_eq!(types, [vec![BiasType::Anchoring], vec![BiasType::Bandwagon]]);
    }

    #[test]
    fn unknown_type_is_maximally_uncertain() {
        let doc = bandwagon();
        let script = MockScript {
            rules: vec![
                MockRule::new(MockAction::FlagSentences { phrases: vec!["Most people".into()] }).on(&[CallPurpose::Determination]),
                MockRule::new(MockAction::Reply { text: "2 | herding | 0.9 | crowd".into() }).on(&[CallPurpose::Analysis]),
            ],
            default_reply: String::new(),
        };
        let (analysis, _) = with_session(script, |s| {
            let det = determine(&doc, s).unwrap();
            analyze(&doc, &det.verdicts, s).unwrap()
        });
        assert_eq!(analysis.entries.len(), 1);
        assert_eq!(analysis.entries[0].bias_types.len(), 3);
        assert_eq!(analysis.entries[0].confidence, 0.0);
    }

    #[test]
    fn analysis_and_debias_preconditions() {
        let doc = bandwagon();
        let clean: Vec<SentenceVerdict> =
            doc.sentences().iter().map(|s| SentenceVerdict { index: s.index, sentence: s.text.clone(), biased: false }).collect();
        let (err, calls) = with_session(keyword(), |s| analyze(&doc, &clean, s).unwrap_err());
        assert!(matches!(err, SacdError::NoBiasedSentences));
        assert_eq!(calls, 0);
        let (err, _) = with_session(keyword(), |s| debias(&doc, &BiasAnalysis::default(), s).unwrap_err());
        assert!(matches!(err, SacdError::EmptyAnalysis));
    }

    #[test]
    fn guard_failures_fall_back_to_deletion() {
        let doc = bandwagon();
        let cue = doc.sentences().into_iter().find(|s| s.text.starts_with("Most people")).unwrap();
        let analysis = BiasAnalysis { entries: vec![uncertain(cue.index, "")] };
        // rewrites an unflagged sentence both times
        let (out, calls) = with_session(MockScript::fixed("0 | Classify this."), |s| debias(&doc, &analysis, s).unwrap());
        assert_eq!(calls, 2);
        assert!(out.used_fallback);
        assert_eq!(out.prompt.render(), render_control(&fomc()).unwrap().render());
    }

    #[test]
    fn uncovered_cue_survives_the_rewrite() {
        let inst = fomc();
        let doc = inject(&render_control(&inst).unwrap(), &BiasType::MULTI_ORDER, &inst).unwrap();
        let covered: Vec<AnalysisEntry> = doc
            .sentences()
            .into_iter()
            .filter(|s| s.text.contains("70% have") || s.text.contains("punishment"))
            .map(|s| uncertain(s.index, ""))
            .collect();
        let (out, _) = with_session(keyword(), |s| debias(&doc, &BiasAnalysis { entries: covered }, s).unwrap());
        let text = out.prompt.render();
        assert!(text.contains("Most people think the correct answer is Option B."));
        assert!(!text.contains("70% have"));
        assert!(!text.contains("punishment"));
    }

    #[test]
    fn loop_terminations_and_replay() {
        let doc = bandwagon();
        let control = render_control(&fomc()).unwrap();

        let trace = run(&doc, keyword(), 3, SacdVariant::Full).unwrap();
        assert_eq!(trace.iterations.len(), 2);
        assert_eq!(trace.termination, Termination::CleanDetermination);
        assert_eq!(trace.final_prompt.render(), control.render());
        assert_eq!(trace.replay(), trace.final_prompt);
        assert_eq!(trace.prompt_after(0), &doc);
        assert_eq!(flag_counts(&trace), BTreeMap::from([(1, 1), (2, 0)]));

        let trace = run(&control, keyword(), 3, SacdVariant::Full).unwrap();
        assert_eq!((trace.iterations.len(), trace.rewrite_count()), (1, 0));
        assert_eq!(trace.final_prompt, control);

        let trace = run(&doc, always_flag_script(), 1, SacdVariant::Full).unwrap();
        assert_eq!(trace.termination, Termination::BudgetExhausted);
        assert_eq!(trace.iterations.len(), 1);
        for it in &trace.iterations {
            let text = it.rewritten.as_ref().unwrap().render();
            assert!(control.option_lines().iter().all(|l| text.contains(l)));
            assert!(text.ends_with("Answer:"));
        }

        assert!(matches!(run(&doc, keyword(), 0, SacdVariant::Full), Err(SacdError::InvalidBudget(0))));
    }

    #[test]
    fn variants() {
        let doc = bandwagon();
        let control = render_control(&fomc()).unwrap().render();

        let trace = run(&doc, keyword(), 3, SacdVariant::NoBD).unwrap();
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.termination, Termination::BudgetExhausted);
        assert_eq!(trace.final_prompt.render(), control);

        let trace = run(&doc, keyword(), 3, SacdVariant::NoBA).unwrap();
        assert!(trace.iterations.iter().all(|it| it.analysis.is_none()));
        assert_eq!(trace.final_prompt.render(), control);

        assert_eq!("no-bd".parse::<SacdVariant>().unwrap(), SacdVariant::NoBD);
        assert_eq!(SacdVariant::NoBA.to_string(), "no_ba");
    }
}
