//! Decision strategies as prompt-assembly programs over a [`Session`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{inject, render_control, BiasError, BiasType, PromptDoc, TaskInstance};
use crate::gateway::{CallPurpose, GatewayError, Session, Transcript};
use crate::protocol;
use crate::sacd::{run_sacd, SacdError, SacdTrace, SacdVariant};

pub const DEFAULT_SHOTS: usize = 3;
pub const DEBATE_AGENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Vanilla,
    FewShot,
    #[serde(rename = "cot")]
    CoT,
    Reflexion,
    #[serde(rename = "debate")]
    MultiAgentDebate,
    ZeroShotDebias,
    FewShotDebias,
    SelfHelp,
    Sacd,
    #[serde(rename = "sacd_no_bd")]
    SacdNoBD,
    #[serde(rename = "sacd_no_ba")]
    SacdNoBA,
}

impl StrategyId {
    pub const ALL: [StrategyId; 11] = [
        StrategyId::Vanilla,
        StrategyId::FewShot,
        StrategyId::CoT,
        StrategyId::Reflexion,
        StrategyId::MultiAgentDebate,
        StrategyId::ZeroShotDebias,
        StrategyId::FewShotDebias,
        StrategyId::SelfHelp,
        StrategyId::Sacd,
        StrategyId::SacdNoBD,
        StrategyId::SacdNoBA,
    ];

    pub fn key(self) -> &'static str {
        match self {
            StrategyId::Vanilla => "vanilla",
            StrategyId::FewShot => "few_shot",
            StrategyId::CoT => "cot",
            StrategyId::Reflexion => "reflexion",
            StrategyId::MultiAgentDebate => "debate",
            StrategyId::ZeroShotDebias => "zero_shot_debias",
            StrategyId::FewShotDebias => "few_shot_debias",
            StrategyId::SelfHelp => "self_help",
            StrategyId::Sacd => "sacd",
            StrategyId::SacdNoBD => "sacd_no_bd",
            StrategyId::SacdNoBA => "sacd_no_ba",
        }
    }

    /// Row label in the text report.
    pub fn display_name(self) -> &'static str {
        match self {
            StrategyId::Vanilla => "Vanilla",
            StrategyId::FewShot => "Few-shot",
            StrategyId::CoT => "CoT",
            StrategyId::Reflexion => "Reflexion",
            StrategyId::MultiAgentDebate => "Multi-agent debate",
            StrategyId::ZeroShotDebias => "Zero-shot debiasing",
            StrategyId::FewShotDebias => "Few-shot debiasing",
            StrategyId::SelfHelp => "Self-help",
            StrategyId::Sacd => "SACD",
            StrategyId::SacdNoBD => "SACD w/o BD",
            StrategyId::SacdNoBA => "SACD w/o BA",
        }
    }

    pub fn sacd_variant(self) -> Option<SacdVariant> {
        match self {
            StrategyId::Sacd => Some(SacdVariant::Full),
            StrategyId::SacdNoBD => Some(SacdVariant::NoBD),
            StrategyId::SacdNoBA => Some(SacdVariant::NoBA),
            _ => None,
        }
    }

    pub fn needs_exemplars(self) -> bool {
        matches!(self, StrategyId::FewShot | StrategyId::FewShotDebias)
    }

    /// Number of model calls a run makes; `None` when it depends on the run.
    pub fn fixed_call_count(self) -> Option<usize> {
        match self {
            StrategyId::Vanilla
            | StrategyId::FewShot
            | StrategyId::CoT
            | StrategyId::ZeroShotDebias
            | StrategyId::FewShotDebias => Some(1),
            StrategyId::SelfHelp => Some(2),
            StrategyId::Reflexion => Some(3),
            StrategyId::MultiAgentDebate => Some(2 * DEBATE_AGENTS + 1),
            StrategyId::Sacd | StrategyId::SacdNoBD | StrategyId::SacdNoBA => None,
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for StrategyId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let norm = match norm.as_str() {
            "multi_agent_debate" | "multiagentdebate" => "debate",
            "fewshot" => "few_shot",
            "selfhelp" => "self_help",
            other => other,
        }
        .to_string();
        StrategyId::ALL
            .into_iter()
            .find(|id| id.key() == norm)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// A solved example prepended by the few-shot strategies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub prompt: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// Plain exemplars: control rendering answered with the gold option.
pub fn plain_exemplars(pool: &[TaskInstance], shots: usize) -> Result<Vec<Exemplar>, BiasError> {
    pool.iter()
        .take(shots)
        .map(|inst| {
            Ok(Exemplar {
                prompt: render_control(inst)?.render(),
                answer: format!("Option {}", inst.gold_label),
                note: String::new(),
            })
        })
        .collect()
}

/// Contrasting exemplars: each carries one cue (cycling through the bias
/// types) yet is answered with the gold option.
pub fn debias_exemplars(pool: &[TaskInstance], shots: usize) -> Result<Vec<Exemplar>, BiasError> {
    pool.iter()
        .take(shots)
        .enumerate()
        .map(|(i, inst)| {
            let bias = BiasType::ALL[i % BiasType::ALL.len()];
            let treated = inject(&render_control(inst)?, &[bias], inst)?;
            Ok(Exemplar {
                prompt: treated.render(),
                answer: format!("Option {}", inst.gold_label),
                note: format!(
                    "the {} cue points to Option {}, but the task content supports Option {}.",
                    bias.label(),
                    inst.biased_target_label,
                    inst.gold_label
                ),
            })
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("strategy `{0}` needs a non-empty exemplar list")]
    MissingExemplars(StrategyId),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sacd(#[from] SacdError),
}

impl StrategyError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            StrategyError::Gateway(_) | StrategyError::Sacd(SacdError::Gateway(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub answer: String,
    pub transcript: Transcript,
    /// Prompt text sent for the final decision.
    pub decision_prompt: String,
    pub trace: Option<SacdTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyOptions<'e> {
    pub exemplars: Option<&'e [Exemplar]>,
    pub t_max: usize,
}

impl Default for StrategyOptions<'_> {
    fn default() -> Self {
        StrategyOptions { exemplars: None, t_max: crate::sacd::DEFAULT_T_MAX }
    }
}

fn exemplar_block(session: &Session<'_>, key: &str, exemplars: &[Exemplar]) -> String {
    exemplars
        .iter()
        .map(|e| {
            session
                .templates
                .render(key, &[("prompt", &e.prompt), ("answer", &e.answer), ("note", &e.note)])
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn single(session: &mut Session<'_>, key: &str, values: &[(&str, &str)]) -> Result<(String, String), GatewayError> {
    let text = session.templates.render(key, values);
    let answer = session.ask_user("decider", CallPurpose::Decision, text.clone())?;
    Ok((answer, text))
}

/// Runs one strategy on `prompt`; every model call lands in the transcript.
pub fn run_strategy(
    id: StrategyId,
    prompt: &PromptDoc,
    session: &mut Session<'_>,
    options: StrategyOptions<'_>,
) -> Result<StrategyOutcome, StrategyError> {
    let rendered = prompt.render();
    let mut trace = None;
    let (answer, decision_prompt) = match id {
        StrategyId::Vanilla => single(session, "decision", &[("prompt", &rendered)])?,
        StrategyId::CoT => single(session, "cot", &[("prompt", &rendered)])?,
        StrategyId::ZeroShotDebias => single(session, "zero_shot_debias", &[("prompt", &rendered)])?,
        StrategyId::FewShot | StrategyId::FewShotDebias => {
            let exemplars = options.exemplars.filter(|e| !e.is_empty()).ok_or(StrategyError::MissingExemplars(id))?;
            let (outer, inner) =
                if id == StrategyId::FewShot { ("few_shot", "few_shot_exemplar") } else { ("few_shot_debias", "few_shot_debias_exemplar") };
            let block = exemplar_block(session, inner, exemplars);
            single(session, outer, &[("exemplars", &block), ("prompt", &rendered)])?
        }
        StrategyId::Reflexion => {
            let first_prompt = session.templates.render("decision", &[("prompt", &rendered)]);
            let first = session.ask_user("actor", CallPurpose::Decision, first_prompt)?;
            let feedback_prompt =
                session.templates.render("reflexion_feedback", &[("prompt", &rendered), ("answer", &first)]);
            let feedback = session.ask_user("reflector", CallPurpose::Feedback, feedback_prompt)?;
            let revise = session.templates.render(
                "reflexion_revise",
                &[("prompt", &rendered), ("answer", &first), ("feedback", &feedback)],
            );
            let answer = session.ask_user("actor", CallPurpose::Revision, revise.clone())?;
            (answer, revise)
        }
        StrategyId::MultiAgentDebate => {
            let agents: Vec<String> = (1..=DEBATE_AGENTS).map(|i| format!("agent-{i}")).collect();
            let mut proposals = Vec::with_capacity(DEBATE_AGENTS);
            for agent in &agents {
                let text = session.templates.render("debate_propose", &[("agent", agent), ("prompt", &rendered)]);
                proposals.push(session.ask_user(agent, CallPurpose::Proposal, text)?);
            }
            let mut rebuttals = Vec::with_capacity(DEBATE_AGENTS);
            for (i, agent) in agents.iter().enumerate() {
                let others = agents
                    .iter()
                    .zip(&proposals)
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (name, text))| format!("{name}: {text}"))
                    .collect::<Vec<_>>()
                    .join("\n");
                let text = session.templates.render(
                    "debate_rebut",
                    &[("agent", agent), ("prompt", &rendered), ("own", &proposals[i]), ("others", &others)],
                );
                rebuttals.push(session.ask_user(agent, CallPurpose::Debate, text)?);
            }
            let responses = agents
                .iter()
                .zip(&rebuttals)
                .map(|(name, text)| format!("{name}: {text}"))
                .collect::<Vec<_>>()
                .join("\n");
            let text = session.templates.render("debate_aggregate", &[("prompt", &rendered), ("responses", &responses)]);
            let answer = session.ask_user("aggregator", CallPurpose::Aggregate, text.clone())?;
            (answer, text)
        }
        StrategyId::SelfHelp => {
            let request = session.templates.render("self_help_rewrite", &[("prompt", &rendered)]);
            let reply = session.ask_user("rewriter", CallPurpose::Rewrite, request)?;
            let rewritten = match protocol::extract_quoted(&reply).map(str::trim) {
                Some(text) if !text.is_empty() => text.to_string(),
                _ if !reply.trim().is_empty() && !reply.contains(protocol::FENCE) => reply.trim().to_string(),
                _ => rendered.clone(),
            };
            single(session, "decision", &[("prompt", &rewritten)])?
        }
        StrategyId::Sacd | StrategyId::SacdNoBD | StrategyId::SacdNoBA => {
            let variant = id.sacd_variant().expect("sacd strategy");
            let t = run_sacd(prompt, session, options.t_max, variant)?;
            let final_text = t.final_prompt.render();
            trace = Some(t);
            single(session, "decision", &[("prompt", &final_text)])?
        }
    };
    Ok(StrategyOutcome { answer, transcript: session.take_transcript(), decision_prompt, trace })
}
