//! Ready-made mock scripts for end-to-end scenarios.

use super::mock::{KeywordLabel, MockAction, MockRule, MockScript};
use super::CallPurpose;
use crate::bias::{BiasType, TaskInstance};

const DECISIONS: &[CallPurpose] = &[
    CallPurpose::Decision,
    CallPurpose::Revision,
    CallPurpose::Proposal,
    CallPurpose::Debate,
    CallPurpose::Aggregate,
];

/// Patterns whose first capture is the option a cue pushes toward.
pub const CUE_PATTERNS: [&str; 3] = [
    r"70% have the answer Option (\S+?),",
    r"correct answer is Option (\S+?)\.",
    r"If you choose Option (\S+?) and it is the wrong option, there will be no punishment",
];

/// How the single self-help rewrite treats cue sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriteMode {
    FirstCueOnly,
    AllCues,
}

fn cue_phrases() -> Vec<String> {
    BiasType::ALL.iter().map(|b| b.cue_phrase().to_string()).collect()
}

fn decision_rules(instances: &[TaskInstance]) -> Vec<MockRule> {
    let mut rules = vec![MockRule::new(MockAction::AnswerFromCue {
        patterns: CUE_PATTERNS.iter().map(|p| p.to_string()).collect(),
    })
    .on(DECISIONS)];
    for inst in instances.iter().filter(|i| !i.context.trim().is_empty()) {
        rules.push(
            MockRule::new(MockAction::Reply { text: format!("Answer: Option {}", inst.gold_label) })
                .on(DECISIONS)
                .if_any(&[inst.context.as_str()]),
        );
    }
    rules
}

fn analysis_rule() -> MockRule {
    MockRule::new(MockAction::LabelSentences {
        keywords: BiasType::ALL
            .iter()
            .map(|b| KeywordLabel { phrase: b.cue_phrase().into(), label: b.label().into() })
            .collect(),
        fallback_label: "none".into(),
    })
    .on(&[CallPurpose::Analysis])
}

fn tail_rules(mode: RewriteMode) -> Vec<MockRule> {
    let rewrite = match mode {
        RewriteMode::FirstCueOnly => MockAction::RemoveFirstCue { phrases: cue_phrases() },
        RewriteMode::AllCues => MockAction::RemoveAllCues { phrases: cue_phrases() },
    };
    vec![
        analysis_rule(),
        MockRule::new(MockAction::DeleteListed).on(&[CallPurpose::Debias]),
        MockRule::new(rewrite).on(&[CallPurpose::Rewrite]),
        MockRule::new(MockAction::Reply { text: "No issues found.".into() }).on(&[CallPurpose::Feedback]),
    ]
}

/// Picks the cue target whenever a cue is present and the gold option
/// otherwise; flags every sentence holding a cue phrase, labels it by
/// keyword and deletes it when asked to rewrite.
pub fn keyword_script(instances: &[TaskInstance], mode: RewriteMode) -> MockScript {
    let mut rules = decision_rules(instances);
    rules.push(MockRule::new(MockAction::FlagSentences { phrases: cue_phrases() }).on(&[CallPurpose::Determination]));
    rules.extend(tail_rules(mode));
    MockScript { rules, default_reply: String::new() }
}

/// Like [`keyword_script`], but determination first flags only the loss
/// aversion and anchoring sentences; the bandwagon sentence is flagged once
/// the other two are gone.
pub fn staged_script(instances: &[TaskInstance]) -> MockScript {
    let early = [BiasType::LossAversion.cue_phrase(), BiasType::Anchoring.cue_phrase()];
    let mut rules = decision_rules(instances);
    rules.push(
        MockRule::new(MockAction::FlagSentences { phrases: early.iter().map(|p| p.to_string()).collect() })
            .on(&[CallPurpose::Determination])
            .if_any(&early),
    );
    rules.push(
        MockRule::new(MockAction::FlagSentences { phrases: vec![BiasType::Bandwagon.cue_phrase().into()] })
            .on(&[CallPurpose::Determination]),
    );
    rules.extend(tail_rules(RewriteMode::AllCues));
    MockScript { rules, default_reply: String::new() }
}

/// Flags every sentence on every determination call.
pub fn always_flag_script() -> MockScript {
    MockScript {
        rules: vec![
            MockRule::new(MockAction::FlagSentences { phrases: vec![String::new()] }).on(&[CallPurpose::Determination]),
            analysis_rule(),
            MockRule::new(MockAction::KeepListed).on(&[CallPurpose::Debias]),
        ],
        default_reply: "Answer: Option A".into(),
    }
}
