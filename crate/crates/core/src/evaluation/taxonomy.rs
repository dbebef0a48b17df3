use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::decision::Decision;
use crate::bias::{BiasCue, BiasType};
use crate::sacd::SacdTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    BiasMisjudgment,
    BiasConfusion,
    InsufficientDebiasing,
    NoError,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::BiasMisjudgment,
        ErrorCategory::BiasConfusion,
        ErrorCategory::InsufficientDebiasing,
        ErrorCategory::NoError,
    ];
}

fn cue_of<'c>(sentence: &str, cues: &'c [BiasCue]) -> Option<&'c BiasCue> {
    let s = sentence.trim();
    cues.iter().find(|c| !s.is_empty() && c.rendered_text.contains(s))
}

/// Labels a debiasing run. Checks run in order and the first hit wins:
/// a flag raised on a prompt with nothing injected; a flagged cue sentence
/// whose analysis omits that cue's bias; a cue surviving in the final prompt
/// or a final decision equal to the target.
pub fn classify_error(
    trace: &SacdTrace,
    injected: &BTreeSet<BiasType>,
    cues: &[BiasCue],
    final_decision: &Decision,
    target: &str,
) -> ErrorCategory {
    if injected.is_empty() {
        let flagged = trace.iterations.iter().any(|it| it.flagged().next().is_some());
        return if flagged { ErrorCategory::BiasMisjudgment } else { ErrorCategory::NoError };
    }
    for it in &trace.iterations {
        let Some(analysis) = &it.analysis else { continue };
        for entry in &analysis.entries {
            let Some(verdict) = it.determination.iter().find(|v| v.index == entry.index) else { continue };
            if let Some(cue) = cue_of(&verdict.sentence, cues) {
                if !entry.bias_types.contains(&cue.bias) {
                    return ErrorCategory::BiasConfusion;
                }
            }
        }
    }
    let final_text = trace.final_prompt.render();
    if cues.iter().any(|c| c.survives_in(&final_text)) || final_decision.is(target) {
        return ErrorCategory::InsufficientDebiasing;
    }
    ErrorCategory::NoError
}
