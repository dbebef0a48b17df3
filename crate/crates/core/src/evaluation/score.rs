use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::decision::Decision;
use crate::bias::BiasType;
use crate::sacd::SacdTrace;
use crate::strategies::StrategyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Anchoring,
    Bandwagon,
    LossAversion,
    Multiple,
}

impl Condition {
    pub const ALL: [Condition; 4] =
        [Condition::Anchoring, Condition::Bandwagon, Condition::LossAversion, Condition::Multiple];

    pub fn biases(self) -> Vec<BiasType> {
        match self {
            Condition::Anchoring => vec![BiasType::Anchoring],
            Condition::Bandwagon => vec![BiasType::Bandwagon],
            Condition::LossAversion => vec![BiasType::LossAversion],
            Condition::Multiple => BiasType::MULTI_ORDER.to_vec(),
        }
    }

    /// Random stream of the treatment arm; stream 0 belongs to control.
    pub fn arm_stream(self) -> u64 {
        match self {
            Condition::Anchoring => 1,
            Condition::Bandwagon => 2,
            Condition::LossAversion => 3,
            Condition::Multiple => 4,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Condition::Anchoring => "anchoring",
            Condition::Bandwagon => "bandwagon",
            Condition::LossAversion => "loss_aversion",
            Condition::Multiple => "multiple",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Condition::Anchoring => "Anchoring",
            Condition::Bandwagon => "Bandwagon",
            Condition::LossAversion => "LossAversion",
            Condition::Multiple => "Multiple",
        }
    }

    pub fn from_biases(set: &BTreeSet<BiasType>) -> Option<Condition> {
        Condition::ALL.into_iter().find(|c| c.biases().into_iter().collect::<BTreeSet<_>>() == *set)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "anchoring" => Ok(Condition::Anchoring),
            "bandwagon" => Ok(Condition::Bandwagon),
            "loss_aversion" | "lossaversion" => Ok(Condition::LossAversion),
            "multiple" | "multi" => Ok(Condition::Multiple),
            _ => Err(format!("unknown condition `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "biases", rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treatment(BTreeSet<BiasType>),
}

impl Arm {
    pub fn key(&self) -> String {
        match self {
            Arm::Control => "control".into(),
            Arm::Treatment(set) => match Condition::from_biases(set) {
                Some(c) => c.key().into(),
                None => set.iter().map(|b| b.label().replace(' ', "_")).collect::<Vec<_>>().join("+"),
            },
        }
    }
}

/// Iteration-level outcome of a debiasing run: the decision made from the
/// prompt in force after that iteration and whether any cue survived there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: usize,
    pub decision: Decision,
    pub cue_survives: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub instance_id: String,
    pub arm: Arm,
    pub strategy: StrategyId,
    /// sha256 of the final decision request text.
    pub prompt_digest: String,
    pub raw_answer: String,
    pub decision: Decision,
    pub target_label: String,
    pub gold_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<SacdTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<IterationOutcome>,
    pub transcript_ref: String,
}

impl TrialRecord {
    pub fn picked_target(&self) -> bool {
        self.decision.is(&self.target_label)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("{0} arm is empty")]
    EmptyArm(&'static str),
    #[error("record {instance_id} belongs to the {found} arm, not {expected}")]
    ArmMismatch { instance_id: String, expected: &'static str, found: String },
}

/// Exact difference of target rates as a reduced fraction.
pub fn exact_score(ct: u64, nt: u64, cc: u64, nc: u64) -> Result<Ratio<i128>, ScoreError> {
    if nt == 0 {
        return Err(ScoreError::EmptyArm("treatment"));
    }
    if nc == 0 {
        return Err(ScoreError::EmptyArm("control"));
    }
    Ok(Ratio::new(ct as i128, nt as i128) - Ratio::new(cc as i128, nc as i128))
}

pub fn ratio_to_f64(r: &Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScoreReport {
    pub condition: Condition,
    pub score: f64,
    /// The score as a reduced fraction, e.g. "1/5".
    pub score_exact: String,
    pub n_treatment: u64,
    pub n_control: u64,
    pub treatment_target_count: u64,
    pub control_target_count: u64,
    pub treatment_target_rate: f64,
    pub control_target_rate: f64,
    /// (treatment, control)
    pub unparsed_counts: (u64, u64),
    /// Instances dropped from both arms because one of their runs failed.
    #[serde(default)]
    pub excluded: u64,
}

fn tally(records: &[TrialRecord]) -> (u64, u64, u64) {
    let n = records.len() as u64;
    let hits = records.iter().filter(|r| r.picked_target()).count() as u64;
    let unparsed = records.iter().filter(|r| r.decision == Decision::Unparsed).count() as u64;
    (n, hits, unparsed)
}

/// Target-pick rate of the treatment arm minus that of the control arm,
/// each record compared against its own instance's target. Unparsed
/// decisions count as not picking the target.
pub fn bias_score(
    condition: Condition,
    treatment: &[TrialRecord],
    control: &[TrialRecord],
) -> Result<BiasScoreReport, ScoreError> {
    if let Some(r) = treatment.iter().find(|r| !matches!(r.arm, Arm::Treatment(_))) {
        return Err(ScoreError::ArmMismatch { instance_id: r.instance_id.clone(), expected: "treatment", found: r.arm.key() });
    }
    if let Some(r) = control.iter().find(|r| r.arm != Arm::Control) {
        return Err(ScoreError::ArmMismatch { instance_id: r.instance_id.clone(), expected: "control", found: r.arm.key() });
    }
    let (nt, ct, ut) = tally(treatment);
    let (nc, cc, uc) = tally(control);
    let exact = exact_score(ct, nt, cc, nc)?;
    Ok(BiasScoreReport {
        condition,
        score: ratio_to_f64(&exact),
        score_exact: format!("{}/{}", exact.numer(), exact.denom()),
        n_treatment: nt,
        n_control: nc,
        treatment_target_count: ct,
        control_target_count: cc,
        treatment_target_rate: ct as f64 / nt as f64,
        control_target_rate: cc as f64 / nc as f64,
        unparsed_counts: (ut, uc),
        excluded: 0,
    })
}
