//! Seeded biased-agent simulator.
//!
//! Answer-producing calls carrying [`TrialMeta`] pick the biased target with
//! probability `p_target_treatment` (treatment arms) or `p_target_control`
//! (control arm). The uniform draw for a trial is element `draw_index` of a
//! ChaCha8 stream seeded with `seed` and positioned on stream `arm_stream`,
//! so outcomes do not depend on call order or concurrency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, CallPurpose, ChatRequest, ChatResponse, GatewayError};
use crate::protocol;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasedAgentConfig {
    pub p_target_treatment: f64,
    pub p_target_control: f64,
    pub seed: u64,
}

impl BiasedAgentConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        for (name, p) in [("p_target_treatment", self.p_target_treatment), ("p_target_control", self.p_target_control)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GatewayError::InvalidRequest(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Uniform draw in [0, 1) at position `index` of the arm's stream.
pub fn seeded_draw(seed: u64, arm_stream: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(arm_stream);
    // one f64 consumes one u64, i.e. two 32-bit words
    rng.set_word_pos(u128::from(index) * 2);
    rng.gen::<f64>()
}

#[derive(Debug, Clone)]
pub struct BiasedAgent {
    config: BiasedAgentConfig,
}

impl BiasedAgent {
    pub fn new(config: BiasedAgentConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(BiasedAgent { config })
    }

    pub fn config(&self) -> &BiasedAgentConfig {
        &self.config
    }

    fn answer(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let meta = request.meta.as_ref().ok_or_else(|| {
            GatewayError::InvalidRequest("simulator answers need trial metadata".into())
        })?;
        let p = if meta.treatment { self.config.p_target_treatment } else { self.config.p_target_control };
        let draw = seeded_draw(self.config.seed, meta.arm_stream, meta.draw_index);
        let label = if draw < p {
            meta.target_label.clone()
        } else {
            meta.option_labels
                .iter()
                .find(|l| **l != meta.target_label)
                .cloned()
                .ok_or_else(|| GatewayError::InvalidRequest("no non-target option".into()))?
        };
        Ok(format!("Answer: Option {label}"))
    }
}

impl Backend for BiasedAgent {
    fn id(&self) -> &str {
        "simulator"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let text = request.last_user();
        let content = match request.purpose {
            p if p.is_answer() => self.answer(request)?,
            CallPurpose::Determination => protocol::parse_listing(text)
                .iter()
                .map(|(i, _)| format!("{i} | unbiased"))
                .collect::<Vec<_>>()
                .join("\n"),
            CallPurpose::Rewrite => protocol::extract_quoted(text).map(protocol::quote).unwrap_or_default(),
            CallPurpose::Feedback => "No issues found.".into(),
            // analysis and debiasing are never reached: every determination is clean
            _ => String::new(),
        };
        Ok(ChatResponse { content, backend_id: "simulator".into(), cached: false, latency_ms: 0 })
    }
}
