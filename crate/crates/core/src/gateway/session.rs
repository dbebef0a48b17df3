use serde::{Deserialize, Serialize};

use super::{Backend, CallPurpose, ChatMessage, ChatRequest, ChatResponse, GatewayError, TrialMeta};
use crate::templates::Templates;

/// Per-call model settings shared by every request in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for CallParams {
    fn default() -> Self {
        CallParams { model_id: "default".into(), temperature: 0.0, max_tokens: super::DEFAULT_MAX_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub actor: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Every model call of one strategy run, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<Turn>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// A backend plus the settings for one trial. Every call lands in the
/// transcript.
pub struct Session<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a Templates,
    pub params: CallParams,
    pub meta: Option<TrialMeta>,
    transcript: Transcript,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn Backend, templates: &'a Templates, params: CallParams) -> Self {
        Session { backend, templates, params, meta: None, transcript: Transcript::default() }
    }

    pub fn with_meta(mut self, meta: Option<TrialMeta>) -> Self {
        self.meta = meta;
        self
    }

    pub fn ask(
        &mut self,
        actor: &str,
        purpose: CallPurpose,
        messages: Vec<ChatMessage>,
    ) -> Result<String, GatewayError> {
        let request = ChatRequest {
            model_id: self.params.model_id.clone(),
            messages,
            temperature: self.params.temperature,
            max_tokens: self.params.max_tokens,
            purpose,
            meta: self.meta.clone(),
        };
        let response = self.backend.complete(&request)?;
        let content = response.content.clone();
        self.transcript.turns.push(Turn { actor: actor.to_string(), request, response });
        Ok(content)
    }

    /// Single user-message call.
    pub fn ask_user(&mut self, actor: &str, purpose: CallPurpose, text: String) -> Result<String, GatewayError> {
        self.ask(actor, purpose, vec![ChatMessage::user(text)])
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn take_transcript(&mut self) -> Transcript {
        std::mem::take(&mut self.transcript)
    }
}
