//! The provider-neutral request body: decoding parameters and a fixed
//! two-message conversation.

use serde::{Deserialize, Serialize};

use crate::profile::BackendProfile;

pub const SYSTEM_MESSAGE: &str = "You are a helpful assistant. Follow the user's instructions exactly.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatPayload {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
}

impl ChatPayload {
    pub fn new(profile: &BackendProfile, prompt: impl Into<String>) -> Self {
        ChatPayload {
            model: profile.model_id.clone(),
            temperature: profile.temperature,
            top_p: profile.top_p,
            max_tokens: profile.max_tokens,
            messages: vec![
                ChatMessage { role: "system".into(), content: SYSTEM_MESSAGE.into() },
                ChatMessage { role: "user".into(), content: prompt.into() },
            ],
        }
    }

    /// The user prompt.
    pub fn prompt(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == "user").map_or("", |m| m.content.as_str())
    }
}
