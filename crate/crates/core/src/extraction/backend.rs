use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A user/assistant example pair sent ahead of the real user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotTurn {
    pub user: String,
    pub assistant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub few_shot: Vec<FewShotTurn>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chat backend failure: {0}")]
pub struct ChatError(pub String);

/// A chat-completion endpoint. Implementations must accept concurrent calls
/// and forward `temperature` untouched.
pub trait ChatBackend: Send + Sync {
    fn model(&self) -> &str;

    /// Returns the first text content of the completion, verbatim.
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}
