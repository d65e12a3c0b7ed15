//! Optional bridge to a chat-completion service: prompt templates, a cached
//! and rate-limited client, and solver / simulated-user / judge calls on top.
//!
//! Nothing in the core engine depends on this crate. Tests use an in-process
//! [`Transport`] and never touch the network.

pub mod agents;
pub mod chat;
pub mod client;
pub mod error;
pub mod template;

pub use agents::{judge_criterion, parse_answer, solve, JudgeInput, LlmUserAgent};
pub use chat::{ChatMessage, ChatRequest, ChatResponse, Role, Usage};
pub use client::{Client, HttpTransport, ResponseCache, RetryPolicy, Transport, TransportError};
pub use error::{GatewayError, Result};
pub use template::{PromptTemplate, TemplateId};
