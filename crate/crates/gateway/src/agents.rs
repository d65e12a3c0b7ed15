//! Solver, simulated user and judge built on the chat client.

use std::collections::BTreeMap;

use elicit_core::engine::{Answer, UserAgent};
use elicit_core::types::{CriterionId, CriterionRegistry, PreferenceProfile, PreferenceValue, TaskSpec};
use serde_json::Value;

use crate::chat::ChatMessage;
use crate::client::Client;
use crate::error::{GatewayError, Result};
use crate::template::{PromptTemplate, TemplateId};

fn label(registry: Option<&CriterionRegistry>, id: &CriterionId) -> String {
    match registry.and_then(|r| r.get(id)).map(|c| c.description.as_str()) {
        Some(d) if !d.is_empty() => format!("{id} ({d})"),
        _ => id.to_string(),
    }
}

/// One "- criterion: level" line per stated level, in task order. Criteria
/// with no preference are left out.
pub fn format_preferences(
    task: &TaskSpec,
    profile: &PreferenceProfile,
    registry: Option<&CriterionRegistry>,
) -> String {
    let lines: Vec<String> = task
        .criteria()
        .iter()
        .filter_map(|c| match profile.value(c) {
            Some(PreferenceValue::Level(n)) => Some(format!("- {}: {n}", label(registry, c))),
            _ => None,
        })
        .collect();
    if lines.is_empty() {
        "(none stated)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Asks the solver for a response to `task` tailored to `predicted`.
pub fn solve(
    client: &Client,
    task: &TaskSpec,
    predicted: &PreferenceProfile,
    registry: Option<&CriterionRegistry>,
) -> Result<String> {
    let system = PromptTemplate::builtin(TemplateId::Solver).render(&BTreeMap::from([(
        "elicited_preferences",
        format_preferences(task, predicted, registry),
    )]))?;
    let request = client.request(vec![ChatMessage::system(system), ChatMessage::user(task.prompt_text())]);
    Ok(client.chat(&request)?.content)
}

const NO_PREFERENCE_PHRASES: [&str; 9] = [
    "no strong preference",
    "no preference",
    "don't have a",
    "do not have a",
    "not sure",
    "whatever you think",
    "doesn't matter",
    "don't care",
    "no opinion",
];

/// Reads a preference from free text: a no-preference phrase, else the first
/// standalone digit 1..5.
pub fn parse_answer_text(text: &str) -> Option<PreferenceValue> {
    let lower = text.to_lowercase();
    if NO_PREFERENCE_PHRASES.iter().any(|p| lower.contains(p)) || lower.trim() == "none" {
        return Some(PreferenceValue::NoPreference);
    }
    let b = lower.as_bytes();
    (0..b.len()).find_map(|i| {
        let standalone = (i == 0 || !b[i - 1].is_ascii_digit()) && (i + 1 == b.len() || !b[i + 1].is_ascii_digit());
        match b[i] {
            d @ b'1'..=b'5' if standalone => Some(PreferenceValue::Level(d - b'0')),
            _ => None,
        }
    })
}

fn json_object(content: &str) -> Option<Value> {
    let start = content.find('{')?;
    let end = content.rfind('}')?;
    serde_json::from_str(content.get(start..=end)?).ok()
}

/// Interprets a simulated user's reply. The expected form is a JSON object
/// with a `response` field; anything else is read as plain text and flagged,
/// and an unreadable reply becomes NoPreference with a warning.
pub fn parse_answer(content: &str) -> Answer {
    let unreadable = |why: String| Answer {
        value: PreferenceValue::NoPreference,
        warning: Some(why),
    };
    match json_object(content) {
        Some(v) => match v.get("response").and_then(Value::as_str) {
            Some(text) => match parse_answer_text(text) {
                Some(value) => Answer { value, warning: None },
                None => unreadable(format!("no preference found in {text:?}")),
            },
            None => unreadable("reply has no \"response\" field".into()),
        },
        None => match parse_answer_text(content) {
            Some(value) => Answer {
                value,
                warning: Some("reply was not JSON; read as plain text".into()),
            },
            None => unreadable(format!("unreadable reply {content:?}")),
        },
    }
}

/// A user simulated by the chat model from a persona and a profile.
pub struct LlmUserAgent<'a> {
    client: &'a Client,
    persona: String,
    preferences: String,
    registry: Option<&'a CriterionRegistry>,
}

impl<'a> LlmUserAgent<'a> {
    pub fn new(
        client: &'a Client,
        persona: impl Into<String>,
        profile: &PreferenceProfile,
        registry: Option<&'a CriterionRegistry>,
    ) -> Self {
        let lines: Vec<String> = profile
            .cared()
            .map(|(c, e)| format!("- {}: {}", label(registry, c), e.value))
            .collect();
        Self {
            client,
            persona: persona.into(),
            preferences: if lines.is_empty() { "(none)".into() } else { lines.join("\n") },
            registry,
        }
    }

    pub fn question(&self, criterion: &CriterionId) -> String {
        format!(
            "How do you feel about {}? Rate it from 1 (strongly avoid) to 5 (strongly prefer).",
            label(self.registry, criterion)
        )
    }
}

impl UserAgent for LlmUserAgent<'_> {
    fn answer(&mut self, criterion: &CriterionId) -> elicit_core::Result<Answer> {
        let prompt = PromptTemplate::builtin(TemplateId::PassiveUser)
            .render(&BTreeMap::from([
                ("persona_profile", self.persona.clone()),
                ("persona_preferences", self.preferences.clone()),
                ("current_question", self.question(criterion)),
            ]))
            .map_err(|e| elicit_core::Error::UserAgent(e.to_string()))?;
        let reply = self
            .client
            .chat(&self.client.request(vec![ChatMessage::user(prompt)]))
            .map_err(|e| elicit_core::Error::UserAgent(e.to_string()))?;
        Ok(parse_answer(&reply.content))
    }
}

/// What the judge needs to grade one criterion.
#[derive(Debug, Clone)]
pub struct JudgeInput<'a> {
    pub criterion: &'a str,
    pub description: &'a str,
    pub levels: &'a str,
    pub preferred: u8,
    pub justification: &'a str,
    pub response: &'a str,
}

/// Rubric score in 0..=5 for one criterion.
pub fn judge_criterion(client: &Client, input: &JudgeInput<'_>) -> Result<u8> {
    let prompt = PromptTemplate::builtin(TemplateId::Judge).render(&BTreeMap::from([
        ("pref_key", input.criterion.to_string()),
        ("criterion_description", input.description.to_string()),
        ("performance_levels", input.levels.to_string()),
        ("pref_val", input.preferred.to_string()),
        ("pref_just", input.justification.to_string()),
        ("final_response", input.response.to_string()),
    ]))?;
    let reply = client.chat(&client.request(vec![ChatMessage::user(prompt)]))?;
    json_object(&reply.content)
        .and_then(|v| v.get("score").and_then(Value::as_u64))
        .filter(|&s| s <= 5)
        .map(|s| s as u8)
        .ok_or_else(|| GatewayError::Response(format!("judge reply has no score in 0..=5: {:?}", reply.content)))
}
