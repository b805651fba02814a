//! Text-generation plumbing and the LLM-backed policy.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentError, Decision, DecisionInput, Policy, PolicyKind};
use crate::catalog::MovieId;
use crate::sandbox::{format_kinds, Action, ActionKind, Observation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, AgentError>;
}

/// A prompt with `{name}` placeholders. Braces not wrapping a bare
/// lowercase identifier are left alone, so JSON examples survive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

pub const PREFERENCE_TEMPLATE: &str = include_str!("../../templates/preference.v1.txt");
pub const DECIDE_TEMPLATE: &str = include_str!("../../templates/decide.v1.txt");

impl PromptTemplate {
    pub fn preference() -> Self {
        PromptTemplate { name: "preference.v1".into(), text: PREFERENCE_TEMPLATE.into() }
    }

    pub fn decide() -> Self {
        PromptTemplate { name: "decide.v1".into(), text: DECIDE_TEMPLATE.into() }
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::Config(format!("template {}: {e}", path.display())))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(PromptTemplate { name, text })
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            rest = &rest[open + 1..];
            if let Some(close) = rest.find('}') {
                let name = &rest[..close];
                if is_ident(name) {
                    out.insert(name.to_string());
                }
            }
        }
        out
    }

    /// Substitutes every placeholder; a placeholder without a value is an error.
    pub fn render(&self, values: &[(&str, String)]) -> Result<String, AgentError> {
        for p in self.placeholders() {
            if !values.iter().any(|(k, _)| *k == p) {
                return Err(AgentError::Config(format!("template {} needs {{{p}}}", self.name)));
            }
        }
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}').map(|c| (&after[..c], c)) {
                Some((name, c)) if is_ident(name) => {
                    let v = &values.iter().find(|(k, _)| *k == name).unwrap().1;
                    out.push_str(v);
                    rest = &after[c + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// OpenAI-style chat-completions client.
#[derive(Clone)]
pub struct ChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    agent: ureq::Agent,
}

impl ChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        ChatClient { endpoint: endpoint.into(), model: model.into(), api_key, temperature: 0.0, max_tokens: 512, max_retries: 3, agent }
    }

    /// Reads `LLM_ENDPOINT`, `LLM_MODEL` and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self, AgentError> {
        let endpoint = std::env::var("LLM_ENDPOINT").map_err(|_| AgentError::Config("LLM_ENDPOINT is not set".into()))?;
        let model = std::env::var("LLM_MODEL").map_err(|_| AgentError::Config("LLM_MODEL is not set".into()))?;
        Ok(Self::new(endpoint, model, std::env::var("LLM_API_KEY").ok(), Duration::from_secs(60)))
    }

    fn request(&self, messages: &[ChatMessage]) -> Result<String, String> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".into())
    }
}

impl TextGenerator for ChatClient {
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, AgentError> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            match self.request(messages) {
                Ok(s) => return Ok(s),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "chat request failed");
                    last = e;
                    std::thread::sleep(Duration::from_millis(250 << attempt.min(4)));
                }
            }
        }
        Err(AgentError::Transport(last))
    }
}

/// The structured reply the decide prompt asks for.
#[derive(Debug, Clone, PartialEq, Deserialize)]
struct Reply {
    action: String,
    #[serde(default)]
    args: Value,
    interest: i64,
    #[serde(default)]
    reason: String,
}

/// The first balanced `{...}` in `text`, ignoring braces inside strings.
fn extract_json(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let (mut depth, mut in_str, mut esc) = (0usize, false, false);
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if esc => esc = false,
                '\\' => esc = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Validates a raw reply against the offered legal set and page.
pub fn parse_decision(text: &str, legal: &BTreeSet<ActionKind>, observation: &Observation, interest_range: (u8, u8)) -> Result<Decision, String> {
    let raw = extract_json(text).ok_or("reply contains no JSON object")?;
    let r: Reply = serde_json::from_str(raw).map_err(|e| format!("malformed reply: {e}"))?;
    let kind: ActionKind = r.action.parse()?;
    if !legal.contains(&kind) {
        return Err(format!("illegal: {kind} not in {}", format_kinds(legal)));
    }
    let (lo, hi) = interest_range;
    if r.interest < lo as i64 || r.interest > hi as i64 {
        return Err(format!("interest {} outside {lo}..={hi}", r.interest));
    }
    let interest = r.interest as u8;
    let arg = |k: &str| r.args.get(k).and_then(Value::as_u64);
    let action = match kind {
        ActionKind::Click => {
            let id = MovieId(arg("movie_id").ok_or("click needs args.movie_id")? as u32);
            let on_page = match observation {
                Observation::Home(h) => h.cards.iter().any(|c| c.movie_id == id),
                Observation::Detail(_) => false,
            };
            if !on_page {
                return Err(format!("movie {id} is not on the current page"));
            }
            Action::Click { movie_id: id }
        }
        ActionKind::WatchAndRate => {
            let rating = arg("rating").unwrap_or(interest as u64);
            if !(1..=5).contains(&rating) {
                return Err(format!("rating {rating} outside 1..=5"));
            }
            Action::WatchAndRate { rating: rating as u8 }
        }
        ActionKind::NextPage => Action::NextPage,
        ActionKind::PrevPage => Action::PrevPage,
        ActionKind::Back => Action::Back,
        ActionKind::Exit => Action::Exit,
    };
    Ok(Decision { action, interest, explanation: r.reason })
}

/// Prompts a text generator with the decide template and re-prompts on
/// ill-formed or illegal replies, up to `retry_budget` extra turns.
pub struct LlmPolicy {
    pub generator: Arc<dyn TextGenerator>,
    pub template: PromptTemplate,
    pub retry_budget: u32,
    pub memory_lines: usize,
    pub history_lines: usize,
}

impl LlmPolicy {
    pub fn new(generator: Arc<dyn TextGenerator>) -> Self {
        LlmPolicy { generator, template: PromptTemplate::decide(), retry_budget: 2, memory_lines: 5, history_lines: 10 }
    }

    pub fn prompt(&self, input: &DecisionInput<'_>) -> Result<String, AgentError> {
        let memories = if input.retrieved.is_empty() {
            "(none)".to_string()
        } else {
            input.retrieved.iter().take(self.memory_lines).map(|(r, s)| format!("- {} (similarity {s:.2})", r.payload)).collect::<Vec<_>>().join("\n")
        };
        let history = if input.short_term.is_empty() {
            "(nothing yet)".to_string()
        } else {
            input
                .short_term
                .recent(self.history_lines)
                .iter()
                .map(|e| format!("step {}: {:?} on {:?}, interest {}", e.step, e.action_taken, e.interface_type, e.interest))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let legal: Vec<String> = input.legal.iter().map(|k| snake(*k).to_string()).collect();
        self.template.render(&[
            ("profile", input.profile.render()),
            ("memories", memories),
            ("history", history),
            ("observation", input.observation.render()),
            ("fatigue", input.fatigue.reading()),
            ("legal_actions", legal.join(", ")),
        ])
    }
}

pub fn snake(k: ActionKind) -> &'static str {
    match k {
        ActionKind::Click => "click",
        ActionKind::NextPage => "next_page",
        ActionKind::PrevPage => "prev_page",
        ActionKind::WatchAndRate => "watch_and_rate",
        ActionKind::Back => "back",
        ActionKind::Exit => "exit",
    }
}

impl Policy for LlmPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Llm
    }

    fn decide(&self, input: &DecisionInput<'_>) -> Result<Decision, AgentError> {
        let range = (input.fatigue_config.interest_min, input.fatigue_config.interest_max);
        let mut messages = vec![ChatMessage::user(self.prompt(input)?)];
        let mut diagnostic = String::new();
        for _ in 0..=self.retry_budget {
            let reply = self.generator.generate(&messages)?;
            match parse_decision(&reply, input.legal, input.observation, range) {
                Ok(d) => return Ok(d),
                Err(e) => {
                    tracing::debug!(error = %e, "re-prompting after bad reply");
                    messages.push(ChatMessage::assistant(reply));
                    let legal: Vec<&str> = input.legal.iter().map(|k| snake(*k)).collect();
                    messages.push(ChatMessage::user(format!(
                        "That reply was rejected: {e}. Legal actions: {}. Answer with one JSON object only.",
                        legal.join(", ")
                    )));
                    diagnostic = e;
                }
            }
        }
        tracing::warn!(diagnostic, "retry budget spent; exiting");
        Ok(Decision { action: Action::Exit, interest: range.0, explanation: format!("fallback exit: {diagnostic}") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_placeholders_skip_json_braces() {
        let t = PromptTemplate::decide();
        let names: Vec<String> = t.placeholders().into_iter().collect();
        assert_eq!(names, vec!["fatigue", "history", "legal_actions", "memories", "observation", "profile"]);
        let p = PromptTemplate::preference();
        assert_eq!(p.placeholders().into_iter().collect::<Vec<_>>(), vec!["history"]);
        let out = p.render(&[("history", "ROWS".into())]).unwrap();
        assert!(out.trim_end().ends_with("History:\nROWS"));
        assert!(out.contains("\"not found\""));
        assert!(p.render(&[]).is_err());
    }

    #[test]
    fn json_extraction() {
        assert_eq!(extract_json("sure: {\"a\": \"}\"} trailing"), Some("{\"a\": \"}\"}"));
        assert_eq!(extract_json("no json"), None);
    }
}
