//! Who to talk to, what to say, and how an exchange changes a relationship.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::agent::profile::{AgentId, Friend};
use crate::gateway::{Bindings, CompletionRequest, FieldSpec, Gateway, GatewayError, ResponseContract};

pub const MAX_MESSAGE_CHARS: usize = 100;
/// Replies to replies are not answered.
pub const MAX_REPLY_DEPTH: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    Offline,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "online" => Some(Mode::Online),
            "offline" => Some(Mode::Offline),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Online => "online",
            Mode::Offline => "offline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialMessage {
    pub sender: AgentId,
    pub sender_name: String,
    pub recipient: AgentId,
    pub mode: Mode,
    pub text: String,
    /// Sender's stance on the discussion topic, when one is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance: Option<u8>,
    pub sim_time: NaiveDateTime,
    pub tick: u64,
    /// 0 for an opening message, 1 for a reply.
    pub depth: u8,
    /// Sent by the experimenter rather than another agent.
    #[serde(default)]
    pub injected: bool,
}

impl SocialMessage {
    /// Form in which the message enters the recipient's memory.
    pub fn memory_text(&self) -> String {
        match self.stance {
            Some(s) => format!("Message from {} [stance {s}/10]: {}", self.sender_name, self.text),
            None => format!("Message from {}: {}", self.sender_name, self.text),
        }
    }
}

/// "index: strength" pairs in friend-list order.
pub fn friend_info(friends: &[Friend]) -> String {
    friends.iter().enumerate().map(|(i, f)| format!("{i}: {}", f.strength)).collect::<Vec<_>>().join(", ")
}

pub fn social_target_contract(friend_count: usize) -> ResponseContract {
    ResponseContract::Bracket {
        fields: vec![FieldSpec::choice("mode", &["online", "offline"]), FieldSpec::integer("index", 0, friend_count.saturating_sub(1) as i64)],
    }
}

/// Chooses a friend and a mode. `None` without friends. Unusable answers
/// fall back to the strongest relationship, online; the error is returned
/// for logging.
pub fn select_social_target(gateway: &Gateway, mut bindings: Bindings, friends: &[Friend]) -> Option<(Mode, usize, Option<GatewayError>)> {
    if friends.is_empty() {
        return None;
    }
    bindings.insert("friend info".into(), friend_info(friends));
    let req = CompletionRequest::new("social_target", bindings).with_contract(social_target_contract(friends.len()));
    match gateway.cached_complete(&req) {
        Ok(rec) => {
            let mode = rec.str("mode").and_then(Mode::parse).unwrap_or(Mode::Online);
            let idx = rec.i64("index").unwrap_or(0).clamp(0, friends.len() as i64 - 1) as usize;
            Some((mode, idx, None))
        }
        Err(e) => {
            let idx = friends.iter().enumerate().max_by_key(|(i, f)| (f.strength, std::cmp::Reverse(*i))).map(|(i, _)| i).unwrap_or(0);
            Some((Mode::Online, idx, Some(e)))
        }
    }
}

/// Truncates to at most `max` characters.
pub fn truncate_chars(s: &str, max: usize) -> String {
    s.trim().chars().take(max).collect()
}

/// Composes a message of at most 100 characters. One retry; an answer that
/// is still too long is truncated.
pub fn compose_message(gateway: &Gateway, bindings: Bindings) -> Result<String, GatewayError> {
    let req = CompletionRequest::new("message", bindings).with_max_retries(1);
    match gateway.cached_complete(&req) {
        Ok(rec) => Ok(rec.text().trim().to_string()),
        Err(GatewayError::ContractViolation { raw, detail, .. }) if !raw.trim().is_empty() => {
            tracing::debug!(%detail, "message truncated");
            Ok(truncate_chars(&raw, MAX_MESSAGE_CHARS))
        }
        Err(e) => Err(e),
    }
}

/// What the recipient makes of a message.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExchangeJudgement {
    pub reply: Option<String>,
    /// relationship change in -5..=5
    pub delta: i32,
}

pub fn judge_exchange(gateway: &Gateway, bindings: Bindings) -> Result<ExchangeJudgement, GatewayError> {
    let rec = gateway.cached_complete(&CompletionRequest::new("social_response", bindings))?;
    let reply = rec.str("reply").map(str::trim).filter(|r| !r.is_empty()).map(str::to_string);
    Ok(ExchangeJudgement { reply, delta: rec.i64("relationship_change").unwrap_or(0).clamp(-5, 5) as i32 })
}

/// A persuasive line for or against the topic.
pub fn demagogue_message(gateway: &Gateway, supports: bool) -> Result<String, GatewayError> {
    let mut b = Bindings::new();
    b.insert("agree or disagree".into(), if supports { "agree" } else { "disagree" }.into());
    b.insert("good or bad".into(), if supports { "good" } else { "bad" }.into());
    let rec = gateway.cached_complete(&CompletionRequest::new("demagogue", b))?;
    Ok(rec.text().trim().to_string())
}

/// Discussion constraint for messages when a topic is configured.
pub fn discussion_constraint(topic: Option<&str>, attitude: Option<u8>) -> String {
    match (topic, attitude) {
        (Some(t), Some(a)) => format!("Talk about the topic: {t}. Your attitude towards it is {a}/10 (0 oppose, 10 support)."),
        (Some(t), None) => format!("Talk about the topic: {t}."),
        _ => String::new(),
    }
}
