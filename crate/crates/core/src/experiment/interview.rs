//! Open-ended interviews. The agent answers from its current state; the
//! conversation is kept in the session only.

use std::collections::VecDeque;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::survey::IsolationCheck;
use crate::agent::profile::AgentId;
use crate::agent::Agent;
use crate::gateway::{Bindings, CompletionRequest, Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Interviewer,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterviewSession {
    pub agent_id: AgentId,
    pub started_at: NaiveDateTime,
    pub turns: Vec<Turn>,
    /// Always true: nothing from the session reaches the agent's memory.
    pub isolated: bool,
    /// Why the session ended early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_by: Option<String>,
}

impl InterviewSession {
    pub fn new(agent_id: AgentId, started_at: NaiveDateTime) -> Self {
        Self { agent_id, started_at, turns: Vec::new(), isolated: true, ended_by: None }
    }

    /// Earlier turns as prompt text.
    pub fn conversation(&self) -> String {
        if self.turns.is_empty() {
            return "(this is the start of the interview)".into();
        }
        self.turns
            .iter()
            .map(|t| match t.speaker {
                Speaker::Interviewer => format!("Interviewer: {}", t.text),
                Speaker::Agent => format!("You: {}", t.text),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Plain-text transcript.
    pub fn to_text(&self) -> String {
        let mut out = format!("agent: {}\nstarted: {}\n\n", self.agent_id, self.started_at.format("%Y-%m-%d %H:%M"));
        for t in &self.turns {
            let who = match t.speaker {
                Speaker::Interviewer => "Interviewer",
                Speaker::Agent => "Agent",
            };
            out.push_str(&format!("{who}: {}\n", t.text));
        }
        if let Some(reason) = &self.ended_by {
            out.push_str(&format!("\n[ended: {reason}]\n"));
        }
        out
    }
}

/// Supplies interviewer turns; `None` closes the session.
pub trait InterviewChannel {
    fn next_question(&mut self, last_answer: Option<&str>) -> Option<String>;
}

/// A fixed list of questions.
#[derive(Debug, Clone, Default)]
pub struct ScriptedQuestions(VecDeque<String>);

impl ScriptedQuestions {
    pub fn new(questions: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self(questions.into_iter().map(Into::into).collect())
    }
}

impl InterviewChannel for ScriptedQuestions {
    fn next_question(&mut self, _last_answer: Option<&str>) -> Option<String> {
        self.0.pop_front()
    }
}

fn status_text(agent: &Agent) -> String {
    let s = &agent.status;
    format!(
        "at {}; savings {:.2}; last monthly income {:.2}; last monthly consumption {:.2}; unconditional payments received: {}; feeling {}",
        s.location.describe(),
        s.savings,
        s.last_income,
        s.last_consumption,
        s.transfers_received,
        agent.emotion.word
    )
}

/// The agent's answer to `question`, given the session so far.
pub fn interview_reply(agent: &Agent, gateway: &Gateway, session: &InterviewSession, question: &str, now: NaiveDateTime) -> Result<String, GatewayError> {
    let mut b = Bindings::new();
    b.insert("agent profile description".into(), agent.profile.description());
    b.insert("status".into(), status_text(agent));
    b.insert("thought".into(), agent.thought.or_placeholder().to_string());
    b.insert("memory digest".into(), agent.memory.digest(now));
    b.insert("conversation".into(), session.conversation());
    b.insert("question".into(), question.to_string());
    let rec = gateway.cached_complete(&CompletionRequest::new("interview", b))?;
    Ok(rec.text().trim().to_string())
}

/// Runs a whole session over `channel`, checking that the agent's state is
/// untouched.
pub fn run_interview(agent: &Agent, gateway: &Gateway, channel: &mut dyn InterviewChannel, now: NaiveDateTime) -> (InterviewSession, IsolationCheck) {
    let before = agent.state_hash();
    let mut session = InterviewSession::new(agent.id(), now);
    let mut last: Option<String> = None;
    while let Some(q) = channel.next_question(last.as_deref()) {
        let answer = interview_reply(agent, gateway, &session, &q, now);
        session.turns.push(Turn { speaker: Speaker::Interviewer, text: q });
        match answer {
            Ok(a) => {
                session.turns.push(Turn { speaker: Speaker::Agent, text: a.clone() });
                last = Some(a);
            }
            Err(e) => {
                session.ended_by = Some(format!("no answer: {e}"));
                break;
            }
        }
    }
    let check = IsolationCheck { event: "interview".into(), agent_id: agent.id(), before, after: agent.state_hash() };
    (session, check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::profile::{AgentProfile, AgentStatus};
    use crate::environment::geo::GeoPoint;
    use crate::gateway::ScriptedBackend;
    use chrono::NaiveDate;

    #[test]
    fn one_question_two_turns() {
        let p = GeoPoint::new(0.0, 0.0);
        let a = Agent::new(
            AgentProfile { agent_id: 3, name: "C".into(), age: 50, gender: "m".into(), education: "e".into(), occupation: "o".into(), personality: "p".into(), city: "c".into() },
            AgentStatus::new(p, p, "o", 20.0, 100.0),
        );
        let g = Gateway::with_backend(ScriptedBackend::constant("It helps me pay rent."));
        let now = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let (s, check) = run_interview(&a, &g, &mut ScriptedQuestions::new(["Why?"]), now);
        assert_eq!(s.turns.len(), 2);
        assert_eq!(s.turns[1].text, "It helps me pay rent.");
        assert!(check.holds());
        assert!(s.to_text().contains("Interviewer: Why?"));
    }
}
