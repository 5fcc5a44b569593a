//! Structured surveys. Respondents read their state but nothing about the
//! survey is written back.

use std::path::Path;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{score_cesd, CESD_ITEMS};
use crate::agent::profile::AgentId;
use crate::agent::Agent;
use crate::gateway::{Bindings, CompletionRequest, FieldSpec, Gateway, ResponseContract};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "response", rename_all = "snake_case")]
pub enum ResponseType {
    /// integer scale `min..=max`
    Likert { min: i64, max: i64 },
    Numeric { min: f64, max: f64 },
    /// answers are recorded as the option's index
    Choice { options: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyItem {
    pub item_id: String,
    pub text: String,
    #[serde(flatten)]
    pub response: ResponseType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// CES-D total, 0..=60
    CesdTotal,
    /// the single 0–100 thermometer reading
    FeelingThermometer,
    /// mean of item values
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyInstrument {
    pub survey_id: String,
    #[serde(default)]
    pub preamble: String,
    pub items: Vec<SurveyItem>,
    pub scoring: Scoring,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SurveyError {
    #[error("cannot read survey {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("survey `{0}` has no items")]
    NoItems(String),
    #[error("item `{0}` has invalid bounds")]
    BadBounds(String),
    #[error("item id `{0}` is used twice")]
    DuplicateItem(String),
    #[error("scoring `{scoring}` does not fit survey `{survey}`")]
    ScoringMismatch { survey: String, scoring: String },
    #[error("unknown survey `{0}`")]
    Unknown(String),
}

const CESD_TEXT: [&str; CESD_ITEMS] = [
    "I was bothered by things that usually don't bother me.",
    "I did not feel like eating; my appetite was poor.",
    "I felt that I could not shake off the blues even with help from my family or friends.",
    "I felt I was just as good as other people.",
    "I had trouble keeping my mind on what I was doing.",
    "I felt depressed.",
    "I felt that everything I did was an effort.",
    "I felt hopeful about the future.",
    "I thought my life had been a failure.",
    "I felt fearful.",
    "My sleep was restless.",
    "I was happy.",
    "I talked less than usual.",
    "I felt lonely.",
    "People were unfriendly.",
    "I enjoyed life.",
    "I had crying spells.",
    "I felt sad.",
    "I felt that people disliked me.",
    "I could not get going.",
];

impl SurveyInstrument {
    /// The 20-item CES-D: how often during the past week, 0 (rarely or
    /// none of the time) to 3 (most or all of the time).
    pub fn cesd() -> Self {
        Self {
            survey_id: "cesd".into(),
            preamble: "For each statement, answer how often you felt or behaved this way during the past week: 0 = rarely or none of the time (less than 1 day), 1 = some or a little of the time (1-2 days), 2 = occasionally or a moderate amount of the time (3-4 days), 3 = most or all of the time (5-7 days).".into(),
            items: CESD_TEXT
                .iter()
                .enumerate()
                .map(|(i, t)| SurveyItem { item_id: format!("q{}", i + 1), text: t.to_string(), response: ResponseType::Likert { min: 0, max: 3 } })
                .collect(),
            scoring: Scoring::CesdTotal,
        }
    }

    /// Feeling thermometer toward people on the other side of `topic`.
    pub fn thermometer(topic: &str) -> Self {
        Self {
            survey_id: "thermometer".into(),
            preamble: "Rate your feelings on a thermometer from 0 (very cold, unfavorable) to 100 (very warm, favorable).".into(),
            items: vec![SurveyItem {
                item_id: "q1".into(),
                text: format!("How do you feel toward people who disagree with you on the topic: {topic}"),
                response: ResponseType::Likert { min: 0, max: 100 },
            }],
            scoring: Scoring::FeelingThermometer,
        }
    }

    /// A built-in instrument by id, or a TOML survey file.
    pub fn resolve(spec: &str, topic: Option<&str>, base: &Path) -> Result<Self, SurveyError> {
        match spec {
            "cesd" => Ok(Self::cesd()),
            "thermometer" => Ok(Self::thermometer(topic.unwrap_or("the discussion topic"))),
            path => Self::load(&base.join(path)),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SurveyError> {
        let read_err = |reason: String| SurveyError::Read { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let s: Self = toml::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), SurveyError> {
        if self.items.is_empty() {
            return Err(SurveyError::NoItems(self.survey_id.clone()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for it in &self.items {
            if !seen.insert(&it.item_id) {
                return Err(SurveyError::DuplicateItem(it.item_id.clone()));
            }
            let ok = match &it.response {
                ResponseType::Likert { min, max } => min < max,
                ResponseType::Numeric { min, max } => min < max && min.is_finite() && max.is_finite(),
                ResponseType::Choice { options } => !options.is_empty(),
            };
            if !ok {
                return Err(SurveyError::BadBounds(it.item_id.clone()));
            }
        }
        let fits = match self.scoring {
            Scoring::CesdTotal => self.items.len() == CESD_ITEMS && self.items.iter().all(|i| i.response == ResponseType::Likert { min: 0, max: 3 }),
            Scoring::FeelingThermometer => self.items.len() == 1,
            Scoring::Mean => true,
        };
        if !fits {
            return Err(SurveyError::ScoringMismatch { survey: self.survey_id.clone(), scoring: format!("{:?}", self.scoring) });
        }
        Ok(())
    }

    /// Items as numbered lines for the prompt.
    pub fn survey_string(&self) -> String {
        let mut out = String::new();
        if !self.preamble.is_empty() {
            out.push_str(&self.preamble);
            out.push('\n');
        }
        for it in &self.items {
            let answer = match &it.response {
                ResponseType::Likert { min, max } => format!("an integer from {min} to {max}"),
                ResponseType::Numeric { min, max } => format!("a number from {min} to {max}"),
                ResponseType::Choice { options } => format!("one of: {}", options.join(", ")),
            };
            out.push_str(&format!("{}. {} (answer with {answer})\n", it.item_id, it.text));
        }
        out.push_str("Reply with a JSON object mapping each question id to your answer.");
        out
    }

    pub fn contract(&self) -> ResponseContract {
        ResponseContract::json(
            self.items
                .iter()
                .map(|it| match &it.response {
                    ResponseType::Likert { min, max } => FieldSpec::integer(&it.item_id, *min, *max),
                    ResponseType::Numeric { min, max } => FieldSpec::number(&it.item_id, *min, *max),
                    ResponseType::Choice { options } => FieldSpec::choice(&it.item_id, options),
                })
                .collect(),
        )
    }

    /// The instrument's score for one respondent's answers in item order.
    pub fn score(&self, values: &[f64]) -> Option<f64> {
        match self.scoring {
            Scoring::CesdTotal => {
                let ints: Vec<i64> = values.iter().map(|v| v.round() as i64).collect();
                score_cesd(&ints).ok().map(f64::from)
            }
            Scoring::FeelingThermometer => values.first().copied(),
            Scoring::Mean => (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
        }
    }
}

/// One cell of the survey table; `None` marks a missing answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub survey_id: String,
    pub agent_id: AgentId,
    pub item_id: String,
    pub value: Option<f64>,
    pub sim_time: NaiveDateTime,
}

/// Memory+status hash around a read-only activity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationCheck {
    pub event: String,
    pub agent_id: AgentId,
    pub before: String,
    pub after: String,
}

impl IsolationCheck {
    pub fn holds(&self) -> bool {
        self.before == self.after
    }
}

/// What a respondent knows about themselves, for the survey prompt.
pub fn related_information(agent: &Agent, topic: Option<&str>) -> String {
    let s = &agent.status;
    let mut lines = vec![
        agent.profile.description(),
        format!("Job: {}", s.job),
        format!("Savings: {:.2}", s.savings),
        format!("Last monthly income: {:.2}", s.last_income),
        format!("Last monthly consumption: {:.2}", s.last_consumption),
        format!("Unconditional monthly payments received: {}", s.transfers_received),
        format!("Current emotion: {}", agent.emotion.describe()),
        format!("Current thought: {}", agent.thought.or_placeholder()),
    ];
    if let Some(t) = topic {
        if let Some(a) = agent.attitudes.get(t) {
            lines.push(format!("Attitude towards {t}: {a}"));
        }
    }
    lines.join("\n")
}

/// Asks every agent every item. `survey_id` labels the administration.
pub fn run_survey(
    instrument: &SurveyInstrument,
    survey_id: &str,
    agents: &[&Agent],
    gateway: &Gateway,
    now: NaiveDateTime,
    topic: Option<&str>,
) -> (Vec<SurveyResponse>, Vec<IsolationCheck>) {
    let contract = instrument.contract();
    let survey_string = instrument.survey_string();
    let per_agent: Vec<(Vec<SurveyResponse>, IsolationCheck)> = agents
        .par_iter()
        .map(|agent| {
            let before = agent.state_hash();
            let mut b = Bindings::new();
            b.insert("related information".into(), related_information(agent, topic));
            b.insert("related memory".into(), agent.memory.digest(now));
            b.insert("survey string".into(), survey_string.clone());
            let req = CompletionRequest::new("survey", b).with_contract(contract.clone());
            let answers = gateway.cached_complete(&req);
            if let Err(e) = &answers {
                tracing::warn!(agent = agent.id(), survey = survey_id, error = %e, "survey answer missing");
            }
            let rows = instrument
                .items
                .iter()
                .map(|it| {
                    let value = answers.as_ref().ok().and_then(|rec| match &it.response {
                        ResponseType::Choice { options } => rec.str(&it.item_id).and_then(|v| options.iter().position(|o| o == v)).map(|i| i as f64),
                        _ => rec.f64(&it.item_id),
                    });
                    SurveyResponse { survey_id: survey_id.to_string(), agent_id: agent.id(), item_id: it.item_id.clone(), value, sim_time: now }
                })
                .collect();
            let after = agent.state_hash();
            (rows, IsolationCheck { event: format!("survey {survey_id}"), agent_id: agent.id(), before, after })
        })
        .collect();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (r, c) in per_agent {
        rows.extend(r);
        checks.push(c);
    }
    (rows, checks)
}

/// Per-respondent scores from a response table, for one administration.
/// Respondents with any missing item get no score.
pub fn scores(instrument: &SurveyInstrument, survey_id: &str, rows: &[SurveyResponse]) -> std::collections::BTreeMap<AgentId, f64> {
    let mut by_agent: std::collections::BTreeMap<AgentId, Vec<Option<f64>>> = Default::default();
    for r in rows.iter().filter(|r| r.survey_id == survey_id) {
        by_agent.entry(r.agent_id).or_default().push(r.value);
    }
    by_agent
        .into_iter()
        .filter_map(|(id, vals)| {
            let vals: Option<Vec<f64>> = vals.into_iter().collect();
            instrument.score(&vals?).map(|s| (id, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::profile::{AgentProfile, AgentStatus};
    use crate::environment::geo::GeoPoint;
    use crate::gateway::{ScriptedBackend, ScriptedRule};
    use chrono::NaiveDate;

    fn agents(n: u32) -> Vec<Agent> {
        (0..n)
            .map(|i| {
                let p = GeoPoint::new(0.0, 0.0);
                let mut a = Agent::new(
                    AgentProfile { agent_id: i, name: format!("A{i}"), age: 30, gender: "f".into(), education: "e".into(), occupation: "o".into(), personality: "p".into(), city: "c".into() },
                    AgentStatus::new(p, p, "o", 20.0, 100.0 * i as f64),
                );
                a.attitudes.insert("t".into(), (i % 11) as u8);
                a
            })
            .collect()
    }

    fn now() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, 2).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    #[test]
    fn likert_survey_is_read_only() {
        let one = SurveyInstrument {
            survey_id: "s".into(),
            preamble: String::new(),
            items: vec![SurveyItem { item_id: "q1".into(), text: "How much?".into(), response: ResponseType::Likert { min: 1, max: 10 } }],
            scoring: Scoring::Mean,
        };
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"q1": 7}"#));
        let pop = agents(5);
        let refs: Vec<&Agent> = pop.iter().collect();
        let (rows, checks) = run_survey(&one, "s", &refs, &g, now(), None);
        assert!(rows.iter().all(|r| r.value == Some(7.0)));
        assert!(checks.iter().all(IsolationCheck::holds));
    }

    #[test]
    fn cesd_all_zero_and_missing() {
        let g = Gateway::with_backend(ScriptedBackend::new(vec![ScriptedRule::builtin("survey", "survey_constant", serde_json::json!({"value": 0})), ScriptedRule::literal(None, "")], 0).unwrap());
        let pop = agents(3);
        let refs: Vec<&Agent> = pop.iter().collect();
        let cesd = SurveyInstrument::cesd();
        let (rows, _) = run_survey(&cesd, "cesd", &refs, &g, now(), None);
        assert_eq!(rows.len(), 60);
        // raw zeros score 12 because of the reversed items
        assert!(scores(&cesd, "cesd", &rows).values().all(|&s| s == 12.0));
        let bad = Gateway::with_backend(ScriptedBackend::constant("no idea"));
        let (rows, _) = run_survey(&cesd, "cesd", &refs, &bad, now(), None);
        assert!(rows.iter().all(|r| r.value.is_none()));
        assert!(scores(&cesd, "cesd", &rows).is_empty());
    }

    #[test]
    fn thermometer_rule_by_hand() {
        let g = Gateway::with_backend(ScriptedBackend::new(vec![ScriptedRule::builtin("survey", "survey_thermometer", serde_json::json!({})), ScriptedRule::literal(None, "")], 0).unwrap());
        let pop = agents(11);
        let refs: Vec<&Agent> = pop.iter().collect();
        let th = SurveyInstrument::thermometer("t");
        let (rows, _) = run_survey(&th, "th", &refs, &g, now(), Some("t"));
        for r in rows {
            let att = (r.agent_id % 11) as f64;
            assert_eq!(r.value, Some(100.0 - 10.0 * (att - 5.0).abs()));
        }
    }

    #[test]
    fn instrument_checks() {
        assert!(SurveyInstrument::cesd().check().is_ok());
        let mut bad = SurveyInstrument::cesd();
        bad.items.pop();
        assert!(bad.check().is_err());
    }
}
