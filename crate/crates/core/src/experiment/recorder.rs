//! Append-only run records and their CSV layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::interview::InterviewSession;
use super::survey::{IsolationCheck, SurveyResponse};
use crate::agent::profile::AgentId;
use crate::behaviors::economy::EconomySnapshot;

pub const BEHAVIOR_LOG: &str = "behavior_log.csv";
pub const DELIVERIES: &str = "deliveries.csv";
pub const SURVEYS: &str = "surveys.csv";
pub const ATTITUDES: &str = "attitudes.csv";
pub const ECONOMY: &str = "economy.csv";
pub const AGENT_ECONOMY: &str = "agent_economy.csv";
pub const VISITS: &str = "visits.csv";
pub const ISOLATION: &str = "isolation.csv";
pub const FAILURES: &str = "failures.csv";
pub const INTERVENTIONS: &str = "interventions.csv";
pub const INTERVIEW_DIR: &str = "interviews";

/// One row of the behavioral log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub tick: u64,
    pub sim_time: String,
    pub agent_id: AgentId,
    pub group: String,
    pub phase: String,
    pub need: String,
    pub action_type: String,
    pub intention: String,
    pub location: String,
    pub emotion_word: String,
}

/// A routing decision for one message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRow {
    pub tick: u64,
    pub sender: AgentId,
    pub recipient: AgentId,
    pub group: String,
    pub filter: String,
    pub stance: Option<u8>,
    pub recipient_attitude: Option<u8>,
    pub injected: bool,
    pub delivered: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRow {
    pub day: u32,
    pub tick: u64,
    pub agent_id: AgentId,
    pub group: String,
    pub poi_id: String,
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttitudeRow {
    /// `start`, `day:N` or `end`
    pub at: String,
    pub agent_id: AgentId,
    pub group: String,
    pub topic: String,
    pub attitude: u8,
}

/// Monthly settlement of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMonthRow {
    pub month: u32,
    pub agent_id: AgentId,
    pub group: String,
    pub work: f64,
    pub consumption_share: f64,
    pub income: f64,
    pub tax: f64,
    pub redistribution: f64,
    pub transfer: f64,
    pub consumption: f64,
    pub interest: f64,
    pub savings: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRow {
    pub tick: u64,
    pub agent_id: Option<AgentId>,
    pub detail: String,
}

/// An intervention applied during the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub tick: u64,
    pub group: String,
    pub kind: String,
    pub spec: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Recorder {
    pub log: Vec<LogRow>,
    pub deliveries: Vec<DeliveryRow>,
    pub surveys: Vec<SurveyResponse>,
    pub attitudes: Vec<AttitudeRow>,
    pub economy: Vec<EconomySnapshot>,
    pub agent_economy: Vec<AgentMonthRow>,
    pub visits: Vec<VisitRow>,
    pub isolation: Vec<IsolationCheck>,
    pub failures: Vec<FailureRow>,
    pub interventions: Vec<InterventionRow>,
    /// (label, session)
    pub interviews: Vec<(String, InterviewSession)>,
}

#[derive(Debug, thiserror::Error)]
#[error("{path}: {reason}")]
pub struct ArtifactError {
    pub path: PathBuf,
    pub reason: String,
}

impl ArtifactError {
    pub fn new(path: &Path, reason: impl ToString) -> Self {
        Self { path: path.to_path_buf(), reason: reason.to_string() }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ArtifactError::new(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| ArtifactError::new(path, e))?;
    }
    w.flush().map_err(|e| ArtifactError::new(path, e))
}

/// Empty when the file does not exist.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| ArtifactError::new(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| ArtifactError::new(path, e))
}

impl Recorder {
    /// Writes every table. Tables are always written, even when empty, so
    /// the layout of a run directory does not depend on the recipe.
    pub fn write_all(&self, dir: &Path) -> Result<(), ArtifactError> {
        fs::create_dir_all(dir).map_err(|e| ArtifactError::new(dir, e))?;
        write_csv(&dir.join(BEHAVIOR_LOG), &self.log)?;
        write_csv(&dir.join(DELIVERIES), &self.deliveries)?;
        write_csv(&dir.join(SURVEYS), &self.surveys)?;
        write_csv(&dir.join(ATTITUDES), &self.attitudes)?;
        write_csv(&dir.join(ECONOMY), &self.economy)?;
        write_csv(&dir.join(AGENT_ECONOMY), &self.agent_economy)?;
        write_csv(&dir.join(VISITS), &self.visits)?;
        write_csv(&dir.join(ISOLATION), &self.isolation)?;
        write_csv(&dir.join(FAILURES), &self.failures)?;
        write_csv(&dir.join(INTERVENTIONS), &self.interventions)?;
        let idir = dir.join(INTERVIEW_DIR);
        fs::create_dir_all(&idir).map_err(|e| ArtifactError::new(&idir, e))?;
        for (label, s) in &self.interviews {
            let p = idir.join(interview_file_name(label, s.agent_id));
            fs::write(&p, s.to_text()).map_err(|e| ArtifactError::new(&p, e))?;
        }
        Ok(())
    }
}

pub fn interview_file_name(label: &str, agent_id: AgentId) -> String {
    let safe: String = label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    format!("{safe}_agent{agent_id}.txt")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_missing_values() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            DeliveryRow { tick: 1, sender: 0, recipient: 1, group: "g".into(), filter: "control".into(), stance: None, recipient_attitude: Some(3), injected: false, delivered: true, reason: String::new() },
        ];
        let p = dir.path().join("d.csv");
        write_csv(&p, &rows).unwrap();
        let back: Vec<DeliveryRow> = read_csv(&p).unwrap();
        assert_eq!(back, rows);
        assert!(read_csv::<DeliveryRow>(&dir.path().join("absent.csv")).unwrap().is_empty());
    }
}
