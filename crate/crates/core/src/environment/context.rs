//! World-level context shared by every agent: weather, temperature and
//! scheduled event prompts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalContext {
    pub weather: String,
    pub temperature: f64,
    /// Text injected into every agent's environment information.
    #[serde(default)]
    pub event_prompt: Option<String>,
    #[serde(default)]
    pub phase_label: Option<String>,
}

impl Default for GlobalContext {
    fn default() -> Self {
        Self { weather: "sunny".to_string(), temperature: 25.0, event_prompt: None, phase_label: None }
    }
}

impl GlobalContext {
    /// Text bound to the prompts' "other information" slot.
    pub fn other_information(&self) -> String {
        self.event_prompt.clone().unwrap_or_else(|| "None".to_string())
    }

    pub fn phase(&self) -> &str {
        self.phase_label.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("two schedule entries for day {0}")]
    OverlappingSchedule(u32),
    #[error("schedule day {day} is outside the run (days 1..={horizon})")]
    OutOfHorizon { day: u32, horizon: u32 },
}

/// Context changes keyed by 1-based sim-day. Each entry holds from the first
/// tick of its day until the next entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalSchedule {
    base: GlobalContext,
    entries: Vec<(u32, GlobalContext)>,
}

impl GlobalSchedule {
    pub fn new(base: GlobalContext) -> Self {
        Self { base, entries: Vec::new() }
    }

    /// Replaces the schedule. `horizon_days` bounds the allowed days.
    pub fn set(&mut self, mut entries: Vec<(u32, GlobalContext)>, horizon_days: u32) -> Result<(), ScheduleError> {
        entries.sort_by_key(|(d, _)| *d);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ScheduleError::OverlappingSchedule(w[0].0));
            }
        }
        if let Some((day, _)) = entries.iter().find(|(d, _)| *d == 0 || *d > horizon_days) {
            return Err(ScheduleError::OutOfHorizon { day: *day, horizon: horizon_days });
        }
        self.entries = entries;
        Ok(())
    }

    pub fn entries(&self) -> &[(u32, GlobalContext)] {
        &self.entries
    }

    pub fn base(&self) -> &GlobalContext {
        &self.base
    }

    pub fn context_for_day(&self, day: u32) -> &GlobalContext {
        self.entries.iter().rev().find(|(d, _)| *d <= day).map(|(_, c)| c).unwrap_or(&self.base)
    }
}
