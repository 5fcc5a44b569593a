//! Behavioral plans.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::needs::Need;
use crate::gateway::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Mobility,
    Social,
    Economy,
    Other,
}

impl StepKind {
    pub const ALL: [StepKind; 4] = [StepKind::Mobility, StepKind::Social, StepKind::Economy, StepKind::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Mobility => "mobility",
            StepKind::Social => "social",
            StepKind::Economy => "economy",
            StepKind::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub kind: StepKind,
    pub intention: String,
    /// Minutes the step keeps the agent busy, beyond the tick it starts in.
    #[serde(default)]
    pub duration_min: Option<u32>,
    pub completed: bool,
    pub evaluation: String,
}

impl PlanStep {
    pub fn new(kind: StepKind, intention: impl Into<String>) -> Self {
        Self { kind, intention: intention.into(), duration_min: None, completed: false, evaluation: String::new() }
    }
}

pub const DEFAULT_MAX_PLAN_STEPS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub target_need: Need,
    pub target: String,
    pub steps: Vec<PlanStep>,
    pub cursor: usize,
    /// Built from the fallback after the planner failed.
    pub degraded: bool,
    pub abandoned: bool,
}

impl Plan {
    /// Builds a plan from a contract-checked record.
    pub fn from_record(need: Need, rec: &Record, max_steps: usize) -> Result<Self, String> {
        let items = rec.list("steps").ok_or("plan has no steps")?;
        if items.is_empty() || items.len() > max_steps {
            return Err(format!("plan has {} steps, allowed 1..={max_steps}", items.len()));
        }
        let mut steps = Vec::with_capacity(items.len());
        for item in items {
            let intention = item["intention"].as_str().unwrap_or_default().trim().to_string();
            if intention.is_empty() {
                return Err("empty step intention".into());
            }
            let kind = item["type"].as_str().and_then(StepKind::parse).ok_or("unknown step type")?;
            let mut step = PlanStep::new(kind, intention);
            step.duration_min = item.get("duration").and_then(|d| d.as_u64()).map(|d| d as u32);
            steps.push(step);
        }
        let target = rec.str("target").map(str::to_string).unwrap_or_else(|| need.as_str().to_string());
        Ok(Self { target_need: need, target, steps, cursor: 0, degraded: false, abandoned: false })
    }

    /// Single resting step used when planning fails.
    pub fn fallback(need: Need) -> Self {
        Self {
            target_need: need,
            target: "rest".to_string(),
            steps: vec![PlanStep::new(StepKind::Other, "rest")],
            cursor: 0,
            degraded: true,
            abandoned: false,
        }
    }

    pub fn current(&self) -> Option<&PlanStep> {
        self.steps.get(self.cursor)
    }

    pub fn is_finished(&self) -> bool {
        self.cursor >= self.steps.len()
    }

    /// Marks the current step done with `evaluation` and moves on.
    pub fn complete_current(&mut self, evaluation: impl Into<String>) {
        if let Some(step) = self.steps.get_mut(self.cursor) {
            step.completed = true;
            step.evaluation = evaluation.into();
            self.cursor += 1;
        }
    }

    /// Stops the plan; unexecuted steps stay incomplete.
    pub fn abandon(&mut self) {
        self.abandoned = true;
        for s in &mut self.steps[self.cursor..] {
            s.evaluation = "abandoned".into();
        }
        self.cursor = self.steps.len();
    }

    /// Step evaluations for the satisfaction prompt.
    pub fn evaluations(&self) -> String {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("step {} ({}, {}): {}", i + 1, s.kind, s.intention, if s.evaluation.is_empty() { "not executed" } else { &s.evaluation }))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn summary(&self) -> String {
        let steps: Vec<String> = self.steps.iter().map(|s| format!("{} ({})", s.intention, s.kind)).collect();
        format!("{} -> {}", self.target, steps.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(v: serde_json::Value) -> Record {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn grocery_plan_has_four_typed_steps() {
        let r = rec(json!({"target": "lunch", "steps": [
            {"intention": "go to grocery", "type": "mobility"},
            {"intention": "compare prices", "type": "economy"},
            {"intention": "prepare lunch", "type": "other"},
            {"intention": "eat", "type": "other"},
        ]}));
        let p = Plan::from_record(Need::Hungry, &r, 6).unwrap();
        let kinds: Vec<StepKind> = p.steps.iter().map(|s| s.kind).collect();
        assert_eq!(kinds, [StepKind::Mobility, StepKind::Economy, StepKind::Other, StepKind::Other]);
        assert_eq!(p.cursor, 0);
    }

    #[test]
    fn too_long_plan_rejected() {
        let steps: Vec<_> = (0..12).map(|i| json!({"intention": format!("s{i}"), "type": "other"})).collect();
        assert!(Plan::from_record(Need::Hungry, &rec(json!({"steps": steps})), 6).is_err());
    }

    #[test]
    fn abandon_leaves_rest_incomplete() {
        let r = rec(json!({"steps": [{"intention": "a", "type": "other"}, {"intention": "b", "type": "other"}]}));
        let mut p = Plan::from_record(Need::Safe, &r, 6).unwrap();
        p.complete_current("done");
        p.abandon();
        assert!(p.is_finished());
        assert!(p.steps[0].completed && !p.steps[1].completed);
    }
}
