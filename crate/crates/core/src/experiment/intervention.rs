//! The three intervention mechanisms: participant configuration before the
//! run, scheduled status modification, and information control.

use serde::{Deserialize, Serialize};

use super::route::FilterMode;
use crate::agent::Agent;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterventionError {
    #[error("profiles cannot be edited after the run has started")]
    ProfileEditAfterStart,
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("invalid value `{value}` for `{field}`")]
    InvalidValue { field: String, value: String },
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    #[default]
    Add,
    Set,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    /// applied at the next barrier only
    #[default]
    Once,
    /// at the first tick of every day
    Daily,
    /// at the start of every month
    Monthly,
}

/// Status fields an intervention may edit.
pub const STATUS_FIELDS: [&str; 3] = ["savings", "hourly_wage", "ubi"];
/// Profile fields participant configuration may set.
pub const PROFILE_FIELDS: [&str; 7] = ["name", "age", "gender", "education", "occupation", "personality", "city"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Intervention {
    ParticipantConfiguration {
        overrides: std::collections::BTreeMap<String, String>,
    },
    StatusModification {
        /// `savings`, `hourly_wage` or `ubi` (the unconditional monthly transfer)
        field: String,
        #[serde(default)]
        op: EditOp,
        amount: f64,
        #[serde(default)]
        cadence: Cadence,
    },
    InformationControl {
        mode: FilterMode,
        /// persuasive messages injected per member and day
        #[serde(default)]
        injection_per_day: u32,
    },
}

impl Intervention {
    pub fn check(&self) -> Result<(), InterventionError> {
        match self {
            Intervention::ParticipantConfiguration { overrides } => {
                for (k, v) in overrides {
                    if !PROFILE_FIELDS.contains(&k.as_str()) {
                        return Err(InterventionError::UnknownField(k.clone()));
                    }
                    if k == "age" && v.parse::<u32>().map_or(true, |a| a == 0) {
                        return Err(InterventionError::InvalidValue { field: k.clone(), value: v.clone() });
                    }
                }
                Ok(())
            }
            Intervention::StatusModification { field, amount, .. } => {
                if !STATUS_FIELDS.contains(&field.as_str()) {
                    return Err(InterventionError::UnknownField(field.clone()));
                }
                if !amount.is_finite() {
                    return Err(InterventionError::InvalidValue { field: field.clone(), value: amount.to_string() });
                }
                Ok(())
            }
            Intervention::InformationControl { .. } => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Intervention::ParticipantConfiguration { .. } => "participant_configuration",
            Intervention::StatusModification { .. } => "status_modification",
            Intervention::InformationControl { .. } => "information_control",
        }
    }
}

/// Sets profile fields; only allowed before the first tick.
pub fn configure_participant(agent: &mut Agent, overrides: &std::collections::BTreeMap<String, String>, started: bool) -> Result<(), InterventionError> {
    if started {
        return Err(InterventionError::ProfileEditAfterStart);
    }
    for (k, v) in overrides {
        let p = &mut agent.profile;
        match k.as_str() {
            "name" => p.name = v.clone(),
            "age" => {
                p.age = v
                    .parse()
                    .ok()
                    .filter(|&a| a > 0)
                    .ok_or_else(|| InterventionError::InvalidValue { field: k.clone(), value: v.clone() })?
            }
            "gender" => p.gender = v.clone(),
            "education" => p.education = v.clone(),
            "occupation" => p.occupation = v.clone(),
            "personality" => p.personality = v.clone(),
            "city" => p.city = v.clone(),
            _ => return Err(InterventionError::UnknownField(k.clone())),
        }
    }
    Ok(())
}

/// Applies one status edit.
pub fn modify_status(agent: &mut Agent, field: &str, op: EditOp, amount: f64) -> Result<(), InterventionError> {
    let s = &mut agent.status;
    let slot = match field {
        "savings" => &mut s.savings,
        "hourly_wage" => &mut s.hourly_wage,
        "ubi" => &mut s.monthly_transfer,
        _ => return Err(InterventionError::UnknownField(field.to_string())),
    };
    *slot = match op {
        EditOp::Add => *slot + amount,
        EditOp::Set => amount,
    };
    if !s.allow_debt && s.savings < 0.0 {
        s.savings = 0.0;
    }
    s.hourly_wage = s.hourly_wage.max(0.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::profile::{AgentProfile, AgentStatus};
    use crate::environment::geo::GeoPoint;

    fn agent() -> Agent {
        let p = GeoPoint::new(0.0, 0.0);
        Agent::new(
            AgentProfile { agent_id: 0, name: "A".into(), age: 30, gender: "f".into(), education: "e".into(), occupation: "o".into(), personality: "p".into(), city: "c".into() },
            AgentStatus::new(p, p, "o", 20.0, 100.0),
        )
    }

    #[test]
    fn profile_edits_only_before_start() {
        let mut a = agent();
        let o: std::collections::BTreeMap<_, _> = [("age".to_string(), "41".to_string())].into();
        configure_participant(&mut a, &o, false).unwrap();
        assert_eq!(a.profile.age, 41);
        assert_eq!(configure_participant(&mut a, &o, true), Err(InterventionError::ProfileEditAfterStart));
    }

    #[test]
    fn status_edits() {
        let mut a = agent();
        modify_status(&mut a, "savings", EditOp::Add, 1000.0).unwrap();
        assert_eq!(a.status.savings, 1100.0);
        modify_status(&mut a, "ubi", EditOp::Set, 1000.0).unwrap();
        assert_eq!(a.status.monthly_transfer, 1000.0);
        assert_eq!(modify_status(&mut a, "mood", EditOp::Set, 1.0), Err(InterventionError::UnknownField("mood".into())));
    }

    #[test]
    fn parse_from_toml() {
        let i: Intervention = toml::from_str("kind = \"information_control\"\nmode = \"homophilic\"\ninjection_per_day = 1").unwrap();
        assert_eq!(i, Intervention::InformationControl { mode: FilterMode::Homophilic, injection_per_day: 1 });
        let bad = Intervention::StatusModification { field: "karma".into(), op: EditOp::Add, amount: 1.0, cadence: Cadence::Once };
        assert!(bad.check().is_err());
    }
}
