//! Fixed identity and dynamic status of a participant.

use serde::{Deserialize, Serialize};

use crate::environment::geo::GeoPoint;

pub type AgentId = u32;

/// Who the participant is. Fixed once the experiment starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub name: String,
    pub age: u32,
    pub gender: String,
    pub education: String,
    pub occupation: String,
    pub personality: String,
    pub city: String,
}

impl AgentProfile {
    /// Second-person self description used as the opening of mind prompts.
    pub fn description(&self) -> String {
        format!(
            "You are {}, a {}-year-old {} {} living in {}, with {} education. Your personality: {}.",
            self.name, self.age, self.gender, self.occupation, self.city, self.education, self.personality
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    Home,
    Workplace,
    Poi { poi_id: String, name: String, category: String },
}

impl Location {
    pub fn label(&self) -> String {
        match self {
            Location::Home => "home".to_string(),
            Location::Workplace => "workplace".to_string(),
            Location::Poi { poi_id, .. } => poi_id.clone(),
        }
    }

    /// Human-readable form for prompts.
    pub fn describe(&self) -> String {
        match self {
            Location::Home => "home".to_string(),
            Location::Workplace => "workplace".to_string(),
            Location::Poi { name, category, .. } => format!("{name} ({category})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Friend {
    pub agent_id: AgentId,
    pub name: String,
    /// 0..=100
    pub strength: u8,
}

pub const MAX_RELATIONSHIP: i32 = 100;

/// Dynamic state: money, place, relationships.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStatus {
    pub savings: f64,
    /// hourly wage ("skill")
    pub hourly_wage: f64,
    pub job: String,
    pub consumption_level: String,
    pub location: Location,
    pub position: GeoPoint,
    pub home: GeoPoint,
    pub workplace: GeoPoint,
    pub friends: Vec<Friend>,
    pub last_income: f64,
    pub last_tax_paid: f64,
    pub last_consumption: f64,
    /// Unconditional monthly transfer currently in force.
    pub monthly_transfer: f64,
    pub last_transfer: f64,
    pub transfers_received: u32,
    pub allow_debt: bool,
}

impl AgentStatus {
    pub fn new(home: GeoPoint, workplace: GeoPoint, job: impl Into<String>, hourly_wage: f64, savings: f64) -> Self {
        Self {
            savings,
            hourly_wage,
            job: job.into(),
            consumption_level: "medium".to_string(),
            location: Location::Home,
            position: home,
            home,
            workplace,
            friends: Vec::new(),
            last_income: 0.0,
            last_tax_paid: 0.0,
            last_consumption: 0.0,
            monthly_transfer: 0.0,
            last_transfer: 0.0,
            transfers_received: 0,
            allow_debt: false,
        }
    }

    pub fn friend(&self, id: AgentId) -> Option<&Friend> {
        self.friends.iter().find(|f| f.agent_id == id)
    }

    /// Adds `delta` to the relationship with `id`, clamped to 0..=100.
    pub fn adjust_relationship(&mut self, id: AgentId, delta: i32) {
        if let Some(f) = self.friends.iter_mut().find(|f| f.agent_id == id) {
            f.strength = (f.strength as i32 + delta).clamp(0, MAX_RELATIONSHIP) as u8;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relationship_clamped() {
        let p = GeoPoint::new(0.0, 0.0);
        let mut s = AgentStatus::new(p, p, "clerk", 20.0, 0.0);
        s.friends.push(Friend { agent_id: 3, name: "Bo".into(), strength: 100 });
        s.friends.push(Friend { agent_id: 4, name: "Cy".into(), strength: 50 });
        s.adjust_relationship(3, 3);
        s.adjust_relationship(4, 2);
        assert_eq!(s.friend(3).unwrap().strength, 100);
        assert_eq!(s.friend(4).unwrap().strength, 52);
        s.adjust_relationship(4, -60);
        assert_eq!(s.friend(4).unwrap().strength, 0);
    }

    #[test]
    fn description_mentions_identity() {
        let p = AgentProfile {
            agent_id: 0,
            name: "Ann".into(),
            age: 34,
            gender: "female".into(),
            education: "college".into(),
            occupation: "teacher".into(),
            personality: "outgoing".into(),
            city: "Houston".into(),
        };
        assert_eq!(
            p.description(),
            "You are Ann, a 34-year-old female teacher living in Houston, with college education. Your personality: outgoing."
        );
    }
}
