//! Information control: which messages a group's members get to see.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::mind::ATTITUDE_MIDPOINT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// only messages on the recipient's side
    Homophilic,
    /// only messages from the other side
    Heterogeneous,
    /// everything
    Control,
}

impl FilterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::Homophilic => "homophilic",
            FilterMode::Heterogeneous => "heterogeneous",
            FilterMode::Control => "control",
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum RouteDecision {
    Deliver,
    Drop(String),
}

impl RouteDecision {
    pub fn delivers(&self) -> bool {
        matches!(self, RouteDecision::Deliver)
    }
}

fn side(rating: u8) -> i64 {
    (rating as i64 - ATTITUDE_MIDPOINT).signum()
}

/// Decides delivery of a message with `stance` to a recipient holding
/// `recipient_attitude`. A rating at the midpoint belongs to neither side,
/// so both treatments drop anything involving it; messages without a stance
/// reach only control recipients.
pub fn route(mode: FilterMode, stance: Option<u8>, recipient_attitude: Option<u8>) -> RouteDecision {
    if mode == FilterMode::Control {
        return RouteDecision::Deliver;
    }
    let (Some(s), Some(a)) = (stance, recipient_attitude) else {
        return RouteDecision::Drop("unclassifiable stance".into());
    };
    let (ss, sa) = (side(s), side(a));
    if ss == 0 || sa == 0 {
        return RouteDecision::Drop("stance or attitude at the midpoint".into());
    }
    let aligned = ss == sa;
    match (mode, aligned) {
        (FilterMode::Homophilic, true) | (FilterMode::Heterogeneous, false) => RouteDecision::Deliver,
        (FilterMode::Homophilic, false) => RouteDecision::Drop("opposing stance".into()),
        _ => RouteDecision::Drop("aligned stance".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!(route(FilterMode::Homophilic, Some(9), Some(7)).delivers());
        assert!(!route(FilterMode::Homophilic, Some(2), Some(7)).delivers());
        assert!(route(FilterMode::Heterogeneous, Some(2), Some(7)).delivers());
        assert!(!route(FilterMode::Homophilic, Some(9), Some(5)).delivers());
        assert!(!route(FilterMode::Heterogeneous, Some(1), Some(5)).delivers());
        assert!(route(FilterMode::Control, None, None).delivers());
        assert!(!route(FilterMode::Heterogeneous, None, Some(3)).delivers());
    }

    #[test]
    fn exhaustive_table_against_sign_rule() {
        for s in 0..=10u8 {
            for a in 0..=10u8 {
                let (ds, da) = (s as i32 - 5, a as i32 - 5);
                let product = ds * da;
                assert_eq!(route(FilterMode::Homophilic, Some(s), Some(a)).delivers(), product > 0, "{s} {a}");
                assert_eq!(route(FilterMode::Heterogeneous, Some(s), Some(a)).delivers(), product < 0, "{s} {a}");
                assert!(route(FilterMode::Control, Some(s), Some(a)).delivers());
            }
        }
    }
}
