//! Emotions, attitudes and thoughts.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::gateway::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionWord {
    Joy,
    Distress,
    Resentment,
    Pity,
    Hope,
    Fear,
    Satisfaction,
    Relief,
    Disappointment,
    Pride,
    Admiration,
    Shame,
    Reproach,
    Liking,
    Disliking,
    Gratitude,
    Anger,
    Gratification,
    Remorse,
    Love,
    Hate,
}

impl EmotionWord {
    pub const ALL: [EmotionWord; 21] = [
        EmotionWord::Joy,
        EmotionWord::Distress,
        EmotionWord::Resentment,
        EmotionWord::Pity,
        EmotionWord::Hope,
        EmotionWord::Fear,
        EmotionWord::Satisfaction,
        EmotionWord::Relief,
        EmotionWord::Disappointment,
        EmotionWord::Pride,
        EmotionWord::Admiration,
        EmotionWord::Shame,
        EmotionWord::Reproach,
        EmotionWord::Liking,
        EmotionWord::Disliking,
        EmotionWord::Gratitude,
        EmotionWord::Anger,
        EmotionWord::Gratification,
        EmotionWord::Remorse,
        EmotionWord::Love,
        EmotionWord::Hate,
    ];
}

impl fmt::Display for EmotionWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not in the emotion catalog")]
pub struct UnknownEmotion(pub String);

impl FromStr for EmotionWord {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|w| w.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

pub const EMOTION_DIMENSIONS: [&str; 6] = ["sadness", "joy", "fear", "disgust", "anger", "surprise"];
pub const MAX_INTENSITY: i64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionState {
    /// sadness, joy, fear, disgust, anger, surprise; each 0..=10
    pub intensities: [u8; 6],
    pub word: EmotionWord,
    pub conclusion: String,
}

impl Default for EmotionState {
    fn default() -> Self {
        Self { intensities: [3, 5, 2, 1, 1, 2], word: EmotionWord::Satisfaction, conclusion: String::new() }
    }
}

impl EmotionState {
    pub fn get(&self, dim: &str) -> Option<u8> {
        EMOTION_DIMENSIONS.iter().position(|d| *d == dim).map(|i| self.intensities[i])
    }

    /// Builds a state from a contract-checked record. Intensities are
    /// clamped again here even though the contract already bounds them.
    pub fn from_record(rec: &Record) -> Option<Self> {
        let mut intensities = [0u8; 6];
        for (i, d) in EMOTION_DIMENSIONS.iter().enumerate() {
            intensities[i] = rec.i64(d)?.clamp(0, MAX_INTENSITY) as u8;
        }
        let word = rec.str("word")?.parse().ok()?;
        let conclusion = rec.str("conclusion").unwrap_or_default().to_string();
        Some(Self { intensities, word, conclusion })
    }

    /// Compact form used in prompt bindings.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = EMOTION_DIMENSIONS.iter().zip(self.intensities).map(|(d, v)| format!("{d}: {v}")).collect();
        format!("{} ({})", self.word, parts.join(", "))
    }
}

pub const MAX_ATTITUDE: i64 = 10;
pub const ATTITUDE_MIDPOINT: i64 = 5;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thought {
    pub text: String,
    pub updated_at: Option<NaiveDateTime>,
}

impl Thought {
    pub fn or_placeholder(&self) -> &str {
        if self.text.is_empty() {
            "Nothing in particular yet."
        } else {
            &self.text
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn catalog_has_21_distinct_words() {
        let mut names: Vec<String> = EmotionWord::ALL.iter().map(|w| w.to_string()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 21);
        assert_eq!("relief".parse::<EmotionWord>().unwrap(), EmotionWord::Relief);
        assert!("Boredom".parse::<EmotionWord>().is_err());
    }

    #[test]
    fn state_from_example_record() {
        let rec: Record = serde_json::from_value(json!({
            "sadness": 5, "joy": 5, "fear": 5, "disgust": 5, "anger": 5, "surprise": 5,
            "conclusion": "I feel ...", "word": "Relief"
        }))
        .unwrap();
        let s = EmotionState::from_record(&rec).unwrap();
        assert_eq!(s.intensities, [5; 6]);
        assert_eq!(s.word, EmotionWord::Relief);
        assert!(s.describe().starts_with("Relief (sadness: 5, joy: 5"));
    }

    #[test]
    fn out_of_range_values_are_clamped_defensively() {
        let rec: Record = serde_json::from_value(json!({
            "sadness": 12, "joy": -1, "fear": 5, "disgust": 5, "anger": 5, "surprise": 5, "word": "Joy"
        }))
        .unwrap();
        let s = EmotionState::from_record(&rec).unwrap();
        assert_eq!(s.intensities[0], 10);
        assert_eq!(s.intensities[1], 0);
    }
}
