//! Outcome measures: opinion-shift categories, CES-D scoring, MAPE and
//! t-based confidence intervals.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agent::mind::ATTITUDE_MIDPOINT;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("series lengths differ ({real} real vs {simulated} simulated)")]
    LengthMismatch { real: usize, simulated: usize },
    #[error("real series is zero at position {0}")]
    ZeroRealValue(usize),
    #[error("series is empty")]
    EmptySeries,
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("CES-D needs 20 items, got {0}")]
    MissingItem(usize),
    #[error("item {item} has value {value}, outside 0..=3")]
    OutOfRange { item: usize, value: i64 },
    #[error("confidence level must be in (0, 1)")]
    BadLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftCategory {
    MorePolarized,
    MoreModerate,
    Flipped,
    Unchanged,
}

impl ShiftCategory {
    pub const ALL: [ShiftCategory; 4] = [ShiftCategory::MorePolarized, ShiftCategory::MoreModerate, ShiftCategory::Flipped, ShiftCategory::Unchanged];

    pub fn as_str(self) -> &'static str {
        match self {
            ShiftCategory::MorePolarized => "more_polarized",
            ShiftCategory::MoreModerate => "more_moderate",
            ShiftCategory::Flipped => "flipped",
            ShiftCategory::Unchanged => "unchanged",
        }
    }
}

impl fmt::Display for ShiftCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifies a change of opinion by distance from the midpoint. A change
/// of side (neither end at the midpoint) is a flip.
pub fn classify_opinion_shift(initial: u8, final_: u8) -> ShiftCategory {
    let (i, f) = (initial as i64 - ATTITUDE_MIDPOINT, final_ as i64 - ATTITUDE_MIDPOINT);
    if i != 0 && f != 0 && i.signum() != f.signum() {
        return ShiftCategory::Flipped;
    }
    match f.abs().cmp(&i.abs()) {
        std::cmp::Ordering::Greater => ShiftCategory::MorePolarized,
        std::cmp::Ordering::Less => ShiftCategory::MoreModerate,
        std::cmp::Ordering::Equal => ShiftCategory::Unchanged,
    }
}

/// Items answered in the positive direction.
pub const CESD_REVERSED: [usize; 4] = [4, 8, 12, 16];
pub const CESD_ITEMS: usize = 20;

/// CES-D total (0..=60): the sum of 20 items scored 0–3, items 4, 8, 12
/// and 16 reversed.
pub fn score_cesd(responses: &[i64]) -> Result<u32, MetricsError> {
    if responses.len() != CESD_ITEMS {
        return Err(MetricsError::MissingItem(responses.len()));
    }
    let mut total = 0;
    for (i, &v) in responses.iter().enumerate() {
        if !(0..=3).contains(&v) {
            return Err(MetricsError::OutOfRange { item: i + 1, value: v });
        }
        total += if CESD_REVERSED.contains(&(i + 1)) { 3 - v } else { v };
    }
    Ok(total as u32)
}

/// Mean absolute percentage error, in percent.
pub fn compute_mape(real: &[f64], simulated: &[f64]) -> Result<f64, MetricsError> {
    if real.len() != simulated.len() {
        return Err(MetricsError::LengthMismatch { real: real.len(), simulated: simulated.len() });
    }
    if real.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if let Some(i) = real.iter().position(|&r| r == 0.0) {
        return Err(MetricsError::ZeroRealValue(i));
    }
    let sum: f64 = real.iter().zip(simulated).map(|(r, s)| (r - s).abs() / r.abs()).sum();
    Ok(100.0 * sum / real.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl MeanCi {
    pub fn overlaps(&self, other: &MeanCi) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}

/// `mean ± t_{n-1} * s / sqrt(n)` at the two-sided `level`.
pub fn mean_with_ci(samples: &[f64], level: f64) -> Result<MeanCi, MetricsError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricsError::InsufficientSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::BadLevel);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof > 0").inverse_cdf(0.5 + level / 2.0);
    let half = t * var.sqrt() / (n as f64).sqrt();
    Ok(MeanCi { n, mean, low: mean - half, high: mean + half })
}

/// Counts and shares of the four shift categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftShares {
    pub n: usize,
    pub more_polarized: usize,
    pub more_moderate: usize,
    pub flipped: usize,
    pub unchanged: usize,
}

impl ShiftShares {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut s = Self { n: 0, more_polarized: 0, more_moderate: 0, flipped: 0, unchanged: 0 };
        for (i, f) in pairs {
            s.n += 1;
            match classify_opinion_shift(i, f) {
                ShiftCategory::MorePolarized => s.more_polarized += 1,
                ShiftCategory::MoreModerate => s.more_moderate += 1,
                ShiftCategory::Flipped => s.flipped += 1,
                ShiftCategory::Unchanged => s.unchanged += 1,
            }
        }
        s
    }

    pub fn count(&self, c: ShiftCategory) -> usize {
        match c {
            ShiftCategory::MorePolarized => self.more_polarized,
            ShiftCategory::MoreModerate => self.more_moderate,
            ShiftCategory::Flipped => self.flipped,
            ShiftCategory::Unchanged => self.unchanged,
        }
    }

    /// Share in [0, 1]; 0 for an empty group.
    pub fn share(&self, c: ShiftCategory) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.count(c) as f64 / self.n as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_examples() {
        assert_eq!(classify_opinion_shift(3, 1), ShiftCategory::MorePolarized);
        assert_eq!(classify_opinion_shift(7, 5), ShiftCategory::MoreModerate);
        assert_eq!(classify_opinion_shift(7, 3), ShiftCategory::Flipped);
        assert_eq!(classify_opinion_shift(7, 7), ShiftCategory::Unchanged);
    }

    #[test]
    fn cesd_examples() {
        assert_eq!(score_cesd(&[0; 20]), Ok(12));
        assert_eq!(score_cesd(&[3; 20]), Ok(48));
        assert_eq!(score_cesd(&[0; 19]), Err(MetricsError::MissingItem(19)));
        let mut bad = [0; 20];
        bad[2] = 4;
        assert_eq!(score_cesd(&bad), Err(MetricsError::OutOfRange { item: 3, value: 4 }));
    }

    #[test]
    fn mape_examples() {
        assert_eq!(compute_mape(&[5.0, 6.0], &[5.0, 6.0]), Ok(0.0));
        assert!((compute_mape(&[100.0, 200.0], &[90.0, 220.0]).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(compute_mape(&[0.0, 1.0], &[1.0, 1.0]), Err(MetricsError::ZeroRealValue(0)));
        assert!(matches!(compute_mape(&[1.0], &[]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn ci_examples() {
        let c = mean_with_ci(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95).unwrap();
        assert!((c.mean - 3.0).abs() < 1e-12);
        assert!((c.high - c.mean - 1.963).abs() < 1e-3);
        let flat = mean_with_ci(&[2.0; 4], 0.95).unwrap();
        assert_eq!(flat.low, flat.high);
        assert_eq!(mean_with_ci(&[1.0], 0.95), Err(MetricsError::InsufficientSamples(1)));
    }
}
