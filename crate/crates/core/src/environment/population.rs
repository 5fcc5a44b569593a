//! Census-block-group demographics and population sampling.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geo::{GeoPoint, SchemaError, EARTH_RADIUS_M};
use crate::agent::profile::{AgentId, AgentProfile};

/// Demographic marginals of one block group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbgProfile {
    pub cbg_id: String,
    pub population: u64,
    pub centroid: GeoPoint,
    pub city: String,
    /// attribute -> (value, share); shares sum to 1
    pub marginals: BTreeMap<String, Vec<(String, f64)>>,
}

pub const MARGINAL_TOLERANCE: f64 = 1e-6;

impl CbgProfile {
    pub fn check(&self) -> Result<(), String> {
        for (attr, dist) in &self.marginals {
            if dist.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
                return Err(format!("{}: marginal `{attr}` has a negative or non-finite share", self.cbg_id));
            }
            let total: f64 = dist.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > MARGINAL_TOLERANCE {
                return Err(format!("{}: marginal `{attr}` sums to {total}", self.cbg_id));
            }
        }
        Ok(())
    }
}

/// Reads the block-group CSV: `cbg_id,population,lat,lon`, an optional
/// `city` column, then `attr:value` share columns.
pub fn load_cbgs(path: &Path) -> Result<Vec<CbgProfile>, SchemaError> {
    let file = std::fs::File::open(path).map_err(|e| SchemaError { line: 0, column: 0, reason: format!("{}: {e}", path.display()) })?;
    cbgs_from_reader(file)
}

pub fn cbgs_from_reader(reader: impl Read) -> Result<Vec<CbgProfile>, SchemaError> {
    let err = |line: u64, column: usize, reason: String| SchemaError { line, column, reason };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(|e| err(1, 0, e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 4 || header[..4] != ["cbg_id", "population", "lat", "lon"] {
        return Err(err(1, 0, "header must start with cbg_id,population,lat,lon".into()));
    }
    let mut city_col = None;
    let mut marginal_cols = Vec::new();
    for (i, h) in header.iter().enumerate().skip(4) {
        match h.split_once(':') {
            Some((attr, value)) if !attr.is_empty() && !value.is_empty() => marginal_cols.push((i, attr.to_string(), value.to_string())),
            _ if h == "city" => city_col = Some(i),
            _ => return Err(err(1, i + 1, format!("column `{h}` is neither `city` nor `attr:value`"))),
        }
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| err(e.position().map(|p| p.line()).unwrap_or(0), 0, e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let num = |c: usize| -> Result<f64, SchemaError> {
            row[c]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, c + 1, format!("`{}` is not a number", row[c].trim())))
        };
        let population = row[1].trim().parse::<u64>().map_err(|_| err(line, 2, format!("`{}` is not a count", row[1].trim())))?;
        let mut marginals: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (c, attr, value) in &marginal_cols {
            marginals.entry(attr.clone()).or_default().push((value.clone(), num(*c)?));
        }
        let cbg = CbgProfile {
            cbg_id: row[0].trim().to_string(),
            population,
            centroid: GeoPoint::new(num(2)?, num(3)?),
            city: city_col.map(|c| row[c].trim().to_string()).unwrap_or_else(|| "the city".to_string()),
            marginals,
        };
        cbg.check().map_err(|m| err(line, 0, m))?;
        out.push(cbg);
    }
    Ok(out)
}

/// A sampled participant before the simulation assigns status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledResident {
    pub profile: AgentProfile,
    pub cbg_id: String,
    pub home: GeoPoint,
    pub hourly_wage: f64,
    /// The categorical value drawn for every marginal.
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SamplingError {
    #[error("no block groups with positive population")]
    EmptyPopulation,
    #[error("population size must be positive")]
    ZeroAgents,
    #[error("{0}")]
    InvalidMarginal(String),
}

const FIRST_NAMES: &[&str] = &[
    "Alex", "Bailey", "Casey", "Dana", "Elliot", "Frankie", "Gray", "Harper", "Indy", "Jordan", "Kai", "Logan", "Morgan",
    "Noel", "Oakley", "Parker", "Quinn", "Riley", "Sage", "Taylor", "Uma", "Val", "Wren", "Yael", "Zion",
];
const LAST_NAMES: &[&str] = &[
    "Adams", "Brooks", "Chen", "Diaz", "Evans", "Foster", "Garcia", "Hughes", "Ito", "Jones", "Kim", "Lopez", "Miller",
    "Nguyen", "Owens", "Patel", "Reed", "Smith", "Turner", "Walker",
];
const PERSONALITIES: &[&str] = &["outgoing", "reserved", "curious", "cautious", "optimistic", "pragmatic", "easygoing", "ambitious"];

/// Uniformly distributed point within `radius_m` of `center`.
pub fn jitter(center: GeoPoint, radius_m: f64, rng: &mut impl Rng) -> GeoPoint {
    let r = radius_m * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    let m_per_deg = EARTH_RADIUS_M.to_radians();
    let dlat = r * theta.cos() / m_per_deg;
    let dlon = r * theta.sin() / (m_per_deg * center.lat.to_radians().cos().max(1e-6));
    GeoPoint::new(center.lat + dlat, center.lon + dlon)
}

/// `"18-30"` -> 18..=30, `"65+"` -> 65..=85, `"40"` -> 40..=40.
fn band(value: &str, open_end: f64) -> Option<(f64, f64)> {
    let v = value.trim();
    if let Some(lo) = v.strip_suffix('+') {
        let lo: f64 = lo.trim().parse().ok()?;
        return Some((lo, lo.max(open_end)));
    }
    match v.split_once('-') {
        Some((a, b)) => Some((a.trim().parse().ok()?, b.trim().parse().ok()?)),
        None => v.parse().ok().map(|x| (x, x)),
    }
}

pub const HOME_JITTER_M: f64 = 500.0;
pub const DEFAULT_HOURLY_WAGE: f64 = 20.0;

/// Draws `n` residents: a block group proportional to population, then each
/// attribute independently from that group's marginals. Recognized
/// attributes are `age` (bands), `gender`, `education`, `occupation`,
/// `personality` and `wage` (hourly bands); others are kept in
/// `attributes` only.
pub fn sample_population(cbgs: &[CbgProfile], n: usize, rng: &mut impl Rng) -> Result<Vec<SampledResident>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::ZeroAgents);
    }
    for c in cbgs {
        c.check().map_err(SamplingError::InvalidMarginal)?;
    }
    let weights: Vec<f64> = cbgs.iter().map(|c| c.population as f64).collect();
    let pick_cbg = WeightedIndex::new(&weights).map_err(|_| SamplingError::EmptyPopulation)?;
    let pickers: Vec<BTreeMap<&str, WeightedIndex<f64>>> = cbgs
        .iter()
        .map(|c| {
            c.marginals
                .iter()
                .map(|(attr, dist)| {
                    let w = WeightedIndex::new(dist.iter().map(|(_, p)| *p))
                        .map_err(|e| SamplingError::InvalidMarginal(format!("{}: `{attr}`: {e}", c.cbg_id)))?;
                    Ok((attr.as_str(), w))
                })
                .collect::<Result<_, SamplingError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ci = pick_cbg.sample(rng);
        let cbg = &cbgs[ci];
        let mut attributes = BTreeMap::new();
        for (attr, w) in &pickers[ci] {
            let value = &cbg.marginals[*attr][w.sample(rng)].0;
            attributes.insert(attr.to_string(), value.clone());
        }
        let age = match attributes.get("age").and_then(|v| band(v, 85.0)) {
            Some((lo, hi)) => rng.random_range(lo as u32..=hi.max(lo) as u32),
            None => rng.random_range(18..=80),
        };
        let hourly_wage = match attributes.get("wage").and_then(|v| band(v, 100.0)) {
            Some((lo, hi)) if hi > lo => (rng.random_range(lo..hi) * 100.0).round() / 100.0,
            Some((lo, _)) => lo,
            None => DEFAULT_HOURLY_WAGE,
        };
        let get = |k: &str, default: &str| attributes.get(k).cloned().unwrap_or_else(|| default.to_string());
        let personality = match attributes.get("personality") {
            Some(p) => p.clone(),
            None => PERSONALITIES[rng.random_range(0..PERSONALITIES.len())].to_string(),
        };
        let name = format!(
            "{} {}",
            FIRST_NAMES[rng.random_range(0..FIRST_NAMES.len())],
            LAST_NAMES[rng.random_range(0..LAST_NAMES.len())]
        );
        let profile = AgentProfile {
            agent_id: i as AgentId,
            name,
            age,
            gender: get("gender", "unspecified"),
            education: get("education", "high school"),
            occupation: get("occupation", "worker"),
            personality,
            city: cbg.city.clone(),
        };
        let home = jitter(cbg.centroid, HOME_JITTER_M, rng);
        out.push(SampledResident { profile, cbg_id: cbg.cbg_id.clone(), home, hourly_wage, attributes });
    }
    Ok(out)
}

/// Total-variation distance between an empirical sample of categorical
/// values and a target marginal.
pub fn total_variation<'a>(sample: impl IntoIterator<Item = &'a str>, target: &[(String, f64)]) -> f64 {
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    let mut n = 0.0;
    for v in sample {
        *counts.entry(v).or_default() += 1.0;
        n += 1.0;
    }
    if n == 0.0 {
        return 1.0;
    }
    let mut tv = 0.0;
    for (value, p) in target {
        tv += (counts.remove(value.as_str()).unwrap_or(0.0) / n - p).abs();
    }
    // values outside the target support
    tv += counts.values().sum::<f64>() / n;
    tv / 2.0
}
