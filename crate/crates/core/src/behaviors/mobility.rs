//! Where to go: place type and travel radius from the model, the concrete
//! destination from a gravity model.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::geo::{GeoIndex, GeoPoint, Poi};
use crate::gateway::{Bindings, CompletionRequest, FieldSpec, Gateway, GatewayError, ResponseContract};
use crate::num::Real;

pub const MIN_RADIUS_M: u32 = 3000;
pub const MAX_RADIUS_M: u32 = 200_000;
pub const DEFAULT_RADIUS_M: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityConfig {
    /// distance-decay exponent
    pub alpha: f64,
    /// distances below this are treated as this (meters)
    pub d_min_m: f64,
    /// radius used for the single retry when nothing is in range
    pub widen_to_m: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self { alpha: 2.0, d_min_m: 100.0, widen_to_m: MAX_RADIUS_M as f64 }
    }
}

/// Choice probabilities `p_j = a_j d_j^-alpha / sum_k a_k d_k^-alpha`, with
/// distances floored at `d_min`. If every weight is zero the choice is
/// uniform.
pub fn gravity_probabilities<T: Real>(candidates: &[(T, T)], alpha: T, d_min: T) -> Vec<T> {
    let weights: Vec<T> = candidates.iter().map(|&(a, d)| a * d.max(d_min).powf(-alpha)).collect();
    let total = weights.iter().fold(T::zero(), |acc, &w| acc + w);
    if total > T::zero() {
        weights.into_iter().map(|w| w / total).collect()
    } else {
        let n = T::from_count(candidates.len());
        vec![T::one() / n; candidates.len()]
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<T: Real>(probs: &[T], rng: &mut impl Rng) -> usize {
    let u = T::from_f64_lossy(rng.random::<f64>());
    let mut acc = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc = acc + p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs.iter().rposition(|&p| p > T::zero()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityDecision {
    pub place_type: String,
    pub radius_m: u32,
    pub chosen_poi: String,
    pub choice_probabilities: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MobilityError {
    #[error("no `{category}` place within {radius_m} m")]
    NoCandidateInRadius { category: String, radius_m: f64 },
    #[error("could not determine a place type: {0}")]
    PlaceType(GatewayError),
}

/// Samples a POI of `category` within `radius_m` of `origin`.
pub fn gravity_select<'a>(
    origin: GeoPoint,
    category: &str,
    radius_m: f64,
    geo: &'a GeoIndex,
    cfg: &MobilityConfig,
    rng: &mut impl Rng,
) -> Result<(&'a Poi, BTreeMap<String, f64>), MobilityError> {
    let candidates = geo.within_radius(origin, category, radius_m);
    if candidates.is_empty() {
        return Err(MobilityError::NoCandidateInRadius { category: category.to_string(), radius_m });
    }
    let pairs: Vec<(f64, f64)> = candidates.iter().map(|c| (c.poi.attractiveness, c.distance_m)).collect();
    let probs = gravity_probabilities(&pairs, cfg.alpha, cfg.d_min_m);
    let chosen = candidates[sample_index(&probs, rng)].poi;
    let map = candidates.iter().zip(&probs).map(|(c, p)| (c.poi.poi_id.clone(), *p)).collect();
    Ok((chosen, map))
}

/// Like [`gravity_select`], widening the radius once when nothing is in range.
pub fn gravity_select_widening<'a>(
    origin: GeoPoint,
    category: &str,
    radius_m: f64,
    geo: &'a GeoIndex,
    cfg: &MobilityConfig,
    rng: &mut impl Rng,
) -> Result<(&'a Poi, BTreeMap<String, f64>, f64), MobilityError> {
    match gravity_select(origin, category, radius_m, geo, cfg, rng) {
        Ok((p, m)) => Ok((p, m, radius_m)),
        Err(MobilityError::NoCandidateInRadius { .. }) if cfg.widen_to_m > radius_m => {
            let (p, m) = gravity_select(origin, category, cfg.widen_to_m, geo, cfg, rng)?;
            Ok((p, m, cfg.widen_to_m))
        }
        Err(e) => Err(e),
    }
}

/// Case-insensitive match of free text against the catalog: a category
/// named in the text wins (earliest mention first); otherwise the closest
/// word by Jaro-Winkler similarity, if close enough.
pub fn nearest_category(raw: &str, catalog: &[String]) -> Option<String> {
    let lower = raw.to_lowercase();
    if let Some((_, c)) = catalog.iter().filter_map(|c| lower.find(&c.to_lowercase()).map(|pos| (pos, c))).min_by_key(|(pos, _)| *pos) {
        return Some(c.clone());
    }
    let mut best: Option<(f64, &String)> = None;
    for word in lower.split(|ch: char| !ch.is_alphanumeric()).filter(|w| !w.is_empty()) {
        for c in catalog {
            let s = strsim::jaro_winkler(word, &c.to_lowercase());
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, c));
            }
        }
    }
    best.filter(|(s, _)| *s >= 0.85).map(|(_, c)| c.clone())
}

pub fn place_type_contract(catalog: &[String]) -> ResponseContract {
    ResponseContract::json(vec![FieldSpec::choice("place type", catalog)])
}

/// Asks for the category of place serving `intention`. A one-entry catalog
/// short-circuits; unusable answers fall back to the nearest catalog entry.
pub fn select_place_type(
    gateway: &Gateway,
    plan: &str,
    intention: &str,
    other_information: &str,
    catalog: &[String],
) -> Result<String, GatewayError> {
    if catalog.len() == 1 {
        return Ok(catalog[0].clone());
    }
    let mut b = Bindings::new();
    b.insert("plan".into(), plan.to_string());
    b.insert("intention".into(), intention.to_string());
    b.insert("other information".into(), other_information.to_string());
    b.insert("poi category".into(), format!("[{}]", catalog.join(", ")));
    let req = CompletionRequest::new("place_type", b).with_contract(place_type_contract(catalog));
    match gateway.cached_complete(&req) {
        Ok(rec) => Ok(rec.str("place type").unwrap_or_default().to_string()),
        Err(GatewayError::ContractViolation { template_id, detail, raw }) => {
            nearest_category(&raw, catalog).ok_or(GatewayError::ContractViolation { template_id, detail, raw })
        }
        Err(e) => Err(e),
    }
}

/// Maximum travel radius in meters, always within [3000, 200000]. Falls back
/// to 10000 when the model's answer is unusable; the error is returned for
/// logging.
pub fn determine_radius(
    gateway: &Gateway,
    weather: &str,
    temperature: f64,
    emotion: &str,
    thought: &str,
    other_info: &str,
) -> (u32, Option<GatewayError>) {
    let mut b = Bindings::new();
    b.insert("weather".into(), weather.to_string());
    b.insert("temperature".into(), format!("{temperature}"));
    b.insert("emotion types".into(), emotion.to_string());
    b.insert("thought".into(), thought.to_string());
    b.insert("other info".into(), other_info.to_string());
    match gateway.cached_complete(&CompletionRequest::new("radius", b)) {
        Ok(rec) => {
            let r = rec.i64("radius").unwrap_or(DEFAULT_RADIUS_M as i64);
            (r.clamp(MIN_RADIUS_M as i64, MAX_RADIUS_M as i64) as u32, None)
        }
        Err(e) => (DEFAULT_RADIUS_M, Some(e)),
    }
}
