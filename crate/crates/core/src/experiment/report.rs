//! The metric report, computed from a run directory's raw tables only, so
//! that any report can be recomputed (and checked) offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{compute_mape, mean_with_ci, score_cesd, MeanCi, ShiftShares, CESD_ITEMS};
use super::recorder::{
    read_csv, write_csv, AgentMonthRow, ArtifactError, AttitudeRow, DeliveryRow, FailureRow, VisitRow, AGENT_ECONOMY, ATTITUDES,
    DELIVERIES, FAILURES, ISOLATION, SURVEYS, VISITS,
};
use super::route::FilterMode;
use super::sim::{PopulationEntry, CONFIG_SNAPSHOT, GATEWAY_STATS, POPULATION};
use super::survey::{IsolationCheck, SurveyResponse};
use crate::agent::mind::ATTITUDE_MIDPOINT;
use crate::agent::profile::AgentId;
use crate::environment::context::{GlobalContext, GlobalSchedule};
use crate::gateway::GatewayStats;

pub const REPORT: &str = "report.json";
pub const REAL_SERIES: &str = "real_series.csv";
pub const SHIFT_TABLE: &str = "shift_shares.csv";
pub const SURVEY_TABLE: &str = "survey_summary.csv";
pub const ECONOMY_TABLE: &str = "economy_summary.csv";
pub const DAILY_VISITS: &str = "daily_visits.csv";
pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShift {
    pub group: String,
    pub shares: ShiftShares,
    pub mean_start: f64,
    pub mean_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    /// administration label, e.g. `cesd:month:120`
    pub survey_id: String,
    pub group: String,
    pub respondents: usize,
    /// respondents with at least one missing item
    pub incomplete: usize,
    pub score: Option<MeanCi>,
}

/// Change in a survey score between its first and last administration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDelta {
    pub survey: String,
    pub group: String,
    pub first: String,
    pub last: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEconomy {
    pub group: String,
    /// per-agent mean monthly consumption
    pub consumption: Option<MeanCi>,
    pub final_savings: Option<MeanCi>,
    /// the last CES-D administration
    pub cesd: Option<MeanCi>,
    pub cesd_survey: Option<String>,
    pub transfers_per_agent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyVisits {
    pub day: u32,
    pub phase: String,
    pub visits: u64,
    pub real: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mobility {
    pub daily: Vec<DailyVisits>,
    /// phase -> days, in order of first appearance
    pub phases: Vec<(String, Vec<u32>)>,
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeliveryCounts {
    pub filter: String,
    pub delivered: usize,
    pub dropped: usize,
    pub injected_delivered: usize,
    /// deliveries that contradict the filter's sign rule
    pub unsound: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isolation {
    pub checks: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub agents: usize,
    pub groups: Vec<(String, usize)>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub opinion_shift: Vec<GroupShift>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub surveys: Vec<SurveySummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub survey_deltas: Vec<SurveyDelta>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub economy: Vec<GroupEconomy>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mobility: Option<Mobility>,
    pub deliveries: Vec<DeliveryCounts>,
    pub isolation: Isolation,
    pub failures: usize,
    pub gateway: GatewayStats,
}

impl Report {
    pub fn shift(&self, group: &str) -> Option<&GroupShift> {
        self.opinion_shift.iter().find(|g| g.group == group)
    }

    pub fn economy_of(&self, group: &str) -> Option<&GroupEconomy> {
        self.economy.iter().find(|g| g.group == group)
    }

    pub fn survey(&self, survey_id: &str, group: &str) -> Option<&SurveySummary> {
        self.surveys.iter().find(|s| s.survey_id == survey_id && s.group == group)
    }
}

/// Observed series row: `day,visits` (a `date` column is allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealRow {
    pub day: u32,
    #[serde(default)]
    pub date: Option<String>,
    pub visits: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|e| ArtifactError::new(path, e))?;
    serde_json::from_str(&text).map_err(|e| ArtifactError::new(path, e))
}

fn item_number(item: &str) -> usize {
    item.trim_start_matches('q').parse().unwrap_or(usize::MAX)
}

/// Score of one respondent, or `None` when an item is missing. CES-D
/// administrations are scored as CES-D; anything else as the item mean.
pub fn score_respondent(survey_id: &str, mut items: Vec<(String, Option<f64>)>) -> Option<f64> {
    items.sort_by_key(|(q, _)| item_number(q));
    let values: Option<Vec<f64>> = items.into_iter().map(|(_, v)| v).collect();
    let values = values?;
    if survey_id.split(':').next() == Some("cesd") {
        if values.len() != CESD_ITEMS {
            return None;
        }
        let ints: Vec<i64> = values.iter().map(|v| v.round() as i64).collect();
        return score_cesd(&ints).ok().map(f64::from);
    }
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn ci(samples: &[f64]) -> Option<MeanCi> {
    mean_with_ci(samples, CONFIDENCE).ok()
}

/// Whether a delivery contradicts the sign rule of its filter.
pub fn unsound_delivery(filter: FilterMode, stance: Option<u8>, attitude: Option<u8>) -> bool {
    let sign = |v: Option<u8>| v.map(|x| (x as i64 - ATTITUDE_MIDPOINT).signum());
    let (s, a) = (sign(stance), sign(attitude));
    match filter {
        FilterMode::Control => false,
        FilterMode::Homophilic => !matches!((s, a), (Some(s), Some(a)) if s != 0 && s == a),
        FilterMode::Heterogeneous => !matches!((s, a), (Some(s), Some(a)) if s != 0 && a != 0 && s != a),
    }
}

/// Builds the report from the tables in `dir`.
pub fn build(dir: &Path) -> Result<Report, ArtifactError> {
    let cfg_path = dir.join(CONFIG_SNAPSHOT);
    let cfg_text = fs::read_to_string(&cfg_path).map_err(|e| ArtifactError::new(&cfg_path, e))?;
    let config: ExperimentConfig = toml::from_str(&cfg_text).map_err(|e| ArtifactError::new(&cfg_path, e))?;
    let population: Vec<PopulationEntry> = read_json(&dir.join(POPULATION))?;
    let mut group_order: Vec<String> = Vec::new();
    let mut group_size: BTreeMap<String, usize> = BTreeMap::new();
    for p in &population {
        if !group_order.contains(&p.group) {
            group_order.push(p.group.clone());
        }
        *group_size.entry(p.group.clone()).or_default() += 1;
    }
    let group_of: BTreeMap<AgentId, String> = population.iter().map(|p| (p.agent_id, p.group.clone())).collect();

    // opinion shifts: first vs last recorded attitude per agent
    let attitudes: Vec<AttitudeRow> = read_csv(&dir.join(ATTITUDES))?;
    let mut opinion_shift = Vec::new();
    if !attitudes.is_empty() {
        let start: BTreeMap<AgentId, u8> = attitudes.iter().filter(|r| r.at == "start").map(|r| (r.agent_id, r.attitude)).collect();
        let end: BTreeMap<AgentId, u8> = attitudes.iter().filter(|r| r.at == "end").map(|r| (r.agent_id, r.attitude)).collect();
        for g in &group_order {
            let pairs: Vec<(u8, u8)> = start
                .iter()
                .filter(|(id, _)| group_of.get(id) == Some(g))
                .filter_map(|(id, &s)| end.get(id).map(|&e| (s, e)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let n = pairs.len() as f64;
            opinion_shift.push(GroupShift {
                group: g.clone(),
                mean_start: pairs.iter().map(|p| p.0 as f64).sum::<f64>() / n,
                mean_end: pairs.iter().map(|p| p.1 as f64).sum::<f64>() / n,
                shares: ShiftShares::from_pairs(pairs),
            });
        }
    }

    // surveys, in order of administration
    let responses: Vec<SurveyResponse> = read_csv(&dir.join(SURVEYS))?;
    let mut labels: Vec<String> = Vec::new();
    let mut by_label: BTreeMap<String, BTreeMap<AgentId, Vec<(String, Option<f64>)>>> = BTreeMap::new();
    for r in &responses {
        if !labels.contains(&r.survey_id) {
            labels.push(r.survey_id.clone());
        }
        by_label.entry(r.survey_id.clone()).or_default().entry(r.agent_id).or_default().push((r.item_id.clone(), r.value));
    }
    let mut scores: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut surveys = Vec::new();
    for label in &labels {
        let per_agent = &by_label[label];
        for g in &group_order {
            let respondents: Vec<(&AgentId, &Vec<(String, Option<f64>)>)> = per_agent.iter().filter(|(id, _)| group_of.get(id) == Some(g)).collect();
            if respondents.is_empty() {
                continue;
            }
            let s: Vec<f64> = respondents.iter().filter_map(|(_, items)| score_respondent(label, (*items).clone())).collect();
            surveys.push(SurveySummary {
                survey_id: label.clone(),
                group: g.clone(),
                respondents: respondents.len(),
                incomplete: respondents.len() - s.len(),
                score: ci(&s),
            });
            scores.insert((label.clone(), g.clone()), s);
        }
    }
    let mut survey_deltas = Vec::new();
    let mut instruments: Vec<String> = Vec::new();
    for l in &labels {
        let base = l.split(':').next().unwrap_or(l).to_string();
        if !instruments.contains(&base) {
            instruments.push(base);
        }
    }
    for inst in &instruments {
        let runs: Vec<&String> = labels.iter().filter(|l| l.split(':').next() == Some(inst.as_str())).collect();
        if runs.len() < 2 {
            continue;
        }
        let (first, last) = (runs[0], runs[runs.len() - 1]);
        for g in &group_order {
            let mean = |l: &String| surveys.iter().find(|s| &s.survey_id == l && &s.group == g).and_then(|s| s.score).map(|c| c.mean);
            if let (Some(a), Some(b)) = (mean(first), mean(last)) {
                survey_deltas.push(SurveyDelta { survey: inst.clone(), group: g.clone(), first: first.clone(), last: last.clone(), delta: b - a });
            }
        }
    }

    // economy
    let months: Vec<AgentMonthRow> = read_csv(&dir.join(AGENT_ECONOMY))?;
    let mut economy = Vec::new();
    if !months.is_empty() {
        let last_cesd = labels.iter().rev().find(|l| l.split(':').next() == Some("cesd")).cloned();
        for g in &group_order {
            let mut consumption: BTreeMap<AgentId, Vec<f64>> = BTreeMap::new();
            let mut savings: BTreeMap<AgentId, (u32, f64)> = BTreeMap::new();
            let mut transfers = 0usize;
            for r in months.iter().filter(|r| &r.group == g) {
                consumption.entry(r.agent_id).or_default().push(r.consumption);
                let e = savings.entry(r.agent_id).or_insert((0, 0.0));
                if r.month >= e.0 {
                    *e = (r.month, r.savings);
                }
                if r.transfer > 0.0 {
                    transfers += 1;
                }
            }
            if consumption.is_empty() {
                continue;
            }
            let means: Vec<f64> = consumption.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            let finals: Vec<f64> = savings.values().map(|v| v.1).collect();
            let cesd = last_cesd.as_ref().and_then(|l| scores.get(&(l.clone(), g.clone()))).and_then(|s| ci(s));
            economy.push(GroupEconomy {
                group: g.clone(),
                consumption: ci(&means),
                final_savings: ci(&finals),
                cesd,
                cesd_survey: cesd.and(last_cesd.clone()),
                transfers_per_agent: transfers as f64 / consumption.len() as f64,
            });
        }
    }

    // mobility
    let visits: Vec<VisitRow> = read_csv(&dir.join(VISITS))?;
    let mobility = match config.horizon.days {
        Some(days) if config.pois.is_some() => {
            let mut schedule = GlobalSchedule::new(GlobalContext::default());
            let entries = config
                .schedule
                .iter()
                .map(|s| (s.day, GlobalContext { weather: s.weather.clone(), temperature: s.temperature, event_prompt: s.event.clone(), phase_label: s.phase.clone() }))
                .collect();
            schedule.set(entries, days).map_err(|e| ArtifactError::new(&cfg_path, e))?;
            let real: Vec<RealRow> = read_csv(&dir.join(REAL_SERIES))?;
            let real_by_day: BTreeMap<u32, f64> = real.iter().map(|r| (r.day, r.visits)).collect();
            let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
            for v in &visits {
                *counts.entry(v.day).or_default() += 1;
            }
            let daily: Vec<DailyVisits> = (1..=days)
                .map(|d| DailyVisits {
                    day: d,
                    phase: schedule.context_for_day(d).phase().to_string(),
                    visits: counts.get(&d).copied().unwrap_or(0),
                    real: real_by_day.get(&d).copied(),
                })
                .collect();
            let mut phases: Vec<(String, Vec<u32>)> = Vec::new();
            for d in &daily {
                match phases.iter_mut().find(|(p, _)| *p == d.phase) {
                    Some((_, ds)) => ds.push(d.day),
                    None => phases.push((d.phase.clone(), vec![d.day])),
                }
            }
            let mape = if real.is_empty() {
                None
            } else {
                let paired: Vec<(f64, f64)> = daily.iter().filter_map(|d| d.real.map(|r| (r, d.visits as f64))).collect();
                let (r, s): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
                compute_mape(&r, &s).ok()
            };
            Some(Mobility { daily, phases, mape })
        }
        _ => None,
    };

    // deliveries
    let deliveries: Vec<DeliveryRow> = read_csv(&dir.join(DELIVERIES))?;
    let mut by_filter: BTreeMap<String, DeliveryCounts> = BTreeMap::new();
    for d in &deliveries {
        let c = by_filter.entry(d.filter.clone()).or_insert_with(|| DeliveryCounts { filter: d.filter.clone(), ..Default::default() });
        if d.delivered {
            c.delivered += 1;
            if d.injected {
                c.injected_delivered += 1;
            }
            let mode: Option<FilterMode> = serde_json::from_value(serde_json::Value::String(d.filter.clone())).ok();
            if mode.is_some_and(|m| unsound_delivery(m, d.stance, d.recipient_attitude)) {
                c.unsound += 1;
            }
        } else {
            c.dropped += 1;
        }
    }

    let isolation: Vec<IsolationCheck> = read_csv(&dir.join(ISOLATION))?;
    let failures: Vec<FailureRow> = read_csv(&dir.join(FAILURES))?;
    let gateway: GatewayStats = read_json(&dir.join(GATEWAY_STATS))?;
    let groups = group_order.iter().map(|g| (g.clone(), group_size[g])).collect();
    Ok(Report {
        name: config.name,
        seed: config.seed,
        agents: population.len(),
        groups,
        opinion_shift,
        surveys,
        survey_deltas,
        economy,
        mobility,
        deliveries: by_filter.into_values().collect(),
        isolation: Isolation { checks: isolation.len(), violations: isolation.iter().filter(|c| !c.holds()).count() },
        failures: failures.len(),
        gateway,
    })
}

#[derive(Debug, Serialize)]
struct ShiftRow<'a> {
    group: &'a str,
    n: usize,
    more_polarized: f64,
    more_moderate: f64,
    flipped: f64,
    unchanged: f64,
}

#[derive(Debug, Serialize)]
struct SurveyRow<'a> {
    survey_id: &'a str,
    group: &'a str,
    respondents: usize,
    incomplete: usize,
    mean: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EconomyRow<'a> {
    group: &'a str,
    mean_consumption: Option<f64>,
    consumption_low: Option<f64>,
    consumption_high: Option<f64>,
    mean_cesd: Option<f64>,
    cesd_low: Option<f64>,
    cesd_high: Option<f64>,
}

/// Writes `report.json` and the summary tables.
pub fn write(dir: &Path, report: &Report) -> Result<(), ArtifactError> {
    use super::metrics::ShiftCategory as C;
    let p = dir.join(REPORT);
    let text = serde_json::to_string_pretty(report).map_err(|e| ArtifactError::new(&p, e))?;
    fs::write(&p, text + "\n").map_err(|e| ArtifactError::new(&p, e))?;
    let shifts: Vec<ShiftRow> = report
        .opinion_shift
        .iter()
        .map(|g| ShiftRow {
            group: &g.group,
            n: g.shares.n,
            more_polarized: g.shares.share(C::MorePolarized),
            more_moderate: g.shares.share(C::MoreModerate),
            flipped: g.shares.share(C::Flipped),
            unchanged: g.shares.share(C::Unchanged),
        })
        .collect();
    write_csv(&dir.join(SHIFT_TABLE), &shifts)?;
    let surveys: Vec<SurveyRow> = report
        .surveys
        .iter()
        .map(|s| SurveyRow {
            survey_id: &s.survey_id,
            group: &s.group,
            respondents: s.respondents,
            incomplete: s.incomplete,
            mean: s.score.map(|c| c.mean),
            ci_low: s.score.map(|c| c.low),
            ci_high: s.score.map(|c| c.high),
        })
        .collect();
    write_csv(&dir.join(SURVEY_TABLE), &surveys)?;
    let econ: Vec<EconomyRow> = report
        .economy
        .iter()
        .map(|g| EconomyRow {
            group: &g.group,
            mean_consumption: g.consumption.map(|c| c.mean),
            consumption_low: g.consumption.map(|c| c.low),
            consumption_high: g.consumption.map(|c| c.high),
            mean_cesd: g.cesd.map(|c| c.mean),
            cesd_low: g.cesd.map(|c| c.low),
            cesd_high: g.cesd.map(|c| c.high),
        })
        .collect();
    write_csv(&dir.join(ECONOMY_TABLE), &econ)?;
    let daily: &[DailyVisits] = report.mobility.as_ref().map(|m| m.daily.as_slice()).unwrap_or(&[]);
    write_csv(&dir.join(DAILY_VISITS), daily)?;
    Ok(())
}

/// Recomputes the report from the raw tables and lists every top-level
/// field that differs from the stored `report.json`.
pub fn check(dir: &Path) -> Result<Vec<String>, ArtifactError> {
    let stored: serde_json::Value = read_json(&dir.join(REPORT))?;
    let fresh = serde_json::to_value(build(dir)?).expect("report serializes");
    let keys: BTreeSet<&String> = stored.as_object().into_iter().flat_map(|o| o.keys()).chain(fresh.as_object().into_iter().flat_map(|o| o.keys())).collect();
    Ok(keys.into_iter().filter(|k| stored.get(k.as_str()) != fresh.get(k.as_str())).cloned().collect())
}

pub fn load(dir: &Path) -> Result<Report, ArtifactError> {
    read_json(&dir.join(REPORT))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soundness_rule() {
        assert!(!unsound_delivery(FilterMode::Homophilic, Some(9), Some(7)));
        assert!(unsound_delivery(FilterMode::Homophilic, Some(2), Some(7)));
        assert!(unsound_delivery(FilterMode::Homophilic, Some(5), Some(7)));
        assert!(!unsound_delivery(FilterMode::Heterogeneous, Some(2), Some(7)));
        assert!(unsound_delivery(FilterMode::Heterogeneous, Some(2), Some(5)));
        assert!(!unsound_delivery(FilterMode::Control, None, None));
    }

    #[test]
    fn respondent_scoring() {
        let zeros: Vec<(String, Option<f64>)> = (1..=20).map(|i| (format!("q{i}"), Some(0.0))).collect();
        assert_eq!(score_respondent("cesd:end", zeros.clone()), Some(12.0));
        let mut gap = zeros;
        gap[3].1 = None;
        assert_eq!(score_respondent("cesd:end", gap), None);
        assert_eq!(score_respondent("thermometer:start", vec![("q1".into(), Some(70.0))]), Some(70.0));
    }
}
