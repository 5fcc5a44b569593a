//! Declarative experiment configuration (TOML).

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::intervention::Intervention;
use crate::agent::needs::NeedsConfig;
use crate::agent::plan::DEFAULT_MAX_PLAN_STEPS;
use crate::agent::profile::AgentId;
use crate::behaviors::mobility::MobilityConfig;

/// Problem with a configuration, located where possible.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { file: None, line: None, column: None, message: message.into() }
    }

    pub fn at(mut self, file: &Path) -> Self {
        self.file.get_or_insert_with(|| file.to_path_buf());
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}:", file.display())?;
        }
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "{l}:{c}:")?;
        }
        if self.file.is_some() || self.line.is_some() {
            f.write_str(" ")?;
        }
        f.write_str(&self.message)
    }
}

/// When an instrument fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum When {
    /// before the first tick
    Start,
    /// after the last tick
    End,
    /// at the end of this simulated day
    Day(u32),
    /// after this month's settlement
    Month(u32),
}

impl When {
    pub fn label(&self) -> String {
        match self {
            When::Start => "start".into(),
            When::End => "end".into(),
            When::Day(d) => format!("day:{d}"),
            When::Month(m) => format!("month:{m}"),
        }
    }
}

impl TryFrom<String> for When {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let num = |rest: &str| rest.trim().parse::<u32>().ok().filter(|&n| n > 0);
        match s.trim() {
            "start" => Ok(When::Start),
            "end" => Ok(When::End),
            t => {
                if let Some(n) = t.strip_prefix("day:").and_then(num) {
                    Ok(When::Day(n))
                } else if let Some(n) = t.strip_prefix("month:").and_then(num) {
                    Ok(When::Month(n))
                } else {
                    Err(format!("`{s}` is not one of start, end, day:N, month:N"))
                }
            }
        }
    }
}

impl From<When> for String {
    fn from(w: When) -> String {
        w.label()
    }
}

impl Serialize for When {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for When {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        When::try_from(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn default_tick_minutes() -> u32 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub days: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub months: Option<u32>,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
    #[serde(default = "default_tick_minutes")]
    pub tick_minutes: u32,
}

fn default_savings() -> f64 {
    1000.0
}

fn default_workplace_radius() -> f64 {
    5000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    /// number of residents sampled from `cbg_file`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbg_file: Option<String>,
    /// explicit population (JSON list of profile + status records)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default = "default_savings")]
    pub initial_savings: f64,
    /// workplaces are placed uniformly within this distance of home
    #[serde(default = "default_workplace_radius")]
    pub workplace_radius_m: f64,
}

fn default_strength() -> u8 {
    50
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// expected number of friends (Erdős–Rényi)
    pub mean_degree: f64,
    /// only connect members of the same group
    #[serde(default = "yes")]
    pub within_groups: bool,
    #[serde(default = "default_strength")]
    pub initial_strength: u8,
}

fn default_initial_attitudes() -> Vec<u8> {
    vec![3, 7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub name: String,
    /// initial ratings, split evenly (and shuffled) within each group
    #[serde(default = "default_initial_attitudes")]
    pub initial: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub id: String,
    /// next `size` agents in id order
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// explicit agent ids
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<AgentId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interventions: Vec<Intervention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstrumentSpec {
    Survey {
        /// built-in id (`cesd`, `thermometer`) or a survey file
        survey: String,
        at: Vec<When>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group: Option<String>,
    },
    Interview {
        at: When,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group: Option<String>,
        count: usize,
        questions: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    #[serde(default)]
    pub kind: BackendKind,
    /// scripted rules file
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<String>,
    /// recorded transcript for replay
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_rpm: Option<u32>,
}

impl BackendSpec {
    /// Parses a command-line override: `scripted:RULES`, `live` or
    /// `replay:TRANSCRIPT`.
    pub fn parse_override(s: &str) -> Result<Self, ConfigError> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a.to_string())),
            None => (s, None),
        };
        match (kind, arg) {
            ("scripted", rules) => Ok(Self { kind: BackendKind::Scripted, rules, ..Self::default() }),
            ("live", None) => Ok(Self { kind: BackendKind::Live, ..Self::default() }),
            ("replay", Some(t)) => Ok(Self { kind: BackendKind::Replay, transcript: Some(t), ..Self::default() }),
            _ => Err(ConfigError::new(format!("backend `{s}` is not scripted[:RULES], live or replay:TRANSCRIPT"))),
        }
    }
}

fn default_price() -> f64 {
    1.0
}

fn default_interest() -> f64 {
    0.0025
}

fn default_hours() -> f64 {
    168.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomySpec {
    /// bracket file; the monthly 2018 US schedule when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brackets: Option<String>,
    #[serde(default = "default_price")]
    pub price: f64,
    /// per month
    #[serde(default = "default_interest")]
    pub interest_rate: f64,
    #[serde(default = "default_hours")]
    pub hours_per_month: f64,
    #[serde(default)]
    pub allow_debt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub day: u32,
    #[serde(default = "default_weather")]
    pub weather: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
}

fn default_weather() -> String {
    "sunny".into()
}

fn default_temperature() -> f64 {
    25.0
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_PLAN_STEPS
}

fn default_llm_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSettings {
    #[serde(default = "default_max_steps")]
    pub max_plan_steps: usize,
    /// sampling temperature for every prompt
    #[serde(default = "default_llm_temperature")]
    pub temperature: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self { max_plan_steps: DEFAULT_MAX_PLAN_STEPS, temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub horizon: Horizon,
    pub population: PopulationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pois: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<TopicSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instruments: Vec<InstrumentSpec>,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub economy: Option<EconomySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needs: Option<NeedsConfig>,
    #[serde(default)]
    pub mobility: MobilityConfig,
    #[serde(default)]
    pub agent: AgentSettings,
    /// observed daily visits (`date,visits`) to compare against
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_series: Option<String>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, col)
}

/// Line and column of the first `key =` assignment, `[key]` header or
/// `"key"` value, for semantic errors.
fn locate_key(text: &str, key: &str) -> Option<(usize, usize)> {
    let at = |i: usize, l: &str, t: &str| (i + 1, l.len() - t.len() + 1);
    let assignment = text.lines().enumerate().find_map(|(i, l)| {
        let t = l.trim_start();
        let rest = t.strip_prefix(key)?;
        rest.trim_start().starts_with('=').then(|| at(i, l, t))
    });
    let header = || {
        text.lines().enumerate().find_map(|(i, l)| {
            let t = l.trim_start();
            let name = t.trim_start_matches('[').trim_end().trim_end_matches(']');
            (t.starts_with('[') && name == key).then(|| at(i, l, t))
        })
    };
    let value = || {
        let quoted = format!("\"{key}\"");
        text.lines().enumerate().find_map(|(i, l)| l.find(&quoted).map(|c| (i + 1, c + 1)))
    };
    assignment.or_else(header).or_else(value)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unzip();
            ConfigError { file: None, line, column, message: e.message().trim().to_string() }
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate().map_err(|mut err| {
            if err.line.is_none() {
                // backticked names in the message, most specific last
                let keys: Vec<&str> = err.message.split('`').skip(1).step_by(2).collect();
                if let Some((l, c)) = keys.iter().rev().find_map(|k| locate_key(text, k.rsplit('.').next().unwrap_or(k))) {
                    err.line = Some(l);
                    err.column = Some(c);
                }
            }
            err
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(format!("cannot read config: {e}")).at(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| e.at(path))
    }

    /// Resolves a path from the config against its directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn is_monthly(&self) -> bool {
        self.horizon.months.is_some()
    }

    /// Canonical TOML form, used as the run's config snapshot.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::new(m));
        if self.name.trim().is_empty() {
            return err("`name` must not be empty".into());
        }
        match (self.horizon.days, self.horizon.months) {
            (Some(0), _) | (_, Some(0)) => return err("`horizon` must be at least 1".into()),
            (Some(_), Some(_)) => return err("`horizon` takes either days or months, not both".into()),
            (None, None) => return err("`horizon` needs days or months".into()),
            _ => {}
        }
        if self.horizon.days.is_some() && (self.horizon.tick_minutes == 0 || 1440 % self.horizon.tick_minutes != 0) {
            return err("`tick_minutes` must divide a day".into());
        }
        let p = &self.population;
        match (&p.cbg_file, &p.file) {
            (Some(_), Some(_)) => return err("`population` takes either cbg_file or file".into()),
            (None, None) => return err("`population` needs cbg_file or file".into()),
            (Some(_), None) if p.size.unwrap_or(0) == 0 => return err("`size` must be positive when sampling from cbg_file".into()),
            _ => {}
        }
        if !(p.initial_savings.is_finite() && p.initial_savings >= 0.0) {
            return err("`initial_savings` must be >= 0".into());
        }
        if let Some(n) = &self.network {
            if !(n.mean_degree >= 0.0 && n.mean_degree.is_finite()) {
                return err("`mean_degree` must be >= 0".into());
            }
            if n.initial_strength > 100 {
                return err("`initial_strength` must be within 0..=100".into());
            }
        }
        if let Some(t) = &self.topic {
            if t.initial.is_empty() || t.initial.iter().any(|&a| a > 10) {
                return err("`initial` attitudes must be a non-empty list within 0..=10".into());
            }
        }
        let mut ids = BTreeSet::new();
        let mut members = BTreeSet::new();
        for g in &self.groups {
            if !ids.insert(g.id.as_str()) {
                return err(format!("group `{}` is defined twice", g.id));
            }
            if g.size.is_some() == !g.members.is_empty() {
                return err(format!("group `{}` needs exactly one of size or members", g.id));
            }
            for m in &g.members {
                if !members.insert(*m) {
                    return err(format!("agent {m} is in more than one group (`members`)"));
                }
            }
            for i in &g.interventions {
                i.check().map_err(|e| ConfigError::new(format!("group `{}`: {e}", g.id)))?;
                if self.topic.is_none() && matches!(i, Intervention::InformationControl { .. }) {
                    return err(format!("group `{}` uses information control but no `topic` is configured", g.id));
                }
            }
        }
        if let (Some(size), None) = (p.size, &p.file) {
            let by_size: usize = self.groups.iter().filter_map(|g| g.size).sum();
            if by_size > size {
                return err(format!("group sizes add up to {by_size}, more than the population `size` {size}"));
            }
        }
        for ins in &self.instruments {
            match ins {
                InstrumentSpec::Survey { at, group, .. } => {
                    if at.is_empty() {
                        return err("survey `at` must list at least one time".into());
                    }
                    for w in at {
                        self.check_when(*w)?;
                    }
                    self.check_group(group.as_deref())?;
                }
                InstrumentSpec::Interview { at, group, questions, .. } => {
                    self.check_when(*at)?;
                    self.check_group(group.as_deref())?;
                    if questions.is_empty() {
                        return err("interview `questions` must not be empty".into());
                    }
                }
            }
        }
        if self.backend.kind == BackendKind::Replay && self.backend.transcript.is_none() {
            return err("replay `backend` needs a transcript".into());
        }
        if let Some(e) = &self.economy {
            if !(e.price > 0.0 && e.hours_per_month > 0.0) {
                return err("`price` and `hours_per_month` must be positive".into());
            }
        }
        if self.is_monthly() && self.economy.is_none() {
            return err("a monthly `horizon` needs an [economy] section".into());
        }
        let mut days = BTreeSet::new();
        for s in &self.schedule {
            if !days.insert(s.day) {
                return err(format!("`schedule` has two entries for day {}", s.day));
            }
            if s.day == 0 || self.horizon.days.is_some_and(|d| s.day > d) {
                return err(format!("`schedule` day {} is outside the horizon", s.day));
            }
        }
        if let Some(n) = &self.needs {
            n.check().map_err(|m| ConfigError::new(format!("`needs`: {m}")))?;
        }
        if self.agent.max_plan_steps == 0 {
            return err("`max_plan_steps` must be at least 1".into());
        }
        if !(self.agent.temperature >= 0.0 && self.agent.temperature.is_finite()) {
            return err("`temperature` must be >= 0".into());
        }
        Ok(())
    }

    fn check_when(&self, w: When) -> Result<(), ConfigError> {
        match (w, self.horizon.days, self.horizon.months) {
            (When::Day(d), Some(h), _) if d <= h => Ok(()),
            (When::Month(m), _, Some(h)) if m <= h => Ok(()),
            (When::Start | When::End, ..) => Ok(()),
            _ => Err(ConfigError::new(format!("instrument time `{}` is outside the horizon (`at`)", w.label()))),
        }
    }

    fn check_group(&self, group: Option<&str>) -> Result<(), ConfigError> {
        match group {
            Some(g) if !self.groups.iter().any(|x| x.id == g) => Err(ConfigError::new(format!("unknown group `{g}`"))),
            _ => Ok(()),
        }
    }
}
