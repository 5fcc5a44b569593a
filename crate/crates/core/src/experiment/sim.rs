//! The run loop: builds a population from a config, advances the clock with
//! a concurrent act phase and a serial barrier per tick, fires instruments
//! and writes the run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackendKind, ConfigError, ExperimentConfig, InstrumentSpec, When};
use super::intervention::{configure_participant, modify_status, Cadence, EditOp, Intervention, InterventionError};
use super::interview::{run_interview, InterviewChannel, InterviewSession, ScriptedQuestions};
use super::recorder::{
    AgentMonthRow, ArtifactError, AttitudeRow, DeliveryRow, FailureRow, InterventionRow, LogRow, Recorder, VisitRow,
};
use super::report;
use super::route::{route, FilterMode};
use super::survey::{run_survey, IsolationCheck, SurveyError, SurveyInstrument};
use crate::agent::memory::MemoryKind;
use crate::agent::needs::NeedsConfig;
use crate::agent::profile::{AgentId, AgentStatus, Friend};
use crate::agent::{Agent, InboxOutput, TickOutput, WorldView, HOME_CATEGORY, WORKPLACE_CATEGORY};
use crate::behaviors::economy::{
    consumption_levels, monthly_bindings, monthly_decision, settle_month, Account, BracketSchedule, EconomySnapshot, EconomyState,
    MonthlyDecision,
};
use crate::behaviors::social::{demagogue_message, Mode, SocialMessage};
use crate::environment::bus::MessageBus;
use crate::environment::clock::{SimClock, TickLength};
use crate::environment::context::{GlobalContext, GlobalSchedule};
use crate::environment::geo::GeoIndex;
use crate::environment::population::{jitter, load_cbgs, sample_population, SampledResident};
use crate::gateway::{Gateway, GatewayError, LiveBackend, ReplayBackend, ScriptedBackend, TemplateCatalog};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const POPULATION: &str = "population.json";
pub const FINAL_STATE: &str = "final_state.json";
pub const TRANSCRIPT: &str = "gateway_transcript.jsonl";
pub const GATEWAY_STATS: &str = "gateway_stats.json";
pub const CHECKPOINT: &str = "checkpoint.json";

/// Sender id of injected persuasive messages.
pub const EXTERNAL_SENDER: AgentId = AgentId::MAX;
/// Group of agents not covered by any configured group.
pub const UNGROUPED: &str = "ungrouped";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("population: {0}")]
    Population(String),
    #[error("places: {0}")]
    Places(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("run aborted at tick {tick}: {reason}")]
    Aborted { tick: u64, reason: String },
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("checkpoint does not match this config: {0}")]
    Checkpoint(String),
}

/// An independent RNG stream for (`label`, `a`, `b`) under `seed`.
pub fn derived_rng(seed: u64, label: &str, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// The gateway described by the config's backend section.
pub fn build_gateway(config: &ExperimentConfig) -> Result<Gateway, SimError> {
    let spec = &config.backend;
    let gateway = match spec.kind {
        BackendKind::Scripted => {
            let rules = spec.rules.as_deref().ok_or_else(|| SimError::Backend("the scripted backend needs a rules file".into()))?;
            let backend = ScriptedBackend::load(&config.resolve(rules), Some(config.seed)).map_err(|e| SimError::Backend(e.to_string()))?;
            Gateway::new(TemplateCatalog::shipped(), Arc::new(backend))
        }
        BackendKind::Live => {
            let backend = LiveBackend::from_env().map_err(|e| SimError::Backend(e.to_string()))?;
            Gateway::new(TemplateCatalog::shipped(), Arc::new(backend))
        }
        BackendKind::Replay => {
            let path = spec.transcript.as_deref().ok_or_else(|| SimError::Backend("replay needs a transcript".into()))?;
            let backend = ReplayBackend::load(&config.resolve(path)).map_err(|e| SimError::Backend(e.to_string()))?;
            Gateway::new(TemplateCatalog::shipped(), Arc::new(backend))
        }
    };
    let gateway = gateway.with_temperature(config.agent.temperature);
    Ok(match spec.rate_limit_rpm {
        Some(rpm) => gateway.with_rate_limit(rpm),
        None => gateway,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StatusEdit {
    field: String,
    op: EditOp,
    amount: f64,
    cadence: Cadence,
    applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupState {
    id: String,
    members: Vec<usize>,
    filter: FilterMode,
    injection_per_day: u32,
    edits: Vec<StatusEdit>,
    econ: EconomyState<f64>,
}

/// Where a run is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProgress {
    pub tick: u64,
    pub total_ticks: u64,
    pub sim_time: NaiveDateTime,
    pub day: u32,
    pub month: u32,
    pub phase: String,
    pub started: bool,
    pub finished: bool,
}

/// Everything that changes while a run advances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub name: String,
    pub seed: u64,
    pub tick: u64,
    pub started: bool,
    pub agents: Vec<Agent>,
    pub bus: MessageBus<SocialMessage>,
    groups: Vec<GroupState>,
    pub records: Recorder,
}

/// Entry of `population.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEntry {
    pub agent_id: AgentId,
    pub group: String,
    pub profile: crate::agent::profile::AgentProfile,
    pub hourly_wage: f64,
    pub friends: Vec<AgentId>,
}

pub struct Simulation {
    config: ExperimentConfig,
    gateway: Gateway,
    geo: GeoIndex,
    place_catalog: Vec<String>,
    schedule: GlobalSchedule,
    clock: SimClock,
    total_ticks: u64,
    needs: NeedsConfig,
    agents: Vec<Agent>,
    groups: Vec<GroupState>,
    group_of: Vec<usize>,
    bus: MessageBus<SocialMessage>,
    surveys: Vec<(SurveyInstrument, Vec<When>, Option<String>)>,
    recorder: Recorder,
    started: bool,
    ended: bool,
}

fn fmt_time(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M").to_string()
}

impl Simulation {
    /// Builds a run with the gateway its config describes.
    pub fn build(config: ExperimentConfig) -> Result<Self, SimError> {
        let gateway = build_gateway(&config)?;
        Self::with_gateway(config, gateway)
    }

    pub fn with_gateway(config: ExperimentConfig, gateway: Gateway) -> Result<Self, SimError> {
        config.validate()?;
        let seed = config.seed;
        let residents = Self::residents(&config)?;
        let geo = match &config.pois {
            Some(p) => GeoIndex::load(&config.resolve(p)).map_err(|e| SimError::Places(e.to_string()))?,
            None => GeoIndex::default(),
        };
        let mut place_catalog: Vec<String> = geo.categories().into_iter().collect();
        for extra in [HOME_CATEGORY, WORKPLACE_CATEGORY] {
            if !place_catalog.iter().any(|c| c == extra) {
                place_catalog.push(extra.to_string());
            }
        }

        let mut schedule = GlobalSchedule::new(GlobalContext::default());
        let entries = config
            .schedule
            .iter()
            .map(|s| {
                (s.day, GlobalContext { weather: s.weather.clone(), temperature: s.temperature, event_prompt: s.event.clone(), phase_label: s.phase.clone() })
            })
            .collect();
        schedule.set(entries, config.horizon.days.unwrap_or(u32::MAX)).map_err(|e| ConfigError::new(e.to_string()))?;

        let (clock, total_ticks) = match (config.horizon.days, config.horizon.months) {
            (_, Some(m)) => (SimClock::new(config.horizon.start, TickLength::Month), m as u64),
            (Some(d), None) => {
                let c = SimClock::new(config.horizon.start, TickLength::Minutes(config.horizon.tick_minutes));
                let n = c.ticks_for_days(d);
                (c, n)
            }
            (None, None) => unreachable!("validated"),
        };

        let allow_debt = config.economy.as_ref().is_some_and(|e| e.allow_debt);
        let mut place_rng = derived_rng(seed, "workplace", 0, 0);
        let mut agents: Vec<Agent> = residents
            .into_iter()
            .map(|r| {
                let workplace = jitter(r.home, config.population.workplace_radius_m, &mut place_rng);
                let mut status = AgentStatus::new(r.home, workplace, r.profile.occupation.clone(), r.hourly_wage, config.population.initial_savings);
                status.allow_debt = allow_debt;
                Agent::new(r.profile, status)
            })
            .collect();

        let econ = match &config.economy {
            Some(e) => {
                let brackets = match &e.brackets {
                    Some(p) => BracketSchedule::load(&config.resolve(p)).map_err(|err| SimError::Population(format!("tax brackets: {err}")))?,
                    None => BracketSchedule::us_2018_monthly(),
                };
                EconomyState::new(brackets, e.price, e.interest_rate, e.hours_per_month)
            }
            None => EconomyState::default(),
        };

        // groups: explicit members first, then `size` agents in id order
        let n = agents.len();
        let mut group_of: Vec<Option<usize>> = vec![None; n];
        let mut groups = Vec::new();
        for (gi, g) in config.groups.iter().enumerate() {
            for &m in &g.members {
                let slot = group_of.get_mut(m as usize).ok_or(SimError::UnknownAgent(m))?;
                *slot = Some(gi);
            }
            groups.push(GroupState {
                id: g.id.clone(),
                members: g.members.iter().map(|&m| m as usize).collect(),
                filter: FilterMode::Control,
                injection_per_day: 0,
                edits: Vec::new(),
                econ: econ.clone(),
            });
        }
        let mut cursor = 0;
        for (gi, g) in config.groups.iter().enumerate() {
            let Some(size) = g.size else { continue };
            let mut taken = 0;
            while taken < size {
                if cursor >= n {
                    return Err(SimError::Population(format!("not enough agents to fill group `{}`", g.id)));
                }
                if group_of[cursor].is_none() {
                    group_of[cursor] = Some(gi);
                    groups[gi].members.push(cursor);
                    taken += 1;
                }
                cursor += 1;
            }
        }
        let leftovers: Vec<usize> = (0..n).filter(|&i| group_of[i].is_none()).collect();
        if !leftovers.is_empty() {
            let gi = groups.len();
            let id = if config.groups.is_empty() { "all" } else { UNGROUPED };
            for &i in &leftovers {
                group_of[i] = Some(gi);
            }
            groups.push(GroupState { id: id.into(), members: leftovers, filter: FilterMode::Control, injection_per_day: 0, edits: Vec::new(), econ: econ.clone() });
        }
        let group_of: Vec<usize> = group_of.into_iter().map(|g| g.expect("every agent grouped")).collect();
        for g in &mut groups {
            g.members.sort_unstable();
        }
        for (i, a) in agents.iter_mut().enumerate() {
            a.group = groups[group_of[i]].id.clone();
        }

        if let Some(net) = &config.network {
            let mut rng = derived_rng(seed, "network", 0, 0);
            let pools: Vec<Vec<usize>> = if net.within_groups { groups.iter().map(|g| g.members.clone()).collect() } else { vec![(0..n).collect()] };
            for pool in pools {
                if pool.len() < 2 {
                    continue;
                }
                let p = (net.mean_degree / (pool.len() - 1) as f64).clamp(0.0, 1.0);
                for (x, &i) in pool.iter().enumerate() {
                    for &j in &pool[x + 1..] {
                        if rng.random_bool(p) {
                            let (ni, nj) = (agents[i].profile.name.clone(), agents[j].profile.name.clone());
                            agents[i].status.friends.push(Friend { agent_id: j as AgentId, name: nj, strength: net.initial_strength });
                            agents[j].status.friends.push(Friend { agent_id: i as AgentId, name: ni, strength: net.initial_strength });
                        }
                    }
                }
            }
        }

        if let Some(topic) = &config.topic {
            let mut rng = derived_rng(seed, "attitudes", 0, 0);
            for g in &groups {
                let mut order = g.members.clone();
                order.shuffle(&mut rng);
                for (k, &i) in order.iter().enumerate() {
                    agents[i].attitudes.insert(topic.name.clone(), topic.initial[k % topic.initial.len()]);
                }
            }
        }

        let mut surveys = Vec::new();
        for ins in &config.instruments {
            if let InstrumentSpec::Survey { survey, at, group } = ins {
                let inst = SurveyInstrument::resolve(survey, config.topic.as_ref().map(|t| t.name.as_str()), &config.base_dir)?;
                surveys.push((inst, at.clone(), group.clone()));
            }
        }

        let mut sim = Self {
            needs: config.needs.unwrap_or_default(),
            config,
            gateway,
            geo,
            place_catalog,
            schedule,
            clock,
            total_ticks,
            agents,
            groups,
            group_of,
            bus: MessageBus::new(),
            surveys,
            recorder: Recorder::default(),
            started: false,
            ended: false,
        };
        let configured: Vec<(String, Intervention)> =
            sim.config.groups.iter().flat_map(|g| g.interventions.iter().map(move |i| (g.id.clone(), i.clone()))).collect();
        for (gid, iv) in configured {
            sim.register_intervention(&gid, iv)?;
        }
        Ok(sim)
    }

    fn residents(config: &ExperimentConfig) -> Result<Vec<SampledResident>, SimError> {
        let p = &config.population;
        let residents: Vec<SampledResident> = if let Some(file) = &p.file {
            let path = config.resolve(file);
            let text = fs::read_to_string(&path).map_err(|e| SimError::Population(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| SimError::Population(format!("{}: {e}", path.display())))?
        } else {
            let path = config.resolve(p.cbg_file.as_deref().expect("validated"));
            let cbgs = load_cbgs(&path).map_err(|e| SimError::Population(e.to_string()))?;
            let mut rng = derived_rng(config.seed, "population", 0, 0);
            sample_population(&cbgs, p.size.expect("validated"), &mut rng).map_err(|e| SimError::Population(e.to_string()))?
        };
        if residents.is_empty() {
            return Err(SimError::Population("the population is empty".into()));
        }
        for (i, r) in residents.iter().enumerate() {
            if r.profile.agent_id as usize != i {
                return Err(SimError::Population(format!("agent ids must be 0..n in order; entry {i} has id {}", r.profile.agent_id)));
            }
        }
        Ok(residents)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Result<&Agent, SimError> {
        self.agents.get(id as usize).ok_or(SimError::UnknownAgent(id))
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.id.clone()).collect()
    }

    pub fn group_members(&self, group: &str) -> Option<Vec<AgentId>> {
        self.groups.iter().find(|g| g.id == group).map(|g| g.members.iter().map(|&i| i as AgentId).collect())
    }

    pub fn is_finished(&self) -> bool {
        self.ended
    }

    pub fn progress(&self) -> RunProgress {
        let day = self.clock.sim_day();
        RunProgress {
            tick: self.clock.tick(),
            total_ticks: self.total_ticks,
            sim_time: self.clock.now(),
            day,
            month: self.clock.sim_month(),
            phase: if self.config.is_monthly() { String::new() } else { self.schedule.context_for_day(day).phase().to_string() },
            started: self.started,
            finished: self.ended,
        }
    }

    fn topic(&self) -> Option<&str> {
        self.config.topic.as_ref().map(|t| t.name.as_str())
    }

    /// Adds an intervention for `group` at the current barrier. Profile
    /// edits are refused once the first tick has run.
    pub fn apply_intervention(&mut self, group: &str, iv: Intervention) -> Result<(), SimError> {
        iv.check()?;
        if matches!(iv, Intervention::InformationControl { .. }) && self.topic().is_none() {
            return Err(SimError::Intervention(InterventionError::InvalidValue { field: "mode".into(), value: "no topic configured".into() }));
        }
        self.register_intervention(group, iv.clone())?;
        if let Some(g) = self.config.groups.iter_mut().find(|g| g.id == group) {
            g.interventions.push(iv.clone());
        }
        self.recorder.interventions.push(InterventionRow {
            tick: self.clock.tick(),
            group: group.to_string(),
            kind: iv.kind().to_string(),
            spec: serde_json::to_string(&iv).expect("intervention serializes"),
        });
        Ok(())
    }

    fn register_intervention(&mut self, group: &str, iv: Intervention) -> Result<(), SimError> {
        let gi = self.groups.iter().position(|g| g.id == group).ok_or_else(|| SimError::UnknownGroup(group.to_string()))?;
        match iv {
            Intervention::ParticipantConfiguration { overrides } => {
                for &i in &self.groups[gi].members.clone() {
                    configure_participant(&mut self.agents[i], &overrides, self.started)?;
                }
            }
            Intervention::StatusModification { field, op, amount, cadence } => {
                self.groups[gi].edits.push(StatusEdit { field, op, amount, cadence, applied: false });
            }
            Intervention::InformationControl { mode, injection_per_day } => {
                self.groups[gi].filter = mode;
                self.groups[gi].injection_per_day = injection_per_day;
            }
        }
        Ok(())
    }

    fn apply_edits(&mut self, day_start: bool, month_start: bool) {
        for g in &mut self.groups {
            for e in &mut g.edits {
                let due = match e.cadence {
                    Cadence::Once => !e.applied,
                    Cadence::Daily => day_start,
                    Cadence::Monthly => month_start,
                };
                if !due {
                    continue;
                }
                for &i in &g.members {
                    modify_status(&mut self.agents[i], &e.field, e.op, e.amount).expect("field checked when registered");
                }
                e.applied = true;
            }
        }
    }

    fn record_attitudes(&mut self, at: &str) {
        let Some(topic) = self.config.topic.as_ref().map(|t| t.name.clone()) else { return };
        for a in &self.agents {
            if let Some(&v) = a.attitudes.get(&topic) {
                self.recorder.attitudes.push(AttitudeRow { at: at.to_string(), agent_id: a.id(), group: a.group.clone(), topic: topic.clone(), attitude: v });
            }
        }
    }

    fn members_of(&self, group: Option<&str>) -> Vec<usize> {
        match group {
            Some(g) => self.groups.iter().find(|s| s.id == g).map(|s| s.members.clone()).unwrap_or_default(),
            None => (0..self.agents.len()).collect(),
        }
    }

    /// Fires every instrument scheduled at `when`.
    fn fire(&mut self, when: When, now: NaiveDateTime) {
        let topic = self.topic().map(str::to_string);
        let mut fired = Vec::new();
        for (inst, at, group) in &self.surveys {
            if at.contains(&when) {
                fired.push((inst.clone(), group.clone()));
            }
        }
        for (inst, group) in fired {
            let members = self.members_of(group.as_deref());
            let refs: Vec<&Agent> = members.iter().map(|&i| &self.agents[i]).collect();
            let label = format!("{}:{}", inst.survey_id, when.label());
            let (rows, checks) = run_survey(&inst, &label, &refs, &self.gateway, now, topic.as_deref());
            self.recorder.surveys.extend(rows);
            self.recorder.isolation.extend(checks);
        }
        let interviews: Vec<(Option<String>, usize, Vec<String>)> = self
            .config
            .instruments
            .iter()
            .filter_map(|ins| match ins {
                InstrumentSpec::Interview { at, group, count, questions } if *at == when => Some((group.clone(), *count, questions.clone())),
                _ => None,
            })
            .collect();
        for (k, (group, count, questions)) in interviews.into_iter().enumerate() {
            let members = self.members_of(group.as_deref());
            let mut rng = derived_rng(self.config.seed, "interview", k as u64, self.clock.tick());
            let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, members.len(), count.min(members.len())).into_iter().map(|x| members[x]).collect();
            chosen.sort_unstable();
            let label = format!("interview-{}", when.label());
            let results: Vec<(InterviewSession, IsolationCheck)> = chosen
                .par_iter()
                .map(|&i| run_interview(&self.agents[i], &self.gateway, &mut ScriptedQuestions::new(questions.clone()), now))
                .collect();
            for (s, c) in results {
                self.recorder.interviews.push((label.clone(), s));
                self.recorder.isolation.push(c);
            }
        }
    }

    /// Interviews one agent at the current barrier; the session is kept
    /// with the run's transcripts.
    pub fn interview(&mut self, agent_id: AgentId, channel: &mut dyn InterviewChannel, label: &str) -> Result<InterviewSession, SimError> {
        let agent = self.agents.get(agent_id as usize).ok_or(SimError::UnknownAgent(agent_id))?;
        let (session, check) = run_interview(agent, &self.gateway, channel, self.clock.now());
        self.recorder.interviews.push((label.to_string(), session.clone()));
        self.recorder.isolation.push(check);
        Ok(session)
    }

    fn begin(&mut self) {
        self.started = true;
        self.record_attitudes("start");
        self.fire(When::Start, self.clock.now());
    }

    /// Runs one tick. Returns false once the horizon has been reached.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.clock.tick() >= self.total_ticks {
            return Ok(false);
        }
        if !self.started {
            self.begin();
        }
        if self.config.is_monthly() {
            self.monthly_tick()?;
        } else {
            self.daily_tick()?;
        }
        self.clock.advance();
        Ok(true)
    }

    fn check_backend(&self, tick: u64, outputs: &[Vec<String>]) -> Result<(), SimError> {
        let active: Vec<&Vec<String>> = outputs.iter().filter(|f| !f.is_empty()).collect();
        let down = |f: &&Vec<String>| f.iter().any(|m| m.contains("backend unavailable"));
        if !active.is_empty() && active.len() == outputs.len() && active.iter().all(down) {
            return Err(SimError::Aborted { tick, reason: "the backend is unavailable for every agent".into() });
        }
        Ok(())
    }

    fn daily_tick(&mut self) -> Result<(), SimError> {
        let t = self.clock.tick();
        let now = self.clock.now();
        let day = self.clock.sim_day();
        let first_of_day = self.clock.is_first_tick_of_day(t);
        let month_start = t == 0 || (first_of_day && self.clock.time_at(t - 1).month() != now.month());
        self.apply_edits(first_of_day, month_start);
        let seed = self.config.seed;
        let context = self.schedule.context_for_day(day).clone();
        let phase = context.phase().to_string();
        let topic = self.config.topic.as_ref().map(|t| t.name.clone());

        // inbox: route what is due, then let recipients react
        let mut inboxes: Vec<Vec<SocialMessage>> = vec![Vec::new(); self.agents.len()];
        for msg in self.bus.take_due(t) {
            let r = msg.recipient as usize;
            let Some(agent) = self.agents.get(r) else { continue };
            let g = &self.groups[self.group_of[r]];
            let attitude = topic.as_ref().and_then(|tp| agent.attitudes.get(tp).copied());
            let decision = route(g.filter, msg.stance, attitude);
            self.recorder.deliveries.push(DeliveryRow {
                tick: t,
                sender: msg.sender,
                recipient: msg.recipient,
                group: g.id.clone(),
                filter: g.filter.to_string(),
                stance: msg.stance,
                recipient_attitude: attitude,
                injected: msg.injected,
                delivered: decision.delivers(),
                reason: match &decision {
                    super::route::RouteDecision::Deliver => String::new(),
                    super::route::RouteDecision::Drop(r) => r.clone(),
                },
            });
            if decision.delivers() {
                inboxes[r].push(msg);
            }
        }
        let world = WorldView {
            gateway: &self.gateway,
            geo: &self.geo,
            place_catalog: &self.place_catalog,
            context: &context,
            now,
            tick: t,
            tick_minutes: self.clock.tick_minutes(),
            needs: &self.needs,
            mobility: &self.config.mobility,
            max_plan_steps: self.config.agent.max_plan_steps,
            topic: topic.as_deref(),
        };
        let inbox_out: Vec<InboxOutput> = self
            .agents
            .par_iter_mut()
            .zip(inboxes.par_iter())
            .map(|(a, msgs)| if msgs.is_empty() { InboxOutput::default() } else { a.handle_inbox(msgs, &world) })
            .collect();
        for (i, out) in inbox_out.into_iter().enumerate() {
            for (sender, recipient, delta) in out.relationship_changes {
                if let Some(a) = self.agents.get_mut(recipient as usize) {
                    a.status.adjust_relationship(sender, delta);
                }
                if let Some(a) = self.agents.get_mut(sender as usize) {
                    a.status.adjust_relationship(recipient, delta);
                }
            }
            for reply in out.replies {
                self.bus.send(t, reply);
            }
            for f in out.failures {
                self.recorder.failures.push(FailureRow { tick: t, agent_id: Some(i as AgentId), detail: f });
            }
        }

        // act
        let outputs: Vec<TickOutput> = self
            .agents
            .par_iter_mut()
            .map(|a| {
                let mut rng = derived_rng(seed, "agent", a.id() as u64, t);
                a.tick(&world, &mut rng)
            })
            .collect();
        let failures: Vec<Vec<String>> = outputs.iter().map(|o| o.failures.clone()).collect();
        for (i, out) in outputs.into_iter().enumerate() {
            let a = &self.agents[i];
            for act in out.actions {
                if let Some(poi) = &act.visit {
                    self.recorder.visits.push(VisitRow { day, tick: t, agent_id: a.id(), group: a.group.clone(), poi_id: poi.clone(), phase: phase.clone() });
                }
                self.recorder.log.push(LogRow {
                    tick: t,
                    sim_time: fmt_time(now),
                    agent_id: a.id(),
                    group: a.group.clone(),
                    phase: phase.clone(),
                    need: a.needs.current.as_str().to_string(),
                    action_type: act.action_type,
                    intention: act.intention,
                    location: a.status.location.label(),
                    emotion_word: a.emotion.word.to_string(),
                });
            }
            for m in out.outgoing {
                self.bus.send(t, m);
            }
            for f in out.failures {
                self.recorder.failures.push(FailureRow { tick: t, agent_id: Some(i as AgentId), detail: f });
            }
        }
        self.check_backend(t, &failures)?;

        if first_of_day {
            self.inject(t, now);
        }

        let day_ends = t + 1 == self.total_ticks || self.clock.is_first_tick_of_day(t + 1);
        if day_ends {
            let end = self.clock.time_at(t + 1);
            let gateway = &self.gateway;
            let errs: Vec<Option<GatewayError>> = self.agents.par_iter_mut().map(|a| a.update_thought(gateway, end).err()).collect();
            for (i, e) in errs.into_iter().enumerate() {
                if let Some(e) = e {
                    self.recorder.failures.push(FailureRow { tick: t, agent_id: Some(i as AgentId), detail: format!("thought: {e}") });
                }
            }
            self.record_attitudes(&format!("day:{day}"));
            self.fire(When::Day(day), end);
        }
        Ok(())
    }

    /// Persuasive messages for members of filtered groups, delivered on the
    /// next tick. Members at the midpoint belong to neither side and get none.
    fn inject(&mut self, t: u64, now: NaiveDateTime) {
        let Some(topic) = self.topic().map(str::to_string) else { return };
        let mut out = Vec::new();
        for g in &self.groups {
            if g.filter == FilterMode::Control || g.injection_per_day == 0 {
                continue;
            }
            for &i in &g.members {
                let a = &self.agents[i];
                let Some(&att) = a.attitudes.get(&topic) else { continue };
                let side = (att as i64 - crate::agent::mind::ATTITUDE_MIDPOINT).signum();
                if side == 0 {
                    continue;
                }
                let supports = match g.filter {
                    FilterMode::Homophilic => side > 0,
                    _ => side < 0,
                };
                for _ in 0..g.injection_per_day {
                    match demagogue_message(&self.gateway, supports) {
                        Ok(text) => out.push(SocialMessage {
                            sender: EXTERNAL_SENDER,
                            sender_name: "a political commentator".into(),
                            recipient: a.id(),
                            mode: Mode::Online,
                            text,
                            stance: Some(if supports { 10 } else { 0 }),
                            sim_time: now,
                            tick: t,
                            depth: 0,
                            injected: true,
                        }),
                        Err(e) => self.recorder.failures.push(FailureRow { tick: t, agent_id: Some(a.id()), detail: format!("injection: {e}") }),
                    }
                }
            }
        }
        for m in out {
            self.bus.send(t, m);
        }
    }

    fn monthly_tick(&mut self) -> Result<(), SimError> {
        let t = self.clock.tick();
        let now = self.clock.now();
        let month = t as u32 + 1;
        self.apply_edits(false, true);
        let (price, rate) = self.config.economy.as_ref().map(|e| (e.price, e.interest_rate)).unwrap_or((1.0, 0.0));
        let gateway = &self.gateway;
        let decisions: Vec<Result<MonthlyDecision, GatewayError>> = self
            .agents
            .par_iter()
            .map(|a| {
                let s = &a.status;
                let b = monthly_bindings(a.profile.age, &a.profile.city, &s.job, s.hourly_wage, s.last_consumption, s.last_tax_paid, s.monthly_transfer, price, s.savings, rate);
                monthly_decision(gateway, b)
            })
            .collect();
        let mut failures = Vec::with_capacity(decisions.len());
        for (i, d) in decisions.into_iter().enumerate() {
            match d {
                Ok(d) => {
                    self.agents[i].last_decision = d;
                    failures.push(Vec::new());
                }
                Err(e) => {
                    let msg = format!("consumption: {e}");
                    self.recorder.failures.push(FailureRow { tick: t, agent_id: Some(i as AgentId), detail: msg.clone() });
                    failures.push(vec![msg]);
                }
            }
        }
        self.check_backend(t, &failures)?;

        for g in &mut self.groups {
            let mut accounts: Vec<Account<f64>> = g
                .members
                .iter()
                .map(|&i| {
                    let s = &self.agents[i].status;
                    Account { savings: s.savings, hourly_wage: s.hourly_wage, transfer: s.monthly_transfer, allow_debt: s.allow_debt }
                })
                .collect();
            let decs: Vec<MonthlyDecision> = g.members.iter().map(|&i| self.agents[i].last_decision).collect();
            let settlement = settle_month(&mut accounts, &decs, &mut g.econ);
            for ((&i, acc), (flow, d)) in g.members.iter().zip(&accounts).zip(settlement.flows.iter().zip(&decs)) {
                let a = &mut self.agents[i];
                let s = &mut a.status;
                s.savings = acc.savings;
                s.last_income = flow.income;
                s.last_tax_paid = flow.tax;
                s.last_consumption = flow.consumption;
                s.last_transfer = flow.transfer;
                if flow.transfer > 0.0 {
                    s.transfers_received += 1;
                }
                let mut text = format!("Month {month}: earned {:.2}, paid {:.2} in tax, received {:.2} back", flow.income, flow.tax, flow.redistribution);
                if flow.transfer > 0.0 {
                    text.push_str(&format!(" and an unconditional payment of {:.2}", flow.transfer));
                }
                text.push_str(&format!("; spent {:.2}; savings now {:.2}.", flow.consumption, s.savings));
                a.memory.append(now, MemoryKind::Behavior, text);
                self.recorder.agent_economy.push(AgentMonthRow {
                    month,
                    agent_id: a.id(),
                    group: g.id.clone(),
                    work: d.work,
                    consumption_share: d.consumption,
                    income: flow.income,
                    tax: flow.tax,
                    redistribution: flow.redistribution,
                    transfer: flow.transfer,
                    consumption: flow.consumption,
                    interest: flow.interest,
                    savings: acc.savings,
                });
            }
            let k = g.members.len().max(1) as f64;
            self.recorder.economy.push(EconomySnapshot {
                month,
                group: g.id.clone(),
                total_tax: settlement.total_tax,
                per_capita_redistribution: settlement.per_capita_redistribution,
                mean_consumption: settlement.flows.iter().map(|f| f.consumption).sum::<f64>() / k,
                mean_savings: accounts.iter().map(|a| a.savings).sum::<f64>() / k,
                price,
            });
        }
        let savings: Vec<f64> = self.agents.iter().map(|a| a.status.savings).collect();
        for (a, level) in self.agents.iter_mut().zip(consumption_levels(&savings)) {
            a.status.consumption_level = level.to_string();
        }
        for a in &self.agents {
            let d = a.last_decision;
            self.recorder.log.push(LogRow {
                tick: t,
                sim_time: fmt_time(now),
                agent_id: a.id(),
                group: a.group.clone(),
                phase: String::new(),
                need: a.needs.current.as_str().to_string(),
                action_type: "economy".into(),
                intention: format!("work {:.2}, consume {:.2}", d.work, d.consumption),
                location: a.status.location.label(),
                emotion_word: a.emotion.word.to_string(),
            });
        }
        self.fire(When::Month(month), now);
        Ok(())
    }

    /// Fires end-of-run instruments. Idempotent.
    pub fn finish(&mut self) {
        if self.ended {
            return;
        }
        if !self.started {
            self.begin();
        }
        self.record_attitudes("end");
        self.fire(When::End, self.clock.now());
        self.ended = true;
    }

    /// Steps to the horizon and finishes.
    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while self.step()? {}
        self.finish();
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            name: self.config.name.clone(),
            seed: self.config.seed,
            tick: self.clock.tick(),
            started: self.started,
            agents: self.agents.clone(),
            bus: self.bus.clone(),
            groups: self.groups.clone(),
            records: self.recorder.clone(),
        }
    }

    /// Continues from a checkpoint taken by a run of the same config.
    pub fn restore(&mut self, cp: Checkpoint) -> Result<(), SimError> {
        if cp.name != self.config.name || cp.seed != self.config.seed || cp.agents.len() != self.agents.len() {
            return Err(SimError::Checkpoint(format!("run `{}` seed {}", cp.name, cp.seed)));
        }
        while self.clock.tick() < cp.tick {
            self.clock.advance();
        }
        self.started = cp.started;
        self.agents = cp.agents;
        self.bus = cp.bus;
        self.groups = cp.groups;
        self.recorder = cp.records;
        Ok(())
    }

    pub fn write_checkpoint(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(|e| ArtifactError::new(dir, e))?;
        let p = dir.join(CHECKPOINT);
        let text = serde_json::to_string(&self.checkpoint()).map_err(|e| ArtifactError::new(&p, e))?;
        fs::write(&p, text).map_err(|e| ArtifactError::new(&p, e))?;
        Ok(())
    }

    pub fn population(&self) -> Vec<PopulationEntry> {
        self.agents
            .iter()
            .map(|a| PopulationEntry {
                agent_id: a.id(),
                group: a.group.clone(),
                profile: a.profile.clone(),
                hourly_wage: a.status.hourly_wage,
                friends: a.status.friends.iter().map(|f| f.agent_id).collect(),
            })
            .collect()
    }

    /// Writes the run directory: config snapshot, tables, transcripts,
    /// final agent state, gateway transcript and the metric report.
    pub fn write_artifacts(&self, dir: &Path) -> Result<report::Report, SimError> {
        fs::create_dir_all(dir).map_err(|e| ArtifactError::new(dir, e))?;
        let write = |name: &str, text: String| -> Result<(), SimError> {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| SimError::Artifact(ArtifactError::new(&p, e)))
        };
        write(CONFIG_SNAPSHOT, self.config.to_toml())?;
        self.recorder.write_all(dir)?;
        write(POPULATION, serde_json::to_string_pretty(&self.population()).expect("population serializes"))?;
        write(FINAL_STATE, serde_json::to_string(&self.agents).expect("agents serialize"))?;
        write(GATEWAY_STATS, serde_json::to_string_pretty(&self.gateway.stats()).expect("stats serialize"))?;
        let tp = dir.join(TRANSCRIPT);
        self.gateway.write_transcript(&tp).map_err(|e| ArtifactError::new(&tp, e))?;
        if self.ended {
            let _ = fs::remove_file(dir.join(CHECKPOINT));
        }
        if let Some(p) = &self.config.real_series {
            let src = self.config.resolve(p);
            let dst = dir.join(report::REAL_SERIES);
            fs::copy(&src, &dst).map_err(|e| ArtifactError::new(&src, e))?;
        }
        let report = report::build(dir)?;
        report::write(dir, &report)?;
        Ok(report)
    }
}

/// Runs a config to completion into `out`. On a runtime failure the partial
/// artifacts and a checkpoint are written before the error is returned.
pub fn run_experiment(config: ExperimentConfig, out: &Path) -> Result<report::Report, SimError> {
    let sim = Simulation::build(config)?;
    run_simulation(sim, out)
}

pub fn run_simulation(mut sim: Simulation, out: &Path) -> Result<report::Report, SimError> {
    if let Err(e) = sim.run_to_end() {
        sim.write_checkpoint(out)?;
        let _ = sim.write_artifacts(out);
        return Err(e);
    }
    sim.write_artifacts(out)
}

/// Loads the final agent states of a finished run.
pub fn load_final_state(dir: &Path) -> Result<BTreeMap<AgentId, Agent>, SimError> {
    let p = dir.join(FINAL_STATE);
    let text = fs::read_to_string(&p).map_err(|e| ArtifactError::new(&p, e))?;
    let agents: Vec<Agent> = serde_json::from_str(&text).map_err(|e| ArtifactError::new(&p, e))?;
    Ok(agents.into_iter().map(|a| (a.id(), a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::ExperimentConfig;
    use crate::gateway::{ScriptedBackend, ScriptedRule};

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn tiny(dir: &Path, extra: &str) -> ExperimentConfig {
        write(dir, "cbg.csv", "cbg_id,population,lat,lon,city,gender:female,gender:male\nA,10,29.7,-95.3,Town,0.5,0.5\n");
        let text = format!(
            "name = \"tiny\"\nseed = 3\n[horizon]\ndays = 1\ntick_minutes = 240\n[population]\nsize = 6\ncbg_file = \"cbg.csv\"\n{extra}"
        );
        ExperimentConfig::from_toml(&text, dir).unwrap()
    }

    fn gw() -> Gateway {
        Gateway::with_backend(ScriptedBackend::new(vec![ScriptedRule::literal(None, "{}")], 0).unwrap())
    }

    #[test]
    fn groups_partition_and_profile_edits_lock_after_start() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), "[[groups]]\nid = \"a\"\nsize = 2\n[[groups]]\nid = \"b\"\nmembers = [0]\n");
        let mut sim = Simulation::with_gateway(cfg, gw()).unwrap();
        assert_eq!(sim.group_members("b").unwrap(), vec![0]);
        assert_eq!(sim.group_members("a").unwrap(), vec![1, 2]);
        assert_eq!(sim.group_members(UNGROUPED).unwrap(), vec![3, 4, 5]);
        let edit = Intervention::ParticipantConfiguration { overrides: [("age".to_string(), "40".to_string())].into() };
        sim.apply_intervention("a", edit.clone()).unwrap();
        assert_eq!(sim.agent(1).unwrap().profile.age, 40);
        sim.step().unwrap();
        assert!(matches!(sim.apply_intervention("a", edit), Err(SimError::Intervention(InterventionError::ProfileEditAfterStart))));
    }

    #[test]
    fn days_run_to_horizon_even_with_useless_answers() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), "");
        let mut sim = Simulation::with_gateway(cfg, gw()).unwrap();
        sim.run_to_end().unwrap();
        assert_eq!(sim.progress().tick, 6);
        assert!(sim.is_finished());
        assert!(!sim.recorder().log.is_empty());
    }
}
