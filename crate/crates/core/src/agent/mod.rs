//! The silicon participant and its perceive–need–plan–act–reflect loop.

pub mod memory;
pub mod mind;
pub mod needs;
pub mod plan;
pub mod profile;

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behaviors::economy::MonthlyDecision;
use crate::behaviors::mobility::{determine_radius, gravity_select_widening, select_place_type, MobilityConfig};
use crate::behaviors::social::{
    compose_message, discussion_constraint, judge_exchange, select_social_target, SocialMessage, MAX_REPLY_DEPTH,
};
use crate::environment::context::GlobalContext;
use crate::environment::geo::GeoIndex;
use crate::gateway::{Bindings, CompletionRequest, FieldSpec, Gateway, GatewayError, ResponseContract};

use memory::{MemoryKind, MemoryStream};
use mind::{EmotionState, Thought, EMOTION_DIMENSIONS, MAX_ATTITUDE};
use needs::{evaluate_needs, preemption_target, select_need, Need, NeedsConfig, NeedsState};
use plan::{Plan, StepKind, DEFAULT_MAX_PLAN_STEPS};
use profile::{AgentId, AgentProfile, AgentStatus, Location};

/// Place types that are not counted as visits.
pub const HOME_CATEGORY: &str = "home";
pub const WORKPLACE_CATEGORY: &str = "workplace";

/// How many past messages with a peer are shown in social prompts.
const CHAT_HISTORY_LIMIT: usize = 6;

/// Read-only view of the world an agent acts in during one tick.
#[derive(Clone, Copy)]
pub struct WorldView<'a> {
    pub gateway: &'a Gateway,
    pub geo: &'a GeoIndex,
    /// Place types offered to the place-type prompt.
    pub place_catalog: &'a [String],
    pub context: &'a GlobalContext,
    pub now: NaiveDateTime,
    pub tick: u64,
    pub tick_minutes: u32,
    pub needs: &'a NeedsConfig,
    pub mobility: &'a MobilityConfig,
    pub max_plan_steps: usize,
    /// Discussion topic, when the experiment configures one.
    pub topic: Option<&'a str>,
}

/// One logged action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action_type: String,
    pub intention: String,
    pub detail: String,
    /// POI id of a completed visit (home and workplace excluded).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visit: Option<String>,
}

impl ActionRecord {
    fn new(action_type: &str, intention: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { action_type: action_type.into(), intention: intention.into(), detail: detail.into(), visit: None }
    }
}

/// Everything an agent produced in one tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TickOutput {
    pub actions: Vec<ActionRecord>,
    pub outgoing: Vec<SocialMessage>,
    /// Gateway failures that were absorbed by a fallback.
    pub failures: Vec<String>,
}

/// Result of handling delivered messages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InboxOutput {
    pub replies: Vec<SocialMessage>,
    /// (sender, recipient, delta) relationship changes, applied to both sides.
    pub relationship_changes: Vec<(AgentId, AgentId, i32)>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub profile: AgentProfile,
    pub status: AgentStatus,
    pub emotion: EmotionState,
    /// topic -> rating 0..=10
    pub attitudes: BTreeMap<String, u8>,
    pub thought: Thought,
    pub memory: MemoryStream,
    pub needs: NeedsState,
    pub plan: Option<Plan>,
    /// The current step keeps the agent occupied until this time.
    pub busy_until: Option<NaiveDateTime>,
    pub group: String,
    /// Last month's decision, reused when the model's answer is unusable.
    pub last_decision: MonthlyDecision,
}

fn fmt_sat(v: f64) -> String {
    format!("{v:.2}")
}

impl Agent {
    pub fn new(profile: AgentProfile, status: AgentStatus) -> Self {
        Self {
            profile,
            status,
            emotion: EmotionState::default(),
            attitudes: BTreeMap::new(),
            thought: Thought::default(),
            memory: MemoryStream::new(),
            needs: NeedsState::default(),
            plan: None,
            busy_until: None,
            group: String::new(),
            last_decision: MonthlyDecision::default(),
        }
    }

    pub fn id(&self) -> AgentId {
        self.profile.agent_id
    }

    /// Hash of memory and status, used to prove read-only access.
    pub fn state_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.memory.content_hash().as_bytes());
        h.update(serde_json::to_vec(&self.status).expect("status serializes"));
        hex::encode(h.finalize())
    }

    /// True when every bounded quantity is within its range.
    pub fn in_bounds(&self) -> bool {
        self.emotion.intensities.iter().all(|&v| v <= 10)
            && self.needs.in_bounds()
            && self.attitudes.values().all(|&a| a as i64 <= MAX_ATTITUDE)
            && self.status.friends.iter().all(|f| f.strength <= 100)
    }

    fn emotion_bindings(&self, incident: &str) -> Bindings {
        let mut b = Bindings::new();
        b.insert("agent profile description".into(), self.profile.description());
        for d in EMOTION_DIMENSIONS {
            b.insert(d.into(), self.emotion.get(d).unwrap_or_default().to_string());
        }
        b.insert("thought".into(), self.thought.or_placeholder().to_string());
        let incident = if incident.trim().is_empty() { "nothing notable" } else { incident };
        b.insert("incident".into(), incident.to_string());
        b
    }

    /// Re-appraises emotions in light of `incident`; the incident and the
    /// resulting feeling are remembered. On failure the state is unchanged.
    pub fn update_emotion(&mut self, gateway: &Gateway, incident: &str, now: NaiveDateTime) -> Result<(), GatewayError> {
        if !incident.trim().is_empty() {
            self.memory.append(now, MemoryKind::Incident, incident);
        }
        self.reappraise(gateway, incident, now)
    }

    fn reappraise(&mut self, gateway: &Gateway, incident: &str, now: NaiveDateTime) -> Result<(), GatewayError> {
        let rec = gateway.cached_complete(&CompletionRequest::new("emotion", self.emotion_bindings(incident)))?;
        let state = EmotionState::from_record(&rec).ok_or_else(|| GatewayError::ContractViolation {
            template_id: "emotion".into(),
            detail: "unusable emotion record".into(),
            raw: rec.text().to_string(),
        })?;
        self.emotion = state;
        let text = if self.emotion.conclusion.is_empty() {
            format!("Feeling {}", self.emotion.word)
        } else {
            format!("Feeling {}: {}", self.emotion.word, self.emotion.conclusion)
        };
        self.memory.append(now, MemoryKind::Reflection, text);
        Ok(())
    }

    /// Re-rates `topic`. Agents without a configured topic are not asked.
    pub fn update_attitude(&mut self, gateway: &Gateway, topic: &str, related_incidents: &str) -> Result<Option<u8>, GatewayError> {
        let Some(&prev) = self.attitudes.get(topic) else {
            return Ok(None);
        };
        let mut b = Bindings::new();
        b.insert("agent profile description".into(), self.profile.description());
        b.insert("topic".into(), topic.to_string());
        b.insert("related incidents".into(), if related_incidents.is_empty() { "None".into() } else { related_incidents.to_string() });
        b.insert("previous attitude".into(), prev.to_string());
        let rec = gateway.cached_complete(&CompletionRequest::new("attitude", b))?;
        let v = rec.i64("attitude").unwrap_or(prev as i64).clamp(0, MAX_ATTITUDE) as u8;
        self.attitudes.insert(topic.to_string(), v);
        Ok(Some(v))
    }

    /// End-of-day reflection over the last day's memories.
    pub fn update_thought(&mut self, gateway: &Gateway, now: NaiveDateTime) -> Result<(), GatewayError> {
        let recent = self.memory.recent(now, Duration::hours(memory::DIGEST_WINDOW_HOURS)).count();
        let incidents = if recent == 0 { "no notable incidents".to_string() } else { self.memory.digest(now) };
        let mut b = Bindings::new();
        b.insert("agent profile description".into(), self.profile.description());
        b.insert("incidents".into(), incidents);
        let result = gateway.cached_complete(&CompletionRequest::new("thought", b));
        if let Ok(rec) = &result {
            let text = rec.str("thought").unwrap_or_default().trim().to_string();
            self.memory.append(now, MemoryKind::Reflection, format!("Thought: {text}"));
            self.thought = Thought { text, updated_at: Some(now) };
        }
        self.memory.refresh_digest(now);
        result.map(|_| ())
    }

    /// Contract for the satisfaction prompt: the plan's need, or safety and
    /// social for a free-time plan.
    pub fn satisfaction_contract(need: Need) -> ResponseContract {
        let fields = match need.satisfaction_field() {
            Some(f) => vec![FieldSpec::number(f, 0.0, 1.0)],
            None => vec![FieldSpec::number("safety satisfaction", 0.0, 1.0), FieldSpec::number("social satisfaction", 0.0, 1.0)],
        };
        ResponseContract::json(fields)
    }

    /// Scores how well the finished plan served its need.
    pub fn update_satisfaction(&mut self, gateway: &Gateway, plan: &Plan, cfg: &NeedsConfig) -> Result<(), GatewayError> {
        let mut b = Bindings::new();
        b.insert("current need".into(), plan.target_need.as_str().into());
        b.insert("plan target".into(), plan.target.clone());
        b.insert("evaluation results".into(), plan.evaluations());
        b.insert("hunger satisfaction".into(), fmt_sat(self.needs.hunger));
        b.insert("energy satisfaction".into(), fmt_sat(self.needs.energy));
        b.insert("safety satisfaction".into(), fmt_sat(self.needs.safety));
        b.insert("social satisfaction".into(), fmt_sat(self.needs.social));
        let req = CompletionRequest::new("satisfaction", b).with_contract(Self::satisfaction_contract(plan.target_need));
        let rec = gateway.cached_complete(&req)?;
        match plan.target_need.satisfaction_field() {
            Some(f) => self.needs.set(plan.target_need, rec.f64(f).unwrap_or_default()),
            None => {
                self.needs.set(Need::Safe, rec.f64("safety satisfaction").unwrap_or(self.needs.safety));
                self.needs.set(Need::Social, rec.f64("social satisfaction").unwrap_or(self.needs.social));
            }
        }
        self.needs.current = select_need(&self.needs, &cfg.thresholds);
        Ok(())
    }

    fn plan_contract(gateway: &Gateway, max_steps: usize) -> ResponseContract {
        let mut c = gateway.catalog().get("plan").map(|t| t.contract.clone()).unwrap_or_else(|_| ResponseContract::json(Vec::new()));
        if let Some(steps) = c.field_mut("steps") {
            steps.max_items = Some(max_steps);
        }
        c
    }

    /// Plans for `need`. Falls back to a single resting step when the
    /// planner's answer is unusable; the error is returned for logging.
    pub fn generate_plan(&mut self, world: &WorldView<'_>, need: Need) -> Option<GatewayError> {
        let max_steps = if world.max_plan_steps == 0 { DEFAULT_MAX_PLAN_STEPS } else { world.max_plan_steps };
        let mut b = Bindings::new();
        b.insert("weather".into(), world.context.weather.clone());
        b.insert("temperature".into(), format!("{}", world.context.temperature));
        b.insert("other information".into(), world.context.other_information());
        b.insert("selected option".into(), need.option_text().into());
        b.insert("current location".into(), self.status.location.describe());
        b.insert("current time".into(), world.now.format("%Y-%m-%d %H:%M").to_string());
        b.insert("consumption level".into(), self.status.consumption_level.clone());
        b.insert("occupation".into(), self.profile.occupation.clone());
        b.insert("age".into(), self.profile.age.to_string());
        b.insert("emotion types".into(), self.emotion.word.to_string());
        b.insert("thought".into(), self.thought.or_placeholder().to_string());
        b.insert("max plan steps".into(), max_steps.to_string());
        let req = CompletionRequest::new("plan", b).with_contract(Self::plan_contract(world.gateway, max_steps));
        let (plan, err) = match world.gateway.cached_complete(&req) {
            Ok(rec) => match Plan::from_record(need, &rec, max_steps) {
                Ok(p) => (p, None),
                Err(detail) => (
                    Plan::fallback(need),
                    Some(GatewayError::ContractViolation { template_id: "plan".into(), detail, raw: rec.text().to_string() }),
                ),
            },
            Err(e) => (Plan::fallback(need), Some(e)),
        };
        self.memory.append(world.now, MemoryKind::Behavior, format!("Planned for {need}: {}", plan.summary()));
        self.plan = Some(plan);
        err
    }

    /// Abandons the current plan when a strictly more urgent need has
    /// appeared, and plans for that need instead.
    pub fn preempt_check(&mut self, world: &WorldView<'_>) -> Option<(Need, Option<GatewayError>)> {
        let plan = self.plan.as_mut().filter(|p| !p.is_finished())?;
        let urgent = preemption_target(plan.target_need, &self.needs, &world.needs.thresholds)?;
        plan.abandon();
        let from = plan.target_need;
        self.memory.append(world.now, MemoryKind::Behavior, format!("Interrupted the {from} plan because of feeling {urgent}"));
        let err = self.generate_plan(world, urgent);
        Some((urgent, err))
    }

    fn finalize_plan(&mut self, world: &WorldView<'_>, out: &mut TickOutput) {
        let Some(plan) = self.plan.take() else { return };
        if let Err(e) = self.update_satisfaction(world.gateway, &plan, world.needs) {
            out.failures.push(format!("satisfaction: {e}"));
        }
        let incident = format!("Finished the plan to {} ({})", plan.target, plan.evaluations());
        if let Err(e) = self.update_emotion(world.gateway, &incident, world.now) {
            out.failures.push(format!("emotion: {e}"));
        }
        out.actions.push(ActionRecord::new("plan_done", plan.target.clone(), plan.evaluations()));
    }

    /// Runs the current plan step and advances the cursor.
    pub fn execute_step(&mut self, world: &WorldView<'_>, rng: &mut ChaCha8Rng, out: &mut TickOutput) {
        let Some(step) = self.plan.as_ref().and_then(|p| p.current()).cloned() else { return };
        let mut record = ActionRecord::new(step.kind.as_str(), step.intention.clone(), String::new());
        let evaluation = match step.kind {
            StepKind::Mobility => self.move_step(world, &step.intention, rng, &mut record, out),
            StepKind::Social => self.social_step(world, &step.intention, out),
            StepKind::Economy | StepKind::Other => {
                self.memory.append(world.now, MemoryKind::Behavior, step.intention.clone());
                format!("done: {}", step.intention)
            }
        };
        record.detail = evaluation.clone();
        out.actions.push(record);
        if let Some(minutes) = step.duration_min {
            // the tick in which the step starts counts towards its duration
            let extra = minutes.saturating_sub(world.tick_minutes);
            if extra > 0 {
                self.busy_until = Some(world.now + Duration::minutes(extra as i64));
            }
        }
        if let Some(p) = self.plan.as_mut() {
            p.complete_current(evaluation);
        }
    }

    fn move_step(&mut self, world: &WorldView<'_>, intention: &str, rng: &mut ChaCha8Rng, record: &mut ActionRecord, out: &mut TickOutput) -> String {
        let plan_text = self.plan.as_ref().map(|p| p.summary()).unwrap_or_default();
        let category = match select_place_type(world.gateway, &plan_text, intention, &world.context.other_information(), world.place_catalog) {
            Ok(c) => c,
            Err(e) => {
                out.failures.push(format!("place type: {e}"));
                return "failed: no usable place type".into();
            }
        };
        match category.as_str() {
            HOME_CATEGORY => {
                self.status.location = Location::Home;
                self.status.position = self.status.home;
            }
            WORKPLACE_CATEGORY => {
                self.status.location = Location::Workplace;
                self.status.position = self.status.workplace;
            }
            _ => {
                let (radius, err) = determine_radius(
                    world.gateway,
                    &world.context.weather,
                    world.context.temperature,
                    &self.emotion.word.to_string(),
                    self.thought.or_placeholder(),
                    &world.context.other_information(),
                );
                if let Some(e) = err {
                    out.failures.push(format!("radius: {e}"));
                }
                match gravity_select_widening(self.status.position, &category, radius as f64, world.geo, world.mobility, rng) {
                    Ok((poi, _, _)) => {
                        self.status.location = Location::Poi { poi_id: poi.poi_id.clone(), name: poi.name.clone(), category: poi.category.clone() };
                        self.status.position = poi.location;
                        record.visit = Some(poi.poi_id.clone());
                    }
                    Err(e) => {
                        self.memory.append(world.now, MemoryKind::Behavior, format!("Could not find a {category} place to {intention}"));
                        return format!("failed: {e}");
                    }
                }
            }
        }
        let where_ = self.status.location.describe();
        self.memory.append(world.now, MemoryKind::Behavior, format!("{intention}: went to {where_}"));
        format!("arrived at {where_}")
    }

    fn social_step(&mut self, world: &WorldView<'_>, intention: &str, out: &mut TickOutput) -> String {
        let mut b = Bindings::new();
        b.insert("gender".into(), self.profile.gender.clone());
        b.insert("education".into(), self.profile.education.clone());
        b.insert("personality".into(), self.profile.personality.clone());
        b.insert("occupation".into(), self.profile.occupation.clone());
        b.insert("intention".into(), intention.to_string());
        b.insert("emotion types".into(), self.emotion.word.to_string());
        b.insert("thought".into(), self.thought.or_placeholder().to_string());
        let Some((mode, idx, err)) = select_social_target(world.gateway, b.clone(), &self.status.friends) else {
            return "failed: no friends to contact".into();
        };
        if let Some(e) = err {
            out.failures.push(format!("social target: {e}"));
        }
        let friend = self.status.friends[idx].clone();
        let stance = world.topic.and_then(|t| self.attitudes.get(t).copied());
        b.insert("relationship score".into(), friend.strength.to_string());
        b.insert("chat history".into(), self.memory.chat_history(friend.agent_id, CHAT_HISTORY_LIMIT));
        b.insert("discussion constraint".into(), discussion_constraint(world.topic, stance));
        b.remove("friend info");
        let text = match compose_message(world.gateway, b) {
            Ok(t) => t,
            Err(e) => {
                out.failures.push(format!("message: {e}"));
                return "failed: no message composed".into();
            }
        };
        self.memory.append_message(world.now, friend.agent_id, format!("Message to {}: {text}", friend.name));
        out.outgoing.push(SocialMessage {
            sender: self.id(),
            sender_name: self.profile.name.clone(),
            recipient: friend.agent_id,
            mode,
            text,
            stance,
            sim_time: world.now,
            tick: world.tick,
            depth: 0,
            injected: false,
        });
        format!("sent an {} message to {}", mode.as_str(), friend.name)
    }

    /// One tick: needs decay, then (unless busy) finish, preempt or make a
    /// plan and execute its next step.
    pub fn tick(&mut self, world: &WorldView<'_>, rng: &mut ChaCha8Rng) -> TickOutput {
        let mut out = TickOutput::default();
        self.needs = evaluate_needs(&self.needs, world.needs, world.tick_minutes as f64 / 60.0);
        if self.busy_until.is_some_and(|t| t > world.now) {
            let current = self.plan.as_ref().and_then(|p| p.cursor.checked_sub(1).and_then(|i| p.steps.get(i)));
            let intention = current.map(|s| s.intention.clone()).unwrap_or_default();
            out.actions.push(ActionRecord::new("busy", intention, String::new()));
            return out;
        }
        self.busy_until = None;
        if self.plan.as_ref().is_some_and(Plan::is_finished) {
            self.finalize_plan(world, &mut out);
        }
        if let Some((urgent, err)) = self.preempt_check(world) {
            out.actions.push(ActionRecord::new("preempt", urgent.as_str(), "plan interrupted"));
            if let Some(e) = err {
                out.failures.push(format!("plan: {e}"));
            }
        }
        if self.plan.is_none() {
            let need = self.needs.current;
            if let Some(e) = self.generate_plan(world, need) {
                out.failures.push(format!("plan: {e}"));
            }
            let summary = self.plan.as_ref().map(Plan::summary).unwrap_or_default();
            out.actions.push(ActionRecord::new("plan", need.as_str(), summary));
        }
        self.execute_step(world, rng, &mut out);
        out
    }

    /// Takes in delivered messages: remember, feel, re-rate the topic and
    /// answer organic opening messages.
    pub fn handle_inbox(&mut self, messages: &[SocialMessage], world: &WorldView<'_>) -> InboxOutput {
        let mut out = InboxOutput::default();
        for msg in messages {
            let text = msg.memory_text();
            self.memory.append_message(world.now, msg.sender, text.clone());
            if let Err(e) = self.reappraise(world.gateway, &text, world.now) {
                out.failures.push(format!("emotion: {e}"));
            }
            if let Some(topic) = world.topic {
                if let Err(e) = self.update_attitude(world.gateway, topic, &text) {
                    out.failures.push(format!("attitude: {e}"));
                }
            }
            if msg.injected {
                continue;
            }
            let Some(friend) = self.status.friend(msg.sender).cloned() else { continue };
            let mut b = Bindings::new();
            b.insert("agent profile description".into(), self.profile.description());
            b.insert("emotion types".into(), self.emotion.word.to_string());
            b.insert("thought".into(), self.thought.or_placeholder().to_string());
            b.insert("relationship score".into(), friend.strength.to_string());
            b.insert("message".into(), msg.text.clone());
            b.insert("chat history".into(), self.memory.chat_history(msg.sender, CHAT_HISTORY_LIMIT));
            match judge_exchange(world.gateway, b) {
                Ok(j) => {
                    if j.delta != 0 {
                        out.relationship_changes.push((msg.sender, self.id(), j.delta));
                    }
                    if let Some(reply) = j.reply.filter(|_| msg.depth < MAX_REPLY_DEPTH) {
                        self.memory.append_message(world.now, msg.sender, format!("Message to {}: {reply}", friend.name));
                        let stance = world.topic.and_then(|t| self.attitudes.get(t).copied());
                        out.replies.push(SocialMessage {
                            sender: self.id(),
                            sender_name: self.profile.name.clone(),
                            recipient: msg.sender,
                            mode: msg.mode,
                            text: reply,
                            stance,
                            sim_time: world.now,
                            tick: world.tick,
                            depth: msg.depth + 1,
                            injected: false,
                        });
                    }
                }
                Err(e) => out.failures.push(format!("social response: {e}")),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::geo::{GeoPoint, Poi};
    use crate::gateway::{RuleMatcher, ScriptedBackend, ScriptedRule};
    use chrono::NaiveDate;
    use rand::SeedableRng;
    use serde_json::json;

    fn now() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 3, 1).unwrap().and_hms_opt(12, 0, 0).unwrap()
    }

    fn agent() -> Agent {
        let home = GeoPoint::new(29.76, -95.36);
        let profile = AgentProfile {
            agent_id: 1,
            name: "Ann".into(),
            age: 34,
            gender: "female".into(),
            education: "college".into(),
            occupation: "teacher".into(),
            personality: "outgoing".into(),
            city: "Houston".into(),
        };
        Agent::new(profile, AgentStatus::new(home, home, "teacher", 20.0, 1000.0))
    }

    fn gw(rules: Vec<ScriptedRule>) -> Gateway {
        let mut rules = rules;
        rules.push(ScriptedRule::literal(None, "{}"));
        Gateway::with_backend(ScriptedBackend::new(rules, 1).unwrap())
    }

    struct Fixture {
        geo: GeoIndex,
        catalog: Vec<String>,
        ctx: GlobalContext,
        needs: NeedsConfig,
        mobility: MobilityConfig,
    }

    impl Fixture {
        fn new() -> Self {
            let poi = Poi { poi_id: "g1".into(), name: "Grocer".into(), category: "shopping".into(), location: GeoPoint::new(29.77, -95.36), attractiveness: 1.0 };
            Self {
                geo: GeoIndex::new(vec![poi]),
                catalog: vec!["shopping".into(), "home".into()],
                ctx: GlobalContext::default(),
                needs: NeedsConfig::default(),
                mobility: MobilityConfig::default(),
            }
        }

        fn world<'a>(&'a self, g: &'a Gateway) -> WorldView<'a> {
            WorldView {
                gateway: g,
                geo: &self.geo,
                place_catalog: &self.catalog,
                context: &self.ctx,
                now: now(),
                tick: 0,
                tick_minutes: 30,
                needs: &self.needs,
                mobility: &self.mobility,
                max_plan_steps: 6,
                topic: None,
            }
        }
    }

    #[test]
    fn emotion_example_response() {
        let g = gw(vec![ScriptedRule::literal(
            Some("emotion"),
            r#"{"sadness":5,"joy":5,"fear":5,"disgust":5,"anger":5,"surprise":5,"conclusion":"I feel ...","word":"Relief"}"#,
        )]);
        let mut a = agent();
        a.update_emotion(&g, "lost keys", now()).unwrap();
        assert_eq!(a.emotion.intensities, [5; 6]);
        assert_eq!(a.emotion.word, mind::EmotionWord::Relief);
        assert_eq!(a.memory.len(), 2);
    }

    #[test]
    fn emotion_violation_leaves_state() {
        let g = gw(vec![ScriptedRule::literal(
            Some("emotion"),
            r#"{"sadness":12,"joy":5,"fear":5,"disgust":5,"anger":5,"surprise":5,"conclusion":"x","word":"Relief"}"#,
        )]);
        let mut a = agent();
        let before = a.emotion.clone();
        assert!(a.update_emotion(&g, "", now()).is_err());
        assert_eq!(a.emotion, before);
        assert_eq!(g.stats().parse_failures, 1);
    }

    #[test]
    fn attitude_only_for_configured_topics() {
        let g = gw(vec![ScriptedRule::literal(Some("attitude"), r#"{"attitude": 5}"#)]);
        let mut a = agent();
        assert_eq!(a.update_attitude(&g, "guns", "").unwrap(), None);
        a.attitudes.insert("guns".into(), 7);
        assert_eq!(a.update_attitude(&g, "guns", "").unwrap(), Some(5));
    }

    #[test]
    fn thoughts_see_memories() {
        let g = gw(vec![ScriptedRule::literal(Some("thought"), r#"{"thought": "Currently nothing good or bad is happening, I think ...."}"#)]);
        let mut a = agent();
        a.update_thought(&g, now()).unwrap();
        assert_eq!(a.thought.text, "Currently nothing good or bad is happening, I think ....");
        let mut b = agent();
        b.memory.append(now(), MemoryKind::Incident, "saw a parade");
        let mut bind = Bindings::new();
        bind.insert("agent profile description".into(), b.profile.description());
        bind.insert("incidents".into(), b.memory.digest(now()));
        assert!(g.render("thought", &bind).unwrap().contains("saw a parade"));
    }

    #[test]
    fn whatever_satisfaction_sets_two_needs() {
        let g = gw(vec![ScriptedRule::literal(Some("satisfaction"), r#"{"safety satisfaction":0.8,"social satisfaction":0.6}"#)]);
        let mut a = agent();
        let plan = Plan::fallback(Need::Whatever);
        a.update_satisfaction(&g, &plan, &NeedsConfig::default()).unwrap();
        assert_eq!((a.needs.safety, a.needs.social), (0.8, 0.6));
    }

    #[test]
    fn long_plan_falls_back_to_rest() {
        let steps: Vec<_> = (0..12).map(|i| json!({"intention": format!("s{i}"), "type": "other"})).collect();
        let g = gw(vec![ScriptedRule::literal(Some("plan"), json!({"steps": steps}).to_string())]);
        let f = Fixture::new();
        let mut a = agent();
        assert!(a.generate_plan(&f.world(&g), Need::Hungry).is_some());
        let p = a.plan.unwrap();
        assert!(p.degraded);
        assert_eq!(p.steps[0].intention, "rest");
        assert_eq!(g.stats().retries, crate::gateway::DEFAULT_MAX_RETRIES as u64);
    }

    #[test]
    fn safety_plan_preempted_by_hunger() {
        let g = gw(vec![ScriptedRule::literal(
            Some("plan"),
            r#"{"steps": [{"intention": "eat", "type": "other"}]}"#,
        )]);
        let f = Fixture::new();
        let world = f.world(&g);
        let mut a = agent();
        a.plan = Some(Plan::from_record(
            Need::Safe,
            &serde_json::from_value(json!({"steps": [{"intention": "work", "type": "economy"}, {"intention": "more work", "type": "economy"}]})).unwrap(),
            6,
        )
        .unwrap());
        a.needs.hunger = 0.1;
        assert_eq!(a.preempt_check(&world).map(|(n, _)| n), Some(Need::Hungry));
        assert_eq!(a.plan.as_ref().unwrap().target_need, Need::Hungry);
        // a lower-priority deficit does not interrupt
        a.needs.hunger = 1.0;
        a.needs.social = 0.0;
        assert!(a.preempt_check(&world).is_none());
    }

    #[test]
    fn mobility_step_moves_agent() {
        let g = gw(vec![
            ScriptedRule::literal(Some("place_type"), r#"{"place type": "shopping"}"#),
            ScriptedRule::literal(Some("radius"), r#"{"radius": 10000}"#),
        ]);
        let f = Fixture::new();
        let mut a = agent();
        a.plan = Some(Plan::from_record(Need::Hungry, &serde_json::from_value(json!({"steps": [{"intention": "go to grocery", "type": "mobility"}]})).unwrap(), 6).unwrap());
        let mut out = TickOutput::default();
        a.execute_step(&f.world(&g), &mut ChaCha8Rng::seed_from_u64(0), &mut out);
        assert_eq!(a.status.location.label(), "g1");
        assert_eq!(out.actions[0].visit.as_deref(), Some("g1"));
        assert!(a.plan.unwrap().is_finished());
    }

    #[test]
    fn social_step_puts_message_out() {
        let g = gw(vec![
            ScriptedRule::literal(Some("social_target"), "[online, 0]"),
            ScriptedRule::literal(Some("message"), "Hi, lunch tomorrow?"),
        ]);
        let f = Fixture::new();
        let mut a = agent();
        a.status.friends.push(profile::Friend { agent_id: 2, name: "Bo".into(), strength: 50 });
        a.plan = Some(Plan::from_record(Need::Social, &serde_json::from_value(json!({"steps": [{"intention": "send a message to the friend", "type": "social"}]})).unwrap(), 6).unwrap());
        let mut out = TickOutput::default();
        a.execute_step(&f.world(&g), &mut ChaCha8Rng::seed_from_u64(0), &mut out);
        assert_eq!(out.outgoing.len(), 1);
        assert_eq!(out.outgoing[0].recipient, 2);
        assert_eq!(out.outgoing[0].text, "Hi, lunch tomorrow?");
    }

    #[test]
    fn inbox_reply_and_relationship() {
        let g = gw(vec![ScriptedRule::new(
            RuleMatcher::template("social_response"),
            crate::gateway::RuleResponse::Literal(r#"{"reply": "Sure!", "relationship_change": 2}"#.into()),
        )]);
        let f = Fixture::new();
        let mut a = agent();
        a.status.friends.push(profile::Friend { agent_id: 2, name: "Bo".into(), strength: 50 });
        let msg = SocialMessage {
            sender: 2,
            sender_name: "Bo".into(),
            recipient: 1,
            mode: crate::behaviors::social::Mode::Online,
            text: "hello".into(),
            stance: None,
            sim_time: now(),
            tick: 0,
            depth: 0,
            injected: false,
        };
        let out = a.handle_inbox(std::slice::from_ref(&msg), &f.world(&g));
        assert_eq!(out.relationship_changes, vec![(2, 1, 2)]);
        assert_eq!(out.replies.len(), 1);
        // a reply is not answered again
        let mut reply = msg.clone();
        reply.depth = 1;
        assert!(a.handle_inbox(&[reply], &f.world(&g)).replies.is_empty());
    }

    #[test]
    fn tick_plans_and_acts_in_same_tick() {
        let g = gw(vec![ScriptedRule::literal(
            Some("plan"),
            r#"{"steps": [{"intention": "go to sleep", "type": "other", "duration": 480}]}"#,
        )]);
        let f = Fixture::new();
        let mut a = agent();
        let out = a.tick(&f.world(&g), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.actions.iter().map(|r| r.action_type.as_str()).collect::<Vec<_>>(), ["plan", "other"]);
        assert_eq!(a.busy_until, Some(now() + Duration::minutes(450)));
        assert!(a.memory.entries().iter().any(|e| e.text == "go to sleep"));
        assert!(a.in_bounds());
    }
}
