//! Named response rules for the scripted backend.
//!
//! Each builtin reads the request bindings (and optional parameters from the
//! rules file) and produces the text a participant would have answered. They
//! encode simple, documented behavioral assumptions so that experiment
//! recipes exercise the whole pipeline offline.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Map, Value};

use super::template::Bindings;

type Params = Map<String, Value>;
type BuiltinFn = fn(&Bindings, &Params, &mut ChaCha8Rng) -> String;

const BUILTINS: &[(&str, BuiltinFn)] = &[
    ("emotion_echo", emotion_echo),
    ("attitude_echo", attitude_echo),
    ("attitude_persuasion", attitude_persuasion),
    ("plan_by_need", plan_by_need),
    ("satisfaction_restore", satisfaction_restore),
    ("place_for_intention", place_for_intention),
    ("radius_by_context", radius_by_context),
    ("strongest_friend", strongest_friend),
    ("social_reply", social_reply),
    ("demagogue_line", demagogue_line),
    ("monthly_by_income", monthly_by_income),
    ("survey_constant", survey_constant),
    ("survey_thermometer", survey_thermometer),
    ("survey_cesd_by_savings", survey_cesd_by_savings),
];

pub fn exists(name: &str) -> bool {
    BUILTINS.iter().any(|(n, _)| *n == name)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

pub fn run(name: &str, bindings: &Bindings, params: &Params, rng: &mut ChaCha8Rng) -> String {
    let (_, f) = BUILTINS.iter().find(|(n, _)| *n == name).expect("builtin checked at load");
    f(bindings, params, rng)
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap())
}

/// First number appearing in a binding value (`"$1,234.50"` -> 1234.5).
fn binding_number(b: &Bindings, key: &str) -> Option<f64> {
    let v = b.get(key)?.replace(',', "");
    number_re().find(&v).and_then(|m| m.as_str().parse().ok())
}

fn binding<'a>(b: &'a Bindings, key: &str) -> &'a str {
    b.get(key).map(String::as_str).unwrap_or("")
}

fn p_f64(p: &Params, key: &str, default: f64) -> f64 {
    p.get(key).and_then(Value::as_f64).unwrap_or(default)
}

fn p_str<'a>(p: &'a Params, key: &str, default: &'a str) -> &'a str {
    p.get(key).and_then(Value::as_str).unwrap_or(default)
}

/// Labeled number inside free text, e.g. `Savings: $1,200.00`.
fn labeled_number(text: &str, label: &str) -> Option<f64> {
    let idx = text.find(label)?;
    let rest = text[idx + label.len()..].replace(',', "");
    number_re().find(&rest).and_then(|m| m.as_str().parse().ok())
}

const EMOTIONS: [&str; 6] = ["sadness", "joy", "fear", "disgust", "anger", "surprise"];

/// Echoes the current intensities, optionally shifted by `bump` when the
/// incident contains `when_incident`.
fn emotion_echo(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let trigger = p.get("when_incident").and_then(Value::as_str);
    let bump_active = trigger.is_none_or(|t| binding(b, "incident").contains(t));
    let mut out = Map::new();
    for e in EMOTIONS {
        let mut v = binding_number(b, e).unwrap_or(5.0).round() as i64;
        if bump_active {
            if let Some(d) = p.get("bump").and_then(|m| m.get(e)).and_then(Value::as_i64) {
                v += d;
            }
        }
        out.insert(e.into(), json!(v.clamp(0, 10)));
    }
    out.insert("conclusion".into(), json!(p_str(p, "conclusion", "I feel about the same as before.")));
    out.insert("word".into(), json!(p_str(p, "word", "Relief")));
    Value::Object(out).to_string()
}

fn attitude_echo(b: &Bindings, _p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let prev = binding_number(b, "previous attitude").unwrap_or(5.0).round() as i64;
    json!({ "attitude": prev.clamp(0, 10) }).to_string()
}

fn stance_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[stance (\d+)/10\]").unwrap())
}

/// One persuasion step for a single message of stance `stance` received at
/// attitude `attitude` (0-10, midpoint 5): an aligned message pushes the
/// rating one step toward its pole, an opposing one pulls it one step toward
/// the midpoint, and a rating at the midpoint follows the message's pole.
pub fn persuasion_step(attitude: i64, stance: i64, step: i64) -> i64 {
    let s = (stance - 5).signum();
    let a = (attitude - 5).signum();
    let next = if s == 0 {
        attitude
    } else if a == 0 {
        attitude + s * step
    } else if s == a {
        attitude + a * step
    } else {
        let toward = attitude - a * step;
        // stop at the midpoint rather than overshoot
        if (toward - 5).signum() == -a {
            5
        } else {
            toward
        }
    };
    next.clamp(0, 10)
}

/// Applies [`persuasion_step`] for every `[stance N/10]` marker in the
/// related incidents, in order.
fn attitude_persuasion(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let step = p_f64(p, "step", 1.0) as i64;
    let mut att = binding_number(b, "previous attitude").unwrap_or(5.0).round() as i64;
    for cap in stance_re().captures_iter(binding(b, "related incidents")) {
        let stance: i64 = cap[1].parse().unwrap_or(5);
        att = persuasion_step(att, stance, step);
    }
    json!({ "attitude": att.clamp(0, 10) }).to_string()
}

fn step(intention: &str, kind: &str) -> Value {
    json!({ "intention": intention, "type": kind })
}

fn timed(intention: &str, kind: &str, minutes: u32) -> Value {
    json!({ "intention": intention, "type": kind, "duration": minutes })
}

/// Need-specific daily routines. When `stay_home_keyword` appears in the
/// environment information, the plan switches to an at-home variant with
/// probability `stay_home_probability`.
fn plan_by_need(b: &Bindings, p: &Params, rng: &mut ChaCha8Rng) -> String {
    let option = binding(b, "selected option");
    let need = option.split(':').next().unwrap_or("").trim();
    let at_home = binding(b, "current location").starts_with("home");
    let keyword = p_str(p, "stay_home_keyword", "");
    let stay_home = !keyword.is_empty()
        && binding(b, "other information").contains(keyword)
        && rng.random_bool(p_f64(p, "stay_home_probability", 0.8).clamp(0.0, 1.0));
    let (target, steps): (&str, Vec<Value>) = match need {
        "hungry" if stay_home => (
            "eat at home",
            vec![step("check the refrigerator", "other"), step("prepare a meal at home", "other"), step("eat", "other")],
        ),
        "hungry" => {
            if rng.random_bool(0.5) {
                (
                    "eat out",
                    vec![step("go to a restaurant", "mobility"), step("order food", "economy"), timed("eat", "other", 60)],
                )
            } else {
                (
                    "buy groceries and cook",
                    vec![
                        step("go to the grocery store", "mobility"),
                        step("compare product prices", "economy"),
                        step("go back home", "mobility"),
                        timed("prepare lunch and eat", "other", 60),
                    ],
                )
            }
        }
        "tired" => {
            let mut s = Vec::new();
            if !at_home {
                s.push(step("go back home", "mobility"));
            }
            s.push(timed("go to sleep", "other", p_f64(p, "sleep_minutes", 480.0) as u32));
            ("rest and recover energy", s)
        }
        "safe" if stay_home => ("work remotely", vec![timed("work from home", "economy", 240)]),
        "safe" => (
            "earn income at work",
            vec![
                step("commute to the office", "mobility"),
                timed("respond to priority emails", "economy", 60),
                timed("work on assigned tasks", "economy", 180),
            ],
        ),
        "social" => (
            "connect with friends",
            vec![step("browse social networking sites", "other"), step("send a message to a friend", "social")],
        ),
        _ if stay_home => ("stay safe indoors", vec![timed("rest at home", "other", 60)]),
        _ => match rng.random_range(0..3) {
            0 => ("enjoy some free time", vec![step("take a walk in the park", "mobility"), timed("relax outdoors", "other", 60)]),
            1 => ("enjoy some free time", vec![step("go shopping at the mall", "mobility"), step("buy something nice", "economy")]),
            _ => ("enjoy some free time", vec![timed("read a book", "other", 60)]),
        },
    };
    let max = binding_number(b, "max plan steps").unwrap_or(6.0).max(1.0) as usize;
    let steps: Vec<Value> = steps.into_iter().take(max).collect();
    json!({ "target": target, "steps": steps }).to_string()
}

fn need_field(need: &str) -> Option<&'static str> {
    match need {
        "hungry" => Some("hunger satisfaction"),
        "tired" => Some("energy satisfaction"),
        "safe" => Some("safety satisfaction"),
        "social" => Some("social satisfaction"),
        _ => None,
    }
}

/// Sets the served need's satisfaction to `value` (or `failed_value` when
/// the execution report mentions a failure); for "whatever" plans the safety
/// and social values are echoed plus `whatever_boost`.
fn satisfaction_restore(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let need = binding(b, "current need").trim();
    let failed = binding(b, "evaluation results").contains("failed");
    match need_field(need) {
        Some(field) => {
            let v = if failed { p_f64(p, "failed_value", 0.5) } else { p_f64(p, "value", 0.9) };
            json!({ field: v.clamp(0.0, 1.0) }).to_string()
        }
        None => {
            let boost = p_f64(p, "whatever_boost", 0.0);
            let safety = (binding_number(b, "safety satisfaction").unwrap_or(0.5) + boost).clamp(0.0, 1.0);
            let social = (binding_number(b, "social satisfaction").unwrap_or(0.5) + boost).clamp(0.0, 1.0);
            json!({ "safety satisfaction": safety, "social satisfaction": social }).to_string()
        }
    }
}

fn place_for_intention(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let intention = binding(b, "intention").to_lowercase();
    let categories: Vec<String> = binding(b, "poi category")
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(|s| s.trim().trim_matches('\'').trim_matches('"').to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let table: [(&[&str], &str); 5] = [
        (&["home"], "home"),
        (&["office", "work", "commute"], "workplace"),
        (&["restaurant", "eat", "lunch", "dinner", "cafe"], "dining"),
        (&["grocery", "shop", "mall", "store", "buy"], "shopping"),
        (&["park", "walk", "outdoor"], "park"),
    ];
    let picked = table
        .iter()
        .find(|(keys, cat)| keys.iter().any(|k| intention.contains(k)) && categories.iter().any(|c| c == cat))
        .map(|(_, cat)| cat.to_string())
        .unwrap_or_else(|| {
            let fallback = p_str(p, "default", "");
            if categories.iter().any(|c| c == fallback) {
                fallback.to_string()
            } else {
                categories.first().cloned().unwrap_or_default()
            }
        });
    json!({ "place type": picked }).to_string()
}

/// `normal` meters, or `reduced` when `keyword` appears in the environment
/// information.
fn radius_by_context(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let keyword = p_str(p, "keyword", "");
    let reduced = !keyword.is_empty() && binding(b, "other info").contains(keyword);
    let r = if reduced { p_f64(p, "reduced", 3000.0) } else { p_f64(p, "normal", 10000.0) };
    json!({ "radius": r as i64 }).to_string()
}

fn pair_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+)\s*:\s*(\d+)").unwrap())
}

/// Picks the friend with the highest relationship strength (lowest index on
/// ties). The mode is `mode` when given, else a seeded coin flip.
fn strongest_friend(b: &Bindings, p: &Params, rng: &mut ChaCha8Rng) -> String {
    let mut best: Option<(i64, i64)> = None;
    for cap in pair_re().captures_iter(binding(b, "friend info")) {
        let idx: i64 = cap[1].parse().unwrap_or(0);
        let strength: i64 = cap[2].parse().unwrap_or(0);
        if best.is_none_or(|(_, s)| strength > s) {
            best = Some((idx, strength));
        }
    }
    let idx = best.map(|(i, _)| i).unwrap_or(0);
    let mode = match p.get("mode").and_then(Value::as_str) {
        Some(m) => m.to_string(),
        None => if rng.random_bool(0.5) { "online" } else { "offline" }.to_string(),
    };
    format!("[{mode}, {idx}]")
}

/// Judges an exchange: fixed relationship change `delta`; replies with
/// probability `reply_probability` using `reply`.
fn social_reply(_b: &Bindings, p: &Params, rng: &mut ChaCha8Rng) -> String {
    let delta = p_f64(p, "delta", 2.0) as i64;
    let reply = if rng.random_bool(p_f64(p, "reply_probability", 0.0).clamp(0.0, 1.0)) {
        p_str(p, "reply", "Thanks for sharing, good to hear from you!")
    } else {
        ""
    };
    json!({ "reply": reply, "relationship_change": delta.clamp(-5, 5) }).to_string()
}

fn demagogue_line(b: &Bindings, _p: &Params, _rng: &mut ChaCha8Rng) -> String {
    if binding(b, "agree or disagree").contains("disagree") {
        "Stronger gun control punishes law-abiding citizens and will not stop criminals. Please oppose it.".to_string()
    } else {
        "Stronger gun control saves lives and keeps our families safe. Please support it.".to_string()
    }
}

/// Work propensity `work`; consumption propensity rising linearly with an
/// estimate of disposable income (`work * skill * hours - tax + UBI`).
fn monthly_by_income(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let work = p_f64(p, "work", 0.6).clamp(0.0, 1.0);
    let hours = p_f64(p, "hours", 168.0);
    let skill = binding_number(b, "skill").unwrap_or(0.0);
    let tax = binding_number(b, "tax paid").unwrap_or(0.0);
    let ubi = binding_number(b, "UBI").unwrap_or(0.0);
    let disposable = (work * skill * hours - tax + ubi).max(0.0);
    let c = (p_f64(p, "base", 0.15) + p_f64(p, "slope", 0.000025) * disposable).clamp(0.0, 1.0);
    json!({ "work": work, "consumption": (c * 10000.0).round() / 10000.0 }).to_string()
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*(q\d+)\.").unwrap())
}

fn survey_items(b: &Bindings) -> Vec<String> {
    item_re().captures_iter(binding(b, "survey string")).map(|c| c[1].to_string()).collect()
}

fn survey_constant(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let v = p.get("value").cloned().unwrap_or(json!(0));
    let obj: Map<String, Value> = survey_items(b).into_iter().map(|q| (q, v.clone())).collect();
    Value::Object(obj).to_string()
}

/// Feeling thermometer toward the out-group: `100 - 10 * |attitude - 5|`,
/// reading the respondent's attitude from the related information.
fn survey_thermometer(b: &Bindings, _p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let info = binding(b, "related information");
    let att = labeled_number(info, "Attitude towards").unwrap_or(5.0);
    let v = (100.0 - 10.0 * (att - 5.0).abs()).round() as i64;
    let obj: Map<String, Value> = survey_items(b).into_iter().map(|q| (q, json!(v))).collect();
    Value::Object(obj).to_string()
}

/// CES-D answers whose symptom level falls as savings rise. Item k's level is
/// `ceil(3 * (1 - (savings/scale) / (0.5 + k/20)))` clamped to 0..=3; items
/// listed in `reverse` are answered as `3 - level` so that scoring recovers
/// the level.
fn survey_cesd_by_savings(b: &Bindings, p: &Params, _rng: &mut ChaCha8Rng) -> String {
    let info = binding(b, "related information");
    let savings = labeled_number(info, "Savings:").unwrap_or(0.0).max(0.0);
    let scale = p_f64(p, "scale", 20000.0);
    let reverse: Vec<String> = p
        .get("reverse")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_else(|| vec!["q4".into(), "q8".into(), "q12".into(), "q16".into()]);
    let x = savings / scale;
    let mut obj = Map::new();
    for q in survey_items(b) {
        let k: f64 = q[1..].parse().unwrap_or(1.0);
        let level = (3.0 * (1.0 - x / (0.5 + k / 20.0))).ceil().clamp(0.0, 3.0) as i64;
        let answer = if reverse.contains(&q) { 3 - level } else { level };
        obj.insert(q, json!(answer));
    }
    Value::Object(obj).to_string()
}
