//! Deterministic rule-driven backend for offline runs and tests.
//!
//! Rules are tried in order and the first match answers. A response is a
//! literal, a format string over the request bindings, a seeded choice among
//! literals, or a named builtin rule (see [`super::builtins`]). The random
//! stream handed to a rule is derived from the backend seed and the rendered
//! prompt, so answers do not depend on call order or thread scheduling.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendError, BackendReply, BackendRequest};
use super::builtins;
use super::template::{placeholders, Bindings};

pub type RuleFn = Arc<dyn Fn(&Bindings, &mut ChaCha8Rng) -> String + Send + Sync>;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct RuleMatcher {
    #[serde(default)]
    pub template: Option<String>,
    /// binding name -> required substring
    #[serde(default)]
    pub when: BTreeMap<String, String>,
    #[serde(default)]
    pub prompt_contains: Option<String>,
}

impl RuleMatcher {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn template(id: &str) -> Self {
        Self { template: Some(id.to_string()), ..Self::default() }
    }

    pub fn is_catch_all(&self) -> bool {
        self.template.is_none() && self.when.is_empty() && self.prompt_contains.is_none()
    }

    pub fn matches(&self, req: &BackendRequest<'_>) -> bool {
        if let Some(t) = &self.template {
            if t != req.template_id {
                return false;
            }
        }
        if let Some(p) = &self.prompt_contains {
            if !req.prompt.contains(p.as_str()) {
                return false;
            }
        }
        self.when
            .iter()
            .all(|(k, needle)| req.bindings.get(k).is_some_and(|v| v.contains(needle.as_str())))
    }
}

#[derive(Clone)]
pub enum RuleResponse {
    Literal(String),
    /// `{binding}` markers are replaced by the request's bindings.
    Format(String),
    Choice(Vec<String>),
    Builtin { name: String, params: serde_json::Map<String, serde_json::Value> },
    Function(RuleFn),
}

impl std::fmt::Debug for RuleResponse {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RuleResponse::Literal(s) => f.debug_tuple("Literal").field(s).finish(),
            RuleResponse::Format(s) => f.debug_tuple("Format").field(s).finish(),
            RuleResponse::Choice(c) => f.debug_tuple("Choice").field(c).finish(),
            RuleResponse::Builtin { name, .. } => f.debug_tuple("Builtin").field(name).finish(),
            RuleResponse::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedRule {
    pub matcher: RuleMatcher,
    pub response: RuleResponse,
}

impl ScriptedRule {
    pub fn new(matcher: RuleMatcher, response: RuleResponse) -> Self {
        Self { matcher, response }
    }

    pub fn literal(template: Option<&str>, text: impl Into<String>) -> Self {
        let matcher = template.map(RuleMatcher::template).unwrap_or_default();
        Self::new(matcher, RuleResponse::Literal(text.into()))
    }

    pub fn builtin(template: &str, name: &str, params: serde_json::Value) -> Self {
        let params = params.as_object().cloned().unwrap_or_default();
        Self::new(RuleMatcher::template(template), RuleResponse::Builtin { name: name.to_string(), params })
    }

    pub fn function(matcher: RuleMatcher, f: impl Fn(&Bindings, &mut ChaCha8Rng) -> String + Send + Sync + 'static) -> Self {
        Self::new(matcher, RuleResponse::Function(Arc::new(f)))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RulesError {
    #[error("rules file: {0}")]
    Parse(String),
    #[error("the rule list must end with a catch-all rule")]
    NoCatchAll,
    #[error("rule {index}: {reason}")]
    BadRule { index: usize, reason: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    rule: Vec<RuleEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    #[serde(default)]
    template: Option<String>,
    #[serde(default)]
    when: BTreeMap<String, String>,
    #[serde(default)]
    prompt_contains: Option<String>,
    #[serde(default)]
    respond: Option<String>,
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    choices: Option<Vec<String>>,
    #[serde(default)]
    builtin: Option<String>,
    #[serde(default)]
    params: Option<toml::Table>,
}

/// Ordered rules plus the seed for stochastic ones.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rules: Vec<ScriptedRule>,
    seed: u64,
    label: String,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>, seed: u64) -> Result<Self, RulesError> {
        match rules.last() {
            Some(r) if r.matcher.is_catch_all() => {}
            _ => return Err(RulesError::NoCatchAll),
        }
        for (index, rule) in rules.iter().enumerate() {
            if let RuleResponse::Builtin { name, .. } = &rule.response {
                if !builtins::exists(name) {
                    return Err(RulesError::BadRule { index, reason: format!("unknown builtin `{name}`") });
                }
            }
            if let RuleResponse::Choice(c) = &rule.response {
                if c.is_empty() {
                    return Err(RulesError::BadRule { index, reason: "empty choice list".into() });
                }
            }
        }
        Ok(Self { rules, seed, label: "scripted".to_string() })
    }

    /// Parses a TOML rules file. `seed` in the file is used unless
    /// `seed_override` is given.
    pub fn from_toml(text: &str, seed_override: Option<u64>) -> Result<Self, RulesError> {
        let file: RuleFile = toml::from_str(text).map_err(|e| RulesError::Parse(e.to_string()))?;
        let mut rules = Vec::with_capacity(file.rule.len());
        for (index, entry) in file.rule.into_iter().enumerate() {
            let matcher = RuleMatcher { template: entry.template, when: entry.when, prompt_contains: entry.prompt_contains };
            let mut responses = Vec::new();
            if let Some(t) = entry.respond {
                responses.push(RuleResponse::Literal(t));
            }
            if let Some(t) = entry.format {
                responses.push(RuleResponse::Format(t));
            }
            if let Some(c) = entry.choices {
                responses.push(RuleResponse::Choice(c));
            }
            if let Some(name) = entry.builtin {
                let params = match entry.params {
                    Some(table) => serde_json::to_value(table)
                        .map_err(|e| RulesError::BadRule { index, reason: e.to_string() })?
                        .as_object()
                        .cloned()
                        .unwrap_or_default(),
                    None => Default::default(),
                };
                responses.push(RuleResponse::Builtin { name, params });
            }
            if responses.len() != 1 {
                return Err(RulesError::BadRule {
                    index,
                    reason: "exactly one of respond, format, choices, builtin is required".into(),
                });
            }
            rules.push(ScriptedRule { matcher, response: responses.pop().unwrap() });
        }
        Self::new(rules, seed_override.or(file.seed).unwrap_or(0))
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, RulesError> {
        let text = std::fs::read_to_string(path).map_err(|e| RulesError::Parse(format!("{}: {e}", path.display())))?;
        let mut b = Self::from_toml(&text, seed_override)?;
        b.label = format!("scripted:{}", path.file_name().and_then(|n| n.to_str()).unwrap_or("rules"));
        Ok(b)
    }

    /// Single catch-all rule answering every request with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(vec![ScriptedRule::literal(None, text)], 0).expect("catch-all present")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn request_rng(&self, req: &BackendRequest<'_>) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(req.template_id.as_bytes());
        h.update([0u8]);
        h.update(req.prompt.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// Answers `req` with the first matching rule.
    pub fn respond(&self, req: &BackendRequest<'_>) -> String {
        let rule = self
            .rules
            .iter()
            .find(|r| r.matcher.matches(req))
            .expect("rule list ends with a catch-all");
        let mut rng = self.request_rng(req);
        match &rule.response {
            RuleResponse::Literal(t) => t.clone(),
            RuleResponse::Format(f) => format_bindings(f, req.bindings),
            RuleResponse::Choice(options) => options[rng.random_range(0..options.len())].clone(),
            RuleResponse::Builtin { name, params } => builtins::run(name, req.bindings, params, &mut rng),
            RuleResponse::Function(f) => f(req.bindings, &mut rng),
        }
    }
}

fn format_bindings(fmt: &str, bindings: &Bindings) -> String {
    let mut out = fmt.to_string();
    for name in placeholders(fmt) {
        if let Some(v) = bindings.get(&name) {
            out = out.replace(&format!("{{{name}}}"), v);
        }
    }
    out
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        format!("{}#{}", self.label, self.seed)
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        Ok(BackendReply::text(self.respond(request)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(template_id: &'a str, prompt: &'a str, b: &'a Bindings) -> BackendRequest<'a> {
        BackendRequest { template_id, prompt, bindings: b, temperature: 1.0 }
    }

    #[test]
    fn catch_all_answers_everything() {
        let s = ScriptedBackend::constant("X");
        let b = Bindings::new();
        assert_eq!(s.respond(&req("emotion", "p", &b)), "X");
        assert_eq!(s.respond(&req("plan", "q", &b)), "X");
    }

    #[test]
    fn first_match_wins() {
        let s = ScriptedBackend::new(
            vec![ScriptedRule::literal(Some("emotion"), "one"), ScriptedRule::literal(None, "two")],
            0,
        )
        .unwrap();
        let b = Bindings::new();
        assert_eq!(s.respond(&req("emotion", "p", &b)), "one");
        assert_eq!(s.respond(&req("plan", "p", &b)), "two");
    }

    #[test]
    fn missing_catch_all_rejected() {
        let err = ScriptedBackend::new(vec![ScriptedRule::literal(Some("emotion"), "one")], 0).unwrap_err();
        assert_eq!(err, RulesError::NoCatchAll);
        assert_eq!(ScriptedBackend::new(vec![], 0).unwrap_err(), RulesError::NoCatchAll);
    }

    #[test]
    fn seeded_choice_replays_identically() {
        let rules = vec![ScriptedRule::new(
            RuleMatcher::any(),
            RuleResponse::Choice((0..50).map(|i| i.to_string()).collect()),
        )];
        let a = ScriptedBackend::new(rules.clone(), 11).unwrap();
        let b = ScriptedBackend::new(rules, 11).unwrap();
        let bind = Bindings::new();
        let prompts: Vec<String> = (0..20).map(|i| format!("prompt {i}")).collect();
        let ra: Vec<String> = prompts.iter().map(|p| a.respond(&req("t", p, &bind))).collect();
        let rb: Vec<String> = prompts.iter().map(|p| b.respond(&req("t", p, &bind))).collect();
        assert_eq!(ra, rb);
        // not a constant
        assert!(ra.iter().any(|x| x != &ra[0]));
    }

    #[test]
    fn binding_matcher_and_format() {
        let text = r#"
seed = 3
[[rule]]
template = "emotion"
when = { incident = "hurricane" }
respond = "scared"

[[rule]]
template = "emotion"
format = "calm about {incident}"

[[rule]]
respond = "fallback"
"#;
        let s = ScriptedBackend::from_toml(text, None).unwrap();
        assert_eq!(s.seed(), 3);
        let mut b = Bindings::new();
        b.insert("incident".into(), "a hurricane is coming".into());
        assert_eq!(s.respond(&req("emotion", "p", &b)), "scared");
        b.insert("incident".into(), "lunch".into());
        assert_eq!(s.respond(&req("emotion", "p", &b)), "calm about lunch");
        assert_eq!(s.respond(&req("plan", "p", &b)), "fallback");
    }

    #[test]
    fn rules_file_errors() {
        assert!(matches!(
            ScriptedBackend::from_toml("[[rule]]\nrespond = \"a\"\nformat = \"b\"\n", None),
            Err(RulesError::BadRule { .. })
        ));
        assert!(matches!(
            ScriptedBackend::from_toml("[[rule]]\nbuiltin = \"no_such_rule\"\n", None),
            Err(RulesError::BadRule { .. })
        ));
        assert!(matches!(ScriptedBackend::from_toml("[[rule]]\ntemplate = \"x\"\nrespond = \"a\"\n", None), Err(RulesError::NoCatchAll)));
    }
}
