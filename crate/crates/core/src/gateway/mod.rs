//! Provider-agnostic completion layer: templating, contract-checked
//! structured output, caching, rate limiting and transcripts.

pub mod backend;
pub mod builtins;
pub mod contract;
pub mod scripted;
pub mod template;

use std::collections::{BTreeMap, HashMap};
use std::num::NonZeroU32;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use governor::clock::{Clock, DefaultClock};
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backend::{transcript_key, Backend, BackendError, BackendReply, BackendRequest, LiveBackend, ReplayBackend, TranscriptEntry};
pub use contract::{FieldKind, FieldSpec, Record, ResponseContract, Violation};
pub use scripted::{RuleMatcher, RuleResponse, RulesError, ScriptedBackend, ScriptedRule};
pub use template::{Bindings, PromptTemplate, TemplateCatalog};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid template: {0}")]
    Template(String),
    #[error("missing binding `{0}`")]
    MissingBinding(String),
    #[error("binding `{0}` does not match any placeholder")]
    UnknownPlaceholder(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("response to `{template_id}` violates its contract: {detail}")]
    ContractViolation { template_id: String, detail: String, raw: String },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("rate limited by backend")]
    RateLimited,
}

impl From<BackendError> for GatewayError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Unavailable(m) => GatewayError::BackendUnavailable(m),
            BackendError::RateLimited { .. } => GatewayError::RateLimited,
        }
    }
}

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

/// One templated completion.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub template_id: String,
    pub bindings: Bindings,
    pub temperature: f64,
    pub max_retries: u32,
    /// Replaces the template's own contract (survey items, per-agent
    /// satisfaction fields).
    pub contract: Option<ResponseContract>,
}

impl CompletionRequest {
    pub fn new(template_id: impl Into<String>, bindings: Bindings) -> Self {
        Self {
            template_id: template_id.into(),
            bindings,
            temperature: DEFAULT_TEMPERATURE,
            max_retries: DEFAULT_MAX_RETRIES,
            contract: None,
        }
    }

    pub fn with_contract(mut self, contract: ResponseContract) -> Self {
        self.contract = Some(contract);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }
}

/// Point-in-time copy of the gateway counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Backend calls, retries included.
    pub requests: u64,
    pub cache_hits: u64,
    pub retries: u64,
    /// Requests that still violated their contract after all retries.
    pub parse_failures: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
    parse_failures: AtomicU64,
    tokens_in: AtomicU64,
    tokens_out: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            parse_failures: self.parse_failures.load(Ordering::Relaxed),
            tokens_in: self.tokens_in.load(Ordering::Relaxed),
            tokens_out: self.tokens_out.load(Ordering::Relaxed),
        }
    }
}

type Slot = Arc<Mutex<Option<Record>>>;

/// Backoff policy for backend-side rate limiting.
#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub attempts: u32,
    pub initial: Duration,
    pub max: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self { attempts: 5, initial: Duration::from_millis(200), max: Duration::from_secs(30) }
    }
}

/// Thread-safe completion front end shared by every agent of a run.
pub struct Gateway {
    catalog: TemplateCatalog,
    backend: Arc<dyn Backend>,
    caching: bool,
    cache: Mutex<HashMap<String, Slot>>,
    limiter: Option<DefaultDirectRateLimiter>,
    backoff: Backoff,
    counters: Counters,
    transcript: Mutex<BTreeMap<String, TranscriptEntry>>,
    /// Overrides every request's temperature when set.
    temperature: Option<f64>,
}

impl Gateway {
    pub fn new(catalog: TemplateCatalog, backend: Arc<dyn Backend>) -> Self {
        Self {
            catalog,
            backend,
            caching: true,
            cache: Mutex::new(HashMap::new()),
            limiter: None,
            backoff: Backoff::default(),
            counters: Counters::default(),
            transcript: Mutex::new(BTreeMap::new()),
            temperature: None,
        }
    }

    /// Gateway over the shipped template catalog.
    pub fn with_backend(backend: impl Backend + 'static) -> Self {
        Self::new(TemplateCatalog::shipped(), Arc::new(backend))
    }

    /// Caps outgoing backend calls at `rpm` per minute (token bucket).
    pub fn with_rate_limit(mut self, rpm: u32) -> Self {
        self.limiter = NonZeroU32::new(rpm).map(|n| RateLimiter::direct(Quota::per_minute(n)));
        self
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    /// Samples every request at `t`, whatever the request asked for.
    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn without_cache(mut self) -> Self {
        self.caching = false;
        self
    }

    pub fn catalog(&self) -> &TemplateCatalog {
        &self.catalog
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn stats(&self) -> GatewayStats {
        self.counters.snapshot()
    }

    /// Renders a request's prompt without calling the backend.
    pub fn render(&self, template_id: &str, bindings: &Bindings) -> Result<String, GatewayError> {
        self.catalog.get(template_id)?.render(bindings)
    }

    fn validate(&self, req: &CompletionRequest) -> Result<(String, ResponseContract, f64), GatewayError> {
        let t = self.temperature.unwrap_or(req.temperature);
        if !(t >= 0.0) || !t.is_finite() {
            return Err(GatewayError::InvalidRequest(format!("temperature {t} must be a finite value >= 0")));
        }
        let template = self.catalog.get(&req.template_id)?;
        let prompt = template.render(&req.bindings)?;
        let contract = req.contract.clone().unwrap_or_else(|| template.contract.clone());
        contract
            .check_well_formed()
            .map_err(|e| GatewayError::InvalidRequest(format!("contract for `{}`: {e}", req.template_id)))?;
        Ok((prompt, contract, t))
    }

    /// Cached completion: identical (backend, temperature, prompt, contract)
    /// requests reach the backend once per gateway. Concurrent identical
    /// requests wait for the first one instead of racing it. Failures are
    /// not cached.
    pub fn cached_complete(&self, req: &CompletionRequest) -> Result<Record, GatewayError> {
        let (prompt, contract, t) = self.validate(req)?;
        if !self.caching {
            return self.run_with_retries(req, &prompt, &contract, t);
        }
        let key = self.cache_key(t, &prompt, &contract);
        let slot = {
            let mut cache = self.cache.lock().expect("cache lock");
            cache.entry(key).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache slot lock");
        if let Some(rec) = guard.as_ref() {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(rec.clone());
        }
        let rec = self.run_with_retries(req, &prompt, &contract, t)?;
        *guard = Some(rec.clone());
        Ok(rec)
    }

    /// Uncached completion with contract checking and bounded retries.
    pub fn complete_structured(&self, req: &CompletionRequest) -> Result<Record, GatewayError> {
        let (prompt, contract, t) = self.validate(req)?;
        self.run_with_retries(req, &prompt, &contract, t)
    }

    fn cache_key(&self, temperature: f64, prompt: &str, contract: &ResponseContract) -> String {
        let mut h = Sha256::new();
        h.update(self.backend.id().as_bytes());
        h.update([0u8]);
        h.update(temperature.to_bits().to_le_bytes());
        h.update(prompt.as_bytes());
        h.update([0u8]);
        h.update(serde_json::to_vec(contract).expect("contract serializes"));
        hex::encode(h.finalize())
    }

    fn run_with_retries(&self, req: &CompletionRequest, prompt: &str, contract: &ResponseContract, temperature: f64) -> Result<Record, GatewayError> {
        let mut current = prompt.to_string();
        let mut attempt = 0;
        loop {
            let raw = self.call_backend(req, &current, temperature)?;
            match contract.extract(&raw) {
                Ok(rec) => return Ok(rec),
                Err(violation) => {
                    if attempt >= req.max_retries {
                        self.counters.parse_failures.fetch_add(1, Ordering::Relaxed);
                        tracing::debug!(template = %req.template_id, %violation, "contract violation after retries");
                        return Err(GatewayError::ContractViolation {
                            template_id: req.template_id.clone(),
                            detail: violation.0,
                            raw,
                        });
                    }
                    attempt += 1;
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    current = format!(
                        "{prompt}\n\nYour previous answer could not be used: {violation}. Reply again with {} and nothing else.",
                        contract.describe()
                    );
                }
            }
        }
    }

    fn throttle(&self) {
        if let Some(limiter) = &self.limiter {
            let clock = DefaultClock::default();
            while let Err(not_until) = limiter.check() {
                std::thread::sleep(not_until.wait_time_from(clock.now()));
            }
        }
    }

    fn call_backend(&self, req: &CompletionRequest, prompt: &str, temperature: f64) -> Result<String, GatewayError> {
        let backend_req = BackendRequest {
            template_id: &req.template_id,
            prompt,
            bindings: &req.bindings,
            temperature,
        };
        let mut delay = self.backoff.initial;
        let mut attempt = 0;
        loop {
            self.throttle();
            self.counters.requests.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(&backend_req) {
                Ok(reply) => {
                    self.counters.tokens_in.fetch_add(reply.tokens_in, Ordering::Relaxed);
                    self.counters.tokens_out.fetch_add(reply.tokens_out, Ordering::Relaxed);
                    let key = transcript_key(prompt, temperature);
                    self.transcript.lock().expect("transcript lock").entry(key.clone()).or_insert(TranscriptEntry {
                        key,
                        template_id: req.template_id.clone(),
                        response: reply.text.clone(),
                    });
                    return Ok(reply.text);
                }
                Err(BackendError::RateLimited { retry_after }) if attempt < self.backoff.attempts => {
                    attempt += 1;
                    let wait = retry_after.unwrap_or(delay).min(self.backoff.max);
                    tracing::warn!(template = %req.template_id, ?wait, "backend rate limited; backing off");
                    std::thread::sleep(wait);
                    delay = (delay * 2).min(self.backoff.max);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Every backend reply so far, ordered by transcript key.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").values().cloned().collect()
    }

    /// Writes the transcript as JSON lines, replayable with [`ReplayBackend`].
    pub fn write_transcript(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for e in self.transcript() {
            out.push_str(&serde_json::to_string(&e).map_err(std::io::Error::other)?);
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn attitude_bindings(incidents: &str) -> Bindings {
        let mut b = Bindings::new();
        b.insert("agent profile description".into(), "You are Ann.".into());
        b.insert("topic".into(), "gun control".into());
        b.insert("previous attitude".into(), "5".into());
        b.insert("related incidents".into(), incidents.into());
        b
    }

    fn attitude_request(incidents: &str) -> CompletionRequest {
        CompletionRequest::new("attitude", attitude_bindings(incidents))
    }

    /// Backend that counts calls and answers from a fixed list, repeating the
    /// last entry.
    struct Sequence {
        replies: Vec<Result<String, BackendError>>,
        calls: AtomicUsize,
    }

    impl Sequence {
        fn new(replies: Vec<Result<String, BackendError>>) -> Self {
            Self { replies, calls: AtomicUsize::new(0) }
        }
    }

    impl Backend for Sequence {
        fn id(&self) -> String {
            "sequence".into()
        }
        fn complete(&self, _r: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies[i.min(self.replies.len() - 1)].clone().map(|t| BackendReply { text: t, tokens_in: 3, tokens_out: 2 })
        }
    }

    #[test]
    fn attitude_record_from_scripted_json() {
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 5}"#));
        let rec = g.complete_structured(&attitude_request("none")).unwrap();
        assert_eq!(rec.i64("attitude"), Some(5));
    }

    #[test]
    fn prose_wrapped_json_is_extracted() {
        let g = Gateway::with_backend(ScriptedBackend::constant("Sure! ```{\"attitude\": 7}``` hope that helps"));
        assert_eq!(g.complete_structured(&attitude_request("none")).unwrap().i64("attitude"), Some(7));
    }

    #[test]
    fn out_of_range_without_retries_is_violation() {
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 99}"#));
        let err = g.complete_structured(&attitude_request("none").with_max_retries(0)).unwrap_err();
        assert!(matches!(err, GatewayError::ContractViolation { .. }), "{err:?}");
        let s = g.stats();
        assert_eq!((s.requests, s.retries, s.parse_failures), (1, 0, 1));
    }

    #[test]
    fn retry_repairs_and_is_counted() {
        let seq = Sequence::new(vec![Ok("no idea".into()), Ok(r#"{"attitude": 99}"#.into()), Ok(r#"{"attitude": 4}"#.into())]);
        let g = Gateway::new(TemplateCatalog::shipped(), Arc::new(seq));
        let rec = g.complete_structured(&attitude_request("none")).unwrap();
        assert_eq!(rec.i64("attitude"), Some(4));
        let s = g.stats();
        assert_eq!((s.requests, s.retries, s.parse_failures), (3, 2, 0));
        assert_eq!((s.tokens_in, s.tokens_out), (9, 6));
    }

    #[test]
    fn retries_bounded_by_max() {
        let g = Gateway::with_backend(ScriptedBackend::constant("nothing useful"));
        assert!(g.complete_structured(&attitude_request("none").with_max_retries(2)).is_err());
        let s = g.stats();
        assert_eq!((s.requests, s.retries, s.parse_failures), (3, 2, 1));
    }

    #[test]
    fn correction_prompt_mentions_violation() {
        let seen = Arc::new(Mutex::new(Vec::<String>::new()));
        let log = seen.clone();
        let rule = ScriptedRule::function(RuleMatcher::any(), move |_b, _r| {
            let n = log.lock().unwrap().len();
            if n == 0 { "{\"attitude\": 42}".into() } else { "{\"attitude\": 1}".into() }
        });
        struct Spy(ScriptedBackend, Arc<Mutex<Vec<String>>>);
        impl Backend for Spy {
            fn id(&self) -> String {
                "spy".into()
            }
            fn complete(&self, r: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
                let out = self.0.complete(r);
                self.1.lock().unwrap().push(r.prompt.to_string());
                out
            }
        }
        let g = Gateway::new(TemplateCatalog::shipped(), Arc::new(Spy(ScriptedBackend::new(vec![rule], 0).unwrap(), seen.clone())));
        g.complete_structured(&attitude_request("none")).unwrap();
        let prompts = seen.lock().unwrap();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[1].contains("above the maximum 10"));
    }

    #[test]
    fn cache_hit_skips_backend() {
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 5}"#));
        let r = attitude_request("none");
        g.cached_complete(&r).unwrap();
        g.cached_complete(&r).unwrap();
        let s = g.stats();
        assert_eq!((s.requests, s.cache_hits), (1, 1));
        g.cached_complete(&attitude_request("a message")).unwrap();
        assert_eq!(g.stats().requests, 2);
    }

    #[test]
    fn hundred_identical_requests_one_call_even_concurrently() {
        use rayon::prelude::*;
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 5}"#));
        let r = attitude_request("none");
        (0..100).into_par_iter().for_each(|_| {
            g.cached_complete(&r).unwrap();
        });
        let s = g.stats();
        assert_eq!((s.requests, s.cache_hits), (1, 99));
    }

    #[test]
    fn failures_are_not_cached() {
        let seq = Sequence::new(vec![Err(BackendError::Unavailable("down".into())), Ok(r#"{"attitude": 2}"#.into())]);
        let g = Gateway::new(TemplateCatalog::shipped(), Arc::new(seq));
        let r = attitude_request("none");
        assert!(matches!(g.cached_complete(&r), Err(GatewayError::BackendUnavailable(_))));
        assert_eq!(g.cached_complete(&r).unwrap().i64("attitude"), Some(2));
    }

    #[test]
    fn rate_limited_backend_is_retried_with_backoff() {
        let seq = Sequence::new(vec![
            Err(BackendError::RateLimited { retry_after: None }),
            Err(BackendError::RateLimited { retry_after: None }),
            Ok(r#"{"attitude": 6}"#.into()),
        ]);
        let g = Gateway::new(TemplateCatalog::shipped(), Arc::new(seq))
            .with_backoff(Backoff { attempts: 3, initial: Duration::from_millis(1), max: Duration::from_millis(5) });
        assert_eq!(g.complete_structured(&attitude_request("none")).unwrap().i64("attitude"), Some(6));
        assert_eq!(g.stats().requests, 3);

        let always = Sequence::new(vec![Err(BackendError::RateLimited { retry_after: None })]);
        let g = Gateway::new(TemplateCatalog::shipped(), Arc::new(always))
            .with_backoff(Backoff { attempts: 1, initial: Duration::from_millis(1), max: Duration::from_millis(1) });
        assert_eq!(g.complete_structured(&attitude_request("none")).unwrap_err(), GatewayError::RateLimited);
    }

    #[test]
    fn token_bucket_spaces_calls() {
        // 600 rpm = one call per 100 ms after the initial burst of 600;
        // exhaust the burst cheaply by using a small quota instead.
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 5}"#)).without_cache().with_rate_limit(1200);
        let start = std::time::Instant::now();
        for _ in 0..3 {
            g.complete_structured(&attitude_request("none")).unwrap();
        }
        // burst capacity covers these three calls
        assert!(start.elapsed() < Duration::from_secs(1));
        assert_eq!(g.stats().requests, 3);
    }

    #[test]
    fn negative_temperature_rejected() {
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 5}"#));
        let r = attitude_request("none").with_temperature(-0.5);
        assert!(matches!(g.complete_structured(&r), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn transcript_replays_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 8}"#));
        let a = g.cached_complete(&attitude_request("x")).unwrap();
        g.write_transcript(&path).unwrap();
        let replay = Gateway::with_backend(ReplayBackend::load(&path).unwrap());
        assert_eq!(replay.cached_complete(&attitude_request("x")).unwrap(), a);
        assert!(replay.cached_complete(&attitude_request("y")).is_err());
    }

    #[test]
    fn override_contract_is_part_of_cache_key() {
        let g = Gateway::with_backend(ScriptedBackend::constant(r#"{"attitude": 5, "x": 1}"#));
        let r = attitude_request("none");
        g.cached_complete(&r).unwrap();
        let rec = g
            .cached_complete(&r.clone().with_contract(ResponseContract::json(vec![FieldSpec::integer("x", 0, 1)])))
            .unwrap();
        assert_eq!(rec.i64("x"), Some(1));
        assert_eq!(g.stats().requests, 2);
    }
}
