//! Prompt templates and the on-disk template catalog.
//!
//! A template file is TOML front-matter between two `---` lines followed by
//! the prompt body. Placeholders are written `{name}`, where the name starts
//! with a letter and may contain spaces (`{agent profile description}`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::contract::ResponseContract;
use super::GatewayError;

pub type Bindings = BTreeMap<String, String>;

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z][A-Za-z0-9 _]*)\}").unwrap())
}

/// Names of all `{placeholder}` markers in `text`.
pub fn placeholders(text: &str) -> BTreeSet<String> {
    placeholder_re().captures_iter(text).map(|c| c[1].to_string()).collect()
}

/// True if `text` still contains an unresolved placeholder marker.
pub fn has_unresolved(text: &str) -> bool {
    placeholder_re().is_match(text)
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub required_bindings: BTreeSet<String>,
    pub contract: ResponseContract,
    /// Appended after the body when present; used where the prompt text
    /// leaves the response shape implicit.
    pub response_hint: Option<String>,
}

#[derive(Deserialize)]
struct FrontMatter {
    id: String,
    required_bindings: Vec<String>,
    contract: ResponseContract,
    #[serde(default)]
    response_hint: Option<String>,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>, contract: ResponseContract) -> Result<Self, GatewayError> {
        let body = body.into();
        let required_bindings = placeholders(&body);
        let t = Self { id: id.into(), body, required_bindings, contract, response_hint: None };
        t.check_invariants()?;
        Ok(t)
    }

    /// Parses a template file (front-matter + body).
    pub fn parse(source: &str) -> Result<Self, GatewayError> {
        let bad = |m: &str| GatewayError::Template(m.to_string());
        let rest = source.strip_prefix("---\n").ok_or_else(|| bad("template must start with a `---` front-matter line"))?;
        let end = rest.find("\n---\n").ok_or_else(|| bad("unterminated front-matter"))?;
        let meta: FrontMatter = toml::from_str(&rest[..end]).map_err(|e| bad(&format!("front-matter: {e}")))?;
        let body = rest[end + 5..].trim_end_matches('\n').to_string();
        let t = Self {
            id: meta.id,
            body,
            required_bindings: meta.required_bindings.into_iter().collect(),
            contract: meta.contract,
            response_hint: meta.response_hint,
        };
        t.check_invariants()?;
        Ok(t)
    }

    fn check_invariants(&self) -> Result<(), GatewayError> {
        let found = placeholders(&self.body);
        if let Some(name) = found.difference(&self.required_bindings).next() {
            return Err(GatewayError::Template(format!("template `{}`: placeholder {{{name}}} not declared", self.id)));
        }
        if let Some(name) = self.required_bindings.difference(&found).next() {
            return Err(GatewayError::Template(format!("template `{}`: declared binding `{name}` not used in body", self.id)));
        }
        self.contract
            .check_well_formed()
            .map_err(|e| GatewayError::Template(format!("template `{}`: {e}", self.id)))
    }

    /// Substitutes every placeholder. Bindings must cover the required set
    /// exactly.
    pub fn render(&self, bindings: &Bindings) -> Result<String, GatewayError> {
        if let Some(missing) = self.required_bindings.iter().find(|k| !bindings.contains_key(*k)) {
            return Err(GatewayError::MissingBinding(missing.clone()));
        }
        if let Some(extra) = bindings.keys().find(|k| !self.required_bindings.contains(*k)) {
            return Err(GatewayError::UnknownPlaceholder(extra.clone()));
        }
        let rendered = placeholder_re()
            .replace_all(&self.body, |caps: &regex::Captures| bindings[&caps[1]].clone())
            .into_owned();
        Ok(match &self.response_hint {
            Some(hint) => format!("{rendered}\n{hint}"),
            None => rendered,
        })
    }
}

/// Templates keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TemplateCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

const SHIPPED: &[(&str, &str)] = &[
    ("attitude.prompt", include_str!("../../templates/attitude.prompt")),
    ("consumption.prompt", include_str!("../../templates/consumption.prompt")),
    ("demagogue.prompt", include_str!("../../templates/demagogue.prompt")),
    ("emotion.prompt", include_str!("../../templates/emotion.prompt")),
    ("interview.prompt", include_str!("../../templates/interview.prompt")),
    ("message.prompt", include_str!("../../templates/message.prompt")),
    ("place_type.prompt", include_str!("../../templates/place_type.prompt")),
    ("plan.prompt", include_str!("../../templates/plan.prompt")),
    ("radius.prompt", include_str!("../../templates/radius.prompt")),
    ("satisfaction.prompt", include_str!("../../templates/satisfaction.prompt")),
    ("social_response.prompt", include_str!("../../templates/social_response.prompt")),
    ("social_target.prompt", include_str!("../../templates/social_target.prompt")),
    ("survey.prompt", include_str!("../../templates/survey.prompt")),
    ("thought.prompt", include_str!("../../templates/thought.prompt")),
];

impl TemplateCatalog {
    /// The catalog compiled into the crate.
    pub fn shipped() -> Self {
        let mut catalog = Self::default();
        for (name, src) in SHIPPED {
            let t = PromptTemplate::parse(src).unwrap_or_else(|e| panic!("shipped template {name} is invalid: {e}"));
            catalog.insert(t);
        }
        catalog
    }

    /// Loads every `*.prompt` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, GatewayError> {
        let mut catalog = Self::default();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| GatewayError::Template(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "prompt"))
            .collect();
        entries.sort();
        for path in entries {
            let src = std::fs::read_to_string(&path).map_err(|e| GatewayError::Template(format!("{}: {e}", path.display())))?;
            let t = PromptTemplate::parse(&src).map_err(|e| GatewayError::Template(format!("{}: {e}", path.display())))?;
            catalog.insert(t);
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates.get(id).ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
