//! Response contracts: what shape a completion must have, and the tolerant
//! extraction that pulls a conforming record out of raw model text.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

/// Structured-output schema attached to a prompt template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseContract {
    /// Any text; optionally bounded in characters.
    FreeText {
        #[serde(default)]
        max_chars: Option<usize>,
    },
    /// A JSON object, possibly wrapped in prose or code fences.
    Json { fields: Vec<FieldSpec> },
    /// A bracketed positional tuple such as `[online, 0]`.
    Bracket { fields: Vec<FieldSpec> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Integer,
    Number,
    Text,
    Choice,
    List,
}

/// One field of a structured response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chars: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub non_empty: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_items: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_items: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<FieldSpec>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
}

impl FieldSpec {
    fn base(name: &str, kind: FieldKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            min: None,
            max: None,
            max_chars: None,
            non_empty: false,
            options: Vec::new(),
            min_items: None,
            max_items: None,
            items: Vec::new(),
            optional: false,
        }
    }

    pub fn integer(name: &str, min: i64, max: i64) -> Self {
        Self { min: Some(min as f64), max: Some(max as f64), ..Self::base(name, FieldKind::Integer) }
    }

    pub fn number(name: &str, min: f64, max: f64) -> Self {
        Self { min: Some(min), max: Some(max), ..Self::base(name, FieldKind::Number) }
    }

    pub fn text(name: &str) -> Self {
        Self::base(name, FieldKind::Text)
    }

    pub fn choice<S: AsRef<str>>(name: &str, options: &[S]) -> Self {
        Self {
            options: options.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Self::base(name, FieldKind::Choice)
        }
    }

    pub fn list(name: &str, min_items: usize, max_items: usize, items: Vec<FieldSpec>) -> Self {
        Self {
            min_items: Some(min_items),
            max_items: Some(max_items),
            items,
            ..Self::base(name, FieldKind::List)
        }
    }

    pub fn optional(mut self) -> Self {
        self.optional = true;
        self
    }

    pub fn non_empty(mut self) -> Self {
        self.non_empty = true;
        self
    }

    fn check_well_formed(&self) -> Result<(), String> {
        if let (Some(lo), Some(hi)) = (self.min, self.max) {
            if lo > hi {
                return Err(format!("field `{}` has empty range [{lo}, {hi}]", self.name));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_items, self.max_items) {
            if lo > hi {
                return Err(format!("field `{}` has empty item-count range [{lo}, {hi}]", self.name));
            }
        }
        if self.kind == FieldKind::Choice && self.options.is_empty() {
            return Err(format!("choice field `{}` has no options", self.name));
        }
        for item in &self.items {
            item.check_well_formed()?;
        }
        Ok(())
    }

    fn describe(&self) -> String {
        let mut s = format!("\"{}\"", self.name);
        match self.kind {
            FieldKind::Integer | FieldKind::Number => {
                let kind = if self.kind == FieldKind::Integer { "integer" } else { "number" };
                match (self.min, self.max) {
                    (Some(lo), Some(hi)) => s.push_str(&format!(" ({kind} from {lo} to {hi})")),
                    (Some(lo), None) => s.push_str(&format!(" ({kind} >= {lo})")),
                    (None, Some(hi)) => s.push_str(&format!(" ({kind} <= {hi})")),
                    (None, None) => s.push_str(&format!(" ({kind})")),
                }
            }
            FieldKind::Text => match self.max_chars {
                Some(n) => s.push_str(&format!(" (text, at most {n} characters)")),
                None => s.push_str(" (text)"),
            },
            FieldKind::Choice => s.push_str(&format!(" (one of: {})", self.options.join(", "))),
            FieldKind::List => {
                let inner: Vec<String> = self.items.iter().map(|f| f.describe()).collect();
                s.push_str(&format!(" (list of objects with {})", inner.join(", ")));
            }
        }
        s
    }
}

/// A contract breach found while validating a candidate response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// A validated structured response. Values are normalized: integer fields
/// hold JSON integers, choice fields hold the canonical option spelling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Record(pub Map<String, Value>);

impl Record {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn i64(&self, key: &str) -> Option<i64> {
        self.0.get(key).and_then(Value::as_i64)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(Value::as_f64)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(Value::as_str)
    }

    pub fn list(&self, key: &str) -> Option<&Vec<Value>> {
        self.0.get(key).and_then(Value::as_array)
    }

    /// Body of a free-text response.
    pub fn text(&self) -> &str {
        self.str("text").unwrap_or_default()
    }
}

impl ResponseContract {
    pub fn free_text() -> Self {
        ResponseContract::FreeText { max_chars: None }
    }

    pub fn json(fields: Vec<FieldSpec>) -> Self {
        ResponseContract::Json { fields }
    }

    pub fn fields(&self) -> &[FieldSpec] {
        match self {
            ResponseContract::FreeText { .. } => &[],
            ResponseContract::Json { fields } | ResponseContract::Bracket { fields } => fields,
        }
    }

    pub fn fields_mut(&mut self) -> Option<&mut Vec<FieldSpec>> {
        match self {
            ResponseContract::FreeText { .. } => None,
            ResponseContract::Json { fields } | ResponseContract::Bracket { fields } => Some(fields),
        }
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut FieldSpec> {
        self.fields_mut()?.iter_mut().find(|f| f.name == name)
    }

    /// Checks the contract itself: every declared range must be non-empty.
    pub fn check_well_formed(&self) -> Result<(), String> {
        self.fields().iter().try_for_each(FieldSpec::check_well_formed)
    }

    /// One-line description used in correction prompts.
    pub fn describe(&self) -> String {
        match self {
            ResponseContract::FreeText { max_chars: Some(n) } => format!("plain text of at most {n} characters"),
            ResponseContract::FreeText { max_chars: None } => "plain text".to_string(),
            ResponseContract::Json { fields } => {
                let parts: Vec<String> = fields.iter().map(FieldSpec::describe).collect();
                format!("a JSON object with fields {}", parts.join(", "))
            }
            ResponseContract::Bracket { fields } => {
                let parts: Vec<String> = fields.iter().map(FieldSpec::describe).collect();
                format!("a bracketed list [{}]", parts.join(", "))
            }
        }
    }

    /// Extracts the first candidate in `raw` that satisfies the contract.
    pub fn extract(&self, raw: &str) -> Result<Record, Violation> {
        match self {
            ResponseContract::FreeText { max_chars } => {
                let text = raw.trim();
                let n = text.chars().count();
                if let Some(max) = max_chars {
                    if n > *max {
                        return Err(Violation(format!("text has {n} characters, limit is {max}")));
                    }
                }
                let mut map = Map::new();
                map.insert("text".into(), Value::String(text.to_string()));
                Ok(Record(map))
            }
            ResponseContract::Json { fields } => {
                let mut first_violation = None;
                for block in balanced_blocks(raw, '{', '}') {
                    let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(block) else {
                        continue;
                    };
                    match validate_object(&obj, fields) {
                        Ok(rec) => return Ok(Record(rec)),
                        Err(v) => {
                            first_violation.get_or_insert(v);
                        }
                    }
                }
                Err(first_violation.unwrap_or_else(|| Violation("no JSON object found in response".into())))
            }
            ResponseContract::Bracket { fields } => {
                let mut first_violation = None;
                for block in balanced_blocks(raw, '[', ']') {
                    let inner = &block[1..block.len() - 1];
                    let parts: Vec<&str> = inner.split(',').map(|p| p.trim().trim_matches(|c| c == '\'' || c == '"')).collect();
                    if parts.len() != fields.len() {
                        first_violation.get_or_insert(Violation(format!(
                            "expected {} bracketed values, found {}",
                            fields.len(),
                            parts.len()
                        )));
                        continue;
                    }
                    let mut obj = Map::new();
                    for (spec, part) in fields.iter().zip(&parts) {
                        let v = match part.parse::<f64>() {
                            Ok(n) if spec.kind != FieldKind::Text && spec.kind != FieldKind::Choice => {
                                Number::from_f64(n).map(Value::Number).unwrap_or(Value::Null)
                            }
                            _ => Value::String(part.to_string()),
                        };
                        obj.insert(spec.name.clone(), v);
                    }
                    match validate_object(&obj, fields) {
                        Ok(rec) => return Ok(Record(rec)),
                        Err(v) => {
                            first_violation.get_or_insert(v);
                        }
                    }
                }
                Err(first_violation.unwrap_or_else(|| Violation("no bracketed list found in response".into())))
            }
        }
    }
}

/// Yields every balanced `open ... close` block in `text`, in order of its
/// opening position. String literals are respected so braces inside quoted
/// text do not unbalance the scan.
fn balanced_blocks(text: &str, open: char, close: char) -> impl Iterator<Item = &str> {
    let starts: Vec<usize> = text.char_indices().filter(|&(_, c)| c == open).map(|(i, _)| i).collect();
    starts.into_iter().filter_map(move |start| {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (off, c) in text[start..].char_indices() {
            if in_str {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == '"' {
                    in_str = false;
                }
                continue;
            }
            if c == '"' && open == '{' {
                in_str = true;
            } else if c == open {
                depth += 1;
            } else if c == close {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + off + c.len_utf8()]);
                }
            }
        }
        None
    })
}

fn validate_object(obj: &Map<String, Value>, fields: &[FieldSpec]) -> Result<Map<String, Value>, Violation> {
    let mut out = Map::new();
    for spec in fields {
        match obj.get(&spec.name) {
            None | Some(Value::Null) => {
                if !spec.optional {
                    return Err(Violation(format!("missing field \"{}\"", spec.name)));
                }
            }
            Some(v) => {
                out.insert(spec.name.clone(), validate_value(v, spec)?);
            }
        }
    }
    Ok(out)
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn check_range(name: &str, x: f64, spec: &FieldSpec) -> Result<(), Violation> {
    if !x.is_finite() {
        return Err(Violation(format!("field \"{name}\" is not a finite number")));
    }
    if let Some(lo) = spec.min {
        if x < lo {
            return Err(Violation(format!("field \"{name}\" = {x} is below the minimum {lo}")));
        }
    }
    if let Some(hi) = spec.max {
        if x > hi {
            return Err(Violation(format!("field \"{name}\" = {x} is above the maximum {hi}")));
        }
    }
    Ok(())
}

fn validate_value(v: &Value, spec: &FieldSpec) -> Result<Value, Violation> {
    let name = &spec.name;
    match spec.kind {
        FieldKind::Integer => {
            let x = as_number(v).ok_or_else(|| Violation(format!("field \"{name}\" must be an integer")))?;
            if x.fract() != 0.0 {
                return Err(Violation(format!("field \"{name}\" = {x} is not an integer")));
            }
            check_range(name, x, spec)?;
            Ok(Value::from(x as i64))
        }
        FieldKind::Number => {
            let x = as_number(v).ok_or_else(|| Violation(format!("field \"{name}\" must be a number")))?;
            check_range(name, x, spec)?;
            Ok(Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null))
        }
        FieldKind::Text => {
            let s = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                _ => return Err(Violation(format!("field \"{name}\" must be text"))),
            };
            if spec.non_empty && s.trim().is_empty() {
                return Err(Violation(format!("field \"{name}\" must not be empty")));
            }
            if let Some(max) = spec.max_chars {
                let n = s.chars().count();
                if n > max {
                    return Err(Violation(format!("field \"{name}\" has {n} characters, limit is {max}")));
                }
            }
            Ok(Value::String(s))
        }
        FieldKind::Choice => {
            let s = v.as_str().ok_or_else(|| Violation(format!("field \"{name}\" must be a string")))?;
            let wanted = s.trim();
            spec.options
                .iter()
                .find(|o| o.eq_ignore_ascii_case(wanted))
                .map(|o| Value::String(o.clone()))
                .ok_or_else(|| Violation(format!("field \"{name}\" = \"{wanted}\" is not one of [{}]", spec.options.join(", "))))
        }
        FieldKind::List => {
            let arr = v.as_array().ok_or_else(|| Violation(format!("field \"{name}\" must be a list")))?;
            if let Some(lo) = spec.min_items {
                if arr.len() < lo {
                    return Err(Violation(format!("field \"{name}\" has {} items, at least {lo} required", arr.len())));
                }
            }
            if let Some(hi) = spec.max_items {
                if arr.len() > hi {
                    return Err(Violation(format!("field \"{name}\" has {} items, at most {hi} allowed", arr.len())));
                }
            }
            let mut items = Vec::with_capacity(arr.len());
            for (i, item) in arr.iter().enumerate() {
                let obj = item.as_object().ok_or_else(|| Violation(format!("item {i} of \"{name}\" must be an object")))?;
                let validated = validate_object(obj, &spec.items).map_err(|v| Violation(format!("item {i} of \"{name}\": {}", v.0)))?;
                items.push(Value::Object(validated));
            }
            Ok(Value::Array(items))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attitude() -> ResponseContract {
        ResponseContract::json(vec![FieldSpec::integer("attitude", 0, 10)])
    }

    /// Independent oracle: scan for the first balanced braces block that
    /// parses and satisfies the contract, using a naive depth counter.
    fn oracle_first_valid(raw: &str) -> Option<i64> {
        let bytes: Vec<char> = raw.chars().collect();
        for i in 0..bytes.len() {
            if bytes[i] != '{' {
                continue;
            }
            let mut depth = 0;
            for j in i..bytes.len() {
                match bytes[j] {
                    '{' => depth += 1,
                    '}' => {
                        depth -= 1;
                        if depth == 0 {
                            let s: String = bytes[i..=j].iter().collect();
                            if let Ok(v) = serde_json::from_str::<Value>(&s) {
                                if let Some(a) = v.get("attitude").and_then(Value::as_i64) {
                                    if (0..=10).contains(&a) {
                                        return Some(a);
                                    }
                                }
                            }
                            break;
                        }
                    }
                    _ => {}
                }
            }
        }
        None
    }

    #[test]
    fn plain_json_record() {
        let rec = attitude().extract(r#"{"attitude": 5}"#).unwrap();
        assert_eq!(rec.i64("attitude"), Some(5));
    }

    #[test]
    fn json_wrapped_in_prose_and_fences() {
        let raw = "Sure! ```{\"attitude\": 7}``` hope that helps";
        let rec = attitude().extract(raw).unwrap();
        assert_eq!(rec.i64("attitude"), Some(7));
        assert_eq!(oracle_first_valid(raw), Some(7));
    }

    #[test]
    fn skips_non_conforming_blocks() {
        let raw = r#"{"note": "x"} then {"attitude": 99} finally {"attitude": 3}"#;
        assert_eq!(attitude().extract(raw).unwrap().i64("attitude"), Some(3));
        assert_eq!(oracle_first_valid(raw), Some(3));
    }

    #[test]
    fn out_of_range_is_a_violation() {
        let err = attitude().extract(r#"{"attitude": 99}"#).unwrap_err();
        assert!(err.0.contains("above the maximum"), "{err}");
    }

    #[test]
    fn fractional_integer_rejected() {
        assert!(attitude().extract(r#"{"attitude": 7.5}"#).is_err());
        assert_eq!(attitude().extract(r#"{"attitude": 7.0}"#).unwrap().i64("attitude"), Some(7));
    }

    #[test]
    fn braces_in_strings_do_not_confuse_scan() {
        let c = ResponseContract::json(vec![FieldSpec::text("thought")]);
        let rec = c.extract(r#"{"thought": "a } brace"}"#).unwrap();
        assert_eq!(rec.str("thought"), Some("a } brace"));
    }

    #[test]
    fn bracket_tuple() {
        let c = ResponseContract::Bracket {
            fields: vec![FieldSpec::choice("mode", &["online", "offline"]), FieldSpec::integer("index", 0, 2)],
        };
        let rec = c.extract("I pick [online, 0].").unwrap();
        assert_eq!(rec.str("mode"), Some("online"));
        assert_eq!(rec.i64("index"), Some(0));
        assert!(c.extract("[online, 5]").is_err());
        assert!(c.extract("[walk, 1]").is_err());
    }

    #[test]
    fn choice_normalizes_case() {
        let c = ResponseContract::json(vec![FieldSpec::choice("word", &["Relief", "Joy"])]);
        assert_eq!(c.extract(r#"{"word": "relief"}"#).unwrap().str("word"), Some("Relief"));
    }

    #[test]
    fn list_bounds() {
        let c = ResponseContract::json(vec![FieldSpec::list(
            "steps",
            1,
            2,
            vec![FieldSpec::text("intention").non_empty()],
        )]);
        assert!(c.extract(r#"{"steps": []}"#).is_err());
        assert!(c.extract(r#"{"steps": [{"intention": "a"}, {"intention": "b"}, {"intention": "c"}]}"#).is_err());
        assert!(c.extract(r#"{"steps": [{"intention": ""}]}"#).is_err());
        assert_eq!(c.extract(r#"{"steps": [{"intention": "eat"}]}"#).unwrap().list("steps").unwrap().len(), 1);
    }

    #[test]
    fn free_text_limit() {
        let c = ResponseContract::FreeText { max_chars: Some(5) };
        assert_eq!(c.extract("  hello ").unwrap().text(), "hello");
        assert!(c.extract("hello!").is_err());
    }

    #[test]
    fn empty_range_is_malformed() {
        let c = ResponseContract::json(vec![FieldSpec::integer("x", 5, 1)]);
        assert!(c.check_well_formed().is_err());
    }

    proptest::proptest! {
        #[test]
        fn accepted_values_stay_in_range(v in -50i64..50, prefix in "[a-z ]{0,20}", suffix in "[a-z ]{0,20}") {
            let raw = format!("{prefix}{{\"attitude\": {v}}}{suffix}");
            match attitude().extract(&raw) {
                Ok(rec) => {
                    let a = rec.i64("attitude").unwrap();
                    proptest::prop_assert!((0..=10).contains(&a));
                    proptest::prop_assert_eq!(Some(a), oracle_first_valid(&raw));
                }
                Err(_) => proptest::prop_assert!(!(0..=10).contains(&v)),
            }
        }
    }
}
