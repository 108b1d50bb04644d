//! Scenario files.
//!
//! Grammar of the text form, one item per line:
//!
//! ```text
//! # comment
//! key = value          top-level keys: name, suite, seed, out
//! [section]            following keys are read as section.key
//! ```
//!
//! Sections and keys:
//!
//! ```text
//! [model]      kind = bb | inverse-l2 | canonical | inverse-square-pairs | gravity-like
//! [particles]  count = N ; masses = m1, m2, ...
//! [numerics]   dt, steps, arclength, h, points, n_samples, n_paths, box
//! ```
//!
//! A file whose first non-blank character is `{` is read as JSON with the same
//! layout (`{"suite": ..., "numerics": {"dt": 0.001}}`).

use std::collections::BTreeMap;

use serde::Serialize;
use shapedyn::kinematics::ModelKind;
use shapedyn::suites::{Suite, SuiteParams};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid JSON scenario: {0}")]
    Json(String),
    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },
}

fn field(name: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: name.into(), reason: reason.into() }
}

const KEYS: [&str; 15] = [
    "name",
    "suite",
    "seed",
    "out",
    "model.kind",
    "particles.count",
    "particles.masses",
    "numerics.dt",
    "numerics.steps",
    "numerics.arclength",
    "numerics.h",
    "numerics.points",
    "numerics.n_samples",
    "numerics.n_paths",
    "numerics.box",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub suite: Suite,
    pub out: Option<String>,
    pub params: SuiteParams,
}

/// Closest candidate by edit distance, if any is reasonably close.
pub fn nearest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|(d, c)| *d <= c.len().max(3) / 2 + 1)
        .min()
        .map(|(_, c)| c)
}

fn unknown(kind: &str, word: &str, candidates: &[&str]) -> String {
    match nearest(word, candidates.iter().copied()) {
        Some(c) => format!("unknown {kind} `{word}`; did you mean `{c}`?"),
        None => format!("unknown {kind} `{word}`; expected one of {}", candidates.join(", ")),
    }
}

fn parse_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut section = String::new();
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(ConfigError::Syntax { line: i + 1, reason: "unterminated section header".into() })?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1, reason: format!("expected `key = value`, got `{line}`") })?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Syntax { line: i + 1, reason: format!("duplicate key `{key}`") });
        }
    }
    Ok(out)
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) -> Result<(), ConfigError> {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out)?;
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(|x| x.to_string()).collect();
            out.insert(prefix.to_string(), parts.join(","));
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        Value::Number(n) => {
            out.insert(prefix.to_string(), n.to_string());
        }
        Value::Bool(_) | Value::Null => return Err(field(prefix, "expected a number, string or list")),
    }
    Ok(())
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| field(key, format!("cannot parse `{v}` as a number")))
}

fn positive(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = number(key, v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(field(key, format!("must be positive, got {v}")))
    }
}

fn count(key: &str, v: &str) -> Result<usize, ConfigError> {
    let x: i64 = number(key, v)?;
    if x > 0 {
        Ok(x as usize)
    } else {
        Err(field(key, format!("must be positive, got {v}")))
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let kv = if text.trim_start().starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
            let mut kv = BTreeMap::new();
            flatten("", &v, &mut kv)?;
            kv
        } else {
            parse_text(text)?
        };
        Self::from_pairs(&kv)
    }

    fn from_pairs(kv: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        for key in kv.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(field(key, unknown("key", key, &KEYS)));
            }
        }
        let suite_name = kv.get("suite").ok_or_else(|| field("suite", "missing"))?;
        let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
        let suite = Suite::parse(suite_name).ok_or_else(|| field("suite", unknown("suite", suite_name, &names)))?;
        let mut p = SuiteParams::defaults(suite);
        let name = kv.get("name").cloned().unwrap_or_else(|| suite.name().to_string());
        for (key, v) in kv {
            match key.as_str() {
                "seed" => p.seed = number(key, v)?,
                "model.kind" => p.model = ModelKind::parse(v).ok_or_else(|| field(key, format!("unknown conformal model `{v}`")))?,
                "particles.masses" => p.masses = v.split(',').map(|m| positive(key, m.trim())).collect::<Result<_, _>>()?,
                "numerics.dt" => p.dt = positive(key, v)?,
                "numerics.steps" => p.steps = count(key, v)?,
                "numerics.arclength" => p.arclength = positive(key, v)?,
                "numerics.h" => p.h = positive(key, v)?,
                "numerics.points" => p.points = count(key, v)?,
                "numerics.n_samples" => p.n_samples = count(key, v)?,
                "numerics.n_paths" => p.n_paths = count(key, v)?,
                "numerics.box" => p.box_size = positive(key, v)?,
                _ => {}
            }
        }
        if let Some(v) = kv.get("particles.count") {
            let n = count("particles.count", v)?;
            if kv.contains_key("particles.masses") {
                if n != p.masses.len() {
                    return Err(field("particles.count", format!("{n} particles but {} masses", p.masses.len())));
                }
            } else {
                p.masses = vec![1.0; n];
            }
        }
        if p.masses.len() < 3 {
            return Err(field("particles.masses", "need at least three particles"));
        }
        Ok(Self { name, suite, out: kv.get("out").cloned(), params: p })
    }
}
