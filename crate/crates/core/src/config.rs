//! Run configuration: a flat `key = value` text file, where list values are
//! comma separated. Blank lines and `#` comments are ignored.
//!
//! ```text
//! data = nsw_dw.csv
//! outcome = re78
//! treatment = treat
//! covariates = re74, re75, age, education
//! model = re74, re75, age, age^2
//! select = age, re74
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::cate::ModelSpec;
use crate::data::ColumnSchema;
use crate::search::{Constraints, GridSource, Objective};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

/// Parsed `key = value` pairs in file order of keys (sorted for stability).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { line });
            }
            if map.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        split_list(self.get(key).unwrap_or(""))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

pub fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

const KNOWN_KEYS: &[&str] = &[
    "data",
    "delimiter",
    "outcome",
    "treatment",
    "covariates",
    "id",
    "tau",
    "model",
    "select",
    "pair",
    "menu_fixed",
    "menu_varying",
    "grid",
    "objective",
    "min_share",
    "max_share",
    "max_treated",
    "star_screen",
    "bins",
    "boundary_k",
    "boundary_resolution",
    "output",
    "random_free",
];

/// Everything a pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub delimiter: char,
    pub schema: ColumnSchema,
    /// Column holding precomputed effects; bypasses estimation when set.
    pub tau_col: Option<String>,
    pub model: ModelSpec,
    /// Variables searched one at a time.
    pub select: Vec<String>,
    /// Variables searched jointly (quadrant rule) and used for the boundary.
    pub pair: Option<(String, String)>,
    /// Menu: variable held fixed, with an optional explicit threshold.
    pub menu_fixed: Option<(String, Option<f64>)>,
    pub menu_varying: Option<String>,
    #[serde(serialize_with = "ser_display")]
    pub grid: GridSource,
    pub objective: Objective,
    pub constraints: Constraints,
    pub star_screen: bool,
    pub bins: usize,
    pub boundary_k: Option<usize>,
    pub boundary_resolution: usize,
    pub output: PathBuf,
    /// The pipeline is deterministic; kept for forward compatibility.
    pub random_free: bool,
}

fn ser_display<S: serde::Serializer>(v: &GridSource, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_opt<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<Option<T>, ConfigError> {
    kv.get(key)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| bad(key, format!("cannot parse `{v}`")))
        })
        .transpose()
}

fn parse_bool(kv: &KeyValues, key: &str, default: bool) -> Result<bool, ConfigError> {
    match kv.get(key) {
        None | Some("") => Ok(default),
        Some("true" | "yes" | "1") => Ok(true),
        Some("false" | "no" | "0") => Ok(false),
        Some(other) => Err(bad(key, format!("expected true/false, got `{other}`"))),
    }
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        let data = kv.get("data").ok_or(ConfigError::Missing("data"))?.into();
        let delimiter = match kv.get("delimiter").unwrap_or(",") {
            "," | "comma" => ',',
            "tab" | "\\t" => '\t',
            ";" | "semicolon" => ';',
            other => return Err(bad("delimiter", format!("unsupported `{other}`"))),
        };
        let mut schema = ColumnSchema::new(
            kv.get("outcome").ok_or(ConfigError::Missing("outcome"))?,
            kv.get("treatment")
                .ok_or(ConfigError::Missing("treatment"))?,
            kv.list("covariates"),
        );
        schema.id_col = kv.get("id").filter(|s| !s.is_empty()).map(str::to_string);
        schema
            .validate()
            .map_err(|e| bad("covariates", e.to_string()))?;

        let model = ModelSpec::parse(kv.list("model")).map_err(|e| bad("model", e.to_string()))?;

        let pair = match kv.list("pair").as_slice() {
            [] => None,
            [a, b] => Some((a.clone(), b.clone())),
            _ => return Err(bad("pair", "expected exactly two variables")),
        };
        let menu_fixed = match kv.get("menu_fixed").filter(|s| !s.is_empty()) {
            None => None,
            Some(v) => match v.split_once('=') {
                None => Some((v.trim().to_string(), None)),
                Some((name, c)) => {
                    let c: f64 = c
                        .trim()
                        .parse()
                        .ok()
                        .filter(|c: &f64| c.is_finite())
                        .ok_or_else(|| bad("menu_fixed", format!("bad threshold `{c}`")))?;
                    Some((name.trim().to_string(), Some(c)))
                }
            },
        };
        let grid = kv
            .get("grid")
            .unwrap_or("observed")
            .parse()
            .map_err(|e: crate::search::SearchError| bad("grid", e.to_string()))?;
        let objective = kv
            .get("objective")
            .unwrap_or("avg")
            .parse()
            .map_err(|e: crate::search::SearchError| bad("objective", e.to_string()))?;
        let constraints = Constraints::new(
            parse_opt(kv, "min_share")?,
            parse_opt(kv, "max_share")?,
            parse_opt(kv, "max_treated")?,
        )
        .map_err(|e| bad("constraints", e.to_string()))?;
        let bins = parse_opt(kv, "bins")?.unwrap_or(20);
        if bins == 0 {
            return Err(bad("bins", "must be positive"));
        }
        let boundary_resolution = parse_opt(kv, "boundary_resolution")?.unwrap_or(100);
        if boundary_resolution < 2 {
            return Err(bad("boundary_resolution", "must be at least 2"));
        }
        Ok(Self {
            data,
            delimiter,
            schema,
            tau_col: kv.get("tau").filter(|s| !s.is_empty()).map(str::to_string),
            model,
            select: kv.list("select"),
            pair,
            menu_fixed,
            menu_varying: kv
                .get("menu_varying")
                .filter(|s| !s.is_empty())
                .map(str::to_string),
            grid,
            objective,
            constraints,
            star_screen: parse_bool(kv, "star_screen", true)?,
            bins,
            boundary_k: parse_opt(kv, "boundary_k")?,
            boundary_resolution,
            output: kv.get("output").unwrap_or("out").into(),
            random_free: parse_bool(kv, "random_free", true)?,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }
}
