//! Flat `key = value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `desk_scale` preset,
//! values from the config file, command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::game::MinerType;
use crate::sim::SimConfig;
use crate::strategy::StrategyKind;
use crate::sweep::{EqAggregate, Layout, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.source, l, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Every key the config file accepts.
pub const KEYS: &[&str] = &[
    "seed",
    "reps",
    "cap",
    "alpha",
    "window",
    "epsilon",
    "aggregate",
    "step",
    "n_malicious",
    "model",
    "layout",
    "strategies",
    "types",
    "powers",
    "desk_scale",
];

/// Raw key/value pairs, remembering where each came from.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, String, Option<usize>)>,
}

impl RawConfig {
    pub fn parse(source: &str, text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError {
                source: source.to_string(),
                line: Some(lineno),
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(err(format!("unknown key `{}`", k.trim())));
            }
            if raw.entries.contains_key(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            raw.entries
                .insert(key, (v.trim().to_string(), source.to_string(), Some(lineno)));
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source: path.display().to_string(),
            line: None,
            message: e.to_string(),
        })?;
        Self::parse(&path.display().to_string(), &text)
    }

    /// Values of `over` replace ours key by key.
    pub fn overlay(mut self, over: RawConfig) -> Self {
        self.entries.extend(over.entries);
        self
    }

    pub fn seed(&self) -> Result<Option<u64>, ConfigError> {
        self.get("seed")
    }

    /// Sets a value coming from a command-line flag.
    pub fn set_flag(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(
            key.to_string(),
            (value.to_string(), format!("--{}", key.replace('_', "-")), None),
        );
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, source, line)) => v.parse::<T>().map(Some).map_err(|e| ConfigError {
                source: source.clone(),
                line: *line,
                message: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, source, line)) => v
                .split(',')
                .map(|item| item.trim().parse::<T>())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|e| ConfigError {
                    source: source.clone(),
                    line: *line,
                    message: format!("bad value for `{key}`: {e}"),
                }),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let desk = self.get::<bool>("desk_scale")?.unwrap_or(false);
        let mut sim = if desk {
            SimConfig::desk_scale()
        } else {
            SimConfig::default()
        };
        if let Some(v) = self.get("reps")? {
            sim.repetitions = v;
        }
        if let Some(v) = self.get("cap")? {
            sim.step_cap = v;
        }
        if let Some(v) = self.get("alpha")? {
            sim.alpha = v;
        }
        if let Some(v) = self.get("window")? {
            sim.window = v;
        }
        let seed: Option<u64> = self.get("seed")?;
        sim.seed = seed.unwrap_or(0);
        sim.validate().map_err(|e| ConfigError {
            source: "config".into(),
            line: None,
            message: e.to_string(),
        })?;
        let epsilon = self.get::<f64>("epsilon")?.unwrap_or(1e-4);
        if !(epsilon >= 0.0) {
            return Err(self.error_at("epsilon", format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(RunConfig {
            sim,
            seed,
            desk_scale: desk,
            epsilon,
            aggregate: self.get("aggregate")?.unwrap_or_default(),
            step: self.get("step")?,
            n_malicious: self.get_list("n_malicious")?.unwrap_or_else(|| vec![1]),
            models: self.get_list("model")?.unwrap_or_else(|| vec![Model::Fixed]),
            layouts: self.get_list("layout")?.unwrap_or_else(|| vec![Layout::Full]),
            strategies: self.get_list::<StrategyKind>("strategies")?,
            types: self.get_list::<MinerType>("types")?,
            powers: self.get_list::<f64>("powers")?,
        })
    }

    pub fn error_at(&self, key: &str, message: String) -> ConfigError {
        let (source, line) = self
            .entries
            .get(key)
            .map(|(_, s, l)| (s.clone(), *l))
            .unwrap_or_else(|| ("config".into(), None));
        ConfigError {
            source,
            line,
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `sim.seed` holds the explicit seed, or 0 when none was given.
    pub sim: SimConfig,
    pub seed: Option<u64>,
    pub desk_scale: bool,
    pub epsilon: f64,
    pub aggregate: EqAggregate,
    pub step: Option<f64>,
    pub n_malicious: Vec<usize>,
    pub models: Vec<Model>,
    pub layouts: Vec<Layout>,
    pub strategies: Option<Vec<StrategyKind>>,
    pub types: Option<Vec<MinerType>>,
    pub powers: Option<Vec<f64>>,
}

impl RunConfig {
    /// Parameters that change simulated or derived numbers, excluding the
    /// seed (recorded separately) and the grid selection.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        [
            ("alpha", self.sim.alpha.to_string()),
            ("cap", self.sim.step_cap.to_string()),
            ("reps", self.sim.repetitions.to_string()),
            ("window", self.sim.window.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("aggregate", self.aggregate.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// SHA-256 over the snapshot, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.snapshot() {
            h.update(format!("{k}={v}\n"));
        }
        hex::encode(h.finalize())
    }
}
