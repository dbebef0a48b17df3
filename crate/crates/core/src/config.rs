//! Run configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Command-line flags override file values. Relative paths are
//! resolved against the directory of the config file. The API key is read
//! from the environment only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::evaluation::Condition;
use crate::gateway::cache::DiskCache;
use crate::gateway::http::{HttpConfig, OpenAiBackend};
use crate::gateway::mock::{MockScript, ScriptedMock};
use crate::gateway::simulator::{BiasedAgent, BiasedAgentConfig};
use crate::gateway::{Backend, CallParams, Gateway, GatewayError, DEFAULT_MAX_TOKENS};
use crate::strategies::StrategyId;

pub const DEFAULT_SAMPLE_SIZE: usize = 500;

pub const KEYS: &[&str] = &[
    "backend",
    "base_url",
    "model_id",
    "script_path",
    "p_target_treatment",
    "p_target_control",
    "dataset",
    "exemplars",
    "shots",
    "strategy",
    "conditions",
    "t_max",
    "temperature",
    "max_tokens",
    "sample_size",
    "seed",
    "cache_dir",
    "templates_path",
    "output_dir",
    "workers",
    "max_attempts",
];

const PATH_KEYS: &[&str] = &["script_path", "dataset", "exemplars", "cache_dir", "templates_path", "output_dir"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing required config key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Http { base_url: String, model_id: String },
    Mock { script_path: PathBuf },
    Simulator(BiasedAgentConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub model_id: String,
    pub strategies: Vec<StrategyId>,
    pub conditions: Vec<Condition>,
    pub t_max: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub sample_size: Option<usize>,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub shots: usize,
    pub cache_dir: Option<PathBuf>,
    pub templates_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub max_attempts: u32,
}

/// Parses `key = value` lines into a map, rejecting unknown keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(head, _)| head).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: n + 1, reason: "expected `key = value`".into() })?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(ConfigError::Syntax { line: n + 1, reason: format!("`{key}` set twice") });
        }
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| ConfigError::Invalid { key: key.into(), reason: e.to_string() }))
        .transpose()
}

fn csv<T: std::str::FromStr<Err = String>>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|reason| ConfigError::Invalid { key: key.into(), reason }))
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        let mut map = parse_pairs(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for key in PATH_KEYS {
            if let Some(v) = map.get_mut(*key) {
                *v = base.join(&*v).display().to_string();
            }
        }
        map.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        Self::from_map(&map)
    }

    /// Builds a config from already-resolved pairs.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        if let Some(key) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        let path = |key: &str| map.get(key).filter(|v| !v.is_empty()).map(PathBuf::from);
        let model_id = map.get("model_id").cloned().unwrap_or_else(|| CallParams::default().model_id);
        let seed = parse_num::<u64>(map, "seed")?.unwrap_or(0);
        let backend = match map.get("backend").map(String::as_str) {
            None => return Err(ConfigError::Missing("backend")),
            Some("http") => BackendConfig::Http {
                base_url: map.get("base_url").cloned().ok_or(ConfigError::Missing("base_url"))?,
                model_id: map.get("model_id").cloned().ok_or(ConfigError::Missing("model_id"))?,
            },
            Some("mock") => BackendConfig::Mock { script_path: path("script_path").ok_or(ConfigError::Missing("script_path"))? },
            Some("simulator") => {
                let config = BiasedAgentConfig {
                    p_target_treatment: parse_num(map, "p_target_treatment")?.ok_or(ConfigError::Missing("p_target_treatment"))?,
                    p_target_control: parse_num(map, "p_target_control")?.ok_or(ConfigError::Missing("p_target_control"))?,
                    seed,
                };
                config.validate().map_err(|e| ConfigError::Invalid { key: "p_target_*".into(), reason: e.to_string() })?;
                BackendConfig::Simulator(config)
            }
            Some(other) => {
                return Err(ConfigError::Invalid {
                    key: "backend".into(),
                    reason: format!("`{other}` is not one of http, mock, simulator"),
                })
            }
        };
        let strategies = match map.get("strategy") {
            Some(v) => csv::<StrategyId>("strategy", v)?,
            None => vec![StrategyId::Vanilla],
        };
        if strategies.is_empty() {
            return Err(ConfigError::Invalid { key: "strategy".into(), reason: "no strategy given".into() });
        }
        let conditions = match map.get("conditions") {
            Some(v) => csv::<Condition>("conditions", v)?,
            None => Condition::ALL.to_vec(),
        };
        if conditions.is_empty() {
            return Err(ConfigError::Invalid { key: "conditions".into(), reason: "no condition given".into() });
        }
        let config = RunConfig {
            backend,
            model_id,
            strategies,
            conditions,
            t_max: parse_num(map, "t_max")?.unwrap_or(crate::sacd::DEFAULT_T_MAX),
            temperature: parse_num(map, "temperature")?.unwrap_or(0.0),
            max_tokens: parse_num(map, "max_tokens")?.unwrap_or(DEFAULT_MAX_TOKENS),
            sample_size: parse_num(map, "sample_size")?,
            seed,
            dataset: path("dataset"),
            exemplars: path("exemplars"),
            shots: parse_num(map, "shots")?.unwrap_or(crate::strategies::DEFAULT_SHOTS),
            cache_dir: path("cache_dir"),
            templates_path: path("templates_path"),
            output_dir: path("output_dir").unwrap_or_else(|| PathBuf::from("out")),
            workers: parse_num(map, "workers")?.unwrap_or(4),
            max_attempts: parse_num(map, "max_attempts")?.unwrap_or(3),
        };
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| Err(ConfigError::Invalid { key: key.into(), reason: reason.into() });
        if self.t_max == 0 {
            return bad("t_max", "must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature", "must be a finite value >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens", "must be positive");
        }
        if self.sample_size == Some(0) {
            return bad("sample_size", "must be positive");
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts", "must be at least 1");
        }
        if self.shots == 0 {
            return bad("shots", "must be at least 1");
        }
        Ok(())
    }

    pub fn call_params(&self) -> CallParams {
        CallParams { model_id: self.model_id.clone(), temperature: self.temperature, max_tokens: self.max_tokens }
    }

    /// Instantiates the backend. Responses are cached on disk only for the
    /// HTTP backend; the others are already deterministic.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        let backend: Box<dyn Backend> = match &self.backend {
            BackendConfig::Http { base_url, .. } => {
                let mut http = HttpConfig::from_env(base_url.clone())?;
                http.max_attempts = self.max_attempts;
                let mut gateway = Gateway::new(Box::new(OpenAiBackend::new(http)));
                if let Some(dir) = &self.cache_dir {
                    gateway = gateway.with_cache(DiskCache::new(dir)?);
                }
                Box::new(gateway)
            }
            BackendConfig::Mock { script_path } => {
                Box::new(Gateway::new(Box::new(ScriptedMock::try_new(MockScript::load(script_path)?)?)))
            }
            BackendConfig::Simulator(config) => Box::new(Gateway::new(Box::new(BiasedAgent::new(*config)?))),
        };
        Ok(backend)
    }

    /// Every run input except the output location and the worker count,
    /// neither of which can change results.
    pub fn echo(&self, extra: &[(&str, serde_json::Value)]) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        obj.remove("output_dir");
        obj.remove("workers");
        for (k, v) in extra {
            obj.insert(k.to_string(), v.clone());
        }
        value
    }
}
