//! Flat `key = value` run configuration with dotted namespaces.
//!
//! Values are JSON literals (`20`, `0.5`, `true`, `[0, 1]`, `"text"`); a bare
//! word is taken as a string and `a..b` expands to the integers `a` to `b - 1`.
//! Every key must name a field of [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::envs::{EnvKind, PendulumParams, WalkerParams};
use crate::error::{Error, Result};
use crate::runtime::RunConfig;
use crate::sac::{AgentConfig, Variant};

/// Knobs varied by the walker ablations, applied on top of `walker.*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvOverrides {
    /// Joint damping gain.
    pub kd: Option<f64>,
    /// Low-pass coefficient on PD targets.
    pub filter: Option<f64>,
    /// `false` widens the action box to the full joint range.
    pub constrained_action: bool,
    pub velocity_bias: Option<f64>,
}

impl Default for EnvOverrides {
    fn default() -> Self {
        Self {
            kd: None,
            filter: None,
            constrained_action: true,
            velocity_bias: None,
        }
    }
}

impl EnvOverrides {
    fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvKind,
    pub agent: AgentConfig,
    pub run: RunConfig,
    pub overrides: EnvOverrides,
    pub walker: WalkerParams,
    pub pendulum: PendulumParams,
    pub seeds: Vec<u64>,
    pub replay_capacity: usize,
    /// Also write the raw per-step log next to each curve.
    pub step_log: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "baseline".into(),
            env: EnvKind::MinimalWalker,
            agent: AgentConfig::default(),
            run: RunConfig::default(),
            overrides: EnvOverrides::default(),
            walker: WalkerParams::default(),
            pendulum: PendulumParams::default(),
            seeds: (0..10).collect(),
            replay_capacity: 1_000_000,
            step_log: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::default().with_overrides(&parse_pairs(text)?)
    }

    /// Applies `key = value` overrides. Setting `agent.variant` first resets
    /// every agent field to that variant's defaults.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut base = self.clone();
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "agent.variant") {
            let variant: Variant = parse_value(v).as_str().unwrap_or(v).parse()?;
            base.agent = AgentConfig::for_variant(variant);
        }
        let mut flat = flatten(&serde_json::to_value(&base).map_err(to_config)?);
        for (key, raw) in pairs {
            let slot = flat
                .get_mut(key)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            let mut value = parse_value(raw);
            if slot.is_string() && !value.is_string() {
                value = Value::String(raw.trim().to_string());
            }
            *slot = value;
        }
        let cfg: ExperimentConfig = serde_json::from_value(unflatten(&flat)).map_err(to_config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name {:?}", self.name)));
        }
        if self.replay_capacity < self.agent.batch_size {
            return Err(Error::Config("replay capacity below batch size".into()));
        }
        self.agent.validate()?;
        self.run.validate()?;
        match self.env {
            EnvKind::MinimalWalker => self.walker_params()?.validate()?,
            EnvKind::PendulumSpin => {
                if !self.overrides.is_default() {
                    return Err(Error::Config("env overrides apply to minimal_walker only".into()));
                }
                self.pendulum.validate()?;
            }
        }
        let period = self.env_control_period();
        if (period - self.run.control_period).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "run.control_period {} differs from the environment's {period}",
                self.run.control_period
            )));
        }
        Ok(())
    }

    fn env_control_period(&self) -> f64 {
        match self.env {
            EnvKind::MinimalWalker => self.walker.control_period,
            EnvKind::PendulumSpin => self.pendulum.control_period,
        }
    }

    /// Walker constants with the ablation overrides applied.
    pub fn walker_params(&self) -> Result<WalkerParams> {
        let mut p = self.walker.clone();
        let o = &self.overrides;
        if let Some(kd) = o.kd {
            p.gains.kd = kd;
        }
        if !o.constrained_action {
            let filter = p.action.filter;
            p.action = WalkerParams::unconstrained_action();
            p.action.filter = filter;
        }
        if let Some(beta) = o.filter {
            p.action.filter = beta;
        }
        if let Some(bias) = o.velocity_bias {
            p.velocity_bias = bias;
        }
        p.validate()?;
        Ok(p)
    }

    /// Every resolved key as a `key = value` line, sorted by key. The text is
    /// itself a valid config file.
    pub fn resolved_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        flatten(&value)
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`Self::resolved_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.resolved_text().as_bytes()))
    }

    /// Keys whose resolved values differ between two configs.
    pub fn diff_keys(&self, other: &Self) -> Vec<String> {
        let a = flatten(&serde_json::to_value(self).expect("config serializes"));
        let b = flatten(&serde_json::to_value(other).expect("config serializes"));
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

fn to_config(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

/// Splits a config file into `(key, raw value)` pairs. `#` starts a comment
/// line.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == key) {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses one `key=value` command-line override.
pub fn parse_assignment(arg: &str) -> Result<(String, String)> {
    parse_pairs(arg)?
        .pop()
        .ok_or_else(|| Error::Config(format!("expected key=value, got {arg:?}")))
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    if let Some((a, b)) = raw.split_once("..") {
        if let (Ok(a), Ok(b)) = (a.parse::<u64>(), b.parse::<u64>()) {
            return Value::Array((a..b).map(Value::from).collect());
        }
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), v.clone());
            } else {
                node = node
                    .entry(part)
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("prefix is an object");
            }
        }
    }
    Value::Object(root)
}
