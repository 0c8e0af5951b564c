//! Run configuration: JSON file merged with `--section.key value` overrides.

use std::path::{Path, PathBuf};

use danet_core::engine::TrainConfig;
use danet_core::metrics::AkldConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Accepted for interface compatibility; all kernels run on one thread.
    pub threads: usize,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 1,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training (or evaluation) dataset manifest.
    pub manifest: Option<PathBuf>,
    /// Held-out pairs scored after every epoch.
    pub validation: Option<PathBuf>,
    /// Clean images for the retraining stage; defaults to the training set's clean members.
    pub clean_pool: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub akld: AkldConfig,
}

/// Every offending key, one message each.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

/// Split `--a.b value` and `--a.b=value` pairs out of `args`.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("--{name} needs a value"))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

/// Leaves of a JSON object as dotted keys.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Set `key` in `root`. Fails if the key does not exist in `root` already.
fn set_existing(root: &mut Value, key: &str, value: Value) -> bool {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let Value::Object(m) = cur else { return false };
        let Some(next) = m.get_mut(*p) else { return false };
        if i + 1 == parts.len() {
            // Objects may only be replaced by objects, so `train.adam_r` cannot become a number.
            *next = match (next.take(), value) {
                (Value::Object(mut old), Value::Object(new)) => {
                    merge(&mut old, new);
                    Value::Object(old)
                }
                (_, v) => v,
            };
            return true;
        }
        cur = next;
    }
    false
}

fn merge(into: &mut Map<String, Value>, from: Map<String, Value>) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Object(a)), Value::Object(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// A command-line value: JSON if it parses, otherwise a string.
fn parse_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

impl RunConfig {
    /// Defaults, then the file at `path`, then `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigErrors> {
        let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let mut pairs = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigErrors(vec![format!("{}: {e}", p.display())]))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| ConfigErrors(vec![format!("{}: {e}", p.display())]))?;
            if !v.is_object() {
                return Err(ConfigErrors(vec![format!("{}: top level must be an object", p.display())]));
            }
            flatten("", &v, &mut pairs);
        }
        pairs.extend(overrides.iter().map(|(k, v)| (k.clone(), parse_value(v))));

        let mut errors = Vec::new();
        let mut merged = defaults.clone();
        for (key, value) in pairs {
            let mut alone = defaults.clone();
            if !set_existing(&mut alone, &key, value.clone()) {
                errors.push(format!("{key}: unknown key"));
                continue;
            }
            if let Err(e) = serde_json::from_value::<RunConfig>(alone) {
                errors.push(format!("{key}: {e}"));
                continue;
            }
            set_existing(&mut merged, &key, value);
        }
        let cfg = match serde_json::from_value::<RunConfig>(merged) {
            Ok(c) => c,
            Err(e) => {
                errors.push(e.to_string());
                return Err(ConfigErrors(errors));
            }
        };
        errors.extend(cfg.train.problems().into_iter().map(|p| format!("train: {p}")));
        if cfg.threads == 0 {
            errors.push("threads: must be >= 1".into());
        }
        if cfg.metrics.akld.samples == 0 {
            errors.push("metrics.akld.samples: must be >= 1".into());
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigErrors(errors))
        }
    }
}
