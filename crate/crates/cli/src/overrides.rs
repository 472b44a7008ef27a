//! Layering of defaults, config files and `--set key=value` overrides.

use std::path::Path;

use geotransfer::pipeline::TrainConfig;
use geotransfer::{Error, Result};
use serde_json::Value;

fn lookup<'a>(root: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(root, |v, k| v.as_object()?.get(*k))
}

/// Recursively copies `src` into `dst`, rejecting keys absent from `schema`.
fn merge(dst: &mut Value, src: &Value, schema: &Value, prefix: &str) -> Result<()> {
    let Some(obj) = src.as_object() else {
        *dst = src.clone();
        return Ok(());
    };
    if !schema.is_object() {
        *dst = src.clone();
        return Ok(());
    }
    for (k, v) in obj {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let sub = schema
            .get(k)
            .ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))?;
        if !dst.is_object() {
            *dst = Value::Object(Default::default());
        }
        let slot = dst.as_object_mut().unwrap().entry(k.clone()).or_insert(Value::Null);
        merge(slot, v, sub, &key)?;
    }
    Ok(())
}

/// Parses `key=value`; the value is JSON when it parses as JSON, a string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not of the form key=value")))?;
    let path: Vec<String> = k.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{k}' is malformed")));
    }
    let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string()));
    Ok((path, value))
}

/// `base`, then the config file, then overrides, then `seed`.
pub fn resolve(base: &TrainConfig, file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<TrainConfig> {
    let schema = serde_json::to_value(TrainConfig::default())?;
    let mut value = serde_json::to_value(base)?;
    if let Some(p) = file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        if !parsed.is_object() {
            return Err(Error::Config(format!("{} must hold a JSON object", p.display())));
        }
        merge(&mut value, &parsed, &schema, "")?;
    }
    for s in sets {
        let (path, v) = parse_override(s)?;
        let keys: Vec<&str> = path.iter().map(String::as_str).collect();
        if lookup(&schema, &keys).is_none() {
            return Err(Error::Config(format!("unknown configuration key '{}'", path.join("."))));
        }
        let (last, parents) = keys.split_last().unwrap();
        let mut slot = &mut value;
        for k in parents {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(*k))
                .ok_or_else(|| Error::Config(format!("configuration key '{}' is not set", path.join("."))))?;
        }
        slot.as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{}' does not name a field", path.join("."))))?
            .insert(last.to_string(), v);
    }
    if let Some(s) = seed {
        value["seed"] = Value::from(s);
    }
    let cfg: TrainConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
