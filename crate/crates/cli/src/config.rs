//! Configuration loading and `path=value` overrides.

use std::path::Path;

use spinbath::model::{default_config, SystemConfig};
use toml::Value;

use crate::CliError;

pub struct LoadedConfig {
    pub config: SystemConfig,
    /// Bytes the configuration was read from; empty for built-in defaults.
    pub source: Vec<u8>,
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let (mut config, source) = match path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::new(format!("cannot read config {}: {e}", p.display())))?;
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| CliError::new(format!("config {} is not UTF-8", p.display())))?;
            let cfg = SystemConfig::from_toml_str(text)
                .map_err(|e| CliError::new(format!("config {}: {e}", p.display())))?;
            (cfg, bytes)
        }
        None => (default_config(), Vec::new()),
    };
    if !overrides.is_empty() {
        config = apply_overrides(&config, overrides)?;
    }
    config.validate().map_err(|e| CliError::new(format!("invalid configuration: {e}")))?;
    Ok(LoadedConfig { config, source })
}

fn typed_like(existing: Option<&Value>, raw: &str) -> Result<Value, String> {
    let raw = raw.trim();
    match existing {
        Some(Value::Float(_)) => raw.parse::<f64>().map(Value::Float).map_err(|_| format!("`{raw}` is not a number")),
        Some(Value::Integer(_)) => raw.parse::<i64>().map(Value::Integer).map_err(|_| format!("`{raw}` is not an integer")),
        Some(Value::Boolean(_)) => raw.parse::<bool>().map(Value::Boolean).map_err(|_| format!("`{raw}` is not a boolean")),
        Some(Value::String(_)) => Ok(Value::String(raw.to_string())),
        Some(_) => Err("cannot override a table or array with a scalar".into()),
        None => Ok(if let Ok(i) = raw.parse::<i64>() {
            Value::Integer(i)
        } else if let Ok(f) = raw.parse::<f64>() {
            Value::Float(f)
        } else if let Ok(b) = raw.parse::<bool>() {
            Value::Boolean(b)
        } else {
            Value::String(raw.to_string())
        }),
    }
}

fn set_path(root: &mut Value, path: &str, raw: &str) -> Result<(), String> {
    let segments: Vec<&str> = path.split('.').map(str::trim).collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(format!("malformed key `{path}`"));
    }
    let (last, parents) = segments.split_last().expect("non-empty path");
    let mut node = root;
    for seg in parents {
        node = match node {
            Value::Table(t) => t.get_mut(*seg).ok_or_else(|| format!("unknown key `{seg}` in `{path}`"))?,
            Value::Array(a) => {
                let i: usize = seg.parse().map_err(|_| format!("`{seg}` is not an index in `{path}`"))?;
                let len = a.len();
                a.get_mut(i).ok_or_else(|| format!("index {i} out of range ({len} entries) in `{path}`"))?
            }
            _ => return Err(format!("`{seg}` is not a table in `{path}`")),
        };
    }
    match node {
        Value::Table(t) => {
            let v = typed_like(t.get(*last), raw)?;
            t.insert(last.to_string(), v);
        }
        Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| format!("`{last}` is not an index in `{path}`"))?;
            let len = a.len();
            let slot = a.get_mut(i).ok_or_else(|| format!("index {i} out of range ({len} entries) in `{path}`"))?;
            *slot = typed_like(Some(slot), raw)?;
        }
        _ => return Err(format!("cannot set `{path}`")),
    }
    Ok(())
}

pub fn apply_overrides(config: &SystemConfig, overrides: &[String]) -> Result<SystemConfig, CliError> {
    let mut value = Value::try_from(config).map_err(|e| CliError::new(format!("config serialization: {e}")))?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::new(format!("override `{o}` is not of the form key=value")))?;
        set_path(&mut value, k.trim(), v).map_err(|e| CliError::new(format!("override `{o}`: {e}")))?;
    }
    let text = toml::to_string(&value).map_err(|e| CliError::new(format!("config serialization: {e}")))?;
    SystemConfig::from_toml_str(&text).map_err(|e| CliError::new(format!("overrides produce an invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_change_typed_fields() {
        let cfg = default_config();
        let out = apply_overrides(
            &cfg,
            &["constants.b_z_gauss=480".into(), "carbon.0.a_xz_khz=110".into(), "nitrogen_levels=3".into()],
        )
        .unwrap();
        assert_eq!(out.constants.b_z_gauss, 480.0);
        assert_eq!(out.carbons[0].a_xz, 110.0);
        assert_eq!(out.nitrogen_levels, 3);
        assert_eq!(out.carbons[1], cfg.carbons[1]);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let cfg = default_config();
        for o in ["constants.nope=1", "carbon.9.a_zz_khz=1", "constants.b_z_gauss=abc", "novalue", "carbon.x.a=1"] {
            assert!(apply_overrides(&cfg, &[o.to_string()]).is_err(), "{o}");
        }
    }

    #[test]
    fn override_result_round_trips_through_toml() {
        let cfg = apply_overrides(&default_config(), &["constants.a_par_mhz=-2.2".into()]).unwrap();
        let back = SystemConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
