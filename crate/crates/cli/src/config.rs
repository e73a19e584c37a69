//! Layered configuration: built-in defaults, then an optional TOML file,
//! then `--set key.path=value` overrides.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::CliError;

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn apply_set(root: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::usage(format!("override key `{path}` is malformed")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::config(format!("`{k}` in `{path}` is not a table"))),
        };
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Defaults of `T`, overlaid with `file` and then `sets`. Unknown keys are
/// rejected by `T`'s deserializer.
pub fn layered<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, sets: &[String]) -> Result<T, CliError> {
    let mut root = match Value::try_from(T::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config structs serialize to tables"),
    };
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let over: Table = text.parse().map_err(|e: toml::de::Error| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        merge(&mut root, over);
    }
    for s in sets {
        apply_set(&mut root, s)?;
    }
    Value::Table(root).try_into().map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use splat7d::train::TrainConfig;

    #[test]
    fn precedence_is_default_file_then_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "iterations = 10\nseed = 3\n[lr]\nopacity = 0.2\n").unwrap();
        let sets = vec!["iterations=20".to_string(), "render.slice.lambda_t = 0.05".to_string()];
        let cfg: TrainConfig = layered(Some(&p), &sets).unwrap();
        assert_eq!(cfg.iterations, 20);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.lr.opacity, 0.2);
        assert_eq!(cfg.lr.sh_dc, TrainConfig::default().lr.sh_dc);
        assert_eq!(cfg.render.slice.lambda_t, 0.05);
    }

    #[test]
    fn unknown_keys_and_bad_types_are_rejected() {
        assert!(layered::<TrainConfig>(None, &["itrations=3".into()]).is_err());
        assert!(layered::<TrainConfig>(None, &["lr.bogus=3".into()]).is_err());
        assert!(layered::<TrainConfig>(None, &["iterations=fast".into()]).is_err());
        assert!(layered::<TrainConfig>(None, &["iterations".into()]).is_err());
    }

    #[test]
    fn enum_and_string_values() {
        let cfg: TrainConfig = layered(None, &["render.slice.opacity_mode=sqrt_product".into(), "agr=false".into()]).unwrap();
        assert_eq!(cfg.render.slice.opacity_mode, splat7d::OpacityMode::SqrtProduct);
        assert!(!cfg.agr);
    }

    #[test]
    fn echoed_config_reloads_identically() {
        let cfg: TrainConfig = layered(None, &["densify.until=40".into(), "init.count=7".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("echo.toml");
        fs::write(&p, to_toml(&cfg)).unwrap();
        let again: TrainConfig = layered(Some(&p), &[]).unwrap();
        assert_eq!(again, cfg);
    }
}
