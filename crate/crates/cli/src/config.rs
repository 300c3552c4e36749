//! Experiment configs: built-in presets, TOML files and `key=value` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use kur_core::ExperimentConfig;
use toml::{Table, Value};

pub const PRESETS: [(&str, &str); 3] = [
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("figS1", include_str!("../presets/figS1.toml")),
];

pub fn preset_source(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, s)| *s)
        .ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            anyhow!("unknown preset {name:?}; available: {}", names.join(", "))
        })
}

pub fn load_table(preset: Option<&str>, file: Option<&Path>) -> Result<Table> {
    let source = match (preset, file) {
        (Some(_), Some(_)) => bail!("give either --preset or --config, not both"),
        (Some(name), None) => preset_source(name)?.to_string(),
        (None, Some(path)) => {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, None) => bail!("one of --preset or --config is required"),
    };
    source.parse::<Table>().context("parsing TOML config")
}

/// Applies `a.b=value` overrides. The value is parsed as a TOML literal and
/// falls back to a plain string.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("override {item:?} is not of the form key=value"))?;
        let value = parse_literal(raw.trim());
        let mut path: Vec<&str> = key.trim().split('.').collect();
        let last = path
            .pop()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| anyhow!("empty key in {item:?}"))?;
        let mut node = &mut *table;
        for part in path {
            node = node
                .entry(part)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("{part} in {key} is not a table"))?;
        }
        node.insert(last.to_string(), value);
    }
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Deserializes the table, checking that its kind matches `expected`.
pub fn into_config(mut table: Table, expected: &str) -> Result<ExperimentConfig> {
    match table.get("kind").and_then(Value::as_str) {
        Some(kind) if kind != expected => {
            bail!("config is a {kind} experiment but {expected} was requested")
        }
        Some(_) => {}
        None => {
            table.insert("kind".into(), Value::String(expected.into()));
        }
    }
    let cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .context("invalid experiment config")?;
    cfg.validate()?;
    Ok(cfg)
}
