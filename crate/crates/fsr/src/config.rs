//! Training run configuration.
//!
//! Two syntaxes are accepted. A file whose first non-blank byte is `{` is
//! JSON:
//!
//! ```json
//! {"epochs": 20, "variant": "-L", "model": {"preset": "desk", "hidden": 64}}
//! ```
//!
//! Anything else is `key = value` lines, `#` starting a comment:
//!
//! ```text
//! epochs = 20
//! variant = -L
//! model.preset = desk
//! model.hidden = 64
//! ```
//!
//! Training keys sit at the top level, model keys under `model`. Omitted
//! keys take their defaults and unknown keys are errors.

use std::path::Path;

use fsr_core::{ModelConfig, TrainConfig, Variant};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub variant: Variant,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            variant: Variant::FULL,
        }
    }
}

fn config_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

type KeyLines = Vec<(String, usize)>;

/// `key = value` text as a JSON object, remembering each key's line.
fn parse_lines(text: &str) -> Result<(Map<String, Value>, KeyLines)> {
    let mut root = Map::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| config_err(line, format!("expected key = value, got {body:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(config_err(line, "empty key"));
        }
        // bare words such as `bicubic` or `-L` are strings
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let (table, field) = match key.split_once('.') {
            Some(("model", field)) => {
                let entry = root.entry("model").or_insert_with(|| Value::Object(Map::new()));
                (entry.as_object_mut().expect("model table"), field)
            }
            Some(_) => return Err(config_err(line, format!("unknown section in {key:?}"))),
            None => (&mut root, key),
        };
        if table.insert(field.to_string(), value).is_some() {
            return Err(config_err(line, format!("duplicate key {key:?}")));
        }
        lines.push((key.to_string(), line));
    }
    Ok((root, lines))
}

fn known_keys<T: serde::Serialize>(defaults: &T) -> Vec<String> {
    match serde_json::to_value(defaults) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let (mut root, lines) = if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(text).map_err(|e| config_err(e.line(), e.to_string()))?;
        match v {
            Value::Object(m) => (m, Vec::new()),
            _ => return Err(config_err(1, "top level must be an object")),
        }
    } else {
        parse_lines(text)?
    };
    let line_of = |key: &str| lines.iter().find(|(k, _)| k == key).map_or(0, |(_, l)| *l);

    let mut cfg = RunConfig::default();
    if let Some(v) = root.remove("variant") {
        let label = v.as_str().unwrap_or_default();
        cfg.variant = Variant::from_label(label).ok_or_else(|| {
            config_err(
                line_of("variant"),
                format!("unknown variant {v}; expected full, -L, -G or -S"),
            )
        })?;
    }

    let mut model = match root.remove("model") {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(config_err(line_of("model"), "model must be a table")),
    };
    let base = match model.remove("preset") {
        None => ModelConfig::default(),
        Some(v) => match v.as_str() {
            Some("default") => ModelConfig::default(),
            Some("desk") => ModelConfig::desk(),
            _ => {
                return Err(config_err(
                    line_of("model.preset"),
                    format!("unknown preset {v}; expected default or desk"),
                ))
            }
        },
    };
    let model_keys = known_keys(&base);
    if let Some(k) = model.keys().find(|k| !model_keys.contains(k)) {
        return Err(config_err(
            line_of(&format!("model.{k}")),
            format!("unknown key model.{k}"),
        ));
    }
    let mut merged = match serde_json::to_value(base)? {
        Value::Object(m) => m,
        _ => unreachable!("structs serialize to objects"),
    };
    merged.extend(model);
    cfg.model = serde_json::from_value(Value::Object(merged)).map_err(|e| config_err(0, format!("model: {e}")))?;

    let train_keys = known_keys(&cfg.train);
    if let Some(k) = root.keys().find(|k| !train_keys.contains(k)) {
        return Err(config_err(line_of(k), format!("unknown key {k}")));
    }
    for (k, _) in &root {
        let one: Map<String, Value> = [(k.clone(), root[k].clone())].into_iter().collect();
        serde_json::from_value::<TrainConfig>(Value::Object(one))
            .map_err(|e| config_err(line_of(k), format!("{k}: {e}")))?;
    }
    cfg.train = serde_json::from_value(Value::Object(root))?;

    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fsr_core::trainer::Degradation;

    #[test]
    fn key_value_and_json_agree() {
        let kv = "# desk run\nepochs = 3\nlearning_rate = 1e-3\ndegradation = nearest\nvariant = -G\nmodel.preset = desk\nmodel.hidden = 32\n";
        let js = r#"{"epochs": 3, "learning_rate": 0.001, "degradation": "nearest", "variant": "-G",
                     "model": {"preset": "desk", "hidden": 32}}"#;
        let a = parse(kv).unwrap();
        assert_eq!(a, parse(js).unwrap());
        assert_eq!(a.train.epochs, 3);
        assert_eq!(a.train.degradation, Degradation::Nearest);
        assert_eq!(a.variant, Variant::NO_MODULATION);
        assert_eq!(a.model.hidden, 32);
        assert_eq!(a.model.features, ModelConfig::desk().features);
        assert_eq!(a.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn empty_is_default() {
        assert_eq!(parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("epochs = 2\nepoch = 3\n", 2),
            ("epochs = 2\nmodel.width = 3\n", 2),
            ("\n\nbatch_size = many\n", 3),
            ("variant = -Q\n", 1),
            ("epochs 4\n", 1),
            ("epochs = 1\nepochs = 2\n", 2),
        ];
        for (text, want) in cases {
            match parse(text) {
                Err(Error::Config { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse("scale_min = 3\nscale_max = 2\n").is_err());
        assert!(parse("model.hidden = 0\n").is_err());
    }
}
