//! JSON form of [`WeightConfig`]: `{"mode": "dem"|"interpolation", "weights": {label: w}}`.
//! Key order in `weights` is the summation order.

use demerge_core::{MergeMode, WeightConfig};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub fn to_json(config: &WeightConfig) -> Value {
    let weights: Map<String, Value> = config
        .entries
        .iter()
        .map(|e| (e.label.clone(), Value::from(e.weight)))
        .collect();
    let mut obj = Map::new();
    obj.insert("mode".into(), config.mode.as_str().into());
    obj.insert("weights".into(), Value::Object(weights));
    Value::Object(obj)
}

pub fn from_json(value: &Value) -> Result<WeightConfig> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::config("weight config must be a JSON object"))?;
    // a search report replays its best trial
    if let (Some(best), Some(_)) = (obj.get("best"), obj.get("trials")) {
        return from_json(best);
    }
    let mode = obj
        .get("mode")
        .and_then(Value::as_str)
        .and_then(MergeMode::parse)
        .ok_or_else(|| Error::config("weight config needs \"mode\": \"dem\" or \"interpolation\""))?;
    let weights = obj
        .get("weights")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::config("weight config needs a \"weights\" object"))?;
    if let Some(extra) = obj.keys().find(|k| *k != "mode" && *k != "weights") {
        return Err(Error::config(format!("unknown weight config field '{extra}'")));
    }
    let entries = weights
        .iter()
        .map(|(label, w)| {
            w.as_f64()
                .map(|w| (label.clone(), w))
                .ok_or_else(|| Error::config(format!("weight for '{label}' is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightConfig::new(mode, entries)?)
}

pub fn parse(text: &str) -> Result<WeightConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::config(format!("weights are not valid JSON: {e}")))?;
    from_json(&value)
}

/// Accepts inline JSON or a path to a JSON file.
pub fn load(arg: &str) -> Result<WeightConfig> {
    if arg.trim_start().starts_with('{') {
        return parse(arg);
    }
    let text = std::fs::read_to_string(arg)
        .map_err(|e| Error::config(format!("cannot read weights file '{arg}': {e}")))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_entry_order() {
        let w = parse(r#"{"mode":"dem","weights":{"z":0.5,"a":-0.25}}"#).unwrap();
        assert_eq!(w.labels().collect::<Vec<_>>(), ["z", "a"]);
        assert_eq!(
            serde_json::to_string(&to_json(&w)).unwrap(),
            r#"{"mode":"dem","weights":{"z":0.5,"a":-0.25}}"#
        );
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"mode":"x","weights":{}}"#,
            r#"{"mode":"dem"}"#,
            r#"{"mode":"dem","weights":{"a":"1"}}"#,
            r#"{"mode":"interpolation","weights":{"a":0.5}}"#,
            r#"{"mode":"dem","weights":{},"extra":1}"#,
            "[1]",
            "{",
        ] {
            let err = parse(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }

    #[test]
    fn replays_best_from_report() {
        let w = parse(r#"{"trials":[],"best":{"mode":"dem","weights":{"a":0.25}}}"#).unwrap();
        assert_eq!(w.weight("a"), Some(0.25));
    }
}
