//! Flat `key=value` view of any serde-serializable settings struct. Nested
//! groups become dotted keys (`stage1.epochs=400`); an override must name an
//! existing key and parse as that key's current type.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn insert_path(root: &mut Map<String, Value>, key: &str, value: Value) {
    match key.split_once('.') {
        Some((head, rest)) => {
            let child = root.entry(head).or_insert_with(|| Value::Object(Map::new()));
            if let Value::Object(m) = child {
                insert_path(m, rest, value);
            }
        }
        None => {
            root.insert(key.to_string(), value);
        }
    }
}

/// Parses `raw` with the JSON type of `like`.
fn typed_value(key: &str, raw: &str, like: &Value) -> Result<Value> {
    let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got '{raw}'"));
    match like {
        Value::Bool(_) => raw.parse::<bool>().map(Value::Bool).map_err(|_| bad("true or false")),
        Value::Number(n) if n.is_u64() => raw.parse::<u64>().map(Value::from).map_err(|_| bad("a non-negative integer")),
        Value::Number(_) => {
            let x = raw.parse::<f64>().map_err(|_| bad("a number"))?;
            Number::from_f64(x).map(Value::Number).ok_or_else(|| bad("a finite number"))
        }
        _ => Ok(Value::String(raw.to_string())),
    }
}

fn flat_map<S: Serialize>(value: &S) -> BTreeMap<String, Value> {
    let mut flat = BTreeMap::new();
    flatten("", &serde_json::to_value(value).expect("settings serialize to JSON"), &mut flat);
    flat
}

/// All keys in sorted order with their rendered values.
pub fn to_entries<S: Serialize>(value: &S) -> Vec<(String, String)> {
    flat_map(value)
        .into_iter()
        .map(|(k, v)| {
            let s = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            (k, s)
        })
        .collect()
}

/// Copy of `base` with the given keys replaced. Later entries win.
pub fn with_overrides<S, K, V>(base: &S, entries: &[(K, V)]) -> Result<S>
where
    S: Serialize + DeserializeOwned,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut flat = flat_map(base);
    for (k, v) in entries {
        let (k, v) = (k.as_ref(), v.as_ref());
        let like = flat.get(k).ok_or_else(|| Error::Config(format!("unknown key '{k}'")))?;
        let value = typed_value(k, v, like)?;
        flat.insert(k.to_string(), value);
    }
    let mut root = Map::new();
    for (k, v) in flat {
        insert_path(&mut root, &k, v);
    }
    serde_json::from_value(Value::Object(root)).map_err(|e| Error::Config(e.to_string()))
}
