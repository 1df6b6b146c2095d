//! The published schema and the typed config parser must agree on every
//! bundled config and on a few broken ones.

use std::path::Path;

use bitscale::cli::config::{parse_config, SCHEMA};
use serde_json::Value;

/// Draft-07 subset used by the schema file.
fn valid(root: &Value, schema: &Value, v: &Value) -> bool {
    let Some(s) = schema.as_object() else { return true };
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        let name = r.trim_start_matches("#/definitions/");
        return valid(root, &root["definitions"][name], v);
    }
    if let Some(alts) = s.get("oneOf").and_then(Value::as_array) {
        if alts.iter().filter(|a| valid(root, a, v)).count() != 1 {
            return false;
        }
    }
    if let Some(c) = s.get("const") {
        if c != v {
            return false;
        }
    }
    if let Some(e) = s.get("enum").and_then(Value::as_array) {
        if !e.contains(v) {
            return false;
        }
    }
    if let Some(t) = s.get("type") {
        let types: Vec<&str> = match t {
            Value::String(x) => vec![x.as_str()],
            Value::Array(xs) => xs.iter().filter_map(Value::as_str).collect(),
            _ => vec![],
        };
        let ok = types.iter().any(|t| match *t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "integer" => v.is_u64() || v.is_i64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        });
        if !ok {
            return false;
        }
    }
    if let Some(x) = v.as_f64() {
        if s.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m)
            || s.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m)
            || s.get("exclusiveMinimum").and_then(Value::as_f64).is_some_and(|m| x <= m)
        {
            return false;
        }
    }
    if let Some(items) = v.as_array() {
        if s.get("minItems").and_then(Value::as_u64).is_some_and(|m| (items.len() as u64) < m) {
            return false;
        }
        if let Some(is) = s.get("items") {
            if !items.iter().all(|i| valid(root, is, i)) {
                return false;
            }
        }
    }
    if let Some(obj) = v.as_object() {
        let props = s.get("properties").and_then(Value::as_object);
        if let Some(req) = s.get("required").and_then(Value::as_array) {
            if !req.iter().filter_map(Value::as_str).all(|k| obj.contains_key(k)) {
                return false;
            }
        }
        for (k, val) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(ps) => {
                    if !valid(root, ps, val) {
                        return false;
                    }
                }
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => return false,
                None => {}
            }
        }
    }
    true
}

fn schema() -> Value {
    serde_json::from_str(SCHEMA).unwrap()
}

#[test]
fn bundled_configs_satisfy_schema_and_parser() {
    let root = schema();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let text = std::fs::read_to_string(e.unwrap().path()).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert!(valid(&root, &root, &v), "schema rejects {text}");
        parse_config(&text).unwrap();
        n += 1;
    }
    assert_eq!(n, 7);
}

#[test]
fn broken_configs_rejected_by_both() {
    let root = schema();
    let cases = [
        r#"{"seed":0,"experiment":{"kind":"quantize","tensor":{"values":[[1.0]]},"spec":{"bits":2,"scheme":"integer","granularity":"per_tensor","x":1}}}"#,
        r#"{"seed":0,"experiment":{"kind":"bogus"}}"#,
        r#"{"seed":0,"extra":1,"experiment":{"kind":"tolerance"}}"#,
        r#"{"experiment":{"kind":"tolerance"}}"#,
        r#"{"seed":0,"experiment":{"kind":"quantize","tensor":{"values":[[1.0]]},"spec":{"bits":"2","scheme":"integer","granularity":"per_tensor"}}}"#,
    ];
    for c in cases {
        let v: Value = serde_json::from_str(c).unwrap();
        assert!(!valid(&root, &root, &v), "schema accepts {c}");
        assert!(parse_config(c).is_err(), "parser accepts {c}");
    }
}

#[test]
fn every_kind_has_a_definition() {
    let root = schema();
    for kind in ["quantize", "ptq_bench", "qat_distill", "tolerance", "scaling_report"] {
        let minimal = root["definitions"][kind]["properties"]["kind"].clone();
        assert_eq!(minimal["const"], kind, "{kind}");
    }
}
