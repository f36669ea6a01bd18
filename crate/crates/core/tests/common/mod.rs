#![allow(dead_code)]

use std::path::{Path, PathBuf};

use memforge::ir::{parse_kernel, Kernel};
use memforge::platform::{parse_platform, PlatformSpec};
use serde_json::Value;

pub const PLATFORMS: &[&str] = &["default", "stream", "onchip", "two_channel"];

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn kernel_path(name: &str) -> PathBuf {
    root().join("fixtures/kernels").join(format!("{name}.ir"))
}

pub fn platform_path(name: &str) -> PathBuf {
    root().join("fixtures/platforms").join(format!("{name}.json"))
}

pub fn kernel(name: &str) -> Kernel {
    parse_kernel(&std::fs::read_to_string(kernel_path(name)).unwrap()).unwrap()
}

pub fn platform(name: &str) -> PlatformSpec {
    parse_platform(&std::fs::read_to_string(platform_path(name)).unwrap()).unwrap()
}

pub fn kernel_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(root().join("fixtures/kernels"))
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "ir").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

/// Checks `value` against the subset of JSON Schema the published schemas
/// use: type, required, properties, additionalProperties, items, minimum and
/// file-relative `$ref`.
pub fn validate(schema: &Value, value: &Value, dir: &Path, path: &str) -> Result<(), String> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let text = std::fs::read_to_string(dir.join(r)).map_err(|e| format!("{r}: {e}"))?;
        let target: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        return validate(&target, value, dir, path);
    }
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        let ok = match t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "integer" => value.is_u64() || value.is_i64(),
            "number" => value.is_number(),
            "boolean" => value.is_boolean(),
            _ => return Err(format!("{path}: unsupported schema type {t}")),
        };
        if !ok {
            return Err(format!("{path}: expected {t}, found {value}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), value.as_f64()) {
        if x < min {
            return Err(format!("{path}: {x} below minimum {min}"));
        }
    }
    if let Some(obj) = value.as_object() {
        for req in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = req.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("{path}: missing required `{key}`"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, v) in obj {
            let sub = format!("{path}.{k}");
            match (props.and_then(|p| p.get(k)), schema.get("additionalProperties")) {
                (Some(s), _) => validate(s, v, dir, &sub)?,
                (None, Some(Value::Bool(false))) => return Err(format!("{sub}: unexpected property")),
                (None, Some(s @ Value::Object(_))) => validate(s, v, dir, &sub)?,
                (None, _) => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate(items, v, dir, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

pub fn validate_against(schema_file: &str, text: &str) -> Result<(), String> {
    let dir = root().join("schema");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(dir.join(schema_file)).unwrap()).unwrap();
    let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    validate(&schema, &value, &dir, "$")
}
