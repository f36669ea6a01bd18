//! Specializes a domain-specific accelerator memory template for a kernel.

pub mod arch;
pub mod comm;
pub mod eval;
pub mod ir;
pub mod layout;
pub mod partition;
pub mod pipeline;
pub mod placement;
pub mod platform;

use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pretty JSON with object keys sorted at every level, so equal values
/// always serialize to identical bytes.
pub fn canonical_json(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(&sorted(v)).expect("json values serialize");
    s.push('\n');
    s
}

fn sorted(v: &serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            Value::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
