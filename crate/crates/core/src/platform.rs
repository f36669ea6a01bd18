//! Technology description: area budget, memory primitives, off-chip channels
//! and the DMA engine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("malformed platform description: {0}")]
    Syntax(String),
    #[error("invalid platform: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("bank cost out of range: {0}")]
    OutOfRange(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankPrimitive {
    pub max_words: u64,
    pub word_bits: u32,
    pub max_ports: u32,
    /// Area penalty per extra port.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CachePrimitive {
    /// Line size in bytes.
    pub line: u64,
    /// Capacity in bytes.
    pub capacity: u64,
    pub assoc: u32,
    pub hit_latency: u64,
}

impl CachePrimitive {
    pub fn sets(&self) -> u64 {
        (self.capacity / (self.line * u64::from(self.assoc))).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Dram,
    Nvm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub id: String,
    pub kind: ChannelKind,
    pub latency: u64,
    /// Bytes per cycle.
    pub bw: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dma {
    pub setup: u64,
    pub max_burst: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    /// On-chip area budget in area units.
    pub budget: u64,
    pub bank: BankPrimitive,
    pub cache: CachePrimitive,
    pub channels: Vec<Channel>,
    pub dma: Dma,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub on_chip_only: bool,
}

/// Cache area charged per byte of capacity.
pub const CACHE_UNITS_PER_BYTE: u64 = 8;

pub fn parse_platform(text: &str) -> Result<PlatformSpec, PlatformError> {
    // Signed fields first so negative values get a readable diagnostic.
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PlatformError::Syntax(e.to_string()))?;
    let mut problems = Vec::new();
    check_non_negative(&raw, "", &mut problems);
    if !problems.is_empty() {
        return Err(PlatformError::Invalid(problems));
    }
    let spec: PlatformSpec =
        serde_json::from_value(raw).map_err(|e| PlatformError::Syntax(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

fn check_non_negative(v: &serde_json::Value, path: &str, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Number(n) if n.as_f64().is_some_and(|x| x < 0.0) => {
            out.push(format!("`{path}` must not be negative"));
        }
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                check_non_negative(x, &p, out);
            }
        }
        serde_json::Value::Array(xs) => {
            for (i, x) in xs.iter().enumerate() {
                check_non_negative(x, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

impl PlatformSpec {
    pub fn validate(&self) -> Result<(), PlatformError> {
        let mut p = Vec::new();
        if self.channels.is_empty() && !self.on_chip_only {
            p.push("at least one channel is required unless on_chip_only is set".to_string());
        }
        if self.on_chip_only && !self.channels.is_empty() {
            p.push("on_chip_only platforms must not declare channels".to_string());
        }
        for c in &self.channels {
            if c.bw == 0 {
                p.push(format!("channel `{}`: non-positive bandwidth", c.id));
            }
        }
        let mut ids: Vec<&str> = self.channels.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            p.push("duplicate channel id".to_string());
        }
        if !(self.bank.alpha >= 0.0 && self.bank.alpha.is_finite()) {
            p.push("bank.alpha must be a finite value >= 0".to_string());
        }
        if self.bank.max_words == 0 || self.bank.word_bits == 0 || self.bank.max_ports == 0 {
            p.push("bank.max_words, bank.word_bits and bank.max_ports must be positive".to_string());
        }
        if !self.cache.line.is_power_of_two() {
            p.push("cache.line must be a power of two".to_string());
        }
        if self.cache.assoc == 0 || self.cache.capacity == 0 {
            p.push("cache.assoc and cache.capacity must be positive".to_string());
        } else if !self.cache.capacity.is_multiple_of(self.cache.line * u64::from(self.cache.assoc)) {
            p.push("cache.capacity must be a multiple of line × assoc".to_string());
        }
        if self.dma.max_burst == 0 {
            p.push("dma.max_burst must be positive".to_string());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(PlatformError::Invalid(p))
        }
    }

    pub fn channel(&self, id: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.id == id)
    }

    /// Width charged for one element: elements occupy whole primitive words.
    pub fn storage_bits(&self, element_bits: u32) -> u32 {
        element_bits.div_ceil(self.bank.word_bits) * self.bank.word_bits
    }

    pub fn cache_area(&self) -> u64 {
        self.cache.capacity * CACHE_UNITS_PER_BYTE
    }

    /// Canonical JSON text (sorted keys), used for hashing.
    pub fn canonical_json(&self) -> String {
        crate::canonical_json(&serde_json::to_value(self).expect("platform serializes"))
    }
}

/// `words × word_bits × (1 + α(ports − 1))`, rounded up. No range checks.
pub fn area_units(words: u64, word_bits: u32, ports: u32, alpha: f64) -> u64 {
    let base = words * u64::from(word_bits);
    if base == 0 || ports <= 1 {
        return base;
    }
    let extra = (base as f64 * alpha * f64::from(ports - 1)).ceil() as u64;
    base + extra
}

/// Area of one memory bank of `words` words with `ports` ports.
pub fn bank_cost(words: u64, word_bits: u32, ports: u32, spec: &PlatformSpec) -> Result<u64, PlatformError> {
    if ports == 0 || ports > spec.bank.max_ports {
        return Err(PlatformError::OutOfRange(format!(
            "{ports} ports (primitive allows 1..={})",
            spec.bank.max_ports
        )));
    }
    if words > spec.bank.max_words {
        return Err(PlatformError::OutOfRange(format!(
            "{words} words (primitive allows at most {})",
            spec.bank.max_words
        )));
    }
    Ok(area_units(words, word_bits, ports, spec.bank.alpha))
}
