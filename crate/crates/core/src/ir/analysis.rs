//! Access classification, port demand and address traces.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AccessKind, Annotation, IrError, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Regular,
    Locality,
    Irregular,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessClass {
    pub kind: ClassKind,
    /// Simultaneous same-cycle accesses after unrolling.
    pub required_parallel: u64,
    /// Two accesses in one statement differ only in their constant terms.
    pub reuse: bool,
    /// Some access uses a data-dependent index.
    pub opaque: bool,
}

/// Assigns every declared array exactly one access class.
pub fn classify_accesses(k: &Kernel, cap: u64) -> Result<BTreeMap<String, AccessClass>, IrError> {
    let mut out = BTreeMap::new();
    let lanes = lane_counts(k);
    for decl in &k.arrays {
        let opaque = k.accesses_to(&decl.name).any(|a| !a.is_affine());
        let kind = if decl.has(Annotation::Locality) {
            ClassKind::Locality
        } else if decl.has(Annotation::Irregular) || opaque {
            ClassKind::Irregular
        } else {
            ClassKind::Regular
        };
        let reuse = k.statements.iter().any(|s| {
            let affine: Vec<_> = s
                .accesses
                .iter()
                .filter(|a| a.array == decl.name && a.is_affine())
                .collect();
            affine.iter().enumerate().any(|(i, a)| {
                affine[i + 1..].iter().any(|b| {
                    let same_terms = a.indices.iter().zip(&b.indices).all(|(x, y)| {
                        x.as_affine().map(|e| &e.terms) == y.as_affine().map(|e| &e.terms)
                    });
                    let differ = a.indices.iter().zip(&b.indices).any(|(x, y)| {
                        x.as_affine().map(|e| e.constant) != y.as_affine().map(|e| e.constant)
                    });
                    same_terms && differ
                })
            })
        });
        let required_parallel = if opaque {
            k.statements
                .iter()
                .map(|s| {
                    let n = s.accesses.iter().filter(|a| a.array == decl.name).count() as u64;
                    n * lanes.get(&s.id).copied().unwrap_or(1)
                })
                .max()
                .unwrap_or(0)
                .max(1)
        } else {
            ports_by_enumeration(k, &decl.name, cap)?
        };
        out.insert(
            decl.name.clone(),
            AccessClass { kind, required_parallel, reuse, opaque },
        );
    }
    Ok(out)
}

fn lane_counts(k: &Kernel) -> BTreeMap<usize, u64> {
    k.statement_loops()
        .into_iter()
        .map(|(id, loops)| (id, loops.iter().map(|l| l.unroll).product()))
        .collect()
}

/// Maximum number of distinct addresses of `array` touched by one dynamic
/// statement instance.
pub fn required_ports(k: &Kernel, array: &str, cap: u64) -> Result<u64, IrError> {
    let decl = k.array(array).ok_or_else(|| IrError::UnknownArray(array.to_string()))?;
    if decl.has(Annotation::Irregular) || k.accesses_to(array).any(|a| !a.is_affine()) {
        return Err(IrError::IrregularArray(array.to_string()));
    }
    ports_by_enumeration(k, array, cap)
}

fn ports_by_enumeration(k: &Kernel, array: &str, cap: u64) -> Result<u64, IrError> {
    let addrs = array_instance_addresses(k, array, cap)?;
    Ok(addrs.iter().map(|(_, a)| a.len() as u64).max().unwrap_or(0).max(1))
}

/// Distinct flat addresses of `array` per dynamic instance that touches it,
/// paired with the instance index. Opaque accesses are skipped.
pub fn array_instance_addresses(
    k: &Kernel,
    array: &str,
    cap: u64,
) -> Result<Vec<(u64, Vec<u64>)>, IrError> {
    let idx = k.array_index(array).ok_or_else(|| IrError::UnknownArray(array.to_string()))?;
    let mut out = Vec::new();
    k.walk(cap, |inst| {
        let mut set: Vec<u64> = inst
            .accesses
            .iter()
            .filter(|a| a.array == idx)
            .filter_map(|a| a.addr)
            .collect();
        if !set.is_empty() {
            set.sort_unstable();
            set.dedup();
            out.push((inst.index, set));
        }
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub instance: u64,
    pub addr: u64,
    pub kind: AccessKind,
}

/// Every dynamic access to `array` in execution order.
pub fn generate_trace(k: &Kernel, array: &str, cap: u64) -> Result<Vec<TraceEntry>, IrError> {
    let idx = k.array_index(array).ok_or_else(|| IrError::UnknownArray(array.to_string()))?;
    if k.accesses_to(array).any(|a| !a.is_affine()) {
        return Err(IrError::OpaqueAccess(array.to_string()));
    }
    let mut out = Vec::new();
    k.walk(cap, |inst| {
        out.extend(inst.accesses.iter().filter(|a| a.array == idx).map(|a| TraceEntry {
            instance: inst.index,
            addr: a.addr.unwrap_or(0),
            kind: a.kind,
        }));
    })?;
    Ok(out)
}

/// Dynamic access count per array. Within one instance, repeated accesses to
/// the same address with the same kind count once; opaque accesses count
/// individually.
pub fn access_counts(k: &Kernel, cap: u64) -> Result<BTreeMap<String, u64>, IrError> {
    let mut counts = vec![0u64; k.arrays.len()];
    k.walk(cap, |inst| {
        let mut seen = BTreeSet::new();
        for a in inst.accesses {
            match a.addr {
                Some(addr) => {
                    if seen.insert((a.array, addr, a.kind)) {
                        counts[a.array] += 1;
                    }
                }
                None => counts[a.array] += 1,
            }
        }
    })?;
    Ok(k.arrays.iter().map(|a| a.name.clone()).zip(counts).collect())
}
