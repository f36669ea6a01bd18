//! Trace-driven, cycle-approximate model of a template instance.
//!
//! Dynamic statement instances execute in order at one cycle each. Before an
//! instance starts it waits for (a) tile transfers of its reuse buffers,
//! (b) element transfers of untiled off-chip arrays, (c) cache misses, and
//! (d) extra PLM cycles for accesses beyond a bank's ports. Every tiled
//! array has its own DMA engine, so tile waits on different arrays overlap.
//! Untiled off-chip accesses are blocking requests issued one at a time by
//! the datapath, so they serialize with each other.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{BindingKind, ComponentKind, MemoryArchitecture};
use crate::comm::{transfer_cycles, TransferMode};
use crate::ir::{AccessKind, IrError, Kernel};
use crate::layout::{local_address, tile_id};
use crate::partition::BankConfig;
use crate::platform::{Channel, PlatformSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("array `{0}` is not bound by the architecture")]
    Unbound(String),
    #[error("binding of `{array}` names unknown channel `{channel}`")]
    UnknownChannel { array: String, channel: String },
    #[error("binding of `{0}` refers to a cache the architecture does not contain")]
    MissingCache(String),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("cannot write trace: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stalls {
    pub transfer_wait: u64,
    pub bank_conflict: u64,
    pub cache_miss: u64,
}

impl Stalls {
    pub fn total(&self) -> u64 {
        self.transfer_wait + self.bank_conflict + self.cache_miss
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayStats {
    pub accesses: u64,
    pub conflicts: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total_cycles: u64,
    pub compute_cycles: u64,
    pub stall_cycles: Stalls,
    pub offchip_bytes: u64,
    pub arrays: BTreeMap<String, ArrayStats>,
}

/// Set-associative cache with least-recently-used replacement. Writes
/// allocate like reads.
#[derive(Debug, Clone)]
pub struct CacheModel {
    line: u64,
    assoc: usize,
    /// Per set, most recently used first.
    sets: Vec<Vec<u64>>,
}

impl CacheModel {
    pub fn new(line: u64, capacity: u64, assoc: u32) -> Self {
        let assoc = assoc.max(1) as usize;
        let sets = (capacity / (line * assoc as u64)).max(1) as usize;
        CacheModel { line, assoc, sets: vec![Vec::new(); sets] }
    }

    /// Returns true on a hit.
    pub fn access(&mut self, byte_addr: u64) -> bool {
        let block = byte_addr / self.line;
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(block % n) as usize];
        let tag = block / n;
        if let Some(pos) = set.iter().position(|&t| t == tag) {
            set.remove(pos);
            set.insert(0, tag);
            true
        } else {
            if set.len() == self.assoc {
                set.pop();
            }
            set.insert(0, tag);
            false
        }
    }
}

/// Stand-in address for a data-dependent index: a fixed hash of the dynamic
/// position, so runs are reproducible.
fn pseudo_address(instance: u64, slot: usize, words: u64) -> u64 {
    let mut z = instance.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (slot as u64).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) % words.max(1)
}

fn bank_excess(cfg: &BankConfig, addrs: &BTreeSet<u64>) -> u64 {
    let mut load: BTreeMap<u64, u64> = BTreeMap::new();
    for &a in addrs {
        *load.entry(cfg.bank_of(a)).or_insert(0) += 1;
    }
    load.values().map(|&n| n.saturating_sub(u64::from(cfg.ports))).sum()
}

enum Engine {
    Plm { cfg: Option<BankConfig> },
    Tiled {
        cfg: Option<BankConfig>,
        shape: Vec<u64>,
        mode: TransferMode,
        xfer: u64,
        tile_bytes: u64,
        loads: bool,
        current: Option<Vec<u64>>,
        dirty: bool,
        /// Double buffering: upcoming tiles and when the next is ready.
        sequence: Vec<Vec<u64>>,
        next: usize,
        ready: u64,
    },
    Element { xfer: u64, bytes: u64 },
    Cache { base: u64, elem_bytes: u64, miss: u64 },
}

/// Kernel with the storage layout the architecture binds.
fn bound_kernel(kernel: &Kernel, arch: &MemoryArchitecture) -> Result<Kernel, EvalError> {
    let mut k = kernel.logical();
    for decl in &kernel.arrays {
        let b = arch.bindings.get(&decl.name).ok_or_else(|| EvalError::Unbound(decl.name.clone()))?;
        if let Some(p) = &b.layout {
            k.apply_permutation(&decl.name, p);
        }
    }
    Ok(k)
}

fn lookup_channel<'a>(platform: &'a PlatformSpec, array: &str, id: Option<&String>) -> Result<&'a Channel, EvalError> {
    let id = id.cloned().unwrap_or_default();
    platform
        .channel(&id)
        .ok_or(EvalError::UnknownChannel { array: array.to_string(), channel: id })
}

pub fn simulate(
    kernel: &Kernel,
    arch: &MemoryArchitecture,
    platform: &PlatformSpec,
    cap: u64,
) -> Result<EvalReport, EvalError> {
    simulate_with_trace(kernel, arch, platform, cap, None)
}

/// As [`simulate`], optionally writing one CSV row per instance.
pub fn simulate_with_trace(
    kernel: &Kernel,
    arch: &MemoryArchitecture,
    platform: &PlatformSpec,
    cap: u64,
    mut csv: Option<&mut dyn Write>,
) -> Result<EvalReport, EvalError> {
    let k = bound_kernel(kernel, arch)?;
    let mut cache = arch.cache().map(|c| match &c.spec {
        ComponentKind::Cache { line, capacity, assoc, channel, .. } => {
            (CacheModel::new(*line, *capacity, *assoc), *line, channel.clone())
        }
        _ => unreachable!("cache() returns cache components"),
    });
    let mut cache_base = 0u64;

    let mut engines = Vec::with_capacity(k.arrays.len());
    for decl in &k.arrays {
        let b = &arch.bindings[&decl.name];
        let engine = match b.kind {
            BindingKind::Plm => Engine::Plm { cfg: b.banking.clone() },
            BindingKind::ReuseBuffer => {
                let t = b.tile.clone().ok_or_else(|| EvalError::Unbound(decl.name.clone()))?;
                let ch = lookup_channel(platform, &decl.name, b.channel.as_ref())?;
                Engine::Tiled {
                    cfg: b.banking.clone(),
                    xfer: transfer_cycles(t.tile_bytes, ch, &platform.dma),
                    tile_bytes: t.tile_bytes,
                    shape: t.shape,
                    mode: t.mode,
                    loads: k.is_read(&decl.name) || decl.direction.live_in(),
                    current: None,
                    dirty: false,
                    sequence: Vec::new(),
                    next: 0,
                    ready: 0,
                }
            }
            BindingKind::Offchip | BindingKind::Lis => {
                let ch = lookup_channel(platform, &decl.name, b.channel.as_ref())?;
                Engine::Element {
                    xfer: transfer_cycles(decl.element_bytes(), ch, &platform.dma),
                    bytes: decl.element_bytes(),
                }
            }
            BindingKind::Cache => {
                let (_, line, channel) = cache.as_ref().ok_or_else(|| EvalError::MissingCache(decl.name.clone()))?;
                let ch = lookup_channel(platform, &decl.name, Some(channel))?;
                let base = cache_base;
                cache_base += decl.footprint_bytes().div_ceil(*line) * line;
                Engine::Cache {
                    base,
                    elem_bytes: decl.element_bytes(),
                    miss: transfer_cycles(*line, ch, &platform.dma),
                }
            }
        };
        engines.push(engine);
    }

    // The prefetcher knows the static tile order ahead of time.
    let has_double = engines
        .iter()
        .any(|e| matches!(e, Engine::Tiled { mode: TransferMode::DoubleBuffer, .. }));
    if has_double {
        k.walk(cap, |inst| {
            for a in inst.accesses.iter().filter(|a| a.addr.is_some()) {
                if let Engine::Tiled { mode: TransferMode::DoubleBuffer, shape, sequence, .. } = &mut engines[a.array] {
                    let t = tile_id(&a.index, shape);
                    if sequence.last() != Some(&t) {
                        sequence.push(t);
                    }
                }
            }
        })?;
        for e in &mut engines {
            if let Engine::Tiled { mode: TransferMode::DoubleBuffer, sequence, ready, xfer, .. } = e {
                if !sequence.is_empty() {
                    *ready = *xfer;
                }
            }
        }
    }

    let mut report = EvalReport::default();
    for decl in &k.arrays {
        report.arrays.insert(decl.name.clone(), ArrayStats::default());
    }
    let names: Vec<String> = k.arrays.iter().map(|a| a.name.clone()).collect();
    if let Some(w) = csv.as_deref_mut() {
        writeln!(w, "instance,statement,start_cycle,transfer_wait,bank_conflict,cache_miss")?;
    }

    let mut now = 0u64;
    let mut io_error = None;
    k.walk(cap, |inst| {
        // Distinct (address, kind) per array; unresolvable indices count singly.
        let mut per_array: BTreeMap<usize, BTreeSet<(u64, bool, AccessKind)>> = BTreeMap::new();
        for (slot, a) in inst.accesses.iter().enumerate() {
            let words = k.arrays[a.array].words();
            let (addr, exact) = match a.addr {
                Some(x) => (x, true),
                None => (pseudo_address(inst.index, slot, words), false),
            };
            per_array.entry(a.array).or_default().insert((addr, exact, a.kind));
        }
        let mut wait_until = now;
        let mut blocking = 0u64;
        let mut element = 0u64;
        let mut bank = 0u64;
        let mut miss_stall = 0u64;
        for (&ai, accs) in &per_array {
            let stats = report.arrays.get_mut(&names[ai]).expect("every array has stats");
            stats.accesses += accs.len() as u64;
            let written = accs.iter().any(|x| x.2 == AccessKind::Write);
            match &mut engines[ai] {
                Engine::Plm { cfg } => {
                    if let Some(cfg) = cfg {
                        let addrs: BTreeSet<u64> = accs.iter().map(|x| x.0).collect();
                        let ex = bank_excess(cfg, &addrs);
                        stats.conflicts += ex;
                        bank += ex;
                    }
                }
                Engine::Tiled {
                    cfg, shape, mode, xfer, tile_bytes, loads, current, dirty, sequence, next, ready,
                } => {
                    let indices: Vec<&Vec<i64>> = inst
                        .accesses
                        .iter()
                        .filter(|a| a.array == ai && a.addr.is_some())
                        .map(|a| &a.index)
                        .collect();
                    let mut tiles: Vec<Vec<u64>> = Vec::new();
                    for idx in &indices {
                        let t = tile_id(idx, shape);
                        if !tiles.contains(&t) {
                            tiles.push(t);
                        }
                    }
                    let mut serial = 0u64;
                    for t in tiles {
                        if current.as_ref() == Some(&t) {
                            continue;
                        }
                        if *dirty {
                            serial += *xfer;
                            report.offchip_bytes += *tile_bytes;
                            *dirty = false;
                        }
                        match mode {
                            TransferMode::DoubleBuffer if sequence.get(*next) == Some(&t) => {
                                wait_until = wait_until.max(*ready);
                                let start = now.max(*ready);
                                report.offchip_bytes += *tile_bytes;
                                *next += 1;
                                if *next < sequence.len() {
                                    *ready = start + *xfer;
                                }
                            }
                            _ => {
                                if *loads {
                                    serial += *xfer;
                                    report.offchip_bytes += *tile_bytes;
                                }
                            }
                        }
                        *current = Some(t);
                    }
                    blocking = blocking.max(serial);
                    *dirty |= written;
                    if let Some(cfg) = cfg {
                        let addrs: BTreeSet<u64> = indices.iter().map(|idx| local_address(idx, shape)).collect();
                        let ex = bank_excess(cfg, &addrs);
                        stats.conflicts += ex;
                        bank += ex;
                    }
                }
                Engine::Element { xfer, bytes } => {
                    element += *xfer * accs.len() as u64;
                    report.offchip_bytes += *bytes * accs.len() as u64;
                }
                Engine::Cache { base, elem_bytes, miss } => {
                    let (model, line, _) = cache.as_mut().expect("cache engines imply a cache");
                    let mut stall = 0;
                    for &(addr, _, _) in accs {
                        if !model.access(*base + addr * *elem_bytes) {
                            stats.misses += 1;
                            stall += *miss;
                            report.offchip_bytes += *line;
                        }
                    }
                    miss_stall = miss_stall.max(stall);
                }
            }
        }
        let transfer_wait = (wait_until - now).max(blocking).max(element);
        report.stall_cycles.transfer_wait += transfer_wait;
        report.stall_cycles.bank_conflict += bank;
        report.stall_cycles.cache_miss += miss_stall;
        report.compute_cycles += 1;
        let start = now + transfer_wait + bank + miss_stall;
        if let Some(w) = csv.as_deref_mut() {
            if let Err(e) = writeln!(w, "{},{},{},{},{},{}", inst.index, inst.statement, start, transfer_wait, bank, miss_stall) {
                io_error.get_or_insert(e);
            }
        }
        now = start + 1;
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }

    // Dirty reuse-buffer tiles drain at the end; engines drain in parallel.
    let drain = engines
        .iter()
        .filter_map(|e| match e {
            Engine::Tiled { dirty: true, xfer, tile_bytes, .. } => Some((*xfer, *tile_bytes)),
            _ => None,
        })
        .fold(0, |m, (x, b)| {
            report.offchip_bytes += b;
            m.max(x)
        });
    report.stall_cycles.transfer_wait += drain;
    report.total_cycles = report.compute_cycles + report.stall_cycles.total();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn second_pass_hits_when_trace_fits() {
        let mut c = CacheModel::new(16, 256, 2);
        let trace: Vec<u64> = (0..256).collect();
        let first = trace.iter().filter(|&&a| !c.access(a)).count();
        assert_eq!(first, 16);
        assert_eq!(trace.iter().filter(|&&a| !c.access(a)).count(), 0);
    }

    #[test]
    fn lru_evicts_oldest() {
        // One set, two ways.
        let mut c = CacheModel::new(16, 32, 2);
        assert!(!c.access(0));
        assert!(!c.access(16));
        assert!(c.access(0));
        assert!(!c.access(32)); // evicts 16
        assert!(c.access(0));
        assert!(!c.access(16));
    }

    #[test]
    fn fully_associative_capacity_monotone() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let trace: Vec<u64> = (0..500).map(|_| rng.gen_range(0..2048)).collect();
            let misses = |cap: u64| {
                let mut c = CacheModel::new(16, cap, (cap / 16) as u32);
                trace.iter().filter(|&&a| !c.access(a)).count()
            };
            assert!(misses(512) <= misses(256));
        }
    }

    #[test]
    fn excess_counts_beyond_ports() {
        let cfg = BankConfig { scheme: crate::partition::Scheme::Cyclic, banks: 2, ports: 1, words_per_bank: 8 };
        assert_eq!(bank_excess(&cfg, &BTreeSet::from([0, 2, 4, 1])), 2);
        assert_eq!(bank_excess(&cfg, &BTreeSet::from([0, 1])), 0);
    }
}
