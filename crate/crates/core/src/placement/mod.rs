//! Data organization: decides for every array whether it lives in a private
//! local memory, in the on-chip cache, or behind an off-chip channel.
//!
//! Regular arrays compete for the area budget as a 0/1 knapsack. An array's
//! weight is the area of a single-port bank holding it; its value is the
//! off-chip traffic it would otherwise cost, `accesses × (latency +
//! ceil(footprint / bandwidth))` on its cheapest channel.

pub mod knapsack;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::transfer_cycles;
use crate::ir::{access_counts, AccessClass, ClassKind, IrError, Kernel};
use crate::platform::{area_units, PlatformSpec};
use knapsack::{solve_dp, solve_greedy, Item};

/// Above this total weight the exact solver is replaced by the greedy one.
pub const DP_WEIGHT_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("infeasible budget: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    OnChipPlm,
    OnChipCache,
    OffChip { channel: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayPlacement {
    pub placement: Placement,
    pub accesses: u64,
    pub benefit: u64,
    pub footprint_bytes: u64,
    /// Single-port bank area of the whole array.
    pub weight: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    AllFit,
    Dp,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub arrays: BTreeMap<String, ArrayPlacement>,
    pub solver: Solver,
    /// PLM area at one port per array plus cache area when a cache is used.
    pub committed_area: u64,
}

impl PlacementPlan {
    pub fn placement(&self, array: &str) -> Option<&Placement> {
        self.arrays.get(array).map(|a| &a.placement)
    }

    pub fn uses_cache(&self) -> bool {
        self.arrays.values().any(|a| a.placement == Placement::OnChipCache)
    }

    pub fn is_off_chip(&self, array: &str) -> bool {
        matches!(self.placement(array), Some(Placement::OffChip { .. }))
    }
}

pub fn plan_placement(
    k: &Kernel,
    classes: &BTreeMap<String, AccessClass>,
    platform: &PlatformSpec,
    cap: u64,
) -> Result<PlacementPlan, PlacementError> {
    plan_placement_excluding(k, classes, platform, cap, &BTreeSet::new())
}

/// As [`plan_placement`], with `evicted` arrays barred from PLMs.
pub fn plan_placement_excluding(
    k: &Kernel,
    classes: &BTreeMap<String, AccessClass>,
    platform: &PlatformSpec,
    cap: u64,
    evicted: &BTreeSet<String>,
) -> Result<PlacementPlan, PlacementError> {
    let counts = access_counts(k, cap)?;
    let mut arrays: BTreeMap<String, ArrayPlacement> = BTreeMap::new();
    for decl in &k.arrays {
        let fp = decl.footprint_bytes();
        let per_access = platform
            .channels
            .iter()
            .map(|c| c.latency + fp.div_ceil(c.bw))
            .min()
            .unwrap_or(1);
        let accesses = counts[&decl.name];
        arrays.insert(
            decl.name.clone(),
            ArrayPlacement {
                placement: Placement::OnChipPlm,
                accesses,
                benefit: accesses * per_access,
                footprint_bytes: fp,
                weight: area_units(decl.words(), platform.storage_bits(decl.element_bits), 1, platform.bank.alpha),
            },
        );
    }

    let candidates: Vec<&str> = arrays
        .keys()
        .map(String::as_str)
        .filter(|n| {
            let c = &classes[*n];
            c.kind != ClassKind::Irregular && !c.opaque && !evicted.contains(*n)
        })
        .collect();
    let items: Vec<Item> = candidates
        .iter()
        .map(|n| Item { weight: arrays[*n].weight, value: arrays[*n].benefit })
        .collect();
    let total: u64 = items.iter().map(|i| i.weight).sum();
    let (solver, chosen) = if total <= platform.budget {
        (Solver::AllFit, vec![true; items.len()])
    } else if total <= DP_WEIGHT_LIMIT {
        (Solver::Dp, solve_dp(&items, platform.budget).chosen)
    } else {
        (Solver::Greedy, solve_greedy(&items, platform.budget).chosen)
    };
    let on_plm: BTreeSet<String> = candidates
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(n, _)| n.to_string())
        .collect();
    let plm_area: u64 = on_plm.iter().map(|n| arrays[n].weight).sum();

    let cache_fits = !platform.channels.is_empty()
        && plm_area + platform.cache_area() <= platform.budget;
    let mut committed = plm_area;
    let names: Vec<String> = arrays.keys().cloned().collect();
    for name in names {
        if on_plm.contains(&name) {
            continue;
        }
        let entry = arrays.get_mut(&name).expect("present");
        let kind = classes[&name].kind;
        let cacheable = kind != ClassKind::Regular && entry.footprint_bytes <= platform.cache.capacity;
        entry.placement = if cacheable && cache_fits {
            Placement::OnChipCache
        } else {
            let channel = best_channel(platform, entry.footprint_bytes).ok_or_else(|| {
                PlacementError::Infeasible(format!(
                    "array `{name}` does not fit on chip and the platform has no off-chip channel"
                ))
            })?;
            Placement::OffChip { channel }
        };
    }
    if arrays.values().any(|a| a.placement == Placement::OnChipCache) {
        committed += platform.cache_area();
    }
    Ok(PlacementPlan { arrays, solver, committed_area: committed })
}

/// Channel with the lowest transfer time for `bytes`; ties go to the lower id.
pub fn best_channel(platform: &PlatformSpec, bytes: u64) -> Option<String> {
    platform
        .channels
        .iter()
        .min_by(|a, b| {
            transfer_cycles(bytes, a, &platform.dma)
                .cmp(&transfer_cycles(bytes, b, &platform.dma))
                .then(a.id.cmp(&b.id))
        })
        .map(|c| c.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{classify_accesses, parse_kernel, DEFAULT_CAP};
    use crate::platform::parse_platform;

    fn platform(budget: u64) -> PlatformSpec {
        parse_platform(&format!(
            r#"{{"budget": {budget},
                "bank": {{"max_words": 4096, "word_bits": 8, "max_ports": 2, "alpha": 0.5}},
                "cache": {{"line": 16, "capacity": 256, "assoc": 2, "hit_latency": 1}},
                "channels": [{{"id": "dram0", "kind": "dram", "latency": 100, "bw": 8}},
                             {{"id": "nvm0", "kind": "nvm", "latency": 400, "bw": 4}}],
                "dma": {{"setup": 0, "max_burst": 4096}}}}"#
        ))
        .unwrap()
    }

    fn plan(src: &str, budget: u64) -> PlacementPlan {
        let k = parse_kernel(src).unwrap();
        let c = classify_accesses(&k, DEFAULT_CAP).unwrap();
        plan_placement(&k, &c, &platform(budget), DEFAULT_CAP).unwrap()
    }

    const THREE: &str = "kernel t { array A: 8b[64] input; array B: 8b[64] input; array C: 8b[64] output; \
                         loop i in 0..64 { read A[i], B[i]; write C[i]; } }";

    #[test]
    fn zero_budget_sends_everything_off_chip() {
        let p = plan(THREE, 0);
        assert!(p.arrays.values().all(|a| a.placement == Placement::OffChip { channel: "dram0".into() }));
    }

    #[test]
    fn everything_fits() {
        let p = plan(THREE, 1 << 20);
        assert_eq!(p.solver, Solver::AllFit);
        assert!(p.arrays.values().all(|a| a.placement == Placement::OnChipPlm));
        assert_eq!(p.committed_area, 3 * 64 * 8);
    }

    #[test]
    fn knapsack_prefers_higher_benefit() {
        let src = "kernel t { array A: 8b[64] input; array B: 8b[64] input; \
                   loop i in 0..64 { read A[i]; } loop j in 0..32 { read B[j]; } }";
        let p = plan(src, 64 * 8);
        assert_eq!(p.solver, Solver::Dp);
        assert_eq!(p.placement("A"), Some(&Placement::OnChipPlm));
        assert!(p.is_off_chip("B"));
        assert_eq!(p.arrays["A"].benefit, 64 * (100 + 8));
    }

    #[test]
    fn irregular_never_on_plm() {
        let src = "kernel t { array H: 32b[16] inout; array X: 8b[64] input; array G: 32b[4096] input @irregular; \
                   loop i in 0..64 { read X[i]; accum H[X[i]]; read G[i]; } }";
        let p = plan(src, 1 << 20);
        assert_eq!(p.placement("H"), Some(&Placement::OnChipCache));
        assert_eq!(p.placement("X"), Some(&Placement::OnChipPlm));
        // Larger than the cache: latency-insensitive off-chip access.
        assert!(p.is_off_chip("G"));
        assert_eq!(p.committed_area, 64 * 8 + 256 * 8);
    }

    #[test]
    fn no_channel_and_no_room_is_infeasible() {
        let k = parse_kernel(THREE).unwrap();
        let c = classify_accesses(&k, DEFAULT_CAP).unwrap();
        let mut p = platform(0);
        p.channels.clear();
        p.on_chip_only = true;
        let e = plan_placement(&k, &c, &p, DEFAULT_CAP).unwrap_err();
        assert!(matches!(e, PlacementError::Infeasible(_)));
    }

    #[test]
    fn benefit_scaling_keeps_the_plan() {
        // Uniform scaling of values leaves the knapsack argmax unchanged.
        let items = vec![
            Item { weight: 5, value: 10 },
            Item { weight: 4, value: 40 },
            Item { weight: 6, value: 30 },
            Item { weight: 3, value: 50 },
        ];
        for scale in [1u64, 2, 7, 1000] {
            let scaled: Vec<Item> = items.iter().map(|i| Item { value: i.value * scale, ..*i }).collect();
            assert_eq!(solve_dp(&scaled, 10).chosen, solve_dp(&items, 10).chosen);
        }
    }
}
