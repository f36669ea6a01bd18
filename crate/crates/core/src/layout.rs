//! Storage layout and tiling.
//!
//! Layout permutes an array's storage dimensions so that the innermost
//! varying induction variable walks the fastest-varying dimension. Tiling
//! gives each off-chip regular array an on-chip reuse buffer holding one
//! rectangular tile (two when double buffered).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ir::{AccessClass, ClassKind, IrError, Kernel};
use crate::placement::PlacementPlan;
use crate::platform::{area_units, PlatformSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutTransform {
    Identity,
    /// Physical dimension `d` stores source dimension `permutation[d]`.
    Transpose { permutation: Vec<usize> },
}

impl LayoutTransform {
    pub fn from_permutation(perm: Vec<usize>) -> Self {
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            LayoutTransform::Identity
        } else {
            LayoutTransform::Transpose { permutation: perm }
        }
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        match self {
            LayoutTransform::Identity => None,
            LayoutTransform::Transpose { permutation } => Some(permutation),
        }
    }
}

/// Layout decisions relative to the kernel as originally written.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub arrays: BTreeMap<String, LayoutTransform>,
}

/// Chooses a permutation of `array`'s current storage dimensions.
///
/// Each affine access votes for the dimension indexed by its innermost
/// varying induction variable; the winning dimension moves last. Ties favor
/// the current layout.
pub fn select_layout(k: &Kernel, array: &str) -> LayoutTransform {
    let Some(decl) = k.array(array) else {
        return LayoutTransform::Identity;
    };
    let rank = decl.dims.len();
    if rank < 2 {
        return LayoutTransform::Identity;
    }
    let loops = k.statement_loops();
    let mut votes = vec![0u64; rank];
    for acc in k.accesses_to(array).filter(|a| a.is_affine()) {
        let enclosing = &loops[&acc.statement];
        let vote = enclosing.iter().rev().filter(|l| l.trip_count() > 1).find_map(|l| {
            acc.indices
                .iter()
                .rposition(|i| i.as_affine().is_some_and(|e| e.coefficient(&l.var) != 0))
        });
        if let Some(d) = vote {
            votes[d] += 1;
        }
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    if best == 0 || votes[rank - 1] == best {
        return LayoutTransform::Identity;
    }
    let winner = votes.iter().rposition(|&v| v == best).expect("max exists");
    let mut perm: Vec<usize> = (0..rank).filter(|&d| d != winner).collect();
    perm.push(winner);
    LayoutTransform::from_permutation(perm)
}

/// Applies [`select_layout`] to every regular array, rewriting the kernel in
/// place, and records each array's layout relative to the source.
pub fn plan_layout(k: &mut Kernel, classes: &BTreeMap<String, AccessClass>) -> LayoutPlan {
    let names: Vec<String> = k.arrays.iter().map(|a| a.name.clone()).collect();
    let mut plan = LayoutPlan::default();
    for name in names {
        let regular = classes.get(&name).is_some_and(|c| c.kind == ClassKind::Regular && !c.opaque);
        if regular {
            if let Some(perm) = select_layout(k, &name).permutation() {
                let perm = perm.to_vec();
                k.apply_permutation(&name, &perm);
            }
        }
        let total = k.array(&name).and_then(|a| a.layout.clone());
        let t = total.map(LayoutTransform::from_permutation).unwrap_or(LayoutTransform::Identity);
        plan.arrays.insert(name, t);
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEntry {
    pub tile: Vec<u64>,
    /// 2 = double buffered, 1 = single blocking buffer.
    pub depth: u32,
    pub tile_words: u64,
    pub tile_bytes: u64,
    pub buffer_area: u64,
    /// Innermost loop whose iteration moves the array to another tile.
    pub governing_loop: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub slack: i64,
    pub share: u64,
    pub arrays: BTreeMap<String, TileEntry>,
}

impl TilingPlan {
    pub fn total_area(&self) -> u64 {
        self.arrays.values().map(|t| t.buffer_area).sum()
    }
}

pub fn tile_id(index: &[i64], tile: &[u64]) -> Vec<u64> {
    index.iter().zip(tile).map(|(&i, &t)| i as u64 / t).collect()
}

/// Row-major address of `index` inside its tile.
pub fn local_address(index: &[i64], tile: &[u64]) -> u64 {
    index
        .iter()
        .zip(tile)
        .fold(0, |acc, (&i, &t)| acc * t + i as u64 % t)
}

/// Order in which an array's tiles are needed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSchedule {
    /// Consecutive distinct tiles, in first-use order (revisits repeat).
    pub tiles: Vec<Vec<u64>>,
    /// Instance index at which each tile is first needed.
    pub starts: Vec<u64>,
    pub total_instances: u64,
    /// No instance touches two tiles at once.
    pub coherent: bool,
}

impl TileSchedule {
    /// Instances between consecutive tile switches; the last segment runs to
    /// the end of the kernel.
    pub fn segments(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.starts.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(&last) = self.starts.last() {
            out.push(self.total_instances - last);
        }
        out
    }
}

pub fn tile_schedule(k: &Kernel, array: &str, tile: &[u64], cap: u64) -> Result<TileSchedule, IrError> {
    let idx = k.array_index(array).ok_or_else(|| IrError::UnknownArray(array.to_string()))?;
    let mut s = TileSchedule { tiles: Vec::new(), starts: Vec::new(), total_instances: 0, coherent: true };
    let total = k.walk(cap, |inst| {
        let mut current: Option<Vec<u64>> = None;
        for a in inst.accesses.iter().filter(|a| a.array == idx && a.addr.is_some()) {
            let t = tile_id(&a.index, tile);
            match &current {
                Some(c) if *c != t => s.coherent = false,
                Some(_) => {}
                None => current = Some(t),
            }
        }
        if let Some(t) = current {
            if s.tiles.last() != Some(&t) {
                s.tiles.push(t);
                s.starts.push(inst.index);
            }
        }
    })?;
    s.total_instances = total;
    Ok(s)
}

fn largest_pow2_divisor(n: u64) -> u64 {
    1 << n.trailing_zeros()
}

/// Picks tile shapes and buffer depths for off-chip regular arrays, giving
/// each an equal share of `slack`.
pub fn select_tiling(
    k: &Kernel,
    classes: &BTreeMap<String, AccessClass>,
    placement: &PlacementPlan,
    platform: &PlatformSpec,
    slack: i64,
    cap: u64,
) -> Result<TilingPlan, IrError> {
    let candidates: Vec<&str> = k
        .arrays
        .iter()
        .map(|a| a.name.as_str())
        .filter(|n| {
            let c = &classes[*n];
            placement.is_off_chip(n)
                && c.kind == ClassKind::Regular
                && !c.opaque
                && k.accesses_to(n).next().is_some()
        })
        .collect();
    let mut plan = TilingPlan { slack, share: 0, arrays: BTreeMap::new() };
    if slack <= 0 || candidates.is_empty() {
        return Ok(plan);
    }
    plan.share = slack as u64 / candidates.len() as u64;
    let loops = k.statement_loops();
    for name in candidates {
        let decl = k.array(name).expect("declared");
        let bits = platform.storage_bits(decl.element_bits);
        let depth: u32 = if k.is_written(name) { 1 } else { 2 };
        let mut tile: Vec<u64> = decl.dims.iter().map(|&d| largest_pow2_divisor(d)).collect();
        loop {
            let words: u64 = tile.iter().product();
            let area = area_units(u64::from(depth) * words, bits, 1, platform.bank.alpha);
            if area <= plan.share {
                let sched = tile_schedule(k, name, &tile, cap)?;
                if sched.coherent {
                    let governing = k
                        .accesses_to(name)
                        .filter_map(|a| {
                            let enclosing = &loops[&a.statement];
                            enclosing.iter().rev().find(|l| {
                                a.indices.iter().enumerate().any(|(d, i)| {
                                    tile[d] < decl.dims[d]
                                        && i.as_affine().is_some_and(|e| e.coefficient(&l.var) != 0)
                                })
                            })
                        })
                        .map(|l| l.var.clone())
                        .min();
                    plan.arrays.insert(
                        name.to_string(),
                        TileEntry {
                            tile_words: words,
                            tile_bytes: words * decl.element_bytes(),
                            buffer_area: area,
                            tile,
                            depth,
                            governing_loop: governing,
                        },
                    );
                }
                break;
            }
            // Halve the largest dimension; ties shrink the outermost first.
            let largest = tile.iter().copied().max().unwrap_or(1);
            if largest <= 1 {
                break;
            }
            let d = tile.iter().position(|&t| t == largest).expect("max exists");
            tile[d] /= 2;
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{classify_accesses, generate_trace, parse_kernel, DEFAULT_CAP};
    use crate::placement::plan_placement;
    use crate::platform::parse_platform;

    fn matmul(order: &str) -> Kernel {
        let (l0, l1, l2) = match order {
            "ikj" => ("i", "k", "j"),
            _ => ("i", "j", "k"),
        };
        parse_kernel(&format!(
            "kernel mm {{ array A: 32b[8][8] input; array B: 32b[8][8] input; array C: 32b[8][8] inout; \
             loop {l0} in 0..8 {{ loop {l1} in 0..8 {{ loop {l2} in 0..8 {{ read A[i][k], B[k][j]; accum C[i][j]; }} }} }} }}"
        ))
        .unwrap()
    }

    /// Fraction of consecutive trace entries whose addresses differ by one.
    fn unit_stride_fraction(k: &Kernel, array: &str) -> f64 {
        let t = generate_trace(k, array, DEFAULT_CAP).unwrap();
        let unit = t.windows(2).filter(|w| w[1].addr == w[0].addr + 1).count();
        unit as f64 / (t.len() - 1) as f64
    }

    #[test]
    fn already_unit_stride_is_identity() {
        assert_eq!(select_layout(&matmul("ikj"), "B"), LayoutTransform::Identity);
    }

    #[test]
    fn column_walk_is_transposed() {
        let k = matmul("ijk");
        let t = select_layout(&k, "B");
        assert_eq!(t, LayoutTransform::Transpose { permutation: vec![1, 0] });
        // Stride oracle: compare both permutations on the trace.
        let mut p = k.clone();
        p.apply_permutation("B", &[1, 0]);
        assert!(unit_stride_fraction(&p, "B") > unit_stride_fraction(&k, "B"));
    }

    #[test]
    fn one_dimensional_is_identity() {
        let k = parse_kernel("kernel t { array A: 32b[8] input; loop i in 0..8 { read A[i]; } }").unwrap();
        assert_eq!(select_layout(&k, "A"), LayoutTransform::Identity);
    }

    #[test]
    fn plan_layout_is_stable_after_rewrite() {
        let mut k = matmul("ijk");
        let c = classify_accesses(&k, DEFAULT_CAP).unwrap();
        let first = plan_layout(&mut k, &c);
        let second = plan_layout(&mut k, &c);
        assert_eq!(first, second);
        assert_eq!(k.array("B").unwrap().dims, vec![8, 8]);
        assert_eq!(k.array("B").unwrap().layout, Some(vec![1, 0]));
    }

    fn tiling_fixture(written: bool, slack: i64) -> TilingPlan {
        let kind = if written { "inout" } else { "input" };
        let op = if written { "accum" } else { "read" };
        let k = parse_kernel(&format!(
            "kernel t {{ array X: 32b[64][64] {kind}; \
             loop i in 0..64 {{ loop j in 0..64 {{ {op} X[i][j]; }} }} }}"
        ))
        .unwrap();
        let c = classify_accesses(&k, DEFAULT_CAP).unwrap();
        let p = parse_platform(
            r#"{"budget": 0, "bank": {"max_words": 8192, "word_bits": 32, "max_ports": 2, "alpha": 0.5},
                "cache": {"line": 32, "capacity": 1024, "assoc": 2, "hit_latency": 1},
                "channels": [{"id": "dram0", "kind": "dram", "latency": 100, "bw": 8}],
                "dma": {"setup": 0, "max_burst": 4096}}"#,
        )
        .unwrap();
        let pl = plan_placement(&k, &c, &p, DEFAULT_CAP).unwrap();
        select_tiling(&k, &c, &pl, &p, slack, DEFAULT_CAP).unwrap()
    }

    /// Largest word count over every power-of-two tile whose buffers fit.
    fn enumerate_fit(dims: [u64; 2], depth: u64, share: u64) -> u64 {
        let pows = |d: u64| (0..=d.trailing_zeros()).map(|e| 1u64 << e).collect::<Vec<_>>();
        let mut best = 0;
        for a in pows(dims[0]) {
            for b in pows(dims[1]) {
                if depth * a * b * 32 <= share {
                    best = best.max(a * b);
                }
            }
        }
        best
    }

    #[test]
    fn double_buffered_tile_fits_slack() {
        let slack = 2 * 16 * 16 * 32;
        let plan = tiling_fixture(false, slack);
        let e = &plan.arrays["X"];
        assert_eq!(e.tile, vec![16, 16]);
        assert_eq!(e.tile_words, enumerate_fit([64, 64], 2, slack as u64));
        assert_eq!(e.depth, 2);
        assert_eq!(e.tile_bytes, 1024);
        assert_eq!(e.governing_loop.as_deref(), Some("j"));
        assert!(plan.total_area() <= slack as u64);
    }

    #[test]
    fn no_slack_no_tiles() {
        assert!(tiling_fixture(false, 0).arrays.is_empty());
    }

    #[test]
    fn written_arrays_are_single_buffered() {
        let plan = tiling_fixture(true, 1 << 20);
        assert_eq!(plan.arrays["X"].depth, 1);
    }

    #[test]
    fn schedule_segments() {
        let k = parse_kernel(
            "kernel t { array X: 32b[16] input; loop i in 0..16 { read X[i]; } }",
        )
        .unwrap();
        let s = tile_schedule(&k, "X", &[4], DEFAULT_CAP).unwrap();
        assert_eq!(s.tiles.len(), 4);
        assert_eq!(s.segments(), vec![4, 4, 4, 4]);
        assert!(s.coherent);
        let s = tile_schedule(
            &parse_kernel("kernel t { array X: 32b[16] input; loop i in 0..15 { read X[i], X[i+1]; } }").unwrap(),
            "X",
            &[4],
            DEFAULT_CAP,
        )
        .unwrap();
        assert!(!s.coherent);
    }
}
