//! Communication: DMA transfer costs and prefetch scheduling of reuse-buffer
//! tiles.
//!
//! Transfers are split into bursts of at most `dma.max_burst` bytes and every
//! burst pays the DMA setup plus the full channel latency. Compute is one
//! cycle per dynamic statement instance. With double buffering the next tile
//! is fetched while the current one is consumed, giving
//! `transfer_1 + Σ_t max(compute_t, transfer_{t+1})`; blocking transfers cost
//! `Σ_t (transfer_t + compute_t)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ir::{IrError, Kernel};
use crate::layout::{tile_schedule, TilingPlan};
use crate::placement::{Placement, PlacementPlan};
use crate::platform::{Channel, Dma, PlatformSpec};

pub fn transfer_cycles(bytes: u64, channel: &Channel, dma: &Dma) -> u64 {
    if bytes == 0 {
        return 0;
    }
    let full = bytes / dma.max_burst;
    let rest = bytes % dma.max_burst;
    let burst = |b: u64| dma.setup + channel.latency + b.div_ceil(channel.bw);
    let mut total = full * burst(dma.max_burst);
    if rest > 0 {
        total += burst(rest);
    }
    total
}

pub fn bursts(bytes: u64, dma: &Dma) -> u64 {
    bytes.div_ceil(dma.max_burst)
}

/// Total cycles of a double-buffered tile stream. `transfers[t]` loads the
/// tile consumed during `computes[t]`.
pub fn double_buffer_total(transfers: &[u64], computes: &[u64]) -> u64 {
    assert_eq!(transfers.len(), computes.len());
    let Some(&first) = transfers.first() else {
        return 0;
    };
    first
        + computes
            .iter()
            .enumerate()
            .map(|(t, &c)| c.max(transfers.get(t + 1).copied().unwrap_or(0)))
            .sum::<u64>()
}

pub fn blocking_total(transfers: &[u64], computes: &[u64]) -> u64 {
    transfers.iter().sum::<u64>() + computes.iter().sum::<u64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    DoubleBuffer,
    Blocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hidden {
    Fully,
    Partially,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchEntry {
    pub channel: String,
    pub tile_bytes: u64,
    pub transfer_cycles: u64,
    pub bursts: u64,
    pub mode: TransferMode,
    pub hidden: Hidden,
    /// Shortest run of instances between two tile switches.
    pub compute_cycles_per_tile: u64,
    /// Tile loads over the whole kernel.
    pub tile_loads: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchPlan {
    pub arrays: BTreeMap<String, PrefetchEntry>,
}

impl PrefetchPlan {
    pub fn any_double_buffer(&self) -> bool {
        self.arrays.values().any(|e| e.mode == TransferMode::DoubleBuffer)
    }
}

pub fn plan_prefetch(
    tiling: &TilingPlan,
    kernel: &Kernel,
    placement: &PlacementPlan,
    platform: &PlatformSpec,
    cap: u64,
) -> Result<PrefetchPlan, IrError> {
    let mut plan = PrefetchPlan::default();
    for (name, tile) in &tiling.arrays {
        let Some(Placement::OffChip { channel }) = placement.placement(name) else {
            continue;
        };
        let ch = platform.channel(channel).expect("placement uses platform channels");
        let sched = tile_schedule(kernel, name, &tile.tile, cap)?;
        let segments = sched.segments();
        // The final segment never has a following transfer to hide.
        let compute = if segments.len() > 1 {
            segments[..segments.len() - 1].iter().copied().min().unwrap_or(0)
        } else {
            segments.first().copied().unwrap_or(0)
        };
        let xfer = transfer_cycles(tile.tile_bytes, ch, &platform.dma);
        let mode = if tile.depth >= 2 { TransferMode::DoubleBuffer } else { TransferMode::Blocking };
        let hidden = match mode {
            TransferMode::DoubleBuffer if xfer <= compute => Hidden::Fully,
            TransferMode::DoubleBuffer => Hidden::Partially,
            TransferMode::Blocking => Hidden::None,
        };
        plan.arrays.insert(
            name.clone(),
            PrefetchEntry {
                channel: channel.clone(),
                tile_bytes: tile.tile_bytes,
                transfer_cycles: xfer,
                bursts: bursts(tile.tile_bytes, &platform.dma),
                mode,
                hidden,
                compute_cycles_per_tile: compute,
                tile_loads: sched.tiles.len() as u64,
            },
        );
    }
    Ok(plan)
}
