//! The specialized template instance: components, array bindings and
//! connections, plus the lowered kernel IR handed to HLS.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::TransferMode;
use crate::ir::print::RenderHooks;
use crate::ir::{Access, AffineExpr, ClassKind, Index, Kernel, Loop, Node};
use crate::partition::{BankConfig, Scheme, Storage};
use crate::placement::{best_channel, Placement};
use crate::pipeline::SpecializationState;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("cannot build the architecture before the {0} plan exists")]
    MissingPlan(&'static str),
    #[error("malformed architecture description: {0}")]
    Syntax(String),
    #[error("architecture does not bind array `{0}`")]
    Unbound(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentKind {
    Plm {
        scheme: Scheme,
        banks: u64,
        ports: u32,
        word_bits: u32,
        /// Physical words across all banks and buffer copies.
        words: u64,
        area: u64,
        members: Vec<String>,
    },
    Cache {
        line: u64,
        capacity: u64,
        assoc: u32,
        hit_latency: u64,
        area: u64,
        channel: String,
    },
    Dma {
        setup: u64,
        max_burst: u64,
    },
    Prefetcher {
        arrays: Vec<String>,
    },
    ChannelController {
        channels: Vec<String>,
        simplified: bool,
    },
    LisChannel {
        array: String,
        channel: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    #[serde(flatten)]
    pub spec: ComponentKind,
}

impl Component {
    pub fn area(&self) -> u64 {
        match &self.spec {
            ComponentKind::Plm { area, .. } | ComponentKind::Cache { area, .. } => *area,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingKind {
    Plm,
    ReuseBuffer,
    Cache,
    Offchip,
    Lis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileBinding {
    pub shape: Vec<u64>,
    pub depth: u32,
    pub mode: TransferMode,
    pub tile_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub component: String,
    pub kind: BindingKind,
    /// Storage dimension order relative to the source declaration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub banking: Option<BankConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<TileBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    pub input_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryArchitecture {
    pub components: Vec<Component>,
    pub bindings: BTreeMap<String, Binding>,
    pub connections: Vec<Edge>,
    pub area: u64,
    pub meta: Meta,
}

pub const ACCELERATOR: &str = "accelerator";

pub fn channel_endpoint(id: &str) -> String {
    format!("ch:{id}")
}

impl MemoryArchitecture {
    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn has_kind(&self, pred: impl Fn(&ComponentKind) -> bool) -> bool {
        self.components.iter().any(|c| pred(&c.spec))
    }

    pub fn controller(&self) -> Option<(&[String], bool)> {
        self.components.iter().find_map(|c| match &c.spec {
            ComponentKind::ChannelController { channels, simplified } => Some((channels.as_slice(), *simplified)),
            _ => None,
        })
    }

    pub fn cache(&self) -> Option<&Component> {
        self.components.iter().find(|c| matches!(c.spec, ComponentKind::Cache { .. }))
    }

    pub fn to_json(&self) -> String {
        crate::canonical_json(&serde_json::to_value(self).expect("architecture serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let mut a: MemoryArchitecture = serde_json::from_str(text).map_err(|e| ArchError::Syntax(e.to_string()))?;
        a.normalize();
        Ok(a)
    }

    fn normalize(&mut self) {
        self.components.sort_by(|a, b| a.id.cmp(&b.id));
        self.connections.sort();
        self.connections.dedup();
        self.area = self.components.iter().map(Component::area).sum();
    }
}

pub fn build_architecture(state: &SpecializationState) -> Result<MemoryArchitecture, ArchError> {
    let k = &state.kernel;
    let platform = &state.platform;
    let placement = state.placement.as_ref().ok_or(ArchError::MissingPlan("placement"))?;
    let tiling = state.tiling.as_ref().ok_or(ArchError::MissingPlan("tiling"))?;
    let prefetch = state.prefetch.as_ref().ok_or(ArchError::MissingPlan("prefetch"))?;
    let banking = state.banking.as_ref().ok_or(ArchError::MissingPlan("banking"))?;
    let sharing = state.sharing.as_ref().ok_or(ArchError::MissingPlan("sharing"))?;

    let mut components = Vec::new();
    let mut bindings = BTreeMap::new();
    let mut edges = BTreeSet::new();
    let edge = |edges: &mut BTreeSet<Edge>, from: &str, to: &str| {
        edges.insert(Edge { from: from.to_string(), to: to.to_string() });
    };

    for g in &sharing.groups {
        components.push(Component {
            id: g.id.clone(),
            spec: ComponentKind::Plm {
                scheme: g.scheme,
                banks: g.banks,
                ports: g.ports,
                word_bits: g.word_bits,
                words: g.words,
                area: g.area,
                members: g.members.clone(),
            },
        });
        edge(&mut edges, ACCELERATOR, &g.id);
    }

    let uses_cache = placement.uses_cache();
    let cache_channel = if uses_cache { best_channel(platform, platform.cache.line) } else { None };
    if let Some(ch) = &cache_channel {
        components.push(Component {
            id: "cache0".into(),
            spec: ComponentKind::Cache {
                line: platform.cache.line,
                capacity: platform.cache.capacity,
                assoc: platform.cache.assoc,
                hit_latency: platform.cache.hit_latency,
                area: platform.cache_area(),
                channel: ch.clone(),
            },
        });
        edge(&mut edges, ACCELERATOR, "cache0");
        edge(&mut edges, "cache0", "ctrl0");
    }

    let mut lis = 0;
    let mut used_channels: BTreeSet<String> = cache_channel.iter().cloned().collect();
    let mut any_off_chip = false;
    for decl in &k.arrays {
        let name = &decl.name;
        let layout = decl.layout.clone();
        let p = placement.arrays.get(name).ok_or_else(|| ArchError::Unbound(name.clone()))?;
        let binding = match &p.placement {
            Placement::OnChipPlm => {
                let g = sharing.group_of(name).ok_or_else(|| ArchError::Unbound(name.clone()))?;
                Binding {
                    component: g.id.clone(),
                    kind: BindingKind::Plm,
                    layout,
                    banking: banking.arrays.get(name).map(|b| b.config.clone()),
                    tile: None,
                    channel: None,
                }
            }
            Placement::OnChipCache => Binding {
                component: "cache0".into(),
                kind: BindingKind::Cache,
                layout,
                banking: None,
                tile: None,
                channel: cache_channel.clone(),
            },
            Placement::OffChip { channel } => {
                any_off_chip = true;
                used_channels.insert(channel.clone());
                let class = &state.classes[name];
                let bank = banking.arrays.get(name);
                match (tiling.arrays.get(name), bank) {
                    (Some(t), Some(b)) if matches!(b.storage, Storage::ReuseBuffer { .. }) => {
                        let g = sharing.group_of(name).ok_or_else(|| ArchError::Unbound(name.clone()))?;
                        let mode = prefetch.arrays.get(name).map_or(TransferMode::Blocking, |e| e.mode);
                        edge(&mut edges, "dma0", &g.id);
                        edge(&mut edges, &g.id, "dma0");
                        Binding {
                            component: g.id.clone(),
                            kind: BindingKind::ReuseBuffer,
                            layout,
                            banking: Some(b.config.clone()),
                            tile: Some(TileBinding {
                                shape: t.tile.clone(),
                                depth: t.depth,
                                mode,
                                tile_bytes: t.tile_bytes,
                            }),
                            channel: Some(channel.clone()),
                        }
                    }
                    _ if class.kind == ClassKind::Irregular || class.opaque => {
                        let id = format!("lis{lis}");
                        lis += 1;
                        components.push(Component {
                            id: id.clone(),
                            spec: ComponentKind::LisChannel { array: name.clone(), channel: channel.clone() },
                        });
                        edge(&mut edges, ACCELERATOR, &id);
                        edge(&mut edges, &id, "ctrl0");
                        Binding {
                            component: id,
                            kind: BindingKind::Lis,
                            layout,
                            banking: None,
                            tile: None,
                            channel: Some(channel.clone()),
                        }
                    }
                    _ => {
                        edge(&mut edges, ACCELERATOR, "ctrl0");
                        Binding {
                            component: "ctrl0".into(),
                            kind: BindingKind::Offchip,
                            layout,
                            banking: None,
                            tile: None,
                            channel: Some(channel.clone()),
                        }
                    }
                }
            }
        };
        bindings.insert(name.clone(), binding);
    }

    if any_off_chip {
        components.push(Component {
            id: "dma0".into(),
            spec: ComponentKind::Dma { setup: platform.dma.setup, max_burst: platform.dma.max_burst },
        });
        edge(&mut edges, "ctrl0", "dma0");
        edge(&mut edges, "dma0", "ctrl0");
    }
    let double: Vec<String> = prefetch
        .arrays
        .iter()
        .filter(|(n, e)| e.mode == TransferMode::DoubleBuffer && bindings.get(*n).is_some_and(|b| b.tile.is_some()))
        .map(|(n, _)| n.clone())
        .collect();
    if !double.is_empty() {
        components.push(Component { id: "prefetcher0".into(), spec: ComponentKind::Prefetcher { arrays: double } });
        edge(&mut edges, "prefetcher0", "dma0");
    }
    if any_off_chip || uses_cache {
        components.push(Component {
            id: "ctrl0".into(),
            spec: ComponentKind::ChannelController {
                channels: used_channels.iter().cloned().collect(),
                simplified: false,
            },
        });
        for ch in &used_channels {
            edge(&mut edges, "ctrl0", &channel_endpoint(ch));
            edge(&mut edges, &channel_endpoint(ch), "ctrl0");
        }
    }

    let mut input_hashes = BTreeMap::new();
    input_hashes.insert("kernel".to_string(), crate::sha256_hex(k.logical().to_source().as_bytes()));
    input_hashes.insert("platform".to_string(), crate::sha256_hex(platform.canonical_json().as_bytes()));
    let mut arch = MemoryArchitecture {
        components,
        bindings,
        connections: edges.into_iter().collect(),
        area: 0,
        meta: Meta { tool_version: crate::TOOL_VERSION.to_string(), input_hashes },
    };
    arch.normalize();
    Ok(arch)
}

/// Drops template components the bindings do not need and reduces the
/// channel controller to a pass-through when a single channel is in use.
pub fn simplify_architecture(arch: &MemoryArchitecture) -> MemoryArchitecture {
    let mut a = arch.clone();
    let double = a
        .bindings
        .values()
        .any(|b| b.tile.as_ref().is_some_and(|t| t.mode == TransferMode::DoubleBuffer));
    let off_chip = a
        .bindings
        .values()
        .any(|b| matches!(b.kind, BindingKind::Offchip | BindingKind::ReuseBuffer | BindingKind::Lis));
    let cache_channel = a.components.iter().find_map(|c| match &c.spec {
        ComponentKind::Cache { channel, .. } => Some(channel.clone()),
        _ => None,
    });
    let mut used: BTreeSet<String> = a.bindings.values().filter_map(|b| b.channel.clone()).collect();
    used.extend(cache_channel.iter().cloned());
    let need_ctrl = off_chip || cache_channel.is_some();

    a.components.retain(|c| match &c.spec {
        ComponentKind::Prefetcher { .. } => double,
        ComponentKind::Dma { .. } => off_chip,
        ComponentKind::ChannelController { .. } => need_ctrl,
        _ => true,
    });
    for c in &mut a.components {
        if let ComponentKind::ChannelController { channels, simplified } = &mut c.spec {
            *channels = used.iter().cloned().collect();
            *simplified = used.len() == 1;
        }
    }
    let alive: BTreeSet<String> = a
        .components
        .iter()
        .map(|c| c.id.clone())
        .chain(std::iter::once(ACCELERATOR.to_string()))
        .chain(if need_ctrl { used.iter().map(|c| channel_endpoint(c)).collect() } else { Vec::new() })
        .collect();
    a.connections.retain(|e| alive.contains(&e.from) && alive.contains(&e.to));
    a.normalize();
    a
}

/// Row-major address expression over `dims` as an affine expression.
fn flat_expr(indices: &[Index], dims: &[u64]) -> Option<AffineExpr> {
    let mut acc = AffineExpr::constant(0);
    for (d, idx) in indices.iter().enumerate() {
        let stride = dims[d + 1..].iter().product::<u64>() as i64;
        acc = acc.add(&idx.as_affine()?.scale(stride));
    }
    Some(acc)
}

fn bank_expr(access: &Access, k: &Kernel, binding: &Binding) -> String {
    let Some(cfg) = &binding.banking else {
        return "0".into();
    };
    if cfg.banks == 1 {
        return "0".into();
    }
    let addr = match &binding.tile {
        Some(t) => {
            let mut terms = Vec::new();
            for (d, idx) in access.indices.iter().enumerate() {
                let stride: u64 = t.shape[d + 1..].iter().product();
                let part = format!("(({idx})%{})", t.shape[d]);
                terms.push(if stride == 1 { part } else { format!("{stride}*{part}") });
            }
            terms.join(" + ")
        }
        None => match k.array(&access.array).and_then(|a| flat_expr(&access.indices, &a.dims)) {
            Some(e) => e.to_string(),
            None => return "dynamic".into(),
        },
    };
    match cfg.scheme {
        Scheme::Cyclic => format!("({addr})%{}", cfg.banks),
        Scheme::Block => format!("({addr})/{}", cfg.words_per_bank),
    }
}

struct Lowering<'a> {
    kernel: &'a Kernel,
    arch: &'a MemoryArchitecture,
    /// Loop variable → transfer lines emitted at the top of that loop.
    transfers: BTreeMap<String, Vec<(String, String)>>,
}

fn statements_under(nodes: &[Node], out: &mut BTreeSet<usize>) {
    for n in nodes {
        match n {
            Node::Stmt(id) => {
                out.insert(*id);
            }
            Node::Loop(l) => statements_under(&l.body, out),
            Node::Transfer(_) => {}
        }
    }
}

impl RenderHooks for Lowering<'_> {
    fn access_suffix(&self, access: &Access, _loops: &[&Loop]) -> Option<String> {
        let b = self.arch.bindings.get(&access.array)?;
        Some(match b.kind {
            BindingKind::Plm | BindingKind::ReuseBuffer => {
                format!("@mem({}, bank={}, fixed(1))", b.component, bank_expr(access, self.kernel, b))
            }
            BindingKind::Cache => {
                let hit = match self.arch.cache().map(|c| &c.spec) {
                    Some(ComponentKind::Cache { hit_latency, .. }) => *hit_latency,
                    _ => 1,
                };
                format!("@mem({}, hit=fixed({hit}), miss=unbounded)", b.component)
            }
            BindingKind::Lis | BindingKind::Offchip => format!("@mem({}, unbounded)", b.component),
        })
    }

    fn loop_prologue(&self, lp: &Loop) -> Vec<String> {
        let Some(list) = self.transfers.get(&lp.var) else {
            return Vec::new();
        };
        let mut inside = BTreeSet::new();
        statements_under(&lp.body, &mut inside);
        list.iter()
            .filter(|(array, _)| {
                self.kernel
                    .accesses_to(array)
                    .any(|a| inside.contains(&a.statement))
            })
            .map(|(_, line)| line.clone())
            .collect()
    }

    fn preamble(&self) -> Vec<String> {
        self.kernel
            .arrays
            .iter()
            .filter_map(|a| {
                let p = a.layout.as_ref()?;
                let order: Vec<String> = p.iter().map(|d| d.to_string()).collect();
                Some(format!("# layout: {} stored with source dimensions in order ({})", a.name, order.join(",")))
            })
            .collect()
    }

    fn keep_transfers(&self) -> bool {
        false
    }
}

/// Kernel text with every access bound to its component and latency class,
/// storage permutations applied, and tile transfers marked at the loop that
/// moves between tiles.
pub fn emit_lowered_ir(state: &SpecializationState) -> Result<String, ArchError> {
    let arch = state.architecture.as_ref().ok_or(ArchError::MissingPlan("architecture"))?;
    let mut transfers: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    if let Some(tiling) = &state.tiling {
        let via = if arch.component("dma0").is_some() { "dma0" } else { "ctrl0" };
        for (name, t) in &tiling.arrays {
            if let Some(var) = &t.governing_loop {
                let shape: Vec<String> = t.tile.iter().map(|d| d.to_string()).collect();
                let line = format!("transfer {name} tile [{}] via {via};", shape.join(","));
                transfers.entry(var.clone()).or_default().push((name.clone(), line));
            }
        }
    }
    let hooks = Lowering { kernel: &state.kernel, arch, transfers };
    let mut out = String::new();
    let _ = writeln!(out, "# lowered for {} components, area {}", arch.components.len(), arch.area);
    out.push_str(&state.kernel.render(&hooks));
    Ok(out)
}
