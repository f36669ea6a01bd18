//! Runs the phases in order over one specialization state: data
//! organization, layout, communication, local partitioning, then emission.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::arch::{build_architecture, emit_lowered_ir, simplify_architecture, MemoryArchitecture};
use crate::comm::{plan_prefetch, PrefetchPlan};
use crate::eval::{simulate, EvalReport};
use crate::ir::{classify_accesses, AccessClass, Kernel, DEFAULT_CAP};
use crate::layout::{plan_layout, select_tiling, LayoutPlan, TilingPlan};
use crate::partition::{compute_lifetimes, PartitionError, plan_all_banking, plan_sharing, BankingPlan, Lifetime, SharingPlan};
use crate::placement::{
    best_channel, plan_placement_excluding, ArrayPlacement, Placement, PlacementError, PlacementPlan, Solver,
};
use crate::platform::{area_units, PlatformSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),
    #[error("{phase}: {message}")]
    Phase { phase: &'static str, message: String },
}

fn phase_err(phase: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Phase { phase, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    DataOrg,
    Layout,
    Comm,
    Partition,
    Emit,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::DataOrg => "data-org",
            Phase::Layout => "layout",
            Phase::Comm => "comm",
            Phase::Partition => "partition",
            Phase::Emit => "emit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Limit on enumerated dynamic statement instances.
    pub cap: u64,
    /// Overrides the platform's per-port area penalty.
    pub alpha: Option<f64>,
    pub data_org: bool,
    pub layout: bool,
    pub comm: bool,
    pub partition: bool,
    /// Reserved for randomized tie-breaking; the current algorithms are
    /// fully deterministic and ignore it.
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { cap: DEFAULT_CAP, alpha: None, data_org: true, layout: true, comm: true, partition: true, seed: 0 }
    }
}

impl PipelineOptions {
    /// Every phase disabled: all arrays off chip behind blocking element
    /// transfers, single-bank memories.
    pub fn baseline(&self) -> Self {
        PipelineOptions { data_org: false, layout: false, comm: false, partition: false, ..self.clone() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecializationState {
    /// Rewritten in place by the layout phase.
    #[serde(skip)]
    pub kernel: Kernel,
    #[serde(skip)]
    pub platform: PlatformSpec,
    pub classes: BTreeMap<String, AccessClass>,
    pub placement: Option<PlacementPlan>,
    pub layout: Option<LayoutPlan>,
    pub tiling: Option<TilingPlan>,
    pub prefetch: Option<PrefetchPlan>,
    pub banking: Option<BankingPlan>,
    pub lifetimes: BTreeMap<String, Lifetime>,
    pub sharing: Option<SharingPlan>,
    pub architecture: Option<MemoryArchitecture>,
    pub evicted: BTreeSet<String>,
    pub diagnostics: Vec<String>,
}

impl SpecializationState {
    fn new(kernel: Kernel, platform: PlatformSpec) -> Self {
        SpecializationState {
            kernel,
            platform,
            classes: BTreeMap::new(),
            placement: None,
            layout: None,
            tiling: None,
            prefetch: None,
            banking: None,
            lifetimes: BTreeMap::new(),
            sharing: None,
            architecture: None,
            evicted: BTreeSet::new(),
            diagnostics: Vec::new(),
        }
    }

    /// Phase outputs are present exactly as a prefix of the flow.
    pub fn is_ordered(&self) -> bool {
        let set = [
            self.placement.is_some(),
            self.layout.is_some(),
            self.tiling.is_some(),
            self.prefetch.is_some(),
            self.banking.is_some(),
            self.sharing.is_some(),
            self.architecture.is_some(),
        ];
        set.windows(2).all(|w| w[0] || !w[1])
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub state: SpecializationState,
    pub lowered_ir: String,
    pub baseline: EvalReport,
    pub specialized: EvalReport,
}

/// Placement used when data organization is disabled: everything behind the
/// cheapest channel, or everything on chip when there is none.
fn naive_placement(k: &Kernel, platform: &PlatformSpec) -> PlacementPlan {
    let mut arrays = BTreeMap::new();
    let mut committed = 0;
    for decl in &k.arrays {
        let fp = decl.footprint_bytes();
        let weight = area_units(decl.words(), platform.storage_bits(decl.element_bits), 1, platform.bank.alpha);
        let placement = match best_channel(platform, fp) {
            Some(channel) => Placement::OffChip { channel },
            None => {
                committed += weight;
                Placement::OnChipPlm
            }
        };
        arrays.insert(
            decl.name.clone(),
            ArrayPlacement { placement, accesses: 0, benefit: 0, footprint_bytes: fp, weight },
        );
    }
    PlacementPlan { arrays, solver: Solver::AllFit, committed_area: committed }
}

pub fn effective_platform(platform: &PlatformSpec, options: &PipelineOptions) -> PlatformSpec {
    let mut p = platform.clone();
    if let Some(a) = options.alpha {
        p.bank.alpha = a;
    }
    p
}

/// Runs phases up to and including `stop_after`, with feasibility repair:
/// when the built architecture exceeds the budget, the on-chip array with
/// the lowest benefit is barred from PLMs and the flow restarts.
pub fn run_phases(
    kernel: &Kernel,
    platform: &PlatformSpec,
    options: &PipelineOptions,
    stop_after: Phase,
) -> Result<SpecializationState, PipelineError> {
    let platform = effective_platform(platform, options);
    let source = kernel.logical();
    let mut evicted = BTreeSet::new();
    let mut untiled: BTreeSet<String> = BTreeSet::new();
    let mut notes = Vec::new();
    loop {
        let mut st = SpecializationState::new(source.clone(), platform.clone());
        st.evicted = evicted.clone();
        st.diagnostics = notes.clone();
        let cap = options.cap;
        st.classes = classify_accesses(&st.kernel, cap).map_err(|e| phase_err("classify")(&e))?;

        let placement = if options.data_org {
            plan_placement_excluding(&st.kernel, &st.classes, &platform, cap, &evicted).map_err(|e| match e {
                PlacementError::Infeasible(m) => PipelineError::InfeasibleBudget(m),
                other => phase_err("data-org")(&other),
            })?
        } else {
            naive_placement(&st.kernel, &platform)
        };
        st.placement = Some(placement);
        if stop_after == Phase::DataOrg {
            return Ok(st);
        }

        st.layout = Some(if options.layout {
            plan_layout(&mut st.kernel, &st.classes)
        } else {
            LayoutPlan::default()
        });
        if stop_after == Phase::Layout {
            return Ok(st);
        }

        let placement = st.placement.as_ref().expect("set above");
        let slack = platform.budget as i64 - placement.committed_area as i64;
        let tiling = if options.comm {
            let mut t = select_tiling(&st.kernel, &st.classes, placement, &platform, slack, cap)
                .map_err(|e| phase_err("comm")(&e))?;
            t.arrays.retain(|n, _| !untiled.contains(n));
            t
        } else {
            TilingPlan { slack, ..Default::default() }
        };
        let prefetch =
            plan_prefetch(&tiling, &st.kernel, placement, &platform, cap).map_err(|e| phase_err("comm")(&e))?;
        st.tiling = Some(tiling);
        st.prefetch = Some(prefetch);
        if stop_after == Phase::Comm {
            return Ok(st);
        }

        let banking = match plan_all_banking(&st.kernel, placement, st.tiling.as_ref(), &platform, options.partition, cap)
        {
            Ok(b) => b,
            // An unbankable PLM array moves off chip; an unbankable reuse
            // buffer is dropped.
            Err(PartitionError::NoFeasibleBanking { array, .. })
                if !platform.channels.is_empty()
                    && (options.data_org && placement.placement(&array) == Some(&Placement::OnChipPlm)
                        || st.tiling.as_ref().is_some_and(|t| t.arrays.contains_key(&array))) =>
            {
                if placement.placement(&array) == Some(&Placement::OnChipPlm) {
                    notes.push(format!("no conflict-free banking for `{array}`; moving it off chip and replanning"));
                    evicted.insert(array);
                } else {
                    notes.push(format!("no conflict-free banking for the reuse buffer of `{array}`; dropping its tiling"));
                    untiled.insert(array);
                }
                continue;
            }
            Err(e) => return Err(phase_err("partition")(&e)),
        };
        let (lifetimes, diags) = compute_lifetimes(&st.kernel, cap).map_err(|e| phase_err("partition")(&e))?;
        st.diagnostics.extend(diags);
        st.sharing = Some(plan_sharing(&lifetimes, &banking, &platform, options.partition));
        st.banking = Some(banking);
        st.lifetimes = lifetimes;
        if stop_after == Phase::Partition {
            return Ok(st);
        }

        let built = build_architecture(&st).map_err(|e| phase_err("emit")(&e))?;
        let arch = simplify_architecture(&built);
        if arch.area > platform.budget {
            let victim = options
                .data_org
                .then(|| {
                    st.placement
                        .as_ref()
                        .expect("set above")
                        .arrays
                        .iter()
                        .filter(|(n, a)| a.placement == Placement::OnChipPlm && !evicted.contains(*n))
                        .min_by(|(n1, a1), (n2, a2)| a1.benefit.cmp(&a2.benefit).then(n1.cmp(n2)))
                        .map(|(n, _)| n.clone())
                })
                .flatten();
            match victim {
                Some(v) if !platform.channels.is_empty() => {
                    notes.push(format!(
                        "area {} exceeds budget {}; moving `{v}` off chip and replanning",
                        arch.area, platform.budget
                    ));
                    evicted.insert(v);
                    continue;
                }
                _ => {
                    return Err(PipelineError::InfeasibleBudget(format!(
                        "architecture needs {} area units but the budget is {}",
                        arch.area, platform.budget
                    )))
                }
            }
        }
        st.architecture = Some(arch);
        return Ok(st);
    }
}

pub fn run_pipeline(
    kernel: &Kernel,
    platform: &PlatformSpec,
    options: &PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let state = run_phases(kernel, platform, options, Phase::Emit)?;
    let lowered_ir = emit_lowered_ir(&state).map_err(|e| phase_err("emit")(&e))?;
    let base = run_phases(kernel, platform, &options.baseline(), Phase::Emit)?;
    let sim = |s: &SpecializationState| {
        simulate(&s.kernel, s.architecture.as_ref().expect("emit phase ran"), &s.platform, options.cap)
            .map_err(|e| phase_err("simulate")(&e))
    };
    let specialized = sim(&state)?;
    let baseline = sim(&base)?;
    Ok(PipelineOutput { state, lowered_ir, baseline, specialized })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompileReport<'a> {
    pub kernel: &'a str,
    pub budget: u64,
    pub area: u64,
    pub baseline: &'a EvalReport,
    pub specialized: &'a EvalReport,
    pub diagnostics: &'a [String],
}

impl PipelineOutput {
    pub fn report(&self) -> CompileReport<'_> {
        CompileReport {
            kernel: &self.state.kernel.name,
            budget: self.state.platform.budget,
            area: self.state.architecture.as_ref().map_or(0, |a| a.area),
            baseline: &self.baseline,
            specialized: &self.specialized,
            diagnostics: &self.state.diagnostics,
        }
    }

    pub fn report_json(&self) -> String {
        crate::canonical_json(&serde_json::to_value(self.report()).expect("report serializes"))
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let r = self.report();
        s.push_str(&format!("kernel {}\narea {} / {}\n", r.kernel, r.area, r.budget));
        for (label, e) in [("baseline", r.baseline), ("specialized", r.specialized)] {
            s.push_str(&format_eval(label, e));
        }
        for d in r.diagnostics {
            s.push_str(&format!("note: {d}\n"));
        }
        s
    }
}

pub fn format_eval(label: &str, e: &EvalReport) -> String {
    let mut s = format!(
        "{label}: total {} cycles (compute {}, transfer wait {}, bank conflict {}, cache miss {}), off-chip {} bytes\n",
        e.total_cycles,
        e.compute_cycles,
        e.stall_cycles.transfer_wait,
        e.stall_cycles.bank_conflict,
        e.stall_cycles.cache_miss,
        e.offchip_bytes
    );
    for (name, a) in &e.arrays {
        s.push_str(&format!(
            "  {name}: {} accesses, {} conflicts, {} misses\n",
            a.accesses, a.conflicts, a.misses
        ));
    }
    s
}
