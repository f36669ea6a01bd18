mod common;

use memforge::arch::{BindingKind, ComponentKind};
use memforge::ir::parse_kernel;
use memforge::pipeline::{run_phases, run_pipeline, Phase, PipelineError, PipelineOptions};
use memforge::placement::Placement;

#[test]
fn zero_budget_without_channels_is_infeasible() {
    let mut p = common::platform("onchip");
    p.budget = 0;
    let err = run_pipeline(&common::kernel("vecadd"), &p, &PipelineOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::InfeasibleBudget(_)), "{err}");
}

#[test]
fn on_chip_design_has_only_plms() {
    let o = run_pipeline(&common::kernel("small_onchip"), &common::platform("onchip"), &PipelineOptions::default())
        .unwrap();
    let a = o.state.architecture.as_ref().unwrap();
    assert!(a.components.iter().all(|c| matches!(c.spec, ComponentKind::Plm { .. })));
    assert!(a.bindings.values().all(|b| b.kind == BindingKind::Plm));
    // Both arrays are live for the whole loop, so they cannot share.
    assert_eq!(a.components.len(), 2);
    assert_eq!(o.specialized.stall_cycles.total(), 0);
    assert_eq!(o.specialized.total_cycles, 32);
}

#[test]
fn state_is_ordered_after_every_phase() {
    let k = common::kernel("stencil1d");
    let p = common::platform("default");
    for phase in [Phase::DataOrg, Phase::Layout, Phase::Comm, Phase::Partition, Phase::Emit] {
        let st = run_phases(&k, &p, &PipelineOptions::default(), phase).unwrap();
        assert!(st.is_ordered(), "{}", phase.name());
    }
    let early = run_phases(&k, &p, &PipelineOptions::default(), Phase::DataOrg).unwrap();
    assert!(early.placement.is_some() && early.banking.is_none() && early.architecture.is_none());
}

#[test]
fn lowered_ir_parses_and_keeps_the_kernel() {
    for name in ["matmul_ikj", "transpose", "conv1d", "tensor3d"] {
        let k = common::kernel(name);
        let o = run_pipeline(&k, &common::platform("default"), &PipelineOptions::default()).unwrap();
        assert!(o.lowered_ir.starts_with("# lowered for "), "{name}");
        let back = parse_kernel(&o.lowered_ir).unwrap();
        assert_eq!(back.logical(), k.logical(), "{name}");
    }
}

#[test]
fn irregular_off_chip_array_gets_a_lis_channel() {
    let o = run_pipeline(&common::kernel("gather_irregular"), &common::platform("default"), &PipelineOptions::default())
        .unwrap();
    let st = &o.state;
    assert!(matches!(st.placement.as_ref().unwrap().arrays["TABLE"].placement, Placement::OffChip { .. }));
    let a = st.architecture.as_ref().unwrap();
    let b = &a.bindings["TABLE"];
    assert_eq!(b.kind, BindingKind::Lis);
    assert!(matches!(a.component(&b.component).unwrap().spec, ComponentKind::LisChannel { .. }));
    assert!(o.lowered_ir.contains(&format!("@mem({}, unbounded)", b.component)));
}

#[test]
fn transpose_records_its_layout() {
    let o = run_pipeline(&common::kernel("transpose"), &common::platform("default"), &PipelineOptions::default())
        .unwrap();
    assert!(o.lowered_ir.contains("array A: 32b[32][32] input @layout(1,0);"));
    assert!(o.lowered_ir.contains("# layout: A stored with source dimensions in order (1,0)"));
    assert_eq!(o.state.architecture.as_ref().unwrap().bindings["A"].layout, Some(vec![1, 0]));
}

#[test]
fn baseline_disables_every_phase() {
    let b = PipelineOptions::default().baseline();
    assert!(!b.data_org && !b.layout && !b.comm && !b.partition);
    let k = common::kernel("matmul_ikj");
    let p = common::platform("default");
    let base = run_pipeline(&k, &p, &b).unwrap();
    let a = base.state.architecture.as_ref().unwrap();
    assert!(a.bindings.values().all(|b| b.kind == BindingKind::Offchip));
    assert_eq!(base.specialized.total_cycles, base.baseline.total_cycles);
}

#[test]
fn specialized_never_regresses_on_fixtures() {
    for name in common::kernel_names() {
        for &p in common::PLATFORMS {
            if let Ok(o) = run_pipeline(&common::kernel(&name), &common::platform(p), &PipelineOptions::default()) {
                assert!(
                    o.specialized.total_cycles <= o.baseline.total_cycles,
                    "{name}@{p}: {} > {}",
                    o.specialized.total_cycles,
                    o.baseline.total_cycles
                );
                assert!(o.state.architecture.as_ref().unwrap().area <= o.state.platform.budget, "{name}@{p}");
            }
        }
    }
}

#[test]
fn compile_report_is_reproducible() {
    let k = common::kernel("histogram");
    let p = common::platform("two_channel");
    let a = run_pipeline(&k, &p, &PipelineOptions::default()).unwrap();
    let b = run_pipeline(&k, &p, &PipelineOptions::default()).unwrap();
    assert_eq!(a.report_json(), b.report_json());
    common::validate_against("compile_report.schema.json", &a.report_json()).unwrap();
}
