mod common;

use std::path::Path;
use std::process::{Command, Output};

fn memforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memforge")).args(args).env_remove("MEMFORGE_CAP").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn compile_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let k = common::kernel_path("matmul_ikj");
    let pl = common::platform_path("default");
    let o = memforge(&["compile", p(&k), p(&pl), "-o", p(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["arch.json", "lowered.ir", "report.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("53252"), "{report}");
}

#[test]
fn compile_json_report_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let k = common::kernel_path("stencil1d");
    let pl = common::platform_path("default");
    let o = memforge(&["compile", p(&k), p(&pl), "-o", p(dir.path()), "--report", "json"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    common::validate_against("compile_report.schema.json", &text).unwrap();
}

#[test]
fn simulate_reports_json_for_compiled_arch() {
    let dir = tempfile::tempdir().unwrap();
    let k = common::kernel_path("stream_uniform");
    let pl = common::platform_path("stream");
    assert!(memforge(&["compile", p(&k), p(&pl), "-o", p(dir.path())]).status.success());
    let arch = dir.path().join("arch.json");
    let csv = dir.path().join("trace.csv");
    let o = memforge(&["simulate", "--arch", p(&arch), p(&k), p(&pl), "--report", "json", "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    common::validate_against("eval_report.schema.json", &text).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["total_cycles"], 1428);

    let rows = std::fs::read_to_string(&csv).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next(), Some("instance,statement,start_cycle,transfer_wait,bank_conflict,cache_miss"));
    // One row per instance: 4 * (256 + 44).
    assert_eq!(lines.count(), 1200);
}

#[test]
fn missing_input_exits_one() {
    let o = memforge(&["check", "/nonexistent/k.ir"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn syntax_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ir");
    std::fs::write(&bad, "kernel k { loop i in 0..4 { read A[i] } }").unwrap();
    assert_eq!(memforge(&["check", p(&bad)]).status.code(), Some(1));
}

#[test]
fn usage_error_exits_two() {
    assert_eq!(memforge(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(memforge(&["compile"]).status.code(), Some(2));
    assert_eq!(memforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn check_accepts_fixtures() {
    let o = memforge(&["check", p(&common::kernel_path("spmv")), p(&common::platform_path("two_channel"))]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: kernel spmv"));
}

#[test]
fn phase_prints_canonical_json() {
    let k = common::kernel_path("transpose");
    let pl = common::platform_path("default");
    for phase in ["data-org", "layout", "comm", "partition", "emit"] {
        let o = memforge(&["phase", phase, p(&k), p(&pl)]);
        assert!(o.status.success(), "{phase}: {}", String::from_utf8_lossy(&o.stderr));
        let text = String::from_utf8(o.stdout).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(memforge::canonical_json(&v), text, "{phase}");
    }
}

#[test]
fn cap_from_environment_is_enforced() {
    let k = common::kernel_path("matmul_ikj");
    let pl = common::platform_path("default");
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_memforge"))
        .args(["compile", p(&k), p(&pl), "-o", p(dir.path())])
        .env("MEMFORGE_CAP", "16")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn infeasible_budget_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let pl = dir.path().join("tiny.json");
    std::fs::write(
        &pl,
        r#"{ "budget": 0, "bank": { "max_words": 4096, "word_bits": 16, "max_ports": 2, "alpha": 0.5 },
             "cache": { "line": 32, "capacity": 1024, "assoc": 2, "hit_latency": 1 },
             "channels": [], "dma": { "setup": 0, "max_burst": 1024 } }"#,
    )
    .unwrap();
    let o = memforge(&["compile", p(&common::kernel_path("vecadd")), p(&pl), "-o", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("arch.json").exists());
}
