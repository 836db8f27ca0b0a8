use std::path::Path;
use std::process::{Command, Output};

const DOUBLE: &str = "\
; Each tasklet doubles the words it owns, cyclically.
.section wram
n:      .word 8
a:      .space 32

.section text
main:
    movi r2, n
    lw r3, [r2]
    movi r4, a
    add r5, r0, 0
loop:
    bge r5, r3, done
    lsl r6, r5, 2
    add r6, r6, r4
    lw r7, [r6]
    add r7, r7, r7
    sw r7, [r6]
    add r5, r5, r1
    jmp loop
done:
    stop
";

fn pimsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pimsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("PIMSIM_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn asm_link_disasm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("double.s"), DOUBLE).unwrap();
    let o = pimsim(dir.path(), &["asm", "double.s", "-o", "double.obj.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = pimsim(dir.path(), &["link", "double.obj.json", "-o", "double.pimg", "--threads", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = pimsim(dir.path(), &["disasm", "double.pimg"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("stop"), "{text}");
    assert!(text.contains("lw"), "{text}");
}

#[test]
fn link_reports_unresolved_symbols() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.s"), ".section text\nmain:\n    jmp nowhere\n").unwrap();
    let o = pimsim(dir.path(), &["link", "bad.s", "-o", "bad.pimg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn manifest_run_checks_expected_words() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("double.s"), DOUBLE).unwrap();
    let manifest = |expected: &str| {
        format!(
            r#"{{"sources": ["double.s"], "dpus": 2, "threads": 3,
                "inputs": [{{"symbol": "a", "per_dpu": [[1,2,3,4,5,6,7,8],[10,20,30,40,50,60,70,80]]}}],
                "outputs": [{{"symbol": "a", "words": 8, "expected": {expected}}}]}}"#
        )
    };
    std::fs::write(dir.path().join("ok.json"), manifest("[[2,4,6,8,10,12,14,16],[20,40,60,80,100,120,140,160]]")).unwrap();
    let o = pimsim(dir.path(), &["run", "--manifest", "ok.json", "-o", "r.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["passed"], true);
    assert_eq!(r["dpus"], 2);

    std::fs::write(dir.path().join("bad.json"), manifest("[2,4,6,8,10,12,14,16]")).unwrap();
    let o = pimsim(dir.path(), &["run", "--manifest", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), r#"{"kernel": "VA", "dpuz": 3}"#).unwrap();
    let o = pimsim(dir.path(), &["run", "--manifest", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("m.json"), r#"{"kernel": "VA", "config": {"core.nope": 1}}"#).unwrap();
    let o = pimsim(dir.path(), &["run", "--manifest", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("core.nope"));
    let o = pimsim(dir.path(), &["run", "--kernel", "NOPE"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn kernel_run_is_deterministic_and_ilp_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["run", "--kernel", "VA", "--dpus", "1", "--threads", "16", "--scale", "2048"];
    let a = pimsim(dir.path(), &base);
    let b = pimsim(dir.path(), &base);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let mut fast = base.to_vec();
    fast.extend(["--ilp", "DRSF"]);
    let c = pimsim(dir.path(), &fast);
    let ra: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let rc: serde_json::Value = serde_json::from_slice(&c.stdout).unwrap();
    assert_eq!(ra["outputs_digest"], rc["outputs_digest"]);
    assert!(rc["kernel_seconds"].as_f64().unwrap() < ra["kernel_seconds"].as_f64().unwrap());
    let ipc = ra["aggregate"]["ipc"].as_f64().unwrap();
    let util = ra["aggregate"]["utilization"]["compute"].as_f64().unwrap();
    assert!((ipc - util).abs() < 1e-9);
}

#[test]
fn config_file_from_env_and_set_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"core.forwarding": true}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pimsim"))
        .args(["run", "--kernel", "RED", "--scale", "512", "--set", "core.unified_rf=true"])
        .current_dir(dir.path())
        .env("PIMSIM_CONFIG", "c.json")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["config"]["core"]["forwarding"], true);
    assert_eq!(r["config"]["core"]["unified_rf"], true);
}

#[test]
fn report_renders_each_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = pimsim(dir.path(), &["run", "--kernel", "HST", "--scale", "1024", "-o", "h.json"]);
    assert!(o.status.success());
    for table in ["summary", "phases", "mix", "tlp", "tlp-series"] {
        let o = pimsim(dir.path(), &["report", "h.json", "--table", table]);
        assert!(o.status.success(), "{table}");
        let text = stdout(&o);
        assert!(text.lines().count() >= 2, "{table}: {text}");
    }
}

#[test]
fn thread_sweep_ipc_is_nondecreasing() {
    let dir = tempfile::tempdir().unwrap();
    let o = pimsim(dir.path(), &["sweep", "--kernel", "VA", "--scale", "4096", "--axis", "threads", "--values", "1,4,16"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "ipc").unwrap();
    let ipc: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(ipc.len(), 3);
    assert!(ipc.windows(2).all(|w| w[0] <= w[1]), "{ipc:?}");
}

#[test]
fn mram_scale_sweep_helps_more_with_ilp() {
    let dir = tempfile::tempdir().unwrap();
    let times = |ilp: &str| -> Vec<f64> {
        let o = pimsim(
            dir.path(),
            &["sweep", "--kernel", "VA", "--scale", "8192", "--ilp", ilp, "--axis", "mram-scale", "--values", "1,2,4"],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = stdout(&o);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "kernel_seconds").unwrap();
        lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
    };
    let base = times("");
    let ilp = times("DRSF");
    let speedup = |t: &[f64]| t[0] / t[2];
    assert!(ilp.windows(2).all(|w| w[1] <= w[0]), "{ilp:?}");
    assert!(speedup(&ilp) > speedup(&base), "{base:?} {ilp:?}");
}

#[test]
fn dpu_sweep_gives_phase_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let o = pimsim(
        dir.path(),
        &["sweep", "--kernel", "VA", "--scale", "16384", "--axis", "dpus", "--values", "1,16,64", "--table", "phases"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("axis,value,kernel,dpus,threads,cpu_to_dpu_s"));
    assert!(!text.contains("-0.0"));
}
