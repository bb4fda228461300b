use std::path::Path;
use std::process::{Command, Output};

fn stma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stma")).args(args).env_remove("STMA_SEED").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, len: &str) {
    let out = stma(&["synth", "--out", s(dir), "--length", len, "--targets", "2", "--height", "40", "--width", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_cropped_masks_and_a_log() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "4");
    let out = tmp.path().join("out");
    let r = stma(&["run", "--sequence", s(&seq.join("manifest.txt")), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for k in 0..4 {
        let img = image::open(out.join(format!("{k:05}.png"))).unwrap();
        assert_eq!((img.width(), img.height()), (40, 40));
    }
    let log = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["temporal_usage"].is_array());
    }
    assert!(log.lines().nth(1).unwrap().contains("\"j\""));
}

#[test]
fn seed_env_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "3");
    let manifest = seq.join("manifest.txt");
    let mut outs = Vec::new();
    for (name, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let out = tmp.path().join(name);
        let st = Command::new(env!("CARGO_BIN_EXE_stma"))
            .args(["run", "--sequence", s(&manifest), "--out", s(&out)])
            .env("STMA_SEED", seed)
            .status()
            .unwrap();
        assert!(st.success());
        outs.push(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_ne!(outs[0], outs[2]);
}

#[test]
fn eval_prints_a_tab_separated_table() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "3");
    let masks = seq.join("masks");
    let out = stma(&["eval", "--pred", s(&masks), "--gt", s(&masks)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frame\ttarget\tJ\tF"));
    assert_eq!(
        text.lines().filter(|l| l.starts_with(char::is_numeric) && l.ends_with("1.000000\t1.000000")).count(),
        6
    );
    assert!(text.contains("J&F\t-\t1.000000"));
}

#[test]
fn simulate_memory_matches_the_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("trace.txt");
    std::fs::write(&trace, "insert 0\ninsert 1\ntouch 1 5\ninsert 2\ntouch 2 1\ninsert 3\ninsert 4\n").unwrap();
    let bank = stma(&["simulate-memory", "--trace", s(&trace), "--capacity", "3"]);
    let reference = stma(&["simulate-memory", "--trace", s(&trace), "--capacity", "3", "--reference"]);
    assert!(bank.status.success() && reference.status.success());
    assert_eq!(bank.stdout, reference.stdout);
    assert!(String::from_utf8_lossy(&bank.stdout).starts_with("evict\t5\t"));
}

#[test]
fn saved_weights_are_used_by_run() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "3");
    let cfg = tmp.path().join("cfg.txt");
    std::fs::write(&cfg, "seed=3\nheight=48\nwidth=48\nchannels=16\nheads=2\nblocks=1\nvalue_channels=8\n").unwrap();
    let weights = tmp.path().join("w");
    assert!(stma(&["init-weights", "--config", s(&cfg), "--out", s(&weights)]).status.success());
    let mut with_weights = std::fs::read_to_string(&cfg).unwrap();
    with_weights.push_str("weights=w\n");
    let cfg2 = tmp.path().join("cfg2.txt");
    std::fs::write(&cfg2, with_weights).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(stma(&["run", "--config", s(&cfg), "--sequence", s(&seq.join("manifest.txt")), "--out", s(&a)])
        .status
        .success());
    assert!(stma(&["run", "--config", s(&cfg2), "--sequence", s(&seq.join("manifest.txt")), "--out", s(&b)])
        .status
        .success());
    for k in 0..3 {
        let name = format!("{k:05}.png");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn bad_inputs_exit_with_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.txt");
    let out = stma(&["run", "--sequence", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let cfg = tmp.path().join("cfg.txt");
    std::fs::write(&cfg, "patch_size=8\n").unwrap();
    let out = stma(&["bench", "--config", s(&cfg), "--iterations", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_reports_at_least_twelve_checks() {
    let out = stma(&["verify", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["checks"].as_array().unwrap().len() >= 12);
}
