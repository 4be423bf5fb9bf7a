use std::path::Path;
use std::process::{Command, Output};

fn mode0(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mode0"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn floor_prints_the_table() {
    let d = tempfile::tempdir().unwrap();
    let o = mode0(&["floor"], d.path());
    assert!(o.status.success());
    let s = stdout(&o);
    for v in ["0.200", "0.360", "0.488", "0.590", "0.738", "0.866"] {
        assert!(s.contains(v), "{s}");
    }
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        vec!["phase", "E"],
        vec!["phase", "A", "--scale", "huge"],
        vec!["report", "--ledger", "missing.json"],
        vec!["no-such-command"],
        vec!["train", "--n", "4", "--mode", "0b"],
    ] {
        let o = mode0(&args, d.path());
        assert!(!o.status.success(), "{args:?}");
        assert_eq!(stderr(&o).trim_end().lines().count(), 1, "{args:?}: {}", stderr(&o));
    }
    let o = mode0(&["phase", "E"], d.path());
    assert!(stderr(&o).contains("unknown phase"));
}

#[test]
fn oracle_is_repeatable() {
    let d = tempfile::tempdir().unwrap();
    let args = ["oracle", "--n", "4,10", "--trials", "20000", "--seed", "3"];
    let a = mode0(&args, d.path());
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&mode0(&args, d.path())));
}

#[test]
fn train_eval_report_round() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.toml"), "episode_len_ttis = 6\nactor_hidden = 8\ncritic_hidden = 8\n").unwrap();
    let train = ["train", "--n", "4", "--m0-pool", "2", "--mode", "0c", "--episodes", "3", "--eval-episodes", "2", "--seed", "1", "--config", "tiny.toml"];
    let o = mode0(&train, d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ledger = d.path().join("out/ledger.json");
    assert!(ledger.exists());
    let again = mode0(&train, d.path());
    assert!(!again.status.success());
    assert!(stderr(&again).contains("already present"));

    let ckpt = "out/checkpoints/X-n4-m5-p2-0c-s1-e3.ckpt";
    let eval = ["eval", "--checkpoint", ckpt, "--n", "4", "--m0-pool", "2", "--episodes", "2", "--seed", "1", "--config", "tiny.toml", "--trace", "trace.csv"];
    let e1 = mode0(&eval, d.path());
    assert!(e1.status.success(), "{}", stderr(&e1));
    assert_eq!(stdout(&e1), stdout(&mode0(&eval, d.path())));
    let trace = std::fs::read_to_string(d.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 4 * 6);

    let r = mode0(&["report", "--ledger", "out/ledger.json"], d.path());
    assert!(!r.status.success());
    assert!(stderr(&r).contains("baseline"));
}

#[test]
fn advisory_and_escalation() {
    let d = tempfile::tempdir().unwrap();
    let o = mode0(&["advisory", "--n", "8", "--seed", "4"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["subzones"], 8);

    let samples = r#"[
        {"c1_sensor_verified": false, "c2_density_exceeded": true, "c3_preauthorized": true, "human_override": "badge-9", "now": 0.0},
        {"c1_sensor_verified": false, "c2_density_exceeded": false, "c3_preauthorized": false, "now": 40.0}
    ]"#;
    std::fs::write(d.path().join("in.json"), samples).unwrap();
    let o = mode0(&["escalate", "--input", "in.json", "--out", "log.jsonl"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("mandatory-stop:pathway-2") && s.contains("cancel:expired"), "{s}");
    assert!(mode0(&["escalate", "--verify", "log.jsonl"], d.path()).status.success());
    let mut bytes = std::fs::read(d.path().join("log.jsonl")).unwrap();
    bytes[20] ^= 0x04;
    std::fs::write(d.path().join("log.jsonl"), bytes).unwrap();
    let bad = mode0(&["escalate", "--verify", "log.jsonl"], d.path());
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("tamper"));
}
