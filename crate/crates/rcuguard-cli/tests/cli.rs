use std::process::{Command, Output};

const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus");

fn rcuguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcuguard"))
        .args(args)
        .current_dir(CORPUS)
        .env("RCUGUARD_COLOR", "0")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn check_exit_codes() {
    assert_eq!(code(&rcuguard(&["check", "pos/bag_remove.rcu"])), 0);
    let o = rcuguard(&["check", "neg/no_sync_before_free.rcu"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("T-Free"));
    assert_eq!(code(&rcuguard(&["check", "missing.rcu"])), 2);
    assert_eq!(code(&rcuguard(&["check", "heaps/bag3.heap"])), 2);
    assert_eq!(code(&rcuguard(&["frobnicate"])), 2);
}

#[test]
fn check_json() {
    let o = rcuguard(&["check", "neg/double_free.rcu", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["accepted"], false);
    assert_eq!(v["diagnostics"][0]["rule"], "T-Free");
    assert!(v["diagnostics"][0]["span"]["line"].as_u64().unwrap() > 0);
}

#[test]
fn explore_exit_codes() {
    assert_eq!(code(&rcuguard(&["explore", "pos/bag_remove.rcu", "--seed-heap", "heaps/bag3.heap"])), 0);
    // Checker-rejected programs need --unsafe.
    assert_eq!(code(&rcuguard(&["explore", "neg/no_sync_before_free.rcu"])), 2);
    let o = rcuguard(&["explore", "neg/no_sync_before_free.rcu", "--readers", "2", "--heap", "3", "--unsafe"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("UseAfterFree"));
    assert_eq!(code(&rcuguard(&["explore", "pos/bag_remove.rcu", "--max-steps", "3"])), 3);
    assert_eq!(code(&rcuguard(&["explore", "pos/bag_remove.rcu", "--heap", "9"])), 2);
}

#[test]
fn explored_schedule_replays_through_run() {
    let o = rcuguard(&["explore", "neg/rcuitr_escapes_block.rcu", "--unsafe", "--json", "--seed-heap", "heaps/bag3.heap"]);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let finding = &report["violations"][0];
    let dir = std::env::temp_dir().join(format!("rcuguard-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let sched = dir.join("finding.json");
    std::fs::write(&sched, finding.to_string()).unwrap();
    let o = rcuguard(&[
        "run",
        "neg/rcuitr_escapes_block.rcu",
        sched.to_str().unwrap(),
        "--unsafe",
        "--json",
        "--seed-heap",
        "heaps/bag3.heap",
    ]);
    assert_eq!(code(&o), 1);
    let replayed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(replayed["verdict"], finding["verdict"]);

    // Plain-text schedules; an impossible one is a usage error.
    std::fs::write(&sched, "# writer only\n0 0 0\n").unwrap();
    let o = rcuguard(&["run", "pos/bag_remove.rcu", sched.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().count() >= 4);
    std::fs::write(&sched, "5").unwrap();
    assert_eq!(code(&rcuguard(&["run", "pos/bag_remove.rcu", sched.to_str().unwrap()])), 2);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn annotate_prints_and_diffs() {
    let o = rcuguard(&["annotate", "pos/bag_add.rcu"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l.contains("rcuFresh")));
    let o = rcuguard(&["annotate", "pos/bag_remove.rcu", "golden/bag_remove.golden"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0 mismatches"));
    let o = rcuguard(&["annotate", "pos/bag_remove.rcu", "golden/bag_add.golden"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn corpus_static_half() {
    let o = rcuguard(&["corpus", ".", "--static-only"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("15 of 15 cases passed"));
    assert!(!stdout(&o).contains('\x1b'));
}
