use std::path::Path;
use std::process::{Command, Output};

fn empq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_empq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_then_run_with_checks() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    let t = dir.path().join("t.txt");
    let trace = dir.path().join("trace.txt");
    let csv = dir.path().join("run.csv");
    let out = empq(&[
        "generate",
        "--kind",
        "uniform",
        "--n",
        "20000",
        "--seed",
        "4",
        "--out",
        path(&w),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = empq(&[
        "run",
        "--workload",
        path(&w),
        "--check-oracle",
        "--check-invariants",
        "--transcript",
        path(&t),
        "--trace-io",
        path(&trace),
        "--csv",
        path(&csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("amortized="), "{stdout}");
    assert!(std::fs::read_to_string(&t).unwrap().lines().count() > 0);
    let io_total: u64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("io total="))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(
        std::fs::read_to_string(&trace).unwrap().lines().count() as u64,
        io_total
    );
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.starts_with("n,b,kind,"));
}

#[test]
fn sorters_agree_on_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    assert!(empq(&[
        "generate",
        "--kind",
        "churn",
        "--n",
        "30000",
        "--seed",
        "2",
        "--out",
        path(&w)
    ])
    .status
    .success());
    let mut transcripts = Vec::new();
    for sorter in ["merge", "memory"] {
        let t = dir.path().join(format!("{sorter}.txt"));
        let out = empq(&[
            "run",
            "--workload",
            path(&w),
            "--sorter",
            sorter,
            "--transcript",
            path(&t),
        ]);
        assert!(out.status.success());
        transcripts.push(std::fs::read(&t).unwrap());
    }
    assert_eq!(transcripts[0], transcripts[1]);
}

#[test]
fn generation_is_deterministic() {
    let a = empq(&["generate", "--kind", "churn", "--n", "2000", "--seed", "11"]);
    let b = empq(&["generate", "--kind", "churn", "--n", "2000", "--seed", "11"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 2000);
}

#[test]
fn contract_violation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("bad.txt");
    std::fs::write(&w, "I 5\nD 6\n").unwrap();
    let out = empq(&["run", "--workload", path(&w), "--check-oracle"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not live"));
}

#[test]
fn malformed_workload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("bad.txt");
    std::fs::write(&w, "I 5\nQ\n").unwrap();
    let out = empq(&["run", "--workload", path(&w)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn forced_layers_run_clean() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    assert!(empq(&[
        "generate",
        "--kind",
        "heapsort",
        "--n",
        "20000",
        "--seed",
        "3",
        "--out",
        path(&w)
    ])
    .status
    .success());
    let out = empq(&[
        "run",
        "--workload",
        path(&w),
        "--block-size",
        "8",
        "--c",
        "4",
        "--force-layers",
        "4000,600",
        "--check-oracle",
        "--check-invariants",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sweep_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = empq(&[
        "sweep",
        "--n",
        "1000,4000",
        "--block-size",
        "8,16",
        "--kinds",
        "heapsort,churn",
        "--threads",
        "2",
        "--csv",
        path(&csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn small_c_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    std::fs::write(&w, "I 1\n").unwrap();
    let out = empq(&["run", "--workload", path(&w), "--c", "3"]);
    assert!(!out.status.success());
}
