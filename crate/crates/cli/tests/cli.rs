use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn flowcz(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcz"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn distance_examples() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowcz(dir.path(), &["distance", "--x", "0,2.718281828459045", "--y", "0,1", "--metric", "dG"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "1.00000000000");

    std::fs::write(dir.path().join("b0.json"), r#"{"beta": [0.0]}"#).unwrap();
    let pts = ["--x", "0.3,1.7", "--y", "-1,0.4"];
    let g = flowcz(dir.path(), &[&["--config", "b0.json", "distance"][..], &pts, &["--metric", "dG"]].concat());
    let z = flowcz(dir.path(), &[&["--config", "b0.json", "distance"][..], &pts, &["--metric", "dZ"]].concat());
    assert_eq!(g.stdout, z.stdout);

    std::fs::write(dir.path().join("h.json"), r#"{"group": {"kind": "heisenberg"}}"#).unwrap();
    let o = flowcz(dir.path(), &["--config", "h.json", "distance", "--x", "1,0,0,1", "--y", "0,0,0,1", "--metric", "dN"]);
    assert_eq!(stdout(&o).trim(), "0.500000000000");
}

#[test]
fn malformed_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["distance", "--x", "a,1", "--y", "0,1"][..],
        &["distance", "--x", "0,0,1", "--y", "0,1"],
        &["distance", "--x", "0,-1", "--y", "0,1"],
        &["--lambda", "10", "partition"],
        &["--gamma", "4", "partition"],
        &["--delta", "0.3", "partition"],
        &["counterexample", "--ell-max", "9"],
    ] {
        let o = flowcz(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    std::fs::write(dir.path().join("bad.json"), r#"{"colour": 1}"#).unwrap();
    assert_eq!(flowcz(dir.path(), &["--config", "bad.json", "partition"]).status.code(), Some(2));
}

#[test]
fn partition_is_deterministic_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let o = flowcz(dir.path(), &["--seed", "7", "--out", out, "partition", "--up", "0", "--down", "3"]);
        assert_eq!(o.status.code(), Some(0));
        serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap()
    };
    let summary = run("a.jsonl");
    run("b.jsonl");
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());

    let c1 = summary["constants"]["C1"].as_f64().unwrap();
    let records: Vec<serde_json::Value> = String::from_utf8(a)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), summary["nodes"].as_u64().unwrap() as usize);
    let mut parent = HashMap::new();
    for r in &records {
        parent.insert(r["id"].as_u64().unwrap(), r["parent"].as_u64());
    }
    let root_of = |mut id: u64| {
        while let Some(p) = parent[&id] {
            id = p;
        }
        id
    };
    let mut leaves: HashMap<u64, usize> = HashMap::new();
    for r in records.iter().filter(|r| r["generation"] == 3) {
        *leaves.entry(root_of(r["id"].as_u64().unwrap())).or_default() += 1;
    }
    assert!(!leaves.is_empty());
    assert!(leaves.values().all(|&n| n as f64 <= c1.powi(3)));
    assert_eq!(summary["violations"], 0);
    assert_eq!(summary["config"]["seed"], 7);
}

#[test]
fn window_exhaustion_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m2.json"), r#"{"group": {"kind": "abelian", "m": 2}}"#).unwrap();
    let o = flowcz(dir.path(), &["--config", "m2.json", "--window-radius", "1000000", "partition"]);
    assert_eq!(o.status.code(), Some(3));
    let o = flowcz(dir.path(), &["czdecomp", "--alpha", "1e-9"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn converse_decomposition_has_one_stop() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowcz(dir.path(), &["--out", "cz.json", "czdecomp", "--converse"]);
    assert_eq!(o.status.code(), Some(0));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("cz.json")).unwrap()).unwrap();
    assert_eq!(rep["stopping"].as_array().unwrap().len(), 1);
    assert_eq!(rep["converse_single_stop"], true);
    for key in ["C1", "C2", "C4", "D"] {
        assert!(rep["constants"][key].as_f64().unwrap() > 0.0);
    }
    assert_eq!(rep["certificates"]["d"], true);
}

#[test]
fn small_weak11_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowcz(
        dir.path(),
        &["--samples", "200", "--out", "w.csv", "weak11", "--functions", "2", "--alphas", "3", "--points-per-decade", "8"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("w.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("function_id,alpha,level_measure,bound,margin"));
    assert!(lines.count() >= 2);
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("w.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["violations"], 0);
}

#[test]
fn counterexample_log_ratio_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowcz(dir.path(), &["--out", "ce.csv", "counterexample", "--ell-max", "4", "--c", "0.25", "--c1", "74"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("ce.csv")).unwrap();
    let col: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(col.len(), 5);
    assert!(col.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(flowcz(dir.path(), &["counterexample", "--c", "0.25"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_resource_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowcz(dir.path(), &["--out", "missing/dir/p.jsonl", "partition", "--up", "0", "--down", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("missing").exists());
}
