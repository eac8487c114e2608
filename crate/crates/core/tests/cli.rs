//! Exit codes, error reporting and file contracts of the command line.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stump-fungus");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .env_remove("SF_THREADS")
        .output()
        .unwrap()
}

fn quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(["--burnin", "100", "--draws", "150"]);
    v
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for args in [
        &["fit-hier", "--model", "rats", "--bogus"][..],
        &["no-such-command"],
        &[],
        &["fit-hier", "--model", "rats"],
        &["fit-hier", "--out", "x.json"],
        &["fit-hier", "--model", "marbles", "--out", "x.json"],
        &["fit-hier", "--model", "rats", "--exclude", "71", "--out", "x.json"],
        &["fit-fungus", "--model", "rats", "--stump", "s.json", "--group", "1", "--all-groups", "--out", "o"],
        &["fit-unpooled", "--model", "marbles", "--data", "m.csv", "--all-groups", "--out", "o.json"],
        &["fit-eb", "--model", "rats", "--hyper", "1,2,3", "--group", "0", "--out", "o.json"],
        &["fit-hier", "--model", "rats", "--seed", "minus-one", "--out", "x.json"],
    ] {
        let o = run(p, args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        let e = stderr(&o);
        assert!(e.contains("error") || e.contains("Usage"), "{args:?}");
    }
    assert!(!p.join("x.json").exists());
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let o = run(d.path(), &[flag]);
        assert_eq!(code(&o), 0);
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .current_dir(d.path())
        .args(["synth", "--model", "rats", "--out", "r.csv"])
        .env("SF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("SF_THREADS"));
}

#[test]
fn runtime_errors_exit_two_with_context() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let o = run(p, &["compare", "missing-a.json", "missing-b.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing-a.json"));

    std::fs::write(p.join("bad.csv"), "n,y\n20,5\n14,x\n").unwrap();
    let o = run(p, &["fit-hier", "--model", "rats", "--data", "bad.csv", "--out", "o.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    std::fs::write(p.join("bad.json"), "{\"model_id\": ").unwrap();
    let o = run(p, &["fit-fungus", "--model", "rats", "--stump", "bad.json", "--group", "0", "--out", "o.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.json"));
}

#[test]
fn stump_is_tied_to_its_model() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &quick(&["make-stump", "--model", "rats", "--exclude", "3", "--out", "s.json"]))), 0);
    assert_eq!(code(&run(p, &["synth", "--model", "marbles", "--out", "m.csv"])), 0);
    let o = run(p, &quick(&["fit-fungus", "--model", "marbles", "--data", "m.csv", "--stump", "s.json", "--group", "0", "--out", "f.json"]));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rats"), "{}", stderr(&o));

    // a training fit must match the data and the left-out group
    assert_eq!(code(&run(p, &quick(&["fit-hier", "--model", "rats", "--out", "h.json"]))), 0);
    let o = run(p, &quick(&["make-stump", "--model", "rats", "--posterior", "h.json", "--exclude", "3", "--out", "s2.json"]));
    assert_eq!(code(&o), 2);
}

#[test]
fn stump_file_layout() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &["synth", "--model", "attain", "--reduced", "--out", "a.csv"])), 0);
    let o = run(
        p,
        &quick(&["make-stump", "--model", "attain", "--data", "a.csv", "--exclude", "2", "--stump-size", "4", "--hyper-draws", "100", "--proposal-draws", "1000", "--out", "s.json"]),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("s.json")).unwrap()).unwrap();
    assert_eq!(v["model_id"], "attain");
    assert_eq!(v["M"], 4);
    assert_eq!(v["per_component"], true);
    assert_eq!(v["samples"].as_array().unwrap().len(), 4);
    let w = v["weights"].as_array().unwrap();
    assert_eq!(w.len(), 4);
    assert!(w.iter().all(|r| r.as_array().unwrap().len() == 4));
    assert_eq!(v["meta"]["N"], 100);
    assert!(v["meta"].get("created").is_none() || v["meta"]["created"].is_null());
}

#[test]
fn posterior_file_contents() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &quick(&["fit-unpooled", "--model", "rats", "--group", "4", "--seed", "3", "--out", "u.json"]))), 0);
    assert_eq!(code(&run(p, &quick(&["fit-unpooled", "--model", "rats", "--group", "4", "--seed", "3", "--timing", "--out", "t.json"]))), 0);
    let u: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("u.json")).unwrap()).unwrap();
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("t.json")).unwrap()).unwrap();
    assert_eq!(u["names"], serde_json::json!(["p[4]"]));
    assert_eq!(u["draws"].as_array().unwrap().len(), 150);
    assert_eq!(u["config"]["burn_in"], 100);
    assert!(u.get("wall_time_seconds").is_none());
    assert!(t["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(u["draws"], t["draws"]);
}

#[test]
fn seed_changes_output() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for (s, f) in [("1", "a.json"), ("2", "b.json")] {
        assert_eq!(code(&run(p, &quick(&["fit-hier", "--model", "rats", "--seed", s, "--out", f]))), 0);
    }
    assert_ne!(std::fs::read(p.join("a.json")).unwrap(), std::fs::read(p.join("b.json")).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &quick(&["make-stump", "--model", "rats", "--out", "s.json"]))), 0);
    let fungus = |threads: Option<&str>, out: &str| {
        let mut c = Command::new(BIN);
        c.current_dir(p)
            .args(quick(&["fit-fungus", "--model", "rats", "--stump", "s.json", "--all-groups", "--out", out]));
        match threads {
            Some(t) => c.env("SF_THREADS", t),
            None => c.env_remove("SF_THREADS"),
        };
        assert!(c.output().unwrap().status.success());
    };
    fungus(Some("1"), "one");
    fungus(Some("3"), "three");
    for g in [0, 35, 70] {
        let f = format!("group-{g}.json");
        assert_eq!(
            std::fs::read(p.join("one").join(&f)).unwrap(),
            std::fs::read(p.join("three").join(&f)).unwrap()
        );
    }
    assert_eq!(std::fs::read_dir(p.join("one")).unwrap().count(), 71);
}

#[test]
fn compare_reports_shared_marginals() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &quick(&["fit-hier", "--model", "rats", "--out", "h.json"]))), 0);
    assert_eq!(code(&run(p, &quick(&["fit-unpooled", "--model", "rats", "--all-groups", "--out", "u.json"]))), 0);
    let o = run(p, &["compare", "h.json", "u.json", "--csv", "ks.csv", "--out", "ks.json"]);
    assert_eq!(code(&o), 0);
    let ks: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("ks.json")).unwrap()).unwrap();
    let per = ks["per_marginal"].as_array().unwrap();
    // alpha and beta exist only in the hierarchical fit
    assert_eq!(per.len(), 71);
    assert!(per.iter().all(|e| (0.0..=1.0).contains(&e[1].as_f64().unwrap())));
    let csv = std::fs::read_to_string(p.join("ks.csv")).unwrap();
    assert!(csv.starts_with("name,ks\np[0],"));
    assert_eq!(csv.lines().count(), 72);

    let o = run(p, &["compare", "h.json", "h.json"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().ends_with("0.0000"));
}

#[test]
fn bench_reports_both_fits() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &quick(&["bench", "--model", "rats", "--out", "bench.json"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("bench.json")).unwrap()).unwrap();
    let r = v.as_array().unwrap();
    assert_eq!(r.len(), 2);
    assert_eq!(r[0]["label"], "rats-hier");
    assert_eq!(r[1]["label"], "rats-fungus[70]");
    assert!(r.iter().all(|x| x["wall_time_seconds"].as_f64().unwrap() > 0.0 && x["draws"] == 150));
}
