mod common;

use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use common::fixtures;
use proofseg::cli::ResultRecord;
use proofseg::dataset::InstructionRecord;
use proofseg::jsonl;
use proofseg::parser::count_open_goals;
use proofseg::types::TrajectoryRecord;

fn proofseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proofseg"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = proofseg(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "proofseg {args:?} failed: {stderr}");
    stderr
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = proofseg(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(!out.status.success(), "proofseg {args:?} unexpectedly succeeded");
    assert!(stderr.starts_with("error: "), "{stderr}");
    stderr
}

/// A temp dir holding the end-to-end fixtures.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["tree.json", "corpus.jsonl", "theorems.jsonl", "policy.json"] {
        std::fs::copy(fixtures().join("e2e").join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn extract(dir: &Path) {
    ok(dir, &["extract", "--corpus", "corpus.jsonl", "--trajectories", "traj.jsonl", "--env", "sim:tree.json"]);
}

#[test]
fn extract_verifies_and_reports_rejections() {
    let w = workspace();
    extract(w.path());
    let (prov, trajs) = jsonl::read::<TrajectoryRecord>(&w.path().join("traj.jsonl")).unwrap();
    let prov = prov.expect("provenance header");
    assert_eq!(prov.command, "extract");
    assert_eq!(prov.config_digest.len(), 16);
    let ids: Vec<&str> = trajs.iter().map(|t| t.theorem_id.as_str()).collect();
    assert_eq!(ids, ["t.and", "t.imp"]);
    for t in &trajs {
        let counts: Vec<usize> = t.states.iter().map(|s| count_open_goals(s)).collect();
        assert_eq!(counts, t.goal_counts);
        assert_eq!(counts.last(), Some(&0));
        assert!(counts[..counts.len() - 1].iter().all(|&g| g > 0));
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(w.path().join("traj.jsonl.rejections.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["total"], 3);
    assert_eq!(report["report"]["accepted"], 2);
    assert_eq!(report["report"]["failures"][0]["theorem_id"], "t.bad");
    assert_eq!(report["report"]["failures"][0]["step_index"], 2);
    assert_eq!(report["provenance"]["config_digest"], prov.config_digest);

    // Replaying again gives the same bytes.
    let first = std::fs::read(w.path().join("traj.jsonl")).unwrap();
    extract(w.path());
    assert_eq!(first, std::fs::read(w.path().join("traj.jsonl")).unwrap());
}

#[test]
fn segment_granularities_have_expected_sizes() {
    let w = workspace();
    extract(w.path());
    // t.and has 3 tactics and 3 goal changes; t.imp has 2 tactics and 1.
    for (strategy, expected) in [("step", 5), ("whole", 2), ("goal_change", 4)] {
        let out = format!("{strategy}.jsonl");
        ok(w.path(), &["segment", "--trajectories", "traj.jsonl", "--dataset", &out, "--strategy", strategy]);
        let (prov, records) = jsonl::read::<InstructionRecord>(&w.path().join(&out)).unwrap();
        assert_eq!(records.len(), expected, "{strategy}");
        assert_eq!(prov.unwrap().extra["strategy"], strategy);
        assert!(records.iter().all(|r| r.instruction.starts_with("[GOAL]\n") && r.instruction.ends_with("\n[PROOFSTEP]\n")));
    }
    ok(
        w.path(),
        &["segment", "--trajectories", "traj.jsonl", "--dataset", "tok.jsonl", "--strategy", "token_threshold", "--threshold", "3"],
    );
}

#[test]
fn invalid_thresholds_are_rejected() {
    let w = workspace();
    extract(w.path());
    let base = ["segment", "--trajectories", "traj.jsonl", "--dataset", "d.jsonl", "--strategy"];
    let with = |extra: &[&'static str]| [&base[..], extra].concat();
    fails(w.path(), &with(&["state_distance", "--threshold", "1.5"]));
    fails(w.path(), &with(&["tactic_distance"]));
    fails(w.path(), &with(&["token_threshold", "--threshold", "2.5"]));
    fails(w.path(), &with(&["step", "--threshold", "0.5"]));
    assert!(!w.path().join("d.jsonl").exists());
}

#[test]
fn missing_and_empty_corpora() {
    let w = workspace();
    let err = fails(w.path(), &["extract", "--corpus", "nope.jsonl", "--trajectories", "t.jsonl", "--env", "sim:tree.json"]);
    assert!(err.contains("nope.jsonl"), "{err}");
    std::fs::write(w.path().join("empty.jsonl"), "").unwrap();
    ok(w.path(), &["extract", "--corpus", "empty.jsonl", "--trajectories", "t.jsonl", "--env", "sim:tree.json"]);
    let (_, trajs) = jsonl::read::<TrajectoryRecord>(&w.path().join("t.jsonl")).unwrap();
    assert!(trajs.is_empty());
}

#[test]
fn conflicting_paths_are_rejected() {
    let w = workspace();
    let err = fails(w.path(), &["extract", "--corpus", "corpus.jsonl", "--trajectories", "corpus.jsonl", "--env", "sim:tree.json"]);
    assert!(err.contains("more than one role"), "{err}");
}

fn prove_args<'a>(results: &'a str, env: &'a str, policy: &'a str) -> Vec<&'a str> {
    vec![
        "prove", "--theorems", "theorems.jsonl", "--results", results, "--env", env, "--policy", policy, "--max-tokens",
        "64", "--clock", "logical", "--runs", "1",
    ]
}

#[test]
fn unreachable_policy_fails() {
    let w = workspace();
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let policy = format!("tcp:127.0.0.1:{port}");
    fails(w.path(), &prove_args("res", "sim:tree.json", &policy));
}

#[test]
fn max_tokens_is_required() {
    let w = workspace();
    let err = fails(
        w.path(),
        &["prove", "--theorems", "theorems.jsonl", "--results", "res", "--env", "sim:tree.json", "--policy", "scripted:policy.json"],
    );
    assert!(err.contains("max_tokens"), "{err}");
}

type Masked = (String, bool, Option<Vec<String>>, u64, String);

/// Results with run-specific fields masked out.
fn results(dir: &Path) -> Vec<Masked> {
    let (_, records) = jsonl::read::<ResultRecord>(&dir.join("run_0.jsonl")).unwrap();
    records
        .into_iter()
        .map(|r| (r.theorem_id, r.solved, r.proof, r.output_tokens, format!("{:.2}", r.elapsed_s)))
        .collect()
}

#[test]
fn remote_backends_match_in_process_ones() {
    let w = workspace();
    let exe = env!("CARGO_BIN_EXE_proofseg");
    ok(w.path(), &prove_args("local", "sim:tree.json", "scripted:policy.json"));
    let env = format!("exec:{exe} simenv tree.json");
    let policy = format!("exec:{exe} policy-serve policy.json");
    ok(w.path(), &prove_args("remote", &env, &policy));
    let local = results(&w.path().join("local"));
    assert_eq!(local, results(&w.path().join("remote")));
    let solved: Vec<&str> = local.iter().filter(|r| r.1).map(|r| r.0.as_str()).collect();
    assert_eq!(solved, ["t.and", "t.imp"]);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let w = workspace();
    std::fs::write(
        w.path().join("run.toml"),
        "theorems_path = \"theorems.jsonl\"\nresults_dir = \"from_file\"\nenv_endpoint = \"sim:tree.json\"\n\
         policy_endpoint = \"scripted:policy.json\"\nruns = 2\n\n[search]\nmax_tokens = 64\nclock = \"logical\"\nbeam = 1\n",
    )
    .unwrap();
    ok(w.path(), &["--config", "run.toml", "prove", "--results", "from_flag", "--runs", "1"]);
    assert!(!w.path().join("from_file").exists());
    assert!(w.path().join("from_flag/run_0.jsonl").exists());
    assert!(!w.path().join("from_flag/run_1.jsonl").exists());
    let (prov, _) = jsonl::read::<ResultRecord>(&w.path().join("from_flag/run_0.jsonl")).unwrap();
    let config = prov.unwrap().config;
    assert_eq!(config["search"]["beam"], 1);
    assert_eq!(config["runs"], 1);

    std::fs::write(w.path().join("bad.toml"), "no_such_key = 1\n").unwrap();
    fails(w.path(), &["--config", "bad.toml", "prove"]);
}

#[test]
fn report_rejects_mismatched_theorem_sets() {
    let w = workspace();
    ok(w.path(), &prove_args("a", "sim:tree.json", "scripted:policy.json"));
    std::fs::write(w.path().join("short.jsonl"), "{\"theorem_id\":\"t.and\",\"statement\":\"\"}\n").unwrap();
    ok(
        w.path(),
        &[
            "prove", "--theorems", "short.jsonl", "--results", "b", "--env", "sim:tree.json", "--policy",
            "scripted:policy.json", "--max-tokens", "64", "--runs", "1",
        ],
    );
    fails(w.path(), &["report", "--method", "a=a", "--method", "b=b", "--out", "rep"]);
    fails(w.path(), &["report", "--method", "a=a", "--out", "rep", "--cutoffs", "10,1"]);
    ok(w.path(), &["report", "--method", "a=a", "--out", "rep"]);
    for f in ["success.csv", "costs.csv", "curve.csv", "report.txt"] {
        let text = std::fs::read_to_string(w.path().join("rep").join(f)).unwrap();
        assert!(text.starts_with("# config_digest="), "{f}");
    }
}

#[test]
fn stats_writes_distributions_and_loss_tables() {
    let w = workspace();
    extract(w.path());
    ok(w.path(), &["segment", "--trajectories", "traj.jsonl", "--dataset", "d.jsonl", "--strategy", "step"]);
    ok(w.path(), &["stats", "--dataset", "d.jsonl", "--out", "stats"]);
    let dist = std::fs::read_to_string(w.path().join("stats/length_distribution.csv")).unwrap();
    // Step targets: constructor, exact ha, exact hb, intro h, exact h.
    assert_eq!(dist.lines().skip(1).collect::<Vec<_>>(), ["length,count,probability", "1,1,0.2", "2,4,0.8"]);

    fails(w.path(), &["stats", "--dataset", "d.jsonl", "--out", "stats2", "--loss", "missing.jsonl"]);
    std::fs::write(
        w.path().join("loss.jsonl"),
        "{\"example_id\":\"a\",\"length\":1,\"loss\":1.0}\n{\"example_id\":\"b\",\"length\":2,\"loss\":3.0}\n{\"example_id\":\"c\",\"length\":2,\"loss\":2.0}\n",
    )
    .unwrap();
    ok(w.path(), &["stats", "--dataset", "d.jsonl", "--out", "stats3", "--loss", "loss.jsonl"]);
    let by_len = std::fs::read_to_string(w.path().join("stats3/loss_by_length.csv")).unwrap();
    assert_eq!(by_len.lines().skip(2).collect::<Vec<_>>(), ["1,1,1", "2,2,2.5"]);
    std::fs::write(w.path().join("neg.jsonl"), "{\"example_id\":\"a\",\"length\":1,\"loss\":-1.0}\n").unwrap();
    fails(w.path(), &["stats", "--dataset", "d.jsonl", "--out", "stats4", "--loss", "neg.jsonl"]);
}
