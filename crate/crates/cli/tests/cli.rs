use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use isv_core::lts::Lts;
use isv_core::network::Network;
use isv_testkit::{
    network_corpus, oracle, plant_bug, read_state_dump, read_state_dump_by_trace, write_network, FixtureBounds,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn isv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isv")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn small_corpus(seed: u64, n: usize) -> Vec<Network> {
    network_corpus(
        &mut ChaCha8Rng::seed_from_u64(seed),
        n,
        FixtureBounds {
            min_states: 1000,
            max_states: 20_000,
            min_traces: 10,
            max_traces: 500,
        },
    )
}

#[test]
fn count_of_a_missing_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = isv(&[
        "count",
        "--getswarm",
        p(&dir.path().join("x")),
        p(&dir.path().join("nope.aut")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.aut"));
}

#[test]
fn count_of_a_loop_needs_a_bound() {
    let dir = tempfile::tempdir().unwrap();
    let lts = Lts::from_transitions(0, 2, [(0, "a", 1), (1, "b", 0), (0, "c", 0)]).unwrap();
    let aut = dir.path().join("loop.aut");
    fs::write(&aut, lts.to_aut()).unwrap();
    let base = dir.path().join("loop");
    assert!(!isv(&["count", "--getswarm", p(&base), p(&aut)]).status.success());
    let out = isv(&["count", "--getswarm", p(&base), "--swbound", "3", p(&aut)]);
    assert!(out.status.success());
    let expect = oracle::path_count(&lts, 0, Some(3));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), expect.to_string());
    assert!(base.with_extension("swh").exists());
}

#[test]
fn one_worker_one_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = Network::default();
    net.components.push(Lts::from_transitions(0, 2, [(0, "a", 1)]).unwrap());
    let fx = write_network(&net, dir.path());
    let out = isv(&["run", "--workers", "1", "--net", p(&fx.manifest), "--sub", p(&fx.sub)]);
    assert_eq!(out.status.code(), Some(0));
    let s = stdout_json(&out);
    assert_eq!(s["runs"], 1);
    assert_eq!(s["est_runs"], "1");
    assert_eq!(s["complete"], true);
}

#[test]
fn worker_count_does_not_change_coverage() {
    let root = tempfile::tempdir().unwrap();
    for (i, net) in small_corpus(201, 2).into_iter().enumerate() {
        let fx = write_network(&net, &root.path().join(format!("n{i}")));
        let truth = oracle::reachable(&net, usize::MAX).unwrap();
        for workers in [2usize, 10] {
            let dir = fx.dir.join(format!("w{workers}"));
            let out = isv(&[
                "run",
                "--workers",
                &workers.to_string(),
                "--net",
                p(&fx.manifest),
                "--sub",
                p(&fx.sub),
                "--dump-dir",
                p(&dir),
                "--dump-states",
            ]);
            assert_eq!(out.status.code(), Some(0));
            let s = stdout_json(&out);
            let mut union = std::collections::HashSet::new();
            let mut per_run = 0u64;
            for w in 0..workers {
                let text = fs::read_to_string(dir.join(format!("worker{w}.states"))).unwrap();
                union.extend(read_state_dump(&text));
                per_run += read_state_dump_by_trace(&text)
                    .iter()
                    .map(|(_, s)| s.len() as u64)
                    .sum::<u64>();
            }
            assert_eq!(union, truth);
            assert_eq!(s["total_states"].as_u64().unwrap(), per_run);
            assert!(s["runs"].as_u64().unwrap() <= s["est_runs"].as_str().unwrap().parse().unwrap());
        }
    }
}

#[test]
fn planted_bug_stops_the_run_early() {
    let root = tempfile::tempdir().unwrap();
    let mut net = small_corpus(202, 1).pop().unwrap();
    let (label, _) = plant_bug(&mut net).unwrap();
    let fx = write_network(&net, root.path());
    let out = isv(&["run", "--workers", "10", "--net", p(&fx.manifest), "--sub", p(&fx.sub)]);
    assert_eq!(out.status.code(), Some(2));
    let s = stdout_json(&out);
    assert_eq!(s["termination"], "bug");
    assert_eq!(s["witness"].as_array().unwrap().last().unwrap(), &label.to_string());
    assert_eq!(s["witness_confirmed"], true);

    let explore = isv(&["explore", "--net", p(&fx.manifest)]);
    assert_eq!(explore.status.code(), Some(2));
    assert!(stdout_json(&explore)["error_witness"].is_array());
}

#[test]
fn swarm_dfs_is_deterministic_per_seed() {
    let root = tempfile::tempdir().unwrap();
    let net = small_corpus(203, 1).pop().unwrap();
    let fx = write_network(&net, root.path());
    let a = stdout_json(&isv(&["swarm-dfs", "--net", p(&fx.manifest), "--seed", "5"]));
    let b = stdout_json(&isv(&["swarm-dfs", "--net", p(&fx.manifest), "--seed", "5"]));
    assert_eq!(a["states"], b["states"]);
    assert_eq!(a["transitions"], b["transitions"]);
    assert_eq!(
        a["states"].as_u64().unwrap() as usize,
        oracle::reachable(&net, usize::MAX).unwrap().len()
    );
}

#[test]
fn explore_respects_the_cap() {
    let root = tempfile::tempdir().unwrap();
    let net = small_corpus(204, 1).pop().unwrap();
    let fx = write_network(&net, root.path());
    let out = isv(&["explore", "--net", p(&fx.manifest), "--cap", "10"]);
    assert_eq!(out.status.code(), Some(1));
}
