//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr, outside the test harness's output capture.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use isv_core::iss::{run_iss, IssOptions, Restriction};
use isv_core::ledger::{TraceRange, TraceRangeList};
use isv_core::lts::{Label, Lts, StateId};
use isv_core::network::{Network, Product};
use isv_core::trace_codec::{decode, prefix_range, to_swarm};
use isv_core::trace_count::{count_traces, load_weighted};
use isv_testkit::{
    branching_network, l, network_corpus, oracle, plant_bug, player_lts, random_acyclic_lts, read_state_dump,
    read_state_dump_by_trace, write_network, FixtureBounds, FixtureFiles,
};
use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const ISV: &str = env!("CARGO_BIN_EXE_isv");

const CORPUS: FixtureBounds = FixtureBounds {
    min_states: 1000,
    max_states: 50_000,
    min_traces: 10,
    max_traces: 2000,
};

type StateSet = HashSet<Vec<StateId>>;

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    let line = format!("criterion {n:>2} {name}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn isv(args: &[&str]) -> Output {
    Command::new(ISV).args(args).output().expect("spawn isv")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad json ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn explore_truth(fx: &FixtureFiles) -> StateSet {
    let dump = fx.dir.join("explore.states");
    let out = isv(&["explore", "--net", p(&fx.manifest), "--dump-states", p(&dump)]);
    assert!(
        out.status.success(),
        "explore: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    read_state_dump(&fs::read_to_string(dump).unwrap())
}

fn dumps(dir: &Path, workers: usize) -> Vec<String> {
    (0..workers)
        .map(|i| fs::read_to_string(dir.join(format!("worker{i}.states"))).unwrap_or_default())
        .collect()
}

struct RunOut {
    code: Option<i32>,
    summary: Value,
    dir: PathBuf,
}

fn run(fx: &FixtureFiles, tag: &str, workers: usize, seed: u64, extra: &[&str]) -> RunOut {
    let dir = fx.dir.join(tag);
    let w = workers.to_string();
    let s = seed.to_string();
    let mut args = vec![
        "run",
        "--workers",
        &w,
        "--net",
        p(&fx.manifest),
        "--sub",
        p(&fx.sub),
        "--seed",
        &s,
        "--dump-dir",
        p(&dir),
        "--dump-states",
    ];
    args.extend_from_slice(extra);
    let out = isv(&args);
    RunOut {
        code: out.status.code(),
        summary: json(&out),
        dir,
    }
}

fn big(v: &Value) -> BigUint {
    v.as_str().unwrap().parse().unwrap()
}

#[test]
fn c01_trace_count_matches_path_enumeration() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    let mut bad = Vec::new();
    for n in 0..200 {
        let lts = random_acyclic_lts(&mut rng, 12, 3);
        let w = count_traces(&lts, None).unwrap();
        for (s, path) in oracle::access_paths(&lts) {
            let ws = oracle::follow(w.lts(), &path).unwrap();
            checked += 1;
            if *w.tc(ws) != oracle::path_count(&lts, s, None) {
                bad.push((n, s));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        "trace-count oracle",
        bad.is_empty() && secs < 5.0,
        format!("{checked} states, {} mismatches, {secs:.2}s (< 5s)", bad.len()),
    );
}

#[test]
fn c02_decoding_is_a_bijection() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut traces = 0u64;
    let mut ok = true;
    for _ in 0..200 {
        let lts = random_acyclic_lts(&mut rng, 12, 3);
        let w = count_traces(&lts, None).unwrap();
        let total: u64 = w.total().try_into().unwrap();
        let mut seen = BTreeSet::new();
        let mut last: Option<Vec<usize>> = None;
        for k in 0..total {
            let t = decode(&w, &BigUint::from(k)).unwrap();
            ok &= last.as_ref().is_none_or(|prev| *prev < t.choices);
            last = Some(t.choices.clone());
            ok &= seen.insert(t.labels);
        }
        traces += total;
        let brute: BTreeSet<Vec<Label>> = oracle::maximal_paths(&lts, lts.initial(), None).into_iter().collect();
        ok &= seen == brute;
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        2,
        "decode bijection",
        ok && secs < 10.0,
        format!("{traces} traces decoded, {secs:.2}s (< 10s)"),
    );
}

#[test]
fn c03_player_weights_and_prefix_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let aut = dir.path().join("ipod.aut");
    fs::write(&aut, player_lts().to_aut()).unwrap();
    let base = dir.path().join("ipod");
    let out = isv(&["count", "--getswarm", p(&base), p(&aut)]);
    let printed = String::from_utf8_lossy(&out.stdout).trim().to_string();
    let w = load_weighted(&base).unwrap();
    let root: Vec<BigUint> = w
        .children(w.lts().initial())
        .iter()
        .map(|&(_, c)| w.tc(c).clone())
        .collect();
    let r1 = prefix_range(&w, &[l("recv_C1_3")]).unwrap();
    let r3 = prefix_range(&w, &[l("recv_C1_2")]).unwrap();
    let ok = out.status.success()
        && printed == "14"
        && root == [3u32, 3, 7, 1].map(BigUint::from)
        && r1 == TraceRange::from_u64(0, 3)
        && r3 == TraceRange::from_u64(6, 13);
    verdict(
        3,
        "player weights",
        ok,
        format!("count printed {printed}, child weights {root:?}, first child {r1}, third child {r3}"),
    );
}

#[test]
fn c04_range_merging() {
    let mut ledger = TraceRangeList::new(BigUint::from(14u32));
    ledger.add_range(&TraceRange::from_u64(0, 5)).unwrap();
    ledger.add_range(&TraceRange::from_u64(8, 14)).unwrap();
    ledger.add_range(&TraceRange::from_u64(5, 8)).unwrap();
    let merged: Vec<TraceRange> = ledger.ranges().collect();
    let example = merged == [TraceRange::from_u64(0, 14)];

    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut property = true;
    let trials = 30;
    for _ in 0..trials {
        let total = rng.gen_range(1..=10_000u64);
        let mut ledger = TraceRangeList::new(BigUint::from(total));
        let mut bits = vec![false; total as usize];
        let mut order: Vec<u64> = (0..total).collect();
        order.shuffle(&mut rng);
        let stop = rng.gen_range(0..=total as usize);
        for (step, &id) in order.iter().enumerate() {
            if step == stop {
                let runs = bitmap_runs(&bits);
                property &= ledger.ranges().collect::<Vec<_>>() == runs;
            }
            let gain = ledger.add_range(&TraceRange::from_u64(id, id + 1)).unwrap();
            property &= gain == BigUint::from(1u32);
            bits[id as usize] = true;
            if rng.gen_bool(0.05) {
                let again = ledger.add_range(&TraceRange::from_u64(id, id + 1)).unwrap();
                property &= again == BigUint::from(0u32);
            }
        }
        property &= ledger.is_complete() && ledger.ranges().count() == 1;
    }
    verdict(
        4,
        "range merging",
        example && property,
        format!("example gives {merged:?}; {trials} singleton trials with totals <= 10^4 ok={property}"),
    );
}

fn bitmap_runs(bits: &[bool]) -> Vec<TraceRange> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bits.len() {
        if bits[i] {
            let s = i;
            while i < bits.len() && bits[i] {
                i += 1;
            }
            out.push(TraceRange::from_u64(s as u64, i as u64));
        } else {
            i += 1;
        }
    }
    out
}

struct CorpusRun {
    net: usize,
    workers: usize,
    out: RunOut,
    union: StateSet,
}

struct CorpusData {
    _root: tempfile::TempDir,
    nets: Vec<(Network, FixtureFiles, StateSet)>,
    runs: Vec<CorpusRun>,
    secs: f64,
}

fn corpus_data() -> &'static CorpusData {
    static DATA: OnceLock<CorpusData> = OnceLock::new();
    DATA.get_or_init(|| {
        let started = Instant::now();
        let root = tempfile::tempdir().unwrap();
        let nets = network_corpus(&mut ChaCha8Rng::seed_from_u64(105), 25, CORPUS);
        let nets: Vec<_> = nets
            .into_iter()
            .enumerate()
            .map(|(i, net)| {
                let fx = write_network(&net, &root.path().join(format!("net{i:02}")));
                let truth = explore_truth(&fx);
                (net, fx, truth)
            })
            .collect();
        let mut runs = Vec::new();
        for (i, (_, fx, _)) in nets.iter().enumerate() {
            for workers in [2, 8] {
                let out = run(fx, &format!("w{workers}"), workers, i as u64, &[]);
                let mut union = StateSet::new();
                for text in dumps(&out.dir, workers) {
                    union.extend(read_state_dump(&text));
                }
                runs.push(CorpusRun {
                    net: i,
                    workers,
                    out,
                    union,
                });
            }
        }
        CorpusData {
            _root: root,
            nets,
            runs,
            secs: started.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn c05_swarm_covers_the_state_space() {
    let data = corpus_data();
    let mut failures = Vec::new();
    let mut pruned_runs = 0;
    for r in &data.runs {
        let truth = &data.nets[r.net].2;
        let s = &r.out.summary;
        if r.out.code != Some(0) || s["complete"] != Value::Bool(true) || r.union != *truth {
            failures.push(format!("net {} x{}", r.net, r.workers));
        }
        if s["pruned_ranges"].as_u64().unwrap() > 0 {
            pruned_runs += 1;
        }
    }
    let sizes: Vec<usize> = data.nets.iter().map(|n| n.2.len()).collect();
    let components: BTreeSet<usize> = data.nets.iter().map(|n| n.0.components.len()).collect();
    let ok = failures.is_empty()
        && data.secs < 300.0
        && sizes.iter().all(|&n| (1000..=50_000).contains(&n))
        && components.iter().all(|c| (3..=4).contains(c));
    verdict(
        5,
        "completeness",
        ok,
        format!(
            "{} runs over {} networks ({}..{} states, {:?} components), {} with pruning, failures {:?}, {:.1}s (< 300s)",
            data.runs.len(),
            data.nets.len(),
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap(),
            components,
            pruned_runs,
            failures,
            data.secs
        ),
    );
}

#[test]
fn c06_runs_stay_small_on_branching_fixtures() {
    let root = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut rows = Vec::new();
    for (i, (branches, depth, ring)) in [(8, 3, 6), (12, 3, 8), (16, 4, 5)].into_iter().enumerate() {
        let net = branching_network(branches, depth, ring);
        let fx = write_network(&net, &root.path().join(format!("b{i}")));
        let reach = explore_truth(&fx).len() as f64;
        let out = run(&fx, "run", 2, i as u64, &[]);
        let max = out.summary["max_states"].as_f64().unwrap();
        let dfs = json(&isv(&["swarm-dfs", "--net", p(&fx.manifest), "--seed", "7"]));
        let sv = dfs["states"].as_f64().unwrap();
        let ratio = max / reach;
        ok &= out.code == Some(0) && ratio <= 0.25 && sv == reach;
        rows.push(format!(
            "{branches}x{depth}/{ring}: iss max {max}/{reach} = {:.1}%, sv {:.0}%",
            ratio * 100.0,
            sv / reach * 100.0
        ));
    }
    verdict(6, "bounded workers", ok, rows.join("; "));
}

#[test]
fn c07_pruned_traces_add_nothing_new() {
    let data = corpus_data();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut checked = 0;
    let mut ranges = 0;
    let mut bad = Vec::new();
    let opts = IssOptions {
        keep_visited: true,
        ..IssOptions::default()
    };
    for r in &data.runs {
        let hive = &r.out.summary["hive"];
        let pruned: Vec<(BigUint, BigUint)> = hive["pruned_ranges"]
            .as_array()
            .unwrap()
            .iter()
            .map(|pair| (big(&pair[0]), big(&pair[1])))
            .collect();
        if pruned.is_empty() {
            continue;
        }
        ranges += pruned.len();
        let explored: HashSet<BigUint> = hive["explored_ids"].as_array().unwrap().iter().map(big).collect();
        let mut candidates: Vec<BigUint> = Vec::new();
        for (a, b) in &pruned {
            let (a, b): (u64, u64) = (a.try_into().unwrap(), b.try_into().unwrap());
            candidates.extend((a..b).map(BigUint::from).filter(|k| !explored.contains(k)));
        }
        candidates.sort();
        candidates.dedup();
        let (net, _, _) = &data.nets[r.net];
        let w = load_weighted(r.out.dir.join("sub")).unwrap();
        let product = Product::new(net.clone()).unwrap();
        let restriction = Restriction::from_alphabet(&product, w.alphabet()).unwrap();
        for k in candidates.choose_multiple(&mut rng, 10) {
            let sigma = to_swarm(net, &decode(&w, k).unwrap(), k);
            let res = run_iss(&product, &restriction, &sigma.actions, &opts).unwrap();
            let visited = res.visited.unwrap();
            checked += 1;
            if !visited.iter().all(|s| r.union.contains(s.locals())) {
                bad.push(format!("net {} trace {k}", r.net));
            }
        }
    }
    verdict(
        7,
        "pruning correctness",
        bad.is_empty() && checked > 0,
        format!("{ranges} pruned ranges, {checked} sampled ids re-run, escapes {bad:?}"),
    );
}

#[test]
fn c08_planted_bugs_are_found() {
    let root = tempfile::tempdir().unwrap();
    let mut nets = network_corpus(&mut ChaCha8Rng::seed_from_u64(108), 10, CORPUS);
    let mut fixtures = Vec::new();
    for (i, net) in nets.iter_mut().enumerate() {
        let (label, depth) = plant_bug(net).expect("a label to plant");
        fixtures.push((write_network(net, &root.path().join(format!("bug{i}"))), label, depth));
    }
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut depths = Vec::new();
    for (i, (fx, label, depth)) in fixtures.iter().enumerate() {
        depths.push(*depth);
        let out = run(fx, "run", 8, i as u64, &[]);
        let s = &out.summary;
        let witness: Vec<String> = s["witness"]
            .as_array()
            .map(|w| w.iter().map(|x| x.as_str().unwrap().to_string()).collect())
            .unwrap_or_default();
        let replay = json(&isv(&[
            "explore",
            "--net",
            p(&fx.manifest),
            "--replay",
            &witness.join(" "),
        ]));
        let all_told = s["worker_exits"]
            .as_array()
            .unwrap()
            .iter()
            .all(|w| w["exit_code"] == 2 && w["outcome"] == "bug");
        let ok = out.code == Some(2)
            && witness.last() == Some(&label.to_string())
            && s["witness_confirmed"] == true
            && replay["replay"]["executable"] == true
            && replay["replay"]["ends_in_error"] == true
            && all_told
            && s["hive"]["terminate_sent"].as_u64().unwrap() >= 8;
        if !ok {
            failures.push(i);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        8,
        "bug hunting",
        failures.is_empty() && secs < 30.0,
        format!("10 planted labels at bfs depths {depths:?}, failures {failures:?}, {secs:.1}s (< 30s)"),
    );
}

#[test]
fn c09_a_crashed_worker_does_not_lose_coverage() {
    let data = corpus_data();
    let mut failures = Vec::new();
    let mut expired = 0;
    let picked: Vec<usize> = (0..data.nets.len()).step_by(5).collect();
    for &i in &picked {
        let (_, fx, truth) = &data.nets[i];
        let out = run(
            fx,
            "crash",
            2,
            100 + i as u64,
            &["--crash-worker-after", "1", "--lease-timeout-ms", "300"],
        );
        let mut union = StateSet::new();
        for text in dumps(&out.dir, 2) {
            union.extend(read_state_dump(&text));
        }
        let s = &out.summary;
        expired += s["hive"]["leases_expired"].as_u64().unwrap();
        let crashed = s["worker_exits"][0]["exit_code"] == 3 && s["worker_exits"][0]["outcome"] == "crashed";
        if !(out.code == Some(0) && s["complete"] == true && crashed && union == *truth) {
            failures.push(i);
        }
    }
    verdict(
        9,
        "fault tolerance",
        failures.is_empty(),
        format!(
            "{} runs with worker 0 killed after one trace, {expired} leases expired, failures {failures:?}",
            picked.len()
        ),
    );
}

struct Mock {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Mock {
    fn connect(port: u16) -> Self {
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            match TcpStream::connect(("127.0.0.1", port)) {
                Ok(s) => {
                    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
                    return Mock {
                        reader: BufReader::new(s.try_clone().unwrap()),
                        writer: s,
                    };
                }
                Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(20)),
                Err(e) => panic!("hive never came up: {e}"),
            }
        }
    }

    fn say(&mut self, text: &str) -> String {
        self.writer.write_all(text.as_bytes()).unwrap();
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        line.trim_end_matches('\n').to_string()
    }

    fn closed(&mut self) -> bool {
        let mut rest = Vec::new();
        matches!(self.reader.read_to_end(&mut rest), Ok(0))
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn start_hive(dir: &Path, net: &Network) -> (Child, u16) {
    let fx = write_network(net, dir);
    let base = dir.join("sub");
    assert!(isv(&["count", "--getswarm", p(&base), p(&fx.sub)]).status.success());
    let port = free_port();
    let child = Command::new(ISV)
        .args([
            "hive",
            &port.to_string(),
            p(&base),
            "--net",
            p(&fx.manifest),
            "--linger-ms",
            "200",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    (child, port)
}

fn verb(line: &str) -> String {
    let mut it = line.split(' ');
    let v = it.next().unwrap_or("").to_string();
    if v == "TERMINATE" {
        format!("TERMINATE {}", it.next().unwrap_or(""))
    } else {
        v
    }
}

#[test]
fn c10_protocol_conformance() {
    let root = tempfile::tempdir().unwrap();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut note = |req: &str, reply: &str| {
        seen.insert((req.to_string(), verb(reply)));
    };
    let two = || Lts::from_transitions(0, 3, [(0, "a", 1), (0, "b", 2)]).unwrap();

    let mut net = Network::default();
    net.components.push(two());
    let (mut hive, port) = start_hive(&root.path().join("complete"), &net);

    let mut bad = Mock::connect(port);
    let r = bad.say("GET\n");
    assert!(r.starts_with("ERR ") && bad.closed(), "{r}");
    note("GET before HELLO", &r);

    let mut bad = Mock::connect(port);
    let r = bad.say("HELLO 2\n");
    assert!(r.starts_with("ERR ") && bad.closed(), "{r}");
    note("HELLO 2", &r);

    let mut bad = Mock::connect(port);
    assert_eq!(bad.say("HELLO 1\n"), "HI 1");
    let r = bad.say("FEEDBACK 99 1 1\nFB 0\nEND\n");
    assert!(r.starts_with("ERR "), "{r}");
    note("FEEDBACK unknown", &r);
    let r = bad.say("GET  \n");
    assert!(r.starts_with("ERR ") && bad.closed(), "{r}");
    note("malformed", &r);

    let mut a = Mock::connect(port);
    let mut b = Mock::connect(port);
    let mut c = Mock::connect(port);
    for m in [&mut a, &mut b, &mut c] {
        let r = m.say("HELLO 1\n");
        assert_eq!(r, "HI 1");
        note("HELLO", &r);
    }
    let ta = a.say("GET\n");
    let tb = b.say("GET\n");
    note("GET", &ta);
    let mut ids = Vec::new();
    for t in [&ta, &tb] {
        let parts: Vec<&str> = t.split(' ').collect();
        assert_eq!(parts[0], "TRACE", "{t}");
        assert_eq!(parts[2], "1");
        ids.push(parts[1].to_string());
    }
    assert_ne!(ids[0], ids[1]);
    let r = c.say("GET\n");
    assert!(r.starts_with("RETRY "), "{r}");
    note("GET", &r);
    for (m, id) in [(&mut a, &ids[0]), (&mut b, &ids[1])] {
        let r = m.say(&format!("FEEDBACK {id} 2 1\nFB 0 a b\nFB 1\nEND\n"));
        assert_eq!(r, "ACK");
        note("FEEDBACK", &r);
    }
    let r = c.say("GET\n");
    assert_eq!(r, "TERMINATE complete");
    note("GET", &r);
    for m in [&mut a, &mut b, &mut c] {
        let r = m.say("BYE\n");
        assert_eq!(r, "ACK");
        note("BYE", &r);
    }
    let status = hive.wait().unwrap();
    let mut stdout = String::new();
    hive.stdout.take().unwrap().read_to_string(&mut stdout).unwrap();
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(report["runs"], 2);

    net.error_labels.insert(l("b"));
    let (mut hive, port) = start_hive(&root.path().join("bug"), &net);
    let mut m = Mock::connect(port);
    assert_eq!(m.say("HELLO 1\n"), "HI 1");
    let t = m.say("GET\n");
    let id = t.split(' ').nth(1).unwrap().to_string();
    let r = m.say(&format!("BUG {id} b\n"));
    assert_eq!(r, "ACK");
    note("BUG", &r);
    let r = m.say("GET\n");
    assert_eq!(r, "TERMINATE bug");
    note("GET", &r);
    assert_eq!(m.say("BYE\n"), "ACK");
    let status = hive.wait().unwrap();
    assert_eq!(status.code(), Some(2));

    let expected: BTreeSet<(String, String)> = [
        ("HELLO", "HI"),
        ("GET", "TRACE"),
        ("GET", "RETRY"),
        ("GET", "TERMINATE complete"),
        ("GET", "TERMINATE bug"),
        ("FEEDBACK", "ACK"),
        ("BUG", "ACK"),
        ("BYE", "ACK"),
        ("GET before HELLO", "ERR"),
        ("HELLO 2", "ERR"),
        ("FEEDBACK unknown", "ERR"),
        ("malformed", "ERR"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let missing: Vec<_> = expected.difference(&seen).collect();
    verdict(
        10,
        "protocol conformance",
        missing.is_empty(),
        format!(
            "{}/{} request/reply pairs observed, missing {missing:?}",
            expected.len() - missing.len(),
            expected.len()
        ),
    );
}

#[test]
fn dumps_are_grouped_per_trace() {
    let data = corpus_data();
    let r = &data.runs[0];
    let groups: usize = dumps(&r.out.dir, r.workers)
        .iter()
        .map(|t| read_state_dump_by_trace(t).len())
        .sum();
    assert_eq!(groups as u64, r.out.summary["runs"].as_u64().unwrap());
}
