use std::collections::BTreeSet;

use isv_core::lts::{Label, Lts};
use isv_core::trace_codec::{decode, encode, prefix_range};
use isv_core::trace_count::{count_traces, load_weighted, save_weighted, CountError};
use isv_testkit::{oracle, random_acyclic_lts};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cyclic_lts(rng: &mut ChaCha8Rng) -> Lts {
    let n = rng.gen_range(1..=6u32);
    let mut edges = Vec::new();
    for s in 0..n {
        for name in ["a", "b", "c"] {
            if rng.gen_bool(0.4) {
                edges.push((s, name, rng.gen_range(0..n)));
            }
        }
    }
    Lts::from_transitions(0, n, edges).unwrap()
}

#[test]
fn weights_match_path_counts_in_every_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let lts = random_acyclic_lts(&mut rng, 12, 3);
        let w = count_traces(&lts, None).unwrap();
        for (s, path) in oracle::access_paths(&lts) {
            let ws = oracle::follow(w.lts(), &path).unwrap();
            assert_eq!(*w.tc(ws), oracle::path_count(&lts, s, None), "state {s} via {path:?}");
        }
    }
}

#[test]
fn decoding_enumerates_maximal_traces_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let lts = random_acyclic_lts(&mut rng, 12, 3);
        let w = count_traces(&lts, None).unwrap();
        let total: u64 = w.total().try_into().unwrap();
        let mut seen = BTreeSet::new();
        let mut last: Option<Vec<usize>> = None;
        for k in 0..total {
            let k = BigUint::from(k);
            let t = decode(&w, &k).unwrap();
            if let Some(prev) = &last {
                assert!(*prev < t.choices);
            }
            last = Some(t.choices.clone());
            assert_eq!(encode(&w, &t.labels).unwrap(), k);
            assert!(prefix_range(&w, &t.labels[..t.labels.len() / 2]).unwrap().contains(&k));
            assert!(seen.insert(t.labels));
        }
        let brute: BTreeSet<Vec<Label>> = oracle::maximal_paths(&lts, lts.initial(), None).into_iter().collect();
        assert_eq!(seen, brute);
    }
}

#[test]
fn bounded_counts_match_cut_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let lts = random_cyclic_lts(&mut rng);
        let bound = rng.gen_range(1..=5);
        let w = count_traces(&lts, Some(bound)).unwrap();
        let brute: BTreeSet<Vec<Label>> = oracle::maximal_paths(&lts, 0, Some(bound)).into_iter().collect();
        assert_eq!(*w.total(), BigUint::from(brute.len()));
        let total: u64 = w.total().try_into().unwrap();
        let decoded: BTreeSet<Vec<Label>> = (0..total)
            .map(|k| decode(&w, &BigUint::from(k)).unwrap().labels)
            .collect();
        assert_eq!(decoded, brute);
    }
}

#[test]
fn cycles_need_a_bound() {
    let lts = Lts::from_transitions(0, 2, [(0, "a", 1), (1, "b", 0)]).unwrap();
    assert!(matches!(count_traces(&lts, None), Err(CountError::Cycle(_))));
    assert_eq!(*count_traces(&lts, Some(3)).unwrap().total(), BigUint::from(1u32));
}

#[test]
fn saved_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..20 {
        let lts = random_acyclic_lts(&mut rng, 12, 3);
        let w = count_traces(&lts, None).unwrap();
        let base = dir.path().join(format!("sub{i}"));
        save_weighted(&w, &base).unwrap();
        let back = load_weighted(&base).unwrap();
        assert_eq!(back.weights(), w.weights());
        assert_eq!(
            back.lts().transitions().collect::<Vec<_>>(),
            w.lts().transitions().collect::<Vec<_>>()
        );
    }
}
