mod common;

use std::collections::BTreeMap;

use essn::certify::{certify, certify_with, Mode, Protocol, Verdict, Witness};
use essn::engine::{replay_trace, EngineConfig};
use essn::genchk::generator::{T1, T2};
use essn::genchk::random::{random_rc_schedule, random_si_schedule, random_trace, RandomSpec};
use essn::genchk::{generate_mixed, run_checker, WorkloadParams};
use essn::history::{
    make_kto, parse_trace, resolve_reads, InputTrace, KtoFlavor, MvSchedule, RfPolicy, TxnId,
};
use essn::mvsg::{aligned_mvsg, has_cycle, Mvsg};
use essn::tictoc::{
    check_mutual_incompatibility, committed_reads_from, feasible_interval_with, final_writes,
    vsr_orders, Case, TsVersion,
};
use petgraph::algo::is_cyclic_directed;
use petgraph::graphmap::DiGraphMap;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn petgraph_cyclic(g: &Mvsg) -> bool {
    let mut pg: DiGraphMap<u32, ()> = DiGraphMap::new();
    for n in g.nodes() {
        pg.add_node(n.0);
    }
    for e in g.edges() {
        pg.add_edge(e.src.0, e.dst.0, ());
    }
    is_cyclic_directed(&pg)
}

fn engine_configs() -> Vec<EngineConfig> {
    let mut out = Vec::new();
    for kto in [KtoFlavor::Commit, KtoFlavor::Begin] {
        let policies: &[RfPolicy] = match kto {
            KtoFlavor::Commit => &[RfPolicy::AsOfReadCommit, RfPolicy::SnapshotAtBegin],
            _ => &RfPolicy::ALL,
        };
        for &rf_policy in policies {
            for (shortcut, stall_bypass) in
                [(false, false), (true, false), (false, true), (true, true)]
            {
                out.push(EngineConfig {
                    kto,
                    rf_policy,
                    shortcut,
                    stall_bypass,
                });
            }
        }
    }
    out
}

fn verdicts_agree(trace: &InputTrace, cfg: EngineConfig) -> Result<(), String> {
    let engine = replay_trace(trace.events(), cfg).map_err(|e| e.to_string())?;
    let realized = engine.realized_schedule(true);
    let kto = make_kto(&realized, cfg.kto).unwrap();
    let offline = certify(&aligned_mvsg(&realized, cfg.kto).unwrap(), Protocol::Essn).unwrap();
    let checked = run_checker(&realized, &kto, Protocol::Essn).unwrap();
    for (id, outcome) in engine.outcomes() {
        let online = if outcome.is_aborted() {
            Verdict::Abort
        } else {
            Verdict::Commit
        };
        if online != offline.verdict(*id) || online != checked[id].verdict {
            return Err(format!(
                "{cfg:?} {id}: engine {online:?} offline {:?} checker {:?}\n{trace}",
                offline.verdict(*id),
                checked[id].verdict
            ));
        }
    }
    Ok(())
}

/// A read observes the last writer preceding it in `order`, or the base
/// version when none does.
fn per_read_valid(trace: &InputTrace, order: &[TxnId]) -> bool {
    let pos: BTreeMap<TxnId, usize> = order.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let writes = |t: &TxnId, key: &str| trace.txn(*t).is_some_and(|i| i.writes.contains_key(key));
    let reads_ok = committed_reads_from(trace)
        .into_iter()
        .all(|(reader, key, writer)| {
            let before: Vec<&TxnId> = order[..pos[&reader]]
                .iter()
                .filter(|t| writes(t, &key))
                .collect();
            match before.last() {
                Some(w) => **w == writer,
                None => writer == TxnId::INIT,
            }
        });
    let finals_ok = final_writes(trace)
        .into_iter()
        .all(|(key, writer)| order.iter().rev().find(|t| writes(t, &key)) == Some(&writer));
    reads_ok && finals_ok
}

fn all_orders(txns: &[TxnId]) -> Vec<Vec<TxnId>> {
    if txns.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, t) in txns.iter().enumerate() {
        let mut rest = txns.to_vec();
        rest.remove(i);
        for mut tail in all_orders(&rest) {
            tail.insert(0, *t);
            out.push(tail);
        }
    }
    out
}

fn small_spec() -> RandomSpec {
    RandomSpec {
        max_txns: 5,
        n_keys: 3,
        max_ops: 3,
        ..RandomSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn hierarchy_on_si_histories(seed in any::<u64>()) {
        let s = random_si_schedule(&mut rng(seed), &RandomSpec::default());
        let g = aligned_mvsg(&s, KtoFlavor::Commit).unwrap();
        let a = |p| certify_with(&g, p, Mode::Targets).unwrap().aborts();
        let (ssi, ssn, essn) = (a(Protocol::Ssi), a(Protocol::Ssn), a(Protocol::Essn));
        prop_assert!(essn.is_subset(&ssn), "{s}");
        prop_assert!(ssn.is_subset(&ssi), "{s}");
    }

    #[test]
    fn xi_never_exceeds_eta(seed in any::<u64>(), begin in any::<bool>()) {
        let s = random_rc_schedule(&mut rng(seed), &RandomSpec::default());
        let flavor = if begin { KtoFlavor::Begin } else { KtoFlavor::Commit };
        let Ok(g) = aligned_mvsg(&s, flavor) else { return Ok(()) };
        for mode in [Mode::Sequential, Mode::Targets] {
            for c in certify_with(&g, Protocol::Essn, mode).unwrap().txns {
                prop_assert!(c.xi <= c.eta, "{s}: {c:?}");
                prop_assert!(c.pi <= c.sigma);
            }
        }
    }

    #[test]
    fn certified_commits_are_acyclic(seed in any::<u64>()) {
        let s = random_rc_schedule(&mut rng(seed), &RandomSpec::default());
        let g = aligned_mvsg(&s, KtoFlavor::Commit).unwrap();
        for p in [Protocol::Ssn, Protocol::Essn] {
            let aborted = certify(&g, p).unwrap().aborts();
            let kept = g.restricted(|t| !aborted.contains(&t));
            prop_assert!(!petgraph_cyclic(&kept), "{p} {s}");
            prop_assert!(has_cycle(&kept).is_none());
        }
        prop_assert_eq!(petgraph_cyclic(&g), has_cycle(&g).is_some());
    }

    #[test]
    fn exclusion_witness_is_consistent(seed in any::<u64>()) {
        let s = random_rc_schedule(&mut rng(seed), &RandomSpec::default());
        let g = aligned_mvsg(&s, KtoFlavor::Commit).unwrap();
        for p in [Protocol::Ssn, Protocol::Essn] {
            let r = certify_with(&g, p, Mode::Targets).unwrap();
            for c in r.txns.iter().filter(|c| c.verdict.is_abort()) {
                let Some(Witness::Exclusion { back_path, forward_pred }) = &c.witness else {
                    return Err(TestCaseError::fail("missing exclusion witness"));
                };
                prop_assert_eq!(back_path[0], c.txn);
                for w in back_path.windows(2) {
                    prop_assert!(g.out_edges(w[0]).any(|e| e.dst == w[1] && e.is_back()));
                }
                prop_assert_eq!(g.sigma(*back_path.last().unwrap()), c.pi);
                prop_assert!(g.out_edges(*forward_pred).any(|e| e.dst == c.txn && e.is_forward()));
                match p {
                    Protocol::Ssn => prop_assert_eq!(g.sigma(*forward_pred), c.eta),
                    _ => prop_assert_eq!(r.get(*forward_pred).map_or(g.sigma(*forward_pred), |f| f.pi), c.xi),
                }
            }
        }
    }

    #[test]
    fn engine_checker_offline_agree(seed in any::<u64>(), cfg_idx in 0usize..20) {
        let spec = RandomSpec { abort_prob: 0.1, ..RandomSpec::default() };
        let trace = random_trace(&mut rng(seed), &spec);
        let cfg = engine_configs()[cfg_idx];
        prop_assert!(verdicts_agree(&trace, cfg).is_ok(), "{}", verdicts_agree(&trace, cfg).unwrap_err());
    }

    #[test]
    fn engine_chains_have_increasing_pi(seed in any::<u64>(), cfg_idx in 0usize..20) {
        let trace = random_trace(&mut rng(seed), &RandomSpec::default());
        let cfg = engine_configs()[cfg_idx];
        let engine = replay_trace(trace.events(), cfg).unwrap();
        prop_assert!(engine.pi_monotonicity_violations().is_empty());
        for key in trace.keys() {
            let pis: Vec<_> = engine
                .chain(&key)
                .into_iter()
                .filter(|t| !t.is_init())
                .map(|t| engine.pi(t).unwrap())
                .collect();
            prop_assert!(pis.windows(2).all(|w| w[0] < w[1]), "{key}: {pis:?}\n{trace}");
        }
    }

    #[test]
    fn fixed_cases_infeasible_for_any_initial_timestamps(
        wx in 0u64..50, dx in 0u64..50, wy in 0u64..50, dy in 0u64..50, gap in 1u64..50,
    ) {
        let init = BTreeMap::from([
            ("x".to_string(), TsVersion::new("x", TxnId::INIT, wx, wx + dx)),
            ("y".to_string(), TsVersion::new("y", TxnId::INIT, wy, wy + dy)),
        ]);
        let c2 = (wx + dx).max(wy + dy) + gap;
        let cts = BTreeMap::from([(TxnId(2), c2)]);
        for case in [Case::War, Case::Skew] {
            let i = feasible_interval_with(&case.trace(), TxnId(1), &cts, &init).unwrap();
            prop_assert!(i.is_empty(), "{case} {i}");
        }
    }

    #[test]
    fn cases_a_and_b_exclusive(c2 in 0u64..1000, c3 in 0u64..1000) {
        prop_assume!(c2 != c3);
        let c = check_mutual_incompatibility(c2, c3).unwrap();
        prop_assert!(c.a_feasible ^ c.b_feasible);
        prop_assert_eq!(c.a_feasible, c3 < c2);
        let swapped = check_mutual_incompatibility(c3, c2).unwrap();
        prop_assert_eq!((swapped.a_feasible, swapped.b_feasible), (c.b_feasible, c.a_feasible));
    }

    #[test]
    fn vsr_orders_match_brute_force(seed in any::<u64>()) {
        let trace = random_trace(&mut rng(seed), &small_spec());
        let committed: Vec<TxnId> = trace.committed().map(|i| i.id).collect();
        let mut expected: Vec<Vec<TxnId>> = all_orders(&committed)
            .into_iter()
            .filter(|o| per_read_valid(&trace, o))
            .collect();
        expected.sort();
        prop_assert_eq!(vsr_orders(&trace).unwrap(), expected);
    }
}

fn mixed(seed: u64, policy: RfPolicy, pivot_prob: f64, short_hit_prob: f64) -> MvSchedule {
    let params = WorkloadParams {
        n_keys: 60,
        read_size: 12,
        n_shorts: 20,
        pivot_prob,
        short_hit_prob,
        seed,
        rf_policy: policy,
        ..WorkloadParams::default()
    };
    resolve_reads(&generate_mixed(&params).unwrap(), policy)
}

#[test]
fn essn_dominates_ssn_on_mixed_workloads() {
    for seed in 0..300 {
        for policy in [RfPolicy::AsOfReadCommit, RfPolicy::SnapshotAtBegin] {
            let s = mixed(seed, policy, 0.5, 0.8);
            let kto = make_kto(&s, KtoFlavor::Commit).unwrap();
            let ssn = run_checker(&s, &kto, Protocol::Ssn).unwrap();
            let essn = run_checker(&s, &kto, Protocol::Essn).unwrap();
            for (id, c) in &essn {
                assert!(
                    !c.verdict.is_abort() || ssn[id].verdict.is_abort(),
                    "seed {seed} {policy} {id}"
                );
            }
        }
    }
}

#[test]
fn rescued_t2_is_bounded_through_t1() {
    let mut rescued = 0;
    for seed in 0..400 {
        let s = mixed(seed, RfPolicy::SnapshotAtBegin, 1.0, 0.8);
        let g = aligned_mvsg(&s, KtoFlavor::Commit).unwrap();
        let ssn = certify(&g, Protocol::Ssn).unwrap();
        let essn = certify(&g, Protocol::Essn).unwrap();
        if !(ssn.verdict(T2).is_abort() && !essn.verdict(T2).is_abort()) {
            continue;
        }
        rescued += 1;
        let c = essn.get(T2).unwrap();
        assert!(c.xi < c.eta, "seed {seed}");
        let t1_edge = g.out_edges(T1).find(|e| e.dst == T2 && e.is_forward());
        assert!(t1_edge.is_some(), "seed {seed}: no t1 -> t2 forward edge");
        assert!(essn.get(T1).unwrap().pi <= c.xi, "seed {seed}");
    }
    assert!(rescued > 0);
}

#[test]
fn serial_trace_is_its_own_order() {
    let trace = parse_trace("w1(x) c1 r2(x) w2(y) c2 r3(y) w3(x) c3").unwrap();
    assert_eq!(
        vsr_orders(&trace).unwrap(),
        [vec![TxnId(1), TxnId(2), TxnId(3)]]
    );
}
