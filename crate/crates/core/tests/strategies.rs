mod common;

use common::*;
use dpsim::data::{generate, BatchStream};
use dpsim::harness::{self, ExperimentConfig};
use dpsim::model::{LossModel, ModelKind};
use dpsim::netsim::{ComputeModel, Latency, NetworkModel};
use dpsim::strategies::{self, RunOutcome, Scenario, ScenarioSeeds, StrategyKind, Topology};
use proptest::prelude::*;

fn scenario(kind: ModelKind, strategy: StrategyKind, workers: usize, steps: u64) -> Scenario {
    let model = LossModel::new(kind, 3, 5).unwrap();
    let ds = generate(dataset_for(kind), 120, 3, 4).unwrap();
    let mut sc = Scenario::new(model, ds, workers, strategy);
    sc.batch_size = 6;
    sc.steps = steps;
    sc.seeds = ScenarioSeeds::from_master(21);
    sc.record_trajectories = true;
    sc
}

/// Plain SGD on worker `w`'s batch sequence with step `eta`.
fn sequential_oracle(sc: &Scenario, worker: usize, eta: f64) -> Vec<Vec<f64>> {
    let shards = sc.validate().unwrap();
    let mut stream =
        BatchStream::new(shards[worker].clone(), sc.batch_size, sc.seeds.batches).unwrap();
    let (d, h) = (sc.model.input_dim, sc.model.hidden_width);
    let mut w = sc.initial_params().into_vec();
    let mut out = Vec::new();
    for _ in 0..sc.steps {
        let batch: Vec<_> = stream
            .next_indices()
            .into_iter()
            .map(|i| &sc.dataset.samples()[i])
            .collect();
        let g = oracle_batch_grad(sc.model.kind, d, h, &w, &batch);
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= eta * gi;
        }
        out.push(w.clone());
    }
    out
}

#[test]
fn single_worker_synchronous_is_sequential_sgd() {
    for kind in ModelKind::ALL {
        let sc = scenario(kind, StrategyKind::Synchronous, 1, 80);
        let out = strategies::run(&sc).unwrap();
        let oracle = sequential_oracle(&sc, 0, sc.eta);
        for (step, (a, b)) in out.trajectories[0].iter().zip(&oracle).enumerate() {
            assert!(max_abs_diff(a, b) <= 1e-12, "{kind:?} step {step}");
        }
    }
}

#[test]
fn fully_lossy_partial_is_independent_training() {
    for kind in ModelKind::ALL {
        let mut sc = scenario(kind, StrategyKind::Partial { fanout: 2 }, 4, 40);
        sc.network = NetworkModel::new(Latency::Uniform(0.1, 1.0), 1.0, 3).unwrap();
        let out = strategies::run(&sc).unwrap();
        assert_eq!(out.net.messages_dropped, out.net.messages_sent);
        assert_eq!(out.net.messages_delivered, 0);
        for w in 0..4 {
            let oracle = sequential_oracle(&sc, w, sc.eta / 3.0);
            assert!(max_abs_diff(&out.replicas[w], oracle.last().unwrap()) <= 1e-12);
            assert_eq!(out.applied[w].len(), 40);
        }
    }
}

#[test]
fn param_server_staleness_bounded_by_worker_count() {
    for p in [2, 3, 5, 8] {
        let mut sc = scenario(
            ModelKind::LinearRegression,
            StrategyKind::AsyncComplete {
                topology: Topology::Centralized,
            },
            p,
            15,
        );
        sc.network = NetworkModel::new(Latency::Constant(0.4), 0.0, 0).unwrap();
        let out = strategies::run(&sc).unwrap();
        let max = out.trace.staleness.iter().copied().max().unwrap();
        assert!(max < p as u64, "P = {p}: staleness {max}");
        assert_eq!(out.trace.staleness.len(), p * 15);
    }
}

fn assert_sum_equivalence(out: &RunOutcome) {
    let mut expected = out.initial.as_slice().to_vec();
    for (_, delta) in &out.produced {
        for (e, d) in expected.iter_mut().zip(delta) {
            *e += d;
        }
    }
    for r in &out.replicas {
        assert!(max_abs_diff(r, &expected) <= 1e-9);
    }
}

#[test]
fn complete_replicas_equal_initial_plus_all_deltas() {
    for c in async_complete_suite().iter().take(12) {
        let r = harness::execute(c, false, false).unwrap();
        assert_sum_equivalence(&r.outcome);
    }
}

#[test]
fn partial_without_loss_to_all_peers_is_complete() {
    let mut c = base(
        ModelKind::TinyMlp,
        StrategyKind::Partial { fanout: 3 },
        4,
        25,
        8,
    );
    c.latency = Latency::Exponential(1.0);
    let r = harness::execute(&c, false, false).unwrap();
    assert!(r.outcome.consistency(1e-9).is_consistent());
    assert!(r.outcome.applied.windows(2).all(|w| w[0] == w[1]));
    assert_sum_equivalence(&r.outcome);
}

#[test]
fn fixed_point_replicas_agree_exactly() {
    for (i, mut c) in async_complete_suite().into_iter().take(9).enumerate() {
        c.fixed_point = true;
        let r = harness::execute(&c, false, false).unwrap();
        assert_eq!(r.outcome.consistency(0.0).max_diff(), 0.0, "config {i}");
    }
}

#[test]
fn partial_replicas_diverge_while_strategies_stay_close() {
    let c = &partial_lossy_suite()[0];
    let r = harness::execute(c, false, false).unwrap();
    assert!(!r.summary.consistency.is_consistent());
    assert!(r.summary.messages_dropped > 0);
    assert!(r.summary.messages_dropped < r.summary.messages_sent);
}

#[test]
fn synchronous_rows_per_worker_per_step() {
    let sc = scenario(ModelKind::QuadraticBowl, StrategyKind::Synchronous, 3, 10);
    let out = strategies::run(&sc).unwrap();
    assert_eq!(out.trace.rows.len(), 30);
    for w in 0..3 {
        let steps: Vec<u64> = out
            .trace
            .rows
            .iter()
            .filter(|r| r.worker == w)
            .map(|r| r.local_step)
            .collect();
        assert_eq!(steps, (1..=10).collect::<Vec<_>>());
    }
    // P − 1 messages per worker per step, 64 bits per coordinate.
    assert_eq!(out.net.messages_sent, 3 * 2 * 10);
    assert_eq!(out.net.bits_sent, 3 * 2 * 10 * 64 * 3);
}

#[test]
fn stale_sync_waits_for_slow_worker() {
    let mut sc = scenario(
        ModelKind::QuadraticBowl,
        StrategyKind::StaleSync { tau: Some(1) },
        3,
        20,
    );
    sc.compute = ComputeModel {
        means: vec![1.0, 1.0, 5.0],
        ..ComputeModel::homogeneous(3, 1.0)
    };
    let out = strategies::run(&sc).unwrap();
    // Fast workers may run at most tau + 1 steps ahead of the slow one, so
    // everyone finishes shortly after the slow worker.
    assert!(out.end_time >= 100.0);
    assert!(out.trace.staleness.iter().all(|&s| s <= 2));
    let fast_done = out
        .trace
        .rows
        .iter()
        .filter(|r| r.worker == 0)
        .map(|r| r.virtual_time)
        .fold(0.0, f64::max);
    assert!(fast_done >= 90.0, "fast worker finished at {fast_done}");
}

fn arb_complete() -> impl Strategy<Value = ExperimentConfig> {
    (
        prop_oneof![Just(2usize), Just(3), Just(5)],
        prop_oneof![
            Just(StrategyKind::AsyncComplete {
                topology: Topology::Centralized
            }),
            Just(StrategyKind::AsyncComplete {
                topology: Topology::DecentralizedBroadcast
            }),
            (0u64..4).prop_map(|t| StrategyKind::StaleSync { tau: Some(t) }),
            Just(StrategyKind::StaleSync { tau: None }),
        ],
        (0.0f64..1.0, 0.0f64..3.0),
        0.0f64..0.9,
        any::<u64>(),
        0usize..3,
    )
        .prop_map(|(workers, strategy, (lo, width), jitter, seed, m)| {
            let mut c = base(ModelKind::ALL[m], strategy, workers, 12, seed);
            c.latency = Latency::Uniform(lo, lo + width);
            c.compute_jitter = jitter;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn complete_communication_ends_consistent(c in arb_complete()) {
        let r = harness::execute(&c, false, false).unwrap();
        prop_assert!(r.outcome.consistency(1e-9).is_consistent());
        prop_assert_eq!(r.outcome.applied[0].len(), c.workers * 12);
        prop_assert_eq!(r.outcome.net.in_flight(), 0);
        if let StrategyKind::StaleSync { tau: Some(tau) } = c.strategy {
            prop_assert!(r.summary.staleness_max <= tau + 1);
        }
    }
}
