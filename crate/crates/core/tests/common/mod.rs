//! Independent oracles and config families shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use dpsim::data::{DatasetKind, Sample};
use dpsim::harness::{Budget, ExperimentConfig};
use dpsim::model::ModelKind;
use dpsim::netsim::Latency;
use dpsim::strategies::{StrategyKind, Topology};

/// Straight-line per-sample loss, written without reference to the library.
pub fn oracle_loss(kind: ModelKind, d: usize, h: usize, w: &[f64], x: &Sample) -> f64 {
    match kind {
        ModelKind::QuadraticBowl => {
            let mut s = 0.0;
            for i in 0..d {
                s += (w[i] - x.features[i]).powi(2);
            }
            s / 2.0
        }
        ModelKind::LinearRegression => {
            let mut y = 0.0;
            for i in 0..d {
                y += w[i] * x.features[i];
            }
            (y - x.target).powi(2) / 2.0
        }
        ModelKind::TinyMlp => (mlp_out(d, h, w, &x.features) - x.target).powi(2) / 2.0,
    }
}

// Layout: W1 row-major (h x d), then b1 (h), w2 (h), b2.
fn mlp_out(d: usize, h: usize, w: &[f64], x: &[f64]) -> f64 {
    let mut y = w[h * d + 2 * h];
    for k in 0..h {
        let mut z = w[h * d + k];
        for i in 0..d {
            z += w[k * d + i] * x[i];
        }
        y += w[h * d + h + k] * z.tanh();
    }
    y
}

/// Closed-form per-sample gradient by the chain rule.
pub fn oracle_grad(kind: ModelKind, d: usize, h: usize, w: &[f64], x: &Sample) -> Vec<f64> {
    match kind {
        ModelKind::QuadraticBowl => (0..d).map(|i| w[i] - x.features[i]).collect(),
        ModelKind::LinearRegression => {
            let y: f64 = (0..d).map(|i| w[i] * x.features[i]).sum();
            (0..d).map(|i| (y - x.target) * x.features[i]).collect()
        }
        ModelKind::TinyMlp => {
            let r = mlp_out(d, h, w, &x.features) - x.target;
            let mut g = vec![0.0; h * (d + 2) + 1];
            g[h * d + 2 * h] = r;
            for k in 0..h {
                let mut z = w[h * d + k];
                for i in 0..d {
                    z += w[k * d + i] * x.features[i];
                }
                let a = z.tanh();
                let v = w[h * d + h + k];
                g[h * d + h + k] = r * a;
                let dz = r * v * (1.0 - a * a);
                g[h * d + k] = dz;
                for i in 0..d {
                    g[k * d + i] = dz * x.features[i];
                }
            }
            g
        }
    }
}

pub fn oracle_batch_grad(
    kind: ModelKind,
    d: usize,
    h: usize,
    w: &[f64],
    batch: &[&Sample],
) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for x in batch {
        for (gi, v) in g.iter_mut().zip(oracle_grad(kind, d, h, w, x)) {
            *gi += v;
        }
    }
    g.iter().map(|v| v / batch.len() as f64).collect()
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], step: f64) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let mut p = w.to_vec();
            let mut m = w.to_vec();
            p[i] += step;
            m[i] -= step;
            (f(&p) - f(&m)) / (2.0 * step)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn dataset_for(model: ModelKind) -> DatasetKind {
    match model {
        ModelKind::QuadraticBowl => DatasetKind::GaussianCluster,
        ModelKind::LinearRegression => DatasetKind::LinearWithNoise { noise: 0.1 },
        ModelKind::TinyMlp => DatasetKind::MlpTeacher { hidden: 8 },
    }
}

pub fn base(
    model: ModelKind,
    strategy: StrategyKind,
    workers: usize,
    steps: u64,
    seed: u64,
) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(model, dataset_for(model), strategy, Budget::Steps(steps));
    c.workers = workers;
    c.seed = seed;
    c.dataset_n = 256;
    c.batch_size = 8;
    c
}

pub const LATENCIES: [Latency; 3] = [
    Latency::Constant(0.5),
    Latency::Uniform(0.05, 2.5),
    Latency::Exponential(0.8),
];

/// Complete asynchronous runs over P ∈ {2, 4, 8}, every latency model,
/// both topologies and every model kind, with heterogeneous compute.
pub fn async_complete_suite() -> Vec<ExperimentConfig> {
    (0..50u64)
        .map(|i| {
            let workers = [2, 4, 8][i as usize % 3];
            let topology = if i % 2 == 0 {
                Topology::DecentralizedBroadcast
            } else {
                Topology::Centralized
            };
            let model = ModelKind::ALL[(i as usize / 3) % 3];
            let mut c = base(
                model,
                StrategyKind::AsyncComplete { topology },
                workers,
                30,
                1000 + i,
            );
            c.latency = LATENCIES[(i as usize / 9) % 3];
            c.compute_means = Some((0..workers).map(|w| 1.0 + 0.37 * w as f64).collect());
            c.compute_jitter = 0.3;
            c
        })
        .collect()
}

pub fn partial_lossy_suite() -> Vec<ExperimentConfig> {
    (0..20u64)
        .map(|i| {
            let workers = [4, 8][i as usize % 2];
            let fanout = if i % 4 < 2 { workers - 1 } else { 2 };
            let model = ModelKind::ALL[i as usize % 3];
            let mut c = base(
                model,
                StrategyKind::Partial { fanout },
                workers,
                30,
                2000 + i,
            );
            c.drop_prob = [0.1, 0.3, 0.5][i as usize % 3];
            c.latency = LATENCIES[(i as usize / 3) % 3];
            c.compute_jitter = 0.2;
            c
        })
        .collect()
}

pub fn momentum_suite() -> Vec<ExperimentConfig> {
    (0..20u64)
        .map(|i| {
            let strategy = StrategyKind::AsyncComplete {
                topology: Topology::DecentralizedBroadcast,
            };
            let mut c = base(ModelKind::LinearRegression, strategy, 4, 30, 3000 + i);
            c.mu = 0.9;
            c.latency = Latency::Uniform(0.05, 2.5);
            c.compute_jitter = 0.3;
            c
        })
        .collect()
}

/// One config per strategy at default hyperparameters.
pub fn default_strategies() -> Vec<StrategyKind> {
    vec![
        StrategyKind::Synchronous,
        StrategyKind::StaleSync { tau: Some(1) },
        StrategyKind::AsyncComplete {
            topology: Topology::Centralized,
        },
        StrategyKind::AsyncComplete {
            topology: Topology::DecentralizedBroadcast,
        },
        StrategyKind::Partial { fanout: 1 },
    ]
}
