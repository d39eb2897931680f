//! Flat `dotted.key = value` experiment configuration.
//!
//! Grammar: one `key = value` per line; `#` starts a comment; blank lines
//! are ignored; keys may appear at most once. Unknown keys and keys that do
//! not apply to the selected strategy, codec or latency model are errors.
//! See the README for the full key table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::compression::Codec;
use crate::data::{DatasetKind, DEFAULT_LINEAR_NOISE};
use crate::error::{Error, Result};
use crate::model::{ModelKind, DEFAULT_HIDDEN_WIDTH, DEFAULT_INPUT_DIM};
use crate::netsim::Latency;
use crate::strategies::{StrategyKind, Topology};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_DATASET_N: usize = 1024;
pub const DEFAULT_TAU: u64 = 1;
pub const DEFAULT_FANOUT: usize = 1;

const KEYS: &[&str] = &[
    "seed",
    "model.kind",
    "model.input_dim",
    "model.hidden_width",
    "dataset.kind",
    "dataset.n",
    "dataset.noise",
    "dataset.seed",
    "workers",
    "batch_size",
    "optimizer.eta",
    "optimizer.mu",
    "strategy.kind",
    "strategy.tau",
    "strategy.topology",
    "strategy.fanout",
    "strategy.fixed_point",
    "network.latency",
    "network.latency.value",
    "network.latency.min",
    "network.latency.max",
    "network.latency.mean",
    "network.drop_prob",
    "network.seed",
    "compute.mean",
    "compute.means",
    "compute.jitter",
    "compute.seed",
    "codec.kind",
    "codec.k",
    "run.steps",
    "run.epochs",
    "consistency.tolerance",
    "output.dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Steps(u64),
    Epochs(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelKind,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub dataset: DatasetKind,
    pub dataset_n: usize,
    pub dataset_seed: Option<u64>,
    pub workers: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub mu: f64,
    pub strategy: StrategyKind,
    pub fixed_point: bool,
    pub latency: Latency,
    pub drop_prob: f64,
    pub network_seed: Option<u64>,
    pub compute_mean: f64,
    pub compute_means: Option<Vec<f64>>,
    pub compute_jitter: f64,
    pub compute_seed: Option<u64>,
    pub codec: Codec,
    pub budget: Budget,
    pub tolerance: f64,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(
        model: ModelKind,
        dataset: DatasetKind,
        strategy: StrategyKind,
        budget: Budget,
    ) -> Self {
        ExperimentConfig {
            seed: 0,
            model,
            input_dim: DEFAULT_INPUT_DIM,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            dataset,
            dataset_n: DEFAULT_DATASET_N,
            dataset_seed: None,
            workers: DEFAULT_WORKERS,
            batch_size: DEFAULT_BATCH_SIZE,
            eta: DEFAULT_ETA,
            mu: 0.0,
            strategy,
            fixed_point: false,
            latency: Latency::Constant(0.0),
            drop_prob: 0.0,
            network_seed: None,
            compute_mean: 1.0,
            compute_means: None,
            compute_jitter: 0.0,
            compute_seed: None,
            codec: Codec::Identity,
            budget,
            tolerance: DEFAULT_TOLERANCE,
            output_dir: None,
        }
    }

    /// Checks every cross-field invariant that can be checked without
    /// generating the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("model.input_dim", "must be >= 1"));
        }
        if self.model == ModelKind::TinyMlp && self.hidden_width == 0 {
            return Err(Error::config("model.hidden_width", "must be >= 1"));
        }
        if self.dataset_n == 0 {
            return Err(Error::config("dataset.n", "must be >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be >= 1"));
        }
        if self.workers > self.dataset_n {
            return Err(Error::config(
                "workers",
                format!("exceeds dataset.n = {}", self.dataset_n),
            ));
        }
        let smallest_shard = self.dataset_n / self.workers;
        if self.batch_size == 0 || self.batch_size > smallest_shard {
            return Err(Error::config(
                "batch_size",
                format!("must be in [1, {smallest_shard}] (smallest shard)"),
            ));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("optimizer.eta", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::config("optimizer.mu", "must be in [0, 1)"));
        }
        if let StrategyKind::Partial { fanout } = self.strategy {
            if fanout == 0 || fanout >= self.workers {
                return Err(Error::config(
                    "strategy.fanout",
                    format!("must be in [1, {}]", self.workers - 1),
                ));
            }
        }
        if let DatasetKind::LinearWithNoise { noise } = self.dataset {
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Error::config("dataset.noise", "must be >= 0"));
            }
        }
        self.latency.validate()?;
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::config("network.drop_prob", "must be in [0, 1]"));
        }
        if !(self.compute_mean.is_finite() && self.compute_mean > 0.0) {
            return Err(Error::config("compute.mean", "must be > 0"));
        }
        if let Some(means) = &self.compute_means {
            if means.len() != self.workers {
                return Err(Error::config(
                    "compute.means",
                    format!("expected {} entries", self.workers),
                ));
            }
            if means.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                return Err(Error::config("compute.means", "entries must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.compute_jitter) {
            return Err(Error::config("compute.jitter", "must be in [0, 1)"));
        }
        let m = crate::model::LossModel::new(self.model, self.input_dim, self.hidden_width)?
            .param_dim();
        self.codec.validate(m)?;
        if self.fixed_point && self.codec != Codec::Identity {
            return Err(Error::config(
                "strategy.fixed_point",
                "requires codec.kind = identity",
            ));
        }
        match self.budget {
            Budget::Steps(0) => return Err(Error::config("run.steps", "must be >= 1")),
            Budget::Epochs(0) => return Err(Error::config("run.epochs", "must be >= 1")),
            _ => {}
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::config("consistency.tolerance", "must be >= 0"));
        }
        Ok(())
    }
}

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(key, format!("`{v}`: {e}")))
            })
            .transpose()
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?
            .ok_or_else(|| Error::config(key, "required key is missing"))
    }

    /// Errors if `key` was given although it does not apply.
    fn reject(&mut self, key: &str, why: &str) -> Result<()> {
        match self.take(key) {
            Some(_) => Err(Error::config(key, format!("not applicable {why}"))),
            None => Ok(()),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected true or false, got `{v}`"),
        )),
    }
}

/// Parses and fully validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::config(key, "duplicate key"));
        }
    }
    let mut e = Entries(map);

    let model = match e.required::<String>("model.kind")?.as_str() {
        "quadratic_bowl" => ModelKind::QuadraticBowl,
        "linear_regression" => ModelKind::LinearRegression,
        "tiny_mlp" => ModelKind::TinyMlp,
        other => {
            return Err(Error::config(
                "model.kind",
                format!("unknown model `{other}`"),
            ))
        }
    };
    let input_dim = e.parse("model.input_dim")?.unwrap_or(DEFAULT_INPUT_DIM);
    let hidden_width = e.parse("model.hidden_width")?;
    if model != ModelKind::TinyMlp && hidden_width.is_some() {
        return Err(Error::config(
            "model.hidden_width",
            "only applies to model.kind = tiny_mlp",
        ));
    }
    let hidden_width = hidden_width.unwrap_or(DEFAULT_HIDDEN_WIDTH);

    let dataset = match e.required::<String>("dataset.kind")?.as_str() {
        "gaussian_cluster" => {
            e.reject("dataset.noise", "to dataset.kind = gaussian_cluster")?;
            DatasetKind::GaussianCluster
        }
        "linear_with_noise" => DatasetKind::LinearWithNoise {
            noise: e.parse("dataset.noise")?.unwrap_or(DEFAULT_LINEAR_NOISE),
        },
        "mlp_teacher" => {
            e.reject("dataset.noise", "to dataset.kind = mlp_teacher")?;
            DatasetKind::MlpTeacher {
                hidden: hidden_width,
            }
        }
        other => {
            return Err(Error::config(
                "dataset.kind",
                format!("unknown dataset `{other}`"),
            ))
        }
    };

    let strategy = match e.required::<String>("strategy.kind")?.as_str() {
        "synchronous" => {
            for k in ["strategy.tau", "strategy.topology", "strategy.fanout"] {
                e.reject(k, "to strategy.kind = synchronous")?;
            }
            StrategyKind::Synchronous
        }
        "stale_sync" => {
            for k in ["strategy.topology", "strategy.fanout"] {
                e.reject(k, "to strategy.kind = stale_sync")?;
            }
            let tau = match e.take("strategy.tau").as_deref() {
                None => Some(DEFAULT_TAU),
                Some("inf") => None,
                Some(v) => Some(
                    v.parse::<u64>()
                        .map_err(|err| Error::config("strategy.tau", format!("`{v}`: {err}")))?,
                ),
            };
            StrategyKind::StaleSync { tau }
        }
        "async_complete" => {
            for k in ["strategy.tau", "strategy.fanout"] {
                e.reject(k, "to strategy.kind = async_complete")?;
            }
            let topology = match e.take("strategy.topology").as_deref() {
                None | Some("decentralized") => Topology::DecentralizedBroadcast,
                Some("centralized") => Topology::Centralized,
                Some(other) => {
                    return Err(Error::config(
                        "strategy.topology",
                        format!("unknown topology `{other}`"),
                    ))
                }
            };
            StrategyKind::AsyncComplete { topology }
        }
        "partial" => {
            for k in ["strategy.tau", "strategy.topology"] {
                e.reject(k, "to strategy.kind = partial")?;
            }
            StrategyKind::Partial {
                fanout: e.parse("strategy.fanout")?.unwrap_or(DEFAULT_FANOUT),
            }
        }
        other => {
            return Err(Error::config(
                "strategy.kind",
                format!("unknown strategy `{other}`"),
            ))
        }
    };
    let fixed_point = match e.take("strategy.fixed_point") {
        Some(v) => parse_bool("strategy.fixed_point", &v)?,
        None => false,
    };

    let latency = match e.take("network.latency").as_deref() {
        None | Some("constant") => {
            for k in [
                "network.latency.min",
                "network.latency.max",
                "network.latency.mean",
            ] {
                e.reject(k, "to network.latency = constant")?;
            }
            Latency::Constant(e.parse("network.latency.value")?.unwrap_or(0.0))
        }
        Some("uniform") => {
            for k in ["network.latency.value", "network.latency.mean"] {
                e.reject(k, "to network.latency = uniform")?;
            }
            Latency::Uniform(
                e.required("network.latency.min")?,
                e.required("network.latency.max")?,
            )
        }
        Some("exponential") => {
            for k in [
                "network.latency.value",
                "network.latency.min",
                "network.latency.max",
            ] {
                e.reject(k, "to network.latency = exponential")?;
            }
            Latency::Exponential(e.required("network.latency.mean")?)
        }
        Some(other) => {
            return Err(Error::config(
                "network.latency",
                format!("unknown latency model `{other}`"),
            ))
        }
    };

    let codec = match e.take("codec.kind").as_deref() {
        None | Some("identity") => {
            e.reject("codec.k", "to codec.kind = identity")?;
            Codec::Identity
        }
        Some("one_bit") => {
            e.reject("codec.k", "to codec.kind = one_bit")?;
            Codec::OneBit
        }
        Some("top_k") => Codec::TopK {
            k: e.required("codec.k")?,
        },
        Some(other) => {
            return Err(Error::config(
                "codec.kind",
                format!("unknown codec `{other}`"),
            ))
        }
    };

    let budget = match (e.parse::<u64>("run.steps")?, e.parse::<u64>("run.epochs")?) {
        (Some(s), None) => Budget::Steps(s),
        (None, Some(ep)) => Budget::Epochs(ep),
        (None, None) => {
            return Err(Error::config(
                "run.steps",
                "one of run.steps or run.epochs is required",
            ))
        }
        (Some(_), Some(_)) => return Err(Error::config("run.epochs", "conflicts with run.steps")),
    };

    let compute_means = e
        .take("compute.means")
        .map(|v| {
            v.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|err| Error::config("compute.means", format!("`{v}`: {err}")))
        })
        .transpose()?;

    let cfg = ExperimentConfig {
        seed: e.parse("seed")?.unwrap_or(0),
        model,
        input_dim,
        hidden_width,
        dataset,
        dataset_n: e.parse("dataset.n")?.unwrap_or(DEFAULT_DATASET_N),
        dataset_seed: e.parse("dataset.seed")?,
        workers: e.parse("workers")?.unwrap_or(DEFAULT_WORKERS),
        batch_size: e.parse("batch_size")?.unwrap_or(DEFAULT_BATCH_SIZE),
        eta: e.parse("optimizer.eta")?.unwrap_or(DEFAULT_ETA),
        mu: e.parse("optimizer.mu")?.unwrap_or(0.0),
        strategy,
        fixed_point,
        latency,
        drop_prob: e.parse("network.drop_prob")?.unwrap_or(0.0),
        network_seed: e.parse("network.seed")?,
        compute_mean: e.parse("compute.mean")?.unwrap_or(1.0),
        compute_means,
        compute_jitter: e.parse("compute.jitter")?.unwrap_or(0.0),
        compute_seed: e.parse("compute.seed")?,
        codec,
        budget,
        tolerance: e
            .parse("consistency.tolerance")?
            .unwrap_or(DEFAULT_TOLERANCE),
        output_dir: e.take("output.dir").map(PathBuf::from),
    };
    if let Some(key) = e.0.keys().next() {
        return Err(Error::Invariant(format!(
            "config key `{key}` was accepted but never read"
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes every field back out; `parse_config` of the result is equal to
/// the input.
pub fn serialize_config(c: &ExperimentConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("seed", c.seed.to_string());
    kv("model.kind", c.model.name().into());
    kv("model.input_dim", c.input_dim.to_string());
    if c.model == ModelKind::TinyMlp {
        kv("model.hidden_width", c.hidden_width.to_string());
    }
    kv("dataset.kind", c.dataset.name().into());
    kv("dataset.n", c.dataset_n.to_string());
    if let DatasetKind::LinearWithNoise { noise } = c.dataset {
        kv("dataset.noise", noise.to_string());
    }
    if let Some(seed) = c.dataset_seed {
        kv("dataset.seed", seed.to_string());
    }
    kv("workers", c.workers.to_string());
    kv("batch_size", c.batch_size.to_string());
    kv("optimizer.eta", c.eta.to_string());
    kv("optimizer.mu", c.mu.to_string());
    kv("strategy.kind", c.strategy.name().into());
    match c.strategy {
        StrategyKind::Synchronous => {}
        StrategyKind::StaleSync { tau } => kv(
            "strategy.tau",
            tau.map_or_else(|| "inf".into(), |t| t.to_string()),
        ),
        StrategyKind::AsyncComplete { topology } => kv(
            "strategy.topology",
            match topology {
                Topology::Centralized => "centralized",
                Topology::DecentralizedBroadcast => "decentralized",
            }
            .into(),
        ),
        StrategyKind::Partial { fanout } => kv("strategy.fanout", fanout.to_string()),
    }
    kv("strategy.fixed_point", c.fixed_point.to_string());
    kv("network.latency", c.latency.name().into());
    match c.latency {
        Latency::Constant(v) => kv("network.latency.value", v.to_string()),
        Latency::Uniform(a, b) => {
            kv("network.latency.min", a.to_string());
            kv("network.latency.max", b.to_string());
        }
        Latency::Exponential(m) => kv("network.latency.mean", m.to_string()),
    }
    kv("network.drop_prob", c.drop_prob.to_string());
    if let Some(seed) = c.network_seed {
        kv("network.seed", seed.to_string());
    }
    kv("compute.mean", c.compute_mean.to_string());
    if let Some(means) = &c.compute_means {
        kv(
            "compute.means",
            means
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    kv("compute.jitter", c.compute_jitter.to_string());
    if let Some(seed) = c.compute_seed {
        kv("compute.seed", seed.to_string());
    }
    kv("codec.kind", c.codec.name().into());
    if let Codec::TopK { k } = c.codec {
        kv("codec.k", k.to_string());
    }
    match c.budget {
        Budget::Steps(n) => kv("run.steps", n.to_string()),
        Budget::Epochs(n) => kv("run.epochs", n.to_string()),
    }
    kv("consistency.tolerance", c.tolerance.to_string());
    if let Some(dir) = &c.output_dir {
        kv("output.dir", dir.display().to_string());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "model.kind = quadratic_bowl\ndataset.kind = gaussian_cluster\nstrategy.kind = synchronous\nrun.steps = 10\n";

    fn key_of(err: Error) -> String {
        match err {
            Error::Config { key, .. } => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.eta, 0.05);
        assert_eq!(c.mu, 0.0);
        assert_eq!(c.codec, Codec::Identity);
        assert_eq!(c.tolerance, 1e-9);
        assert_eq!(c.budget, Budget::Steps(10));
        assert_eq!(c.workers, 4);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = format!("# header\n\n{MINIMAL}  # trailing\nworkers = 2 # two\n");
        assert_eq!(parse_config(&text).unwrap().workers, 2);
    }

    #[test]
    fn tau_with_synchronous_rejected() {
        let err = parse_config(&format!("{MINIMAL}strategy.tau = 2\n")).unwrap_err();
        assert_eq!(key_of(err), "strategy.tau");
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}bogus = 1\n")).unwrap_err()),
            "bogus"
        );
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}workers = 2\nworkers = 3\n")).unwrap_err()),
            "workers"
        );
        assert_eq!(
            key_of(
                parse_config(
                    "dataset.kind = gaussian_cluster\nstrategy.kind = synchronous\nrun.steps = 1\n"
                )
                .unwrap_err()
            ),
            "model.kind"
        );
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}run.epochs = 2\n")).unwrap_err()),
            "run.epochs"
        );
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}optimizer.mu = 1.0\n")).unwrap_err()),
            "optimizer.mu"
        );
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}codec.kind = top_k\n")).unwrap_err()),
            "codec.k"
        );
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}codec.k = 3\n")).unwrap_err()),
            "codec.k"
        );
        assert_eq!(
            key_of(
                parse_config(&format!(
                    "{MINIMAL}network.latency = uniform\nnetwork.latency.min = 1\n"
                ))
                .unwrap_err()
            ),
            "network.latency.max"
        );
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}workers = abc\n")).unwrap_err()),
            "workers"
        );
        assert_eq!(
            key_of(parse_config(&format!("{MINIMAL}batch_size = 1000\n")).unwrap_err()),
            "batch_size"
        );
    }

    #[test]
    fn partial_fanout_bounds() {
        let base = "model.kind = quadratic_bowl\ndataset.kind = gaussian_cluster\nstrategy.kind = partial\nrun.steps = 5\nworkers = 4\n";
        assert!(parse_config(&format!("{base}strategy.fanout = 3\n")).is_ok());
        assert_eq!(
            key_of(parse_config(&format!("{base}strategy.fanout = 4\n")).unwrap_err()),
            "strategy.fanout"
        );
        assert_eq!(
            key_of(parse_config(&format!("{base}strategy.fanout = 0\n")).unwrap_err()),
            "strategy.fanout"
        );
    }

    #[test]
    fn stale_sync_infinite_tau() {
        let text = "model.kind = quadratic_bowl\ndataset.kind = gaussian_cluster\nstrategy.kind = stale_sync\nstrategy.tau = inf\nrun.steps = 5\n";
        assert_eq!(
            parse_config(text).unwrap().strategy,
            StrategyKind::StaleSync { tau: None }
        );
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        let model = prop_oneof![
            Just(ModelKind::QuadraticBowl),
            Just(ModelKind::LinearRegression),
            Just(ModelKind::TinyMlp)
        ];
        let dataset = prop_oneof![
            Just(DatasetKind::GaussianCluster),
            (0.0f64..2.0).prop_map(|noise| DatasetKind::LinearWithNoise { noise }),
            Just(DatasetKind::MlpTeacher {
                hidden: DEFAULT_HIDDEN_WIDTH
            }),
        ];
        let strategy = prop_oneof![
            Just(StrategyKind::Synchronous),
            prop::option::of(0u64..10).prop_map(|tau| StrategyKind::StaleSync { tau }),
            Just(StrategyKind::AsyncComplete {
                topology: Topology::Centralized
            }),
            Just(StrategyKind::AsyncComplete {
                topology: Topology::DecentralizedBroadcast
            }),
            (1usize..4).prop_map(|fanout| StrategyKind::Partial { fanout }),
        ];
        let latency = prop_oneof![
            (0.0f64..5.0).prop_map(Latency::Constant),
            (0.0f64..2.0, 0.0f64..2.0).prop_map(|(a, w)| Latency::Uniform(a, a + w)),
            (0.0f64..3.0).prop_map(Latency::Exponential),
        ];
        let codec = prop_oneof![
            Just(Codec::Identity),
            Just(Codec::OneBit),
            (1usize..4).prop_map(|k| Codec::TopK { k }),
        ];
        (
            (model, dataset, strategy, latency, codec),
            (
                any::<u64>(),
                prop::option::of(any::<u64>()),
                1e-4f64..1.0,
                0.0f64..0.99,
                0.0f64..1.0,
            ),
            (
                prop::option::of(prop::collection::vec(0.1f64..10.0, 4)),
                0.0f64..0.9,
                1u64..1000,
                any::<bool>(),
            ),
        )
            .prop_map(
                |(
                    (model, dataset, strategy, latency, codec),
                    (seed, dseed, eta, mu, drop),
                    (means, jitter, steps, epochs),
                )| {
                    let mut c = ExperimentConfig::new(
                        model,
                        dataset,
                        strategy,
                        if epochs {
                            Budget::Epochs(steps)
                        } else {
                            Budget::Steps(steps)
                        },
                    );
                    c.seed = seed;
                    c.dataset_seed = dseed;
                    c.eta = eta;
                    c.mu = mu;
                    c.latency = latency;
                    c.drop_prob = drop;
                    c.codec = codec;
                    c.compute_means = means;
                    c.compute_jitter = jitter;
                    c.output_dir = Some(PathBuf::from("out/run"));
                    c
                },
            )
    }

    proptest! {
        #[test]
        fn serialize_round_trips(c in arb_config()) {
            prop_assume!(c.validate().is_ok());
            let text = serialize_config(&c);
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(serialize_config(&back), text);
        }
    }
}
