//! Worker and server state machines for the four points of the
//! communication spectrum, layered over [`crate::netsim`].
//!
//! | strategy | topology | delivery | blocking |
//! |---|---|---|---|
//! | `Synchronous` | all-to-all | reliable | barrier every step |
//! | `StaleSync(tau)` | broadcast | reliable | producer clocks may lag by `tau` |
//! | `AsyncComplete` | server or broadcast | reliable | none |
//! | `Partial(f)` | `f` random peers | lossy | none |
//!
//! Every update carries the additive weight change it represents, so a
//! replica applying a set of updates is just adding vectors. Updates that
//! reach a worker are buffered and applied at its next step boundary in
//! canonical `(producer, producer_step)` order, together with the worker's
//! own update for that step.

mod consistency;
mod decentralized;
mod param_server;
mod synchronous;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::compression::{decode, encode, encoded_size_bits, Codec, EncodedGradient, Residual};
use crate::data::{shard, BatchStream, Dataset, Shard};
use crate::error::{Error, Result};
use crate::metrics::{MetricsTrace, RunView, Summary};
use crate::model::{apply_increment, LossModel, OptimizerState, ParamVector};
use crate::netsim::{ComputeModel, EventLog, NetStats, Network, NetworkModel, NodeId, Payload};

pub use consistency::{
    applied_sets_equal, check_consistency, select_final_model, SelectionPolicy, Verdict,
};

/// Grid used by fixed-point mode: deltas and initial weights are rounded to
/// multiples of `2^-32`, which makes replica sums exact.
pub const FIXED_POINT_SCALE: f64 = 4_294_967_296.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Centralized,
    DecentralizedBroadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Synchronous,
    /// `None` removes the bound.
    StaleSync {
        tau: Option<u64>,
    },
    AsyncComplete {
        topology: Topology,
    },
    Partial {
        fanout: usize,
    },
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Synchronous => "synchronous",
            StrategyKind::StaleSync { .. } => "stale_sync",
            StrategyKind::AsyncComplete { .. } => "async_complete",
            StrategyKind::Partial { .. } => "partial",
        }
    }

    pub fn label(&self) -> String {
        match self {
            StrategyKind::Synchronous => "synchronous".into(),
            StrategyKind::StaleSync { tau: Some(t) } => format!("stale_sync(tau={t})"),
            StrategyKind::StaleSync { tau: None } => "stale_sync(tau=inf)".into(),
            StrategyKind::AsyncComplete {
                topology: Topology::Centralized,
            } => "async_complete(centralized)".into(),
            StrategyKind::AsyncComplete {
                topology: Topology::DecentralizedBroadcast,
            } => "async_complete(decentralized)".into(),
            StrategyKind::Partial { fanout } => format!("partial(fanout={fanout})"),
        }
    }

    /// Whether every produced update is guaranteed to reach every replica.
    pub fn is_complete(&self) -> bool {
        !matches!(self, StrategyKind::Partial { .. })
    }
}

/// Identity of an update; the derived order is the canonical application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UpdateId {
    pub producer: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate {
    pub id: UpdateId,
    /// Version of the weights the gradient was computed against.
    pub basis_version: u64,
    /// Additive weight change, already scaled by the learning rate.
    pub delta: Vec<f64>,
    pub payload: EncodedGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: ParamVector,
    pub version: u64,
}

/// What strategies put on the wire.
#[derive(Debug, Clone)]
pub enum Wire {
    Update(Arc<GradientUpdate>),
    Snapshot(Arc<Snapshot>),
}

impl Payload for Wire {
    fn size_bits(&self) -> u64 {
        match self {
            Wire::Update(u) => encoded_size_bits(&u.payload),
            Wire::Snapshot(s) => crate::compression::VALUE_BITS * s.params.len() as u64,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Wire::Update(u) => match u.payload {
                EncodedGradient::Dense(_) => "update/identity",
                EncodedGradient::OneBit { .. } => "update/one_bit",
                EncodedGradient::TopK { .. } => "update/top_k",
            },
            Wire::Snapshot(_) => "snapshot",
        }
    }
}

/// Multiset of update identifiers reflected in a replica.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppliedSet(BTreeMap<UpdateId, u32>);

impl AppliedSet {
    pub fn insert(&mut self, id: UpdateId) -> Result<()> {
        let count = self.0.entry(id).or_insert(0);
        *count += 1;
        if *count > 1 {
            return Err(Error::Invariant(format!(
                "update ({}, {}) applied twice",
                id.producer, id.step
            )));
        }
        Ok(())
    }

    pub fn contains(&self, id: &UpdateId) -> bool {
        self.0.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.0.values().map(|&c| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &UpdateId> {
        self.0.keys()
    }
}

impl FromIterator<UpdateId> for AppliedSet {
    fn from_iter<I: IntoIterator<Item = UpdateId>>(iter: I) -> Self {
        let mut set = AppliedSet::default();
        for id in iter {
            *set.0.entry(id).or_insert(0) += 1;
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSeeds {
    pub init: u64,
    pub batches: u64,
    pub peers: u64,
}

impl ScenarioSeeds {
    pub fn from_master(master: u64) -> Self {
        ScenarioSeeds {
            init: crate::seed::derive(master, "init"),
            batches: crate::seed::derive(master, "batches"),
            peers: crate::seed::derive(master, "peers"),
        }
    }
}

/// Everything a strategy needs to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: LossModel,
    pub dataset: Dataset,
    pub workers: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub mu: f64,
    pub strategy: StrategyKind,
    pub network: NetworkModel,
    pub compute: ComputeModel,
    pub codec: Codec,
    /// Local steps per worker (global steps for `Synchronous`).
    pub steps: u64,
    pub seeds: ScenarioSeeds,
    pub fixed_point: bool,
    pub record_trajectories: bool,
    pub record_events: bool,
}

impl Scenario {
    /// A scenario with default hyperparameters: batch 32, η = 0.05, μ = 0,
    /// instant reliable network, unit homogeneous compute, no compression.
    pub fn new(model: LossModel, dataset: Dataset, workers: usize, strategy: StrategyKind) -> Self {
        Scenario {
            model,
            dataset,
            workers,
            batch_size: 32,
            eta: 0.05,
            mu: 0.0,
            strategy,
            network: NetworkModel::instant(),
            compute: ComputeModel::homogeneous(workers, 1.0),
            codec: Codec::Identity,
            steps: 100,
            seeds: ScenarioSeeds::from_master(0),
            fixed_point: false,
            record_trajectories: false,
            record_events: false,
        }
    }

    pub fn validate(&self) -> Result<Vec<Shard>> {
        if self.workers == 0 {
            return Err(Error::config("workers", "must be >= 1"));
        }
        if self.dataset.dim() != self.model.input_dim {
            return Err(Error::config(
                "model.input_dim",
                format!("dataset has dimension {}", self.dataset.dim()),
            ));
        }
        if self.steps == 0 {
            return Err(Error::config("run.steps", "must be >= 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config(
                "optimizer.eta",
                format!("must be > 0, got {}", self.eta),
            ));
        }
        OptimizerState::new(self.eta, self.mu, 0)?;
        self.codec.validate(self.model.param_dim())?;
        self.compute.validate(self.workers)?;
        NetworkModel::new(
            self.network.latency,
            self.network.drop_prob,
            self.network.seed,
        )?;
        if let StrategyKind::Partial { fanout } = self.strategy {
            if fanout == 0 || fanout + 1 > self.workers {
                return Err(Error::config(
                    "strategy.fanout",
                    format!(
                        "must be in [1, {}], got {fanout}",
                        self.workers.saturating_sub(1)
                    ),
                ));
            }
        }
        if self.fixed_point && self.codec != Codec::Identity {
            return Err(Error::config(
                "strategy.fixed_point",
                "requires codec.kind = identity",
            ));
        }
        let shards = shard(&self.dataset, self.workers)
            .map_err(|e| Error::config("workers", e.to_string()))?;
        let smallest = shards.iter().map(Shard::len).min().unwrap_or(0);
        if self.batch_size == 0 || self.batch_size > smallest {
            return Err(Error::config(
                "batch_size",
                format!(
                    "must be in [1, {smallest}] (smallest shard), got {}",
                    self.batch_size
                ),
            ));
        }
        Ok(shards)
    }

    /// Common starting point of every replica.
    pub fn initial_params(&self) -> ParamVector {
        let w = self.model.init_params(self.seeds.init);
        if self.fixed_point {
            ParamVector::new(w.iter().map(|v| snap(*v)).collect()).expect("finite")
        } else {
            w
        }
    }
}

fn snap(v: f64) -> f64 {
    (v * FIXED_POINT_SCALE).round() / FIXED_POINT_SCALE
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub strategy: StrategyKind,
    pub initial: ParamVector,
    /// Post-drain replica of each worker.
    pub replicas: Vec<ParamVector>,
    pub applied: Vec<AppliedSet>,
    /// Every update produced, in production order.
    pub produced: Vec<(UpdateId, Vec<f64>)>,
    pub trace: MetricsTrace,
    pub net: NetStats,
    pub events: Option<EventLog>,
    /// Replica of each worker after each of its step boundaries.
    pub trajectories: Vec<Vec<ParamVector>>,
    pub end_time: f64,
}

impl RunOutcome {
    pub fn consistency(&self, tolerance: f64) -> Verdict {
        let applied = self.strategy.is_complete().then_some(&self.applied[..]);
        check_consistency(&self.replicas, applied, tolerance)
    }

    pub fn summarize(
        &self,
        model: &LossModel,
        dataset: &Dataset,
        tolerance: f64,
    ) -> Result<Summary> {
        let applied = self.strategy.is_complete().then_some(&self.applied[..]);
        crate::metrics::summarize(
            &RunView {
                strategy: self.strategy.label(),
                trace: &self.trace,
                replicas: &self.replicas,
                applied,
                net: self.net,
            },
            model,
            dataset,
            tolerance,
        )
    }
}

/// Runs the scenario's strategy to completion, drains the network and
/// returns the final state.
pub fn run(scenario: &Scenario) -> Result<RunOutcome> {
    let shards = scenario.validate()?;
    match scenario.strategy {
        StrategyKind::Synchronous => synchronous::run(scenario, shards),
        StrategyKind::StaleSync { tau } => {
            decentralized::run(scenario, shards, tau, scenario.workers - 1, false)
        }
        StrategyKind::AsyncComplete {
            topology: Topology::DecentralizedBroadcast,
        } => decentralized::run(scenario, shards, None, scenario.workers - 1, false),
        StrategyKind::AsyncComplete {
            topology: Topology::Centralized,
        } => param_server::run(scenario, shards),
        StrategyKind::Partial { fanout } => {
            decentralized::run(scenario, shards, None, fanout, true)
        }
    }
}

/// Per-worker state owned by the event loop.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    pub replica: ParamVector,
    pub optimizer: OptimizerState,
    pub residual: Residual,
    /// Completed local steps.
    pub clock: u64,
    pub applied: AppliedSet,
    /// Updates received (or produced) but not yet applied.
    pub inbox: Vec<Arc<GradientUpdate>>,
    pub shard: Shard,
    batches: BatchStream,
}

impl WorkerState {
    fn new(sc: &Scenario, shard: Shard, initial: &ParamVector) -> Result<Self> {
        let m = sc.model.param_dim();
        Ok(WorkerState {
            id: shard.worker,
            replica: initial.clone(),
            optimizer: OptimizerState::new(sc.eta, sc.mu, m)?,
            residual: Residual::zeros(m),
            clock: 0,
            applied: AppliedSet::default(),
            inbox: Vec::new(),
            batches: BatchStream::new(shard.clone(), sc.batch_size, sc.seeds.batches)?,
            shard,
        })
    }

    /// Computes the next update: the mini-batch gradient on the current
    /// replica scaled by `−η / share`, passed through the codec.
    fn produce(
        &mut self,
        sc: &Scenario,
        share: usize,
        basis_version: u64,
    ) -> Result<GradientUpdate> {
        let batch = self.batches.next_batch(&sc.dataset)?;
        let grad = sc.model.minibatch_gradient(&self.replica, &batch)?;
        let factor = -sc.eta / share as f64;
        let raw: Vec<f64> = grad.iter().map(|g| g * factor).collect();
        let (mut payload, residual) = encode(sc.codec, &raw, &self.residual)?;
        let mut delta = decode(&payload, raw.len())?;
        if sc.fixed_point {
            delta.iter_mut().for_each(|d| *d = snap(*d));
            payload = EncodedGradient::Dense(delta.clone());
        }
        self.residual = residual;
        self.clock += 1;
        Ok(GradientUpdate {
            id: UpdateId {
                producer: self.id,
                step: self.clock,
            },
            basis_version,
            delta,
            payload,
        })
    }

    /// Applies everything in the inbox as one step, summed in canonical
    /// order. Returns the staleness of each applied update in clocks.
    fn apply_inbox(&mut self) -> Result<Vec<u64>> {
        if self.inbox.is_empty() {
            return Ok(Vec::new());
        }
        let mut pending = std::mem::take(&mut self.inbox);
        pending.sort_by_key(|u| u.id);
        let mut increment = vec![0.0; self.replica.len()];
        let mut staleness = Vec::with_capacity(pending.len());
        for u in &pending {
            for (acc, d) in increment.iter_mut().zip(&u.delta) {
                *acc += d;
            }
            self.applied.insert(u.id)?;
            staleness.push(self.clock.saturating_sub(u.id.step));
        }
        self.replica = apply_increment(&self.replica, &increment, &mut self.optimizer)?;
        Ok(staleness)
    }

    fn shard_loss(&self, sc: &Scenario, w: &ParamVector) -> Result<f64> {
        let samples = sc.dataset.samples();
        sc.model
            .mean_loss(w, self.shard.indices().map(|i| &samples[i]))
    }
}

/// State shared by all engines.
struct Sim<'a> {
    sc: &'a Scenario,
    net: Network<Wire>,
    workers: Vec<WorkerState>,
    trace: MetricsTrace,
    produced: Vec<(UpdateId, Vec<f64>)>,
    trajectories: Vec<Vec<ParamVector>>,
    events: u64,
    initial: ParamVector,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, shards: Vec<Shard>, network: NetworkModel) -> Result<Self> {
        let initial = sc.initial_params();
        let workers = shards
            .into_iter()
            .map(|s| WorkerState::new(sc, s, &initial))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sim {
            sc,
            net: Network::new(network, sc.record_events),
            trace: MetricsTrace::new(sc.workers),
            produced: Vec::new(),
            trajectories: vec![Vec::new(); sc.workers],
            events: 0,
            initial,
            workers,
        })
    }

    fn send(&mut self, from: usize, to: NodeId, payload: Wire) -> Result<bool> {
        let bits = payload.size_bits();
        let (_, dropped) = self.net.send(NodeId::Worker(from), to, payload)?;
        self.trace.add_bits_sent(from, bits);
        Ok(dropped)
    }

    /// Step boundary for worker `w`: apply the inbox and record a row.
    fn boundary(&mut self, w: usize) -> Result<()> {
        let staleness = self.workers[w].apply_inbox()?;
        let last = staleness.last().copied().unwrap_or(0);
        for s in staleness {
            self.trace.observe_staleness(s);
        }
        let worker = &self.workers[w];
        let loss = worker.shard_loss(self.sc, &worker.replica)?;
        let (clock, replica) = (worker.clock, worker.replica.clone());
        self.trace
            .record_step(self.net.now().0, self.events, w, clock, loss, last);
        if self.sc.record_trajectories {
            self.trajectories[w].push(replica);
        }
        Ok(())
    }

    fn finish(mut self, strategy: StrategyKind) -> Result<RunOutcome> {
        self.net.check_conservation()?;
        let end_time = self.net.now().0;
        let events = self.net.take_log();
        let (replicas, applied) = self
            .workers
            .into_iter()
            .map(|w| (w.replica, w.applied))
            .unzip();
        Ok(RunOutcome {
            strategy,
            initial: self.initial,
            replicas,
            applied,
            produced: self.produced,
            trace: self.trace,
            net: self.net.stats(),
            events,
            trajectories: self.trajectories,
            end_time,
        })
    }
}
