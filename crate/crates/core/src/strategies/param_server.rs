//! Centralized asynchronous SGD against a parameter server.

use std::sync::Arc;

use super::{
    AppliedSet, RunOutcome, Scenario, Sim, Snapshot, StrategyKind, Topology, UpdateId, Wire,
};
use crate::data::Shard;
use crate::error::{Error, Result};
use crate::model::{apply_increment, OptimizerState, ParamVector};
use crate::netsim::{EventKind, NodeId};

/// Master copy of the model.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub master: ParamVector,
    pub apply_count: u64,
    pub optimizer: OptimizerState,
    /// Updates in the order they were applied.
    pub log: Vec<UpdateId>,
}

impl ServerState {
    fn snapshot(&self) -> Wire {
        Wire::Snapshot(Arc::new(Snapshot {
            params: self.master.clone(),
            version: self.apply_count,
        }))
    }
}

/// Workers loop: receive a snapshot, compute on it, push the update. The
/// server applies pushes one at a time in delivery order and answers each
/// with a fresh snapshot. After the last push the network is drained and
/// the server sends every worker the final master.
pub(super) fn run(sc: &Scenario, shards: Vec<Shard>) -> Result<RunOutcome> {
    let p = sc.workers;
    let mut sim = Sim::new(sc, shards, sc.network.reliable())?;
    let mut server = ServerState {
        master: sim.initial.clone(),
        apply_count: 0,
        optimizer: OptimizerState::new(sc.eta, sc.mu, sc.model.param_dim())?,
        log: Vec::new(),
    };
    let mut versions = vec![0u64; p];

    for w in 0..p {
        sim.net
            .send(NodeId::Server, NodeId::Worker(w), server.snapshot())?;
    }

    let receive_snapshot = |sim: &mut Sim<'_>, versions: &mut [u64], w: usize, snap: &Snapshot| {
        let worker = &mut sim.workers[w];
        worker.replica = snap.params.clone();
        versions[w] = snap.version;
        if sc.record_trajectories && sim.trajectories[w].len() < worker.clock as usize {
            sim.trajectories[w].push(snap.params.clone());
        }
    };

    while let Some(event) = sim.net.advance() {
        sim.events += 1;
        match event.kind {
            EventKind::Deliver(msg) => match (msg.to, msg.payload) {
                (NodeId::Worker(w), Wire::Snapshot(snap)) => {
                    receive_snapshot(&mut sim, &mut versions, w, &snap);
                    let clock = sim.workers[w].clock;
                    if clock < sc.steps {
                        sim.net.set_timer(
                            NodeId::Worker(w),
                            sc.compute.duration(w, clock + 1),
                            0,
                        )?;
                    }
                }
                (NodeId::Server, Wire::Update(update)) => {
                    let staleness = server.apply_count - update.basis_version;
                    server.master =
                        apply_increment(&server.master, &update.delta, &mut server.optimizer)?;
                    server.apply_count += 1;
                    server.log.push(update.id);
                    sim.trace.observe_staleness(staleness);

                    let producer = update.id.producer;
                    let loss = sim.workers[producer].shard_loss(sc, &server.master)?;
                    sim.trace.record_step(
                        sim.net.now().0,
                        sim.events,
                        producer,
                        update.id.step,
                        loss,
                        staleness,
                    );
                    sim.net
                        .send(NodeId::Server, NodeId::Worker(producer), server.snapshot())?;
                }
                (to, _) => return Err(Error::Invariant(format!("unexpected message for {to}"))),
            },
            EventKind::Timer {
                node: NodeId::Worker(w),
                ..
            } => {
                let update = sim.workers[w].produce(sc, 1, versions[w])?;
                sim.produced.push((update.id, update.delta.clone()));
                sim.send(w, NodeId::Server, Wire::Update(Arc::new(update)))?;
            }
            EventKind::Timer { node, .. } => {
                return Err(Error::Invariant(format!("unexpected timer for {node}")))
            }
        }
    }

    if !sim.net.drain().is_empty() {
        return Err(Error::Invariant(
            "messages left after the event loop finished".into(),
        ));
    }
    for w in 0..p {
        sim.net
            .send(NodeId::Server, NodeId::Worker(w), server.snapshot())?;
    }
    for msg in sim.net.drain() {
        let (NodeId::Worker(w), Wire::Snapshot(snap)) = (msg.to, msg.payload) else {
            return Err(Error::Invariant(
                "unexpected message in final broadcast".into(),
            ));
        };
        receive_snapshot(&mut sim, &mut versions, w, &snap);
    }

    // A replica reflects exactly the prefix of the server log it was built from.
    for (w, worker) in sim.workers.iter_mut().enumerate() {
        worker.applied = server.log[..versions[w] as usize]
            .iter()
            .copied()
            .collect::<AppliedSet>();
    }
    sim.finish(StrategyKind::AsyncComplete {
        topology: Topology::Centralized,
    })
}
