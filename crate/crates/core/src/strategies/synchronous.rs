//! Bulk-synchronous data parallelism: compute, exchange, barrier, apply.

use std::sync::Arc;

use super::{RunOutcome, Scenario, Sim, StrategyKind, Wire};
use crate::data::Shard;
use crate::error::{Error, Result};
use crate::netsim::{EventKind, NodeId};

/// Every worker computes on its own batch, sends its update to the `P − 1`
/// others and waits until all updates have arrived. Each replica then
/// applies the average of the `P` updates, summed in ascending worker id,
/// so replicas stay identical. Message loss is disabled.
pub(super) fn run(sc: &Scenario, shards: Vec<Shard>) -> Result<RunOutcome> {
    let p = sc.workers;
    let mut sim = Sim::new(sc, shards, sc.network.reliable())?;

    for step in 1..=sc.steps {
        for w in 0..p {
            let d = sc.compute.duration(w, step);
            sim.net.set_timer(NodeId::Worker(w), d, step)?;
        }
        let mut computed = 0;
        let mut in_flight = 0usize;
        while computed < p || in_flight > 0 {
            let event = sim
                .net
                .advance()
                .ok_or_else(|| Error::Invariant(format!("synchronous step {step} stalled")))?;
            sim.events += 1;
            match event.kind {
                EventKind::Timer {
                    node: NodeId::Worker(w),
                    ..
                } => {
                    let update = Arc::new(sim.workers[w].produce(sc, p, step - 1)?);
                    sim.produced.push((update.id, update.delta.clone()));
                    for peer in (0..p).filter(|&q| q != w) {
                        sim.send(w, NodeId::Worker(peer), Wire::Update(update.clone()))?;
                        in_flight += 1;
                    }
                    sim.workers[w].inbox.push(update);
                    computed += 1;
                }
                EventKind::Deliver(msg) => {
                    let (NodeId::Worker(to), Wire::Update(u)) = (msg.to, msg.payload) else {
                        return Err(Error::Invariant(
                            "unexpected message in synchronous run".into(),
                        ));
                    };
                    sim.workers[to].inbox.push(u);
                    in_flight -= 1;
                }
                EventKind::Timer { node, .. } => {
                    return Err(Error::Invariant(format!("unexpected timer for {node}")))
                }
            }
        }
        for w in 0..p {
            if sim.workers[w].inbox.len() != p {
                return Err(Error::Invariant(format!(
                    "worker {w} passed the barrier without all updates"
                )));
            }
            sim.boundary(w)?;
        }
    }
    sim.finish(StrategyKind::Synchronous)
}
