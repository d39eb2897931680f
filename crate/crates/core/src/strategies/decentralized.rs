//! Decentralized exchange: stale-synchronous, unbounded broadcast and
//! partial (gossip) communication share one engine.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index;

use super::{RunOutcome, Scenario, Sim, UpdateId, Wire};
use crate::data::Shard;
use crate::error::{Error, Result};
use crate::netsim::{EventKind, NodeId};
use crate::seed;

/// Which updates a worker has seen from each producer.
struct Received {
    /// Highest `s` such that steps `1..=s` from the producer have all arrived.
    contiguous: Vec<u64>,
    ahead: Vec<BTreeSet<u64>>,
}

impl Received {
    fn new(p: usize) -> Self {
        Received {
            contiguous: vec![0; p],
            ahead: vec![BTreeSet::new(); p],
        }
    }

    fn note(&mut self, id: UpdateId) {
        let j = id.producer;
        self.ahead[j].insert(id.step);
        while self.ahead[j].remove(&(self.contiguous[j] + 1)) {
            self.contiguous[j] += 1;
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Computing,
    Blocked,
    Finished,
}

/// Peers for `worker`'s `step`-th update: all others when `fanout = P − 1`,
/// otherwise a seeded uniform draw without replacement, excluding self.
pub(super) fn select_peers(
    workers: usize,
    worker: usize,
    step: u64,
    fanout: usize,
    peer_seed: u64,
) -> Vec<usize> {
    if fanout + 1 >= workers {
        return (0..workers).filter(|&q| q != worker).collect();
    }
    let mut rng = seed::keyed_rng(peer_seed, &[worker as u64, step]);
    let mut peers: Vec<usize> = index::sample(&mut rng, workers - 1, fanout)
        .into_iter()
        .map(|k| if k < worker { k } else { k + 1 })
        .collect();
    peers.sort_unstable();
    peers
}

/// Each step a worker computes on its replica, sends the update to `fanout`
/// peers and queues it for itself. At the step boundary it applies its queue.
/// With `bound = Some(tau)`, a worker at clock `c` may not start step `c + 1`
/// until it holds every update with `producer_step <= c − tau` from every
/// other worker; the same bound gates the final boundary. Only `lossy` runs keep the network's drop probability.
/// Updates are scaled by `1 / (fanout + 1)`, the number of replicas each
/// one is meant to reach.
pub(super) fn run(
    sc: &Scenario,
    shards: Vec<Shard>,
    bound: Option<u64>,
    fanout: usize,
    lossy: bool,
) -> Result<RunOutcome> {
    let p = sc.workers;
    let network = if lossy {
        sc.network
    } else {
        sc.network.reliable()
    };
    let mut sim = Sim::new(sc, shards, network)?;
    let mut received: Vec<Received> = (0..p).map(|_| Received::new(p)).collect();
    let mut phase = vec![Phase::Computing; p];

    for w in 0..p {
        sim.net
            .set_timer(NodeId::Worker(w), sc.compute.duration(w, 1), 0)?;
    }

    let can_start = |w: usize, clock: u64, received: &Received| match bound {
        None => true,
        Some(tau) if clock <= tau => true,
        Some(tau) => (0..p)
            .filter(|&j| j != w)
            .all(|j| received.contiguous[j] >= clock - tau),
    };

    // Boundary, then either block or schedule the next step.
    let try_advance = |sim: &mut Sim<'_>,
                       phase: &mut Vec<Phase>,
                       received: &[Received],
                       w: usize|
     -> Result<()> {
        let clock = sim.workers[w].clock;
        if !can_start(w, clock, &received[w]) {
            phase[w] = Phase::Blocked;
            return Ok(());
        }
        sim.boundary(w)?;
        if clock == sc.steps {
            phase[w] = Phase::Finished;
        } else {
            phase[w] = Phase::Computing;
            sim.net
                .set_timer(NodeId::Worker(w), sc.compute.duration(w, clock + 1), 0)?;
        }
        Ok(())
    };

    while phase.iter().any(|&ph| ph != Phase::Finished) {
        let Some(event) = sim.net.advance() else {
            return Err(Error::Invariant(
                "decentralized run stalled with unfinished workers".into(),
            ));
        };
        sim.events += 1;
        match event.kind {
            EventKind::Timer {
                node: NodeId::Worker(w),
                ..
            } => {
                let basis = sim.workers[w].clock;
                let update = Arc::new(sim.workers[w].produce(sc, fanout + 1, basis)?);
                sim.produced.push((update.id, update.delta.clone()));
                for peer in select_peers(p, w, update.id.step, fanout, sc.seeds.peers) {
                    sim.send(w, NodeId::Worker(peer), Wire::Update(update.clone()))?;
                }
                received[w].note(update.id);
                sim.workers[w].inbox.push(update);
                try_advance(&mut sim, &mut phase, &received, w)?;
            }
            EventKind::Deliver(msg) => {
                let (NodeId::Worker(w), Wire::Update(update)) = (msg.to, msg.payload) else {
                    return Err(Error::Invariant(
                        "unexpected message in decentralized run".into(),
                    ));
                };
                received[w].note(update.id);
                sim.workers[w].inbox.push(update);
                if phase[w] == Phase::Blocked {
                    try_advance(&mut sim, &mut phase, &received, w)?;
                }
            }
            EventKind::Timer { node, .. } => {
                return Err(Error::Invariant(format!("unexpected timer for {node}")))
            }
        }
    }

    // Empty the network and apply whatever is still queued.
    for msg in sim.net.drain() {
        let (NodeId::Worker(w), Wire::Update(update)) = (msg.to, msg.payload) else {
            return Err(Error::Invariant("unexpected message while draining".into()));
        };
        sim.workers[w].inbox.push(update);
    }
    for w in 0..p {
        for s in sim.workers[w].apply_inbox()? {
            sim.trace.observe_staleness(s);
        }
    }
    sim.finish(sc.strategy)
}
