//! Deterministic discrete-event simulation of compute and message delivery.
//!
//! Time is virtual. Events are totally ordered by `(time, id)` where message
//! ids and timer ids come from one counter, so a run is a pure function of
//! its configuration. Latency and drop decisions are drawn at send time from
//! a stream keyed to the message id, which makes them independent of event
//! interleaving.
//!
//! The event loop is single-threaded. The payload type is generic so the
//! transport knows nothing about what the training strategies exchange.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::seed;

/// Abstract ticks; totally ordered.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VirtualTime(pub f64);

impl Eq for VirtualTime {}

impl PartialOrd for VirtualTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VirtualTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::ops::Add<f64> for VirtualTime {
    type Output = VirtualTime;

    fn add(self, rhs: f64) -> VirtualTime {
        VirtualTime(self.0 + rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Worker(usize),
    Server,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Worker(i) => write!(f, "w{i}"),
            NodeId::Server => f.write_str("server"),
        }
    }
}

/// What a message carries, as far as the transport cares.
pub trait Payload {
    fn size_bits(&self) -> u64;
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct Message<P> {
    pub id: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: P,
    pub enqueue_time: VirtualTime,
    pub deliver_time: VirtualTime,
    pub dropped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Latency {
    Constant(f64),
    Uniform(f64, f64),
    Exponential(f64),
}

impl Latency {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Latency::Constant(c) => c.is_finite() && c >= 0.0,
            Latency::Uniform(a, b) => a.is_finite() && b.is_finite() && 0.0 <= a && a <= b,
            Latency::Exponential(mean) => mean.is_finite() && mean >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "network.latency",
                format!("invalid parameters {self:?}"),
            ))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Latency::Constant(_) => "constant",
            Latency::Uniform(..) => "uniform",
            Latency::Exponential(_) => "exponential",
        }
    }

    fn sample(&self, rng: &mut seed::Rng) -> f64 {
        match *self {
            Latency::Constant(c) => c,
            Latency::Uniform(a, b) if a == b => a,
            Latency::Uniform(a, b) => rng.random_range(a..b),
            Latency::Exponential(0.0) => 0.0,
            Latency::Exponential(mean) => Exp::new(1.0 / mean).expect("positive rate").sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkModel {
    pub latency: Latency,
    pub drop_prob: f64,
    pub seed: u64,
}

impl NetworkModel {
    pub fn new(latency: Latency, drop_prob: f64, seed: u64) -> Result<Self> {
        latency.validate()?;
        if !(0.0..=1.0).contains(&drop_prob) {
            return Err(Error::config(
                "network.drop_prob",
                format!("must be in [0, 1], got {drop_prob}"),
            ));
        }
        Ok(NetworkModel {
            latency,
            drop_prob,
            seed,
        })
    }

    pub fn instant() -> Self {
        NetworkModel {
            latency: Latency::Constant(0.0),
            drop_prob: 0.0,
            seed: 0,
        }
    }

    /// Same latency model with message loss disabled.
    pub fn reliable(&self) -> Self {
        NetworkModel {
            drop_prob: 0.0,
            ..*self
        }
    }

    /// Stamps the delivery time and drop decision onto `msg`.
    pub fn schedule<P>(&self, mut msg: Message<P>) -> Message<P> {
        let mut rng = seed::keyed_rng(self.seed, &[msg.id]);
        let latency = self.latency.sample(&mut rng);
        let u: f64 = rng.random();
        msg.deliver_time = msg.enqueue_time + latency;
        msg.dropped = u < self.drop_prob;
        msg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jitter {
    None,
    /// Each duration is scaled by a uniform factor in `[1 − f, 1 + f]`.
    Uniform(f64),
}

/// Batch compute durations.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeModel {
    pub means: Vec<f64>,
    pub jitter: Jitter,
    pub seed: u64,
}

impl ComputeModel {
    pub fn homogeneous(workers: usize, mean: f64) -> Self {
        ComputeModel {
            means: vec![mean; workers],
            jitter: Jitter::None,
            seed: 0,
        }
    }

    pub fn validate(&self, workers: usize) -> Result<()> {
        if self.means.len() != workers {
            return Err(Error::config(
                "compute.means",
                format!("expected {workers} entries, got {}", self.means.len()),
            ));
        }
        if let Some(m) = self.means.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::config(
                "compute.mean",
                format!("must be > 0, got {m}"),
            ));
        }
        if let Jitter::Uniform(f) = self.jitter {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::config(
                    "compute.jitter",
                    format!("must be in [0, 1), got {f}"),
                ));
            }
        }
        Ok(())
    }

    /// Duration of `worker`'s `step`-th batch; a pure function of its inputs.
    pub fn duration(&self, worker: usize, step: u64) -> f64 {
        let mean = self.means[worker];
        match self.jitter {
            Jitter::None => mean,
            Jitter::Uniform(0.0) => mean,
            Jitter::Uniform(f) => {
                let mut rng = seed::keyed_rng(self.seed, &[worker as u64, step]);
                mean * rng.random_range(1.0 - f..=1.0 + f)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum EventKind<P> {
    Deliver(Message<P>),
    Timer { node: NodeId, tag: u64 },
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: VirtualTime,
    pub id: u64,
    pub kind: EventKind<P>,
}

struct Pending<P>(Event<P>);

impl<P> PartialEq for Pending<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Pending<P> {}

impl<P> PartialOrd for Pending<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Pending<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl<P> Pending<P> {
    fn key(&self) -> (VirtualTime, u64) {
        (self.0.time, self.0.id)
    }
}

/// Min-queue of events keyed by `(time, id)`.
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Pending<P>>>,
    now: VirtualTime,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: VirtualTime::default(),
        }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, event: Event<P>) -> Result<()> {
        if event.time < self.now {
            return Err(Error::Invariant(format!(
                "event {} scheduled at {} before current time {}",
                event.id, event.time.0, self.now.0
            )));
        }
        self.heap.push(Reverse(Pending(event)));
        Ok(())
    }

    /// Pops the event with the smallest `(time, id)`; `None` once the
    /// simulation has nothing left to do.
    pub fn advance(&mut self) -> Option<Event<P>> {
        let Reverse(Pending(event)) = self.heap.pop()?;
        debug_assert!(event.time >= self.now, "causality");
        self.now = event.time;
        Some(event)
    }

    /// Delivers every pending message in `(time, id)` order and empties the
    /// queue. Timers are discarded.
    pub fn drain(&mut self) -> Vec<Message<P>> {
        let mut out = Vec::with_capacity(self.heap.len());
        while let Some(event) = self.advance() {
            if let EventKind::Deliver(msg) = event.kind {
                out.push(msg);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub messages_delivered: u64,
    pub bits_sent: u64,
    pub bits_delivered: u64,
}

impl NetStats {
    pub fn in_flight(&self) -> u64 {
        self.messages_sent - self.messages_dropped - self.messages_delivered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Send,
    Drop,
    Deliver,
    Timer,
}

impl LogKind {
    fn as_str(self) -> &'static str {
        match self {
            LogKind::Send => "send",
            LogKind::Drop => "drop",
            LogKind::Deliver => "deliver",
            LogKind::Timer => "timer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time: VirtualTime,
    pub kind: LogKind,
    pub from: NodeId,
    pub to: NodeId,
    pub id: u64,
    pub payload: &'static str,
    pub bits: u64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.16e},{},{},{},{},{},{}",
            self.time.0,
            self.kind.as_str(),
            self.from,
            self.to,
            self.id,
            self.payload,
            self.bits
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub const HEADER: &'static str = "time,event,from,to,message_id,payload,bits";

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for r in &self.records {
            writeln!(out, "{r}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("ascii log")
    }
}

/// Event queue plus network model, counters and an optional event log.
pub struct Network<P> {
    model: NetworkModel,
    queue: EventQueue<P>,
    next_id: u64,
    stats: NetStats,
    log: Option<EventLog>,
}

impl<P: Payload> Network<P> {
    pub fn new(model: NetworkModel, record_log: bool) -> Self {
        Network {
            model,
            queue: EventQueue::new(),
            next_id: 0,
            stats: NetStats::default(),
            log: record_log.then(EventLog::default),
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.queue.now()
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    fn next_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn record(&mut self, record: LogRecord) {
        if let Some(log) = &mut self.log {
            log.records.push(record);
        }
    }

    /// Sends `payload` now. Returns the scheduled message's id and whether
    /// it was dropped; dropped messages never enter the queue.
    pub fn send(&mut self, from: NodeId, to: NodeId, payload: P) -> Result<(u64, bool)> {
        let id = self.next_id();
        let now = self.now();
        let msg = self.model.schedule(Message {
            id,
            from,
            to,
            payload,
            enqueue_time: now,
            deliver_time: now,
            dropped: false,
        });
        let bits = msg.payload.size_bits();
        let kind = msg.payload.kind();
        self.stats.messages_sent += 1;
        self.stats.bits_sent += bits;
        self.record(LogRecord {
            kind: LogKind::Send,
            time: now,
            from,
            to,
            id,
            payload: kind,
            bits,
        });
        if msg.dropped {
            self.stats.messages_dropped += 1;
            self.record(LogRecord {
                kind: LogKind::Drop,
                time: now,
                from,
                to,
                id,
                payload: kind,
                bits,
            });
            return Ok((id, true));
        }
        let time = msg.deliver_time;
        self.queue.push(Event {
            time,
            id,
            kind: EventKind::Deliver(msg),
        })?;
        Ok((id, false))
    }

    pub fn set_timer(&mut self, node: NodeId, delay: f64, tag: u64) -> Result<u64> {
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(Error::Invariant(format!("timer delay {delay}")));
        }
        let id = self.next_id();
        let time = self.now() + delay;
        self.queue.push(Event {
            time,
            id,
            kind: EventKind::Timer { node, tag },
        })?;
        Ok(id)
    }

    fn on_deliver(&mut self, msg: &Message<P>) {
        let bits = msg.payload.size_bits();
        self.stats.messages_delivered += 1;
        self.stats.bits_delivered += bits;
        self.record(LogRecord {
            kind: LogKind::Deliver,
            time: msg.deliver_time,
            from: msg.from,
            to: msg.to,
            id: msg.id,
            payload: msg.payload.kind(),
            bits,
        });
    }

    pub fn advance(&mut self) -> Option<Event<P>> {
        let event = self.queue.advance()?;
        match &event.kind {
            EventKind::Deliver(msg) => self.on_deliver(msg),
            EventKind::Timer { node, .. } => self.record(LogRecord {
                kind: LogKind::Timer,
                time: event.time,
                from: *node,
                to: *node,
                id: event.id,
                payload: "timer",
                bits: 0,
            }),
        }
        Some(event)
    }

    pub fn drain(&mut self) -> Vec<Message<P>> {
        let msgs = self.queue.drain();
        for m in &msgs {
            self.on_deliver(m);
        }
        msgs
    }

    /// Every message sent has been delivered or dropped.
    pub fn check_conservation(&self) -> Result<()> {
        if self.queue.is_empty() && self.stats.in_flight() == 0 {
            Ok(())
        } else {
            Err(Error::Invariant(format!(
                "{} messages unaccounted for after drain",
                self.stats.in_flight()
            )))
        }
    }

    pub fn take_log(&mut self) -> Option<EventLog> {
        self.log.take()
    }
}
