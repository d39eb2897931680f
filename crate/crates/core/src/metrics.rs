//! Per-step metrics rows, staleness observations and the run summary.

use std::fmt::Write as _;
use std::io::Write;

use crate::data::Dataset;
use crate::error::Result;
use crate::model::{LossModel, ParamVector};
use crate::netsim::NetStats;
use crate::strategies::{
    check_consistency, select_final_model, AppliedSet, SelectionPolicy, Verdict,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub virtual_time: f64,
    pub global_event_index: u64,
    pub worker: usize,
    pub local_step: u64,
    /// Loss on the worker's own shard.
    pub train_loss: f64,
    pub staleness_of_last_applied: u64,
    /// Bits sent by this worker so far, dropped messages included.
    pub cumulative_bits_sent: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    pub rows: Vec<MetricsRow>,
    /// One entry per applied update.
    pub staleness: Vec<u64>,
    bits_by_worker: Vec<u64>,
}

pub const CSV_HEADER: &str = "virtual_time,global_event_index,worker,local_step,train_loss,staleness_of_last_applied,cumulative_bits_sent";

impl MetricsTrace {
    pub fn new(workers: usize) -> Self {
        MetricsTrace {
            rows: Vec::new(),
            staleness: Vec::new(),
            bits_by_worker: vec![0; workers],
        }
    }

    pub fn add_bits_sent(&mut self, worker: usize, bits: u64) {
        self.bits_by_worker[worker] += bits;
    }

    pub fn bits_sent_by(&self, worker: usize) -> u64 {
        self.bits_by_worker[worker]
    }

    pub fn observe_staleness(&mut self, staleness: u64) {
        self.staleness.push(staleness);
    }

    pub fn record_step(
        &mut self,
        virtual_time: f64,
        global_event_index: u64,
        worker: usize,
        local_step: u64,
        train_loss: f64,
        staleness_of_last_applied: u64,
    ) {
        let cumulative_bits_sent = self.bits_by_worker[worker];
        self.rows.push(MetricsRow {
            virtual_time,
            global_event_index,
            worker,
            local_step,
            train_loss,
            staleness_of_last_applied,
            cumulative_bits_sent,
        });
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{},{},{},{:.16e},{},{}",
                r.virtual_time,
                r.global_event_index,
                r.worker,
                r.local_step,
                r.train_loss,
                r.staleness_of_last_applied,
                r.cumulative_bits_sent
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Nearest-rank percentile; 0 for no observations.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub strategy: String,
    pub workers: usize,
    pub final_loss_average: f64,
    pub final_loss_worker0: f64,
    pub final_loss_best: f64,
    pub consistency: Verdict,
    pub staleness_p50: u64,
    pub staleness_p95: u64,
    pub staleness_max: u64,
    pub bits_sent: u64,
    pub bits_delivered: u64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
}

impl Summary {
    pub fn max_diff(&self) -> f64 {
        self.consistency.max_diff()
    }

    /// `key = value` lines with stable key names.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("strategy", self.strategy.clone());
        kv("workers", self.workers.to_string());
        kv(
            "final_loss_average",
            format!("{:.16e}", self.final_loss_average),
        );
        kv(
            "final_loss_worker0",
            format!("{:.16e}", self.final_loss_worker0),
        );
        kv("final_loss_best", format!("{:.16e}", self.final_loss_best));
        kv("consistency", self.consistency.label().to_string());
        kv("max_diff", format!("{:.16e}", self.max_diff()));
        kv("staleness_p50", self.staleness_p50.to_string());
        kv("staleness_p95", self.staleness_p95.to_string());
        kv("staleness_max", self.staleness_max.to_string());
        kv("bits_sent", self.bits_sent.to_string());
        kv("bits_delivered", self.bits_delivered.to_string());
        kv("messages_sent", self.messages_sent.to_string());
        kv("messages_dropped", self.messages_dropped.to_string());
        s
    }
}

/// Inputs to [`summarize`], borrowed from a finished run.
pub struct RunView<'a> {
    pub strategy: String,
    pub trace: &'a MetricsTrace,
    pub replicas: &'a [ParamVector],
    /// Present when the strategy claims complete communication.
    pub applied: Option<&'a [AppliedSet]>,
    pub net: NetStats,
}

pub fn summarize(
    run: &RunView<'_>,
    model: &LossModel,
    dataset: &Dataset,
    tolerance: f64,
) -> Result<Summary> {
    let loss_of = |policy| -> Result<f64> {
        let w = select_final_model(run.replicas, policy, model, dataset)?;
        model.mean_loss(&w, dataset.samples())
    };
    let mut sorted = run.trace.staleness.clone();
    sorted.sort_unstable();
    Ok(Summary {
        strategy: run.strategy.clone(),
        workers: run.replicas.len(),
        final_loss_average: loss_of(SelectionPolicy::Average)?,
        final_loss_worker0: loss_of(SelectionPolicy::Worker0)?,
        final_loss_best: loss_of(SelectionPolicy::BestTrainLoss)?,
        consistency: check_consistency(run.replicas, run.applied, tolerance),
        staleness_p50: percentile(&sorted, 0.50),
        staleness_p95: percentile(&sorted, 0.95),
        staleness_max: sorted.last().copied().unwrap_or(0),
        bits_sent: run.net.bits_sent,
        bits_delivered: run.net.bits_delivered,
        messages_sent: run.net.messages_sent,
        messages_dropped: run.net.messages_dropped,
    })
}
