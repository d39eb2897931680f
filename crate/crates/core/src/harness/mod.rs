//! Experiment orchestration: config → scenario → run → files on disk.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use config::{parse_config, serialize_config, Budget, ExperimentConfig};

use crate::data::{self, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::metrics::Summary;
use crate::model::{LossModel, ParamVector};
use crate::netsim::{ComputeModel, Jitter, NetworkModel};
use crate::seed;
use crate::strategies::{self, applied_sets_equal, RunOutcome, Scenario, ScenarioSeeds};

pub const DEFAULT_OUTPUT_DIR: &str = "dpsim-out";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const EVENTS_FILE: &str = "events.log";

/// Every seed a run consumes, after applying explicit overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub dataset: u64,
    pub network: u64,
    pub compute: u64,
    pub scenario: ScenarioSeeds,
}

impl ExperimentConfig {
    pub fn resolved_seeds(&self) -> ResolvedSeeds {
        ResolvedSeeds {
            master: self.seed,
            dataset: self
                .dataset_seed
                .unwrap_or_else(|| seed::derive(self.seed, "dataset")),
            network: self
                .network_seed
                .unwrap_or_else(|| seed::derive(self.seed, "network")),
            compute: self
                .compute_seed
                .unwrap_or_else(|| seed::derive(self.seed, "compute")),
            scenario: ScenarioSeeds::from_master(self.seed),
        }
    }

    pub fn loss_model(&self) -> Result<LossModel> {
        LossModel::new(self.model, self.input_dim, self.hidden_width)
    }

    pub fn generate_dataset(&self) -> Result<Dataset> {
        let kind = match self.dataset {
            DatasetKind::MlpTeacher { .. } => DatasetKind::MlpTeacher {
                hidden: self.hidden_width,
            },
            k => k,
        };
        data::generate(
            kind,
            self.dataset_n,
            self.input_dim,
            self.resolved_seeds().dataset,
        )
    }

    /// Local steps per worker implied by the budget. An epoch is enough
    /// batches for the largest shard to be visited once.
    pub fn steps(&self) -> u64 {
        match self.budget {
            Budget::Steps(s) => s,
            Budget::Epochs(e) => {
                let largest = self.dataset_n.div_ceil(self.workers);
                e * largest.div_ceil(self.batch_size) as u64
            }
        }
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        self.validate()?;
        let seeds = self.resolved_seeds();
        let model = self.loss_model()?;
        let dataset = self.generate_dataset()?;
        let mut sc = Scenario::new(model, dataset, self.workers, self.strategy);
        sc.batch_size = self.batch_size;
        sc.eta = self.eta;
        sc.mu = self.mu;
        sc.network = NetworkModel::new(self.latency, self.drop_prob, seeds.network)?;
        sc.compute = ComputeModel {
            means: self
                .compute_means
                .clone()
                .unwrap_or_else(|| vec![self.compute_mean; self.workers]),
            jitter: if self.compute_jitter > 0.0 {
                Jitter::Uniform(self.compute_jitter)
            } else {
                Jitter::None
            },
            seed: seeds.compute,
        };
        sc.codec = self.codec;
        sc.steps = self.steps();
        sc.seeds = seeds.scenario;
        sc.fixed_point = self.fixed_point;
        Ok(sc)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.dir`.
    pub out_dir: Option<PathBuf>,
    /// Overrides the master `seed`.
    pub seed: Option<u64>,
    /// Skip `metrics.csv`.
    pub summary_only: bool,
    /// Write `events.log`.
    pub dump_events: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub outcome: RunOutcome,
    pub summary: Summary,
}

/// Runs a config in memory. Complete strategies whose replicas disagree on
/// the set of applied updates are reported as an invariant violation.
pub fn execute(
    config: &ExperimentConfig,
    record_events: bool,
    record_trajectories: bool,
) -> Result<RunReport> {
    let mut scenario = config.build_scenario()?;
    scenario.record_events = record_events;
    scenario.record_trajectories = record_trajectories;
    log::info!(
        "running {} with {} workers for {} steps",
        scenario.strategy.label(),
        scenario.workers,
        scenario.steps
    );
    let outcome = strategies::run(&scenario)?;
    if outcome.strategy.is_complete() && !applied_sets_equal(&outcome.applied) {
        return Err(Error::Invariant(format!(
            "{} finished with differing applied-update sets",
            outcome.strategy.label()
        )));
    }
    let summary = outcome.summarize(&scenario.model, &scenario.dataset, config.tolerance)?;
    log::info!(
        "done: consistency = {}, final loss = {:e}",
        summary.consistency.label(),
        summary.final_loss_average
    );
    Ok(RunReport {
        config: config.clone(),
        scenario,
        outcome,
        summary,
    })
}

/// Runs a config and writes `metrics.csv`, `summary.txt` and optionally
/// `events.log` into the output directory.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let mut config = config.clone();
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    let report = execute(&config, opts.dump_events, false)?;
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    write_outputs(&report, &dir, opts)?;
    Ok(report)
}

pub fn write_outputs(report: &RunReport, dir: &Path, opts: &RunOptions) -> Result<()> {
    fs::create_dir_all(dir)?;
    if !opts.summary_only {
        report
            .outcome
            .trace
            .write_csv(fs::File::create(dir.join(METRICS_FILE))?)?;
    }
    fs::write(dir.join(SUMMARY_FILE), report.summary.to_text())?;
    if opts.dump_events {
        if let Some(events) = &report.outcome.events {
            events.write_to(std::io::BufWriter::new(fs::File::create(
                dir.join(EVENTS_FILE),
            )?))?;
        }
    }
    log::debug!("outputs written to {}", dir.display());
    Ok(())
}

/// Differences between two runs over the same model, data and init.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub final_loss_delta_average: f64,
    pub final_loss_delta_worker0: f64,
    pub final_loss_delta_best: f64,
    /// Max-norm distance between worker 0's replicas after each common step.
    pub trajectory_max_divergence: f64,
    /// `bits_sent(a) / bits_sent(b)`.
    pub bits_ratio: f64,
    pub a: Summary,
    pub b: Summary,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "a.strategy = {}", self.a.strategy);
        let _ = writeln!(s, "b.strategy = {}", self.b.strategy);
        let _ = writeln!(
            s,
            "final_loss_delta_average = {:.16e}",
            self.final_loss_delta_average
        );
        let _ = writeln!(
            s,
            "final_loss_delta_worker0 = {:.16e}",
            self.final_loss_delta_worker0
        );
        let _ = writeln!(
            s,
            "final_loss_delta_best = {:.16e}",
            self.final_loss_delta_best
        );
        let _ = writeln!(
            s,
            "trajectory_max_divergence = {:.16e}",
            self.trajectory_max_divergence
        );
        let _ = writeln!(s, "bits_ratio = {:.16e}", self.bits_ratio);
        s
    }
}

fn trajectory_divergence(a: &[ParamVector], b: &[ParamVector]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max)
}

/// Runs both configs and reports how they differ. Both must describe the
/// same model, the same dataset and the same initial weights.
pub fn compare(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<Comparison> {
    let (sa, sb) = (a.resolved_seeds(), b.resolved_seeds());
    if (a.model, a.input_dim, a.hidden_width) != (b.model, b.input_dim, b.hidden_width) {
        return Err(Error::Usage("compared configs use different models".into()));
    }
    if a.dataset != b.dataset || a.dataset_n != b.dataset_n || sa.dataset != sb.dataset {
        return Err(Error::Usage(
            "compared configs use different datasets or dataset seeds".into(),
        ));
    }
    if sa.scenario.init != sb.scenario.init {
        return Err(Error::Usage(
            "compared configs use different model seeds".into(),
        ));
    }
    let configs = [a.clone(), b.clone()];
    let mut reports = crate::parallel::map(&configs, |c| execute(c, false, true))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rb = reports.pop().expect("two reports");
    let ra = reports.pop().expect("two reports");
    let bits_ratio = if rb.summary.bits_sent == 0 {
        if ra.summary.bits_sent == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        ra.summary.bits_sent as f64 / rb.summary.bits_sent as f64
    };
    Ok(Comparison {
        final_loss_delta_average: ra.summary.final_loss_average - rb.summary.final_loss_average,
        final_loss_delta_worker0: ra.summary.final_loss_worker0 - rb.summary.final_loss_worker0,
        final_loss_delta_best: ra.summary.final_loss_best - rb.summary.final_loss_best,
        trajectory_max_divergence: trajectory_divergence(
            &ra.outcome.trajectories[0],
            &rb.outcome.trajectories[0],
        ),
        bits_ratio,
        a: ra.summary,
        b: rb.summary,
    })
}
