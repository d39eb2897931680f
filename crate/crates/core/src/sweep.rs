//! Many independent runs at once. Each run is single-threaded; the sweep
//! spreads runs across threads when the `parallel` feature is on.

use crate::error::Result;
use crate::harness::{execute, ExperimentConfig, RunReport};
use crate::parallel;
use crate::strategies::{self, RunOutcome, Scenario};

pub fn run_scenarios(scenarios: &[Scenario]) -> Vec<Result<RunOutcome>> {
    parallel::map(scenarios, strategies::run)
}

pub fn run_scenarios_sequential(scenarios: &[Scenario]) -> Vec<Result<RunOutcome>> {
    parallel::map_sequential(scenarios, strategies::run)
}

pub fn run_configs(configs: &[ExperimentConfig]) -> Vec<Result<RunReport>> {
    parallel::map(configs, |c| execute(c, false, false))
}
