use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dpsim::harness::{self, RunOptions};

/// Run one data-parallel SGD experiment described by a config file.
#[derive(Parser, Debug)]
#[command(name = "dpsim", version)]
struct Args {
    /// Experiment config (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Write only summary.txt.
    #[arg(long)]
    summary_only: bool,
    /// Also write events.log.
    #[arg(long)]
    dump_events: bool,
    /// Compare against a second config and print the differences.
    #[arg(long, value_name = "CONFIG")]
    compare: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("dpsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(args: &Args) -> dpsim::Result<()> {
    let mut config = harness::load_config(&args.config)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(other) = &args.compare {
        let mut other = harness::load_config(other)?;
        if let Some(s) = args.seed {
            other.seed = s;
        }
        let cmp = harness::compare(&config, &other)?;
        print!("{}", cmp.to_text());
        return Ok(());
    }
    let opts = RunOptions {
        out_dir: args.out.clone(),
        seed: None,
        summary_only: args.summary_only,
        dump_events: args.dump_events,
    };
    let report = harness::run(&config, &opts)?;
    print!("{}", report.summary.to_text());
    Ok(())
}
