//! Command-line front end for the federated-learning simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedasmu_core::data::DatasetArchive;
use fedasmu_core::harness::{self, presets, ExperimentConfig};
use fedasmu_core::sim::{partition_train, prepare_data};
use fedasmu_core::{Error, Protocol};

#[derive(Parser)]
#[command(name = "fedasmu", version, about = "Simulate asynchronous and synchronous federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (protocol, seed) pair of a config and write logs and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's protocol list; repeatable.
        #[arg(long = "protocol")]
        protocols: Vec<Protocol>,
        /// Replaces the config's seed list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Also write summary.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Run the built-in invariant suite.
    SelfTest,
    /// Print a named preset as JSON, or list the available names.
    Preset {
        name: Option<String>,
        #[arg(long)]
        list: bool,
    },
    /// Write the dataset and device partitions a run would use.
    Dataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvariantViolation(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run {
            config,
            protocols,
            seeds,
            out,
            csv,
        } => {
            let mut cfg = harness::parse_config(&config)?;
            if !protocols.is_empty() {
                cfg.protocols = protocols;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            run(&cfg, &out, csv)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::SelfTest => {
            let outcomes = harness::run_self_test();
            for c in &outcomes {
                match &c.result {
                    Ok(detail) => println!("PASS  {} ({detail})", c.name),
                    Err(why) => println!("FAIL  {}: {why}", c.name),
                }
            }
            Ok(if outcomes.iter().all(|c| c.passed()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Preset { name, list } => {
            match (name, list) {
                (Some(name), false) => println!("{}", serde_json::to_string_pretty(&presets::preset(&name)?)?),
                _ => presets::preset_names().iter().for_each(|n| println!("{n}")),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Dataset { config, seed, out } => {
            let cfg = harness::parse_config(&config)?;
            let (train, _) = prepare_data(&cfg.settings)?;
            let parts = partition_train(&cfg.settings, &train, seed)?;
            DatasetArchive::new(&train, &parts).write(&out)?;
            println!("wrote {} samples over {} devices to {}", train.len(), parts.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(cfg: &ExperimentConfig, out: &std::path::Path, csv: bool) -> Result<(), Error> {
    let result = harness::run_experiment(cfg)?;
    harness::write_outputs(&result, out, csv)?;
    let s = &result.summary;
    if let Some(c) = s.ceiling {
        println!("centralized ceiling: {c:.4}");
    }
    print!("{:<12} {:>6} {:>9}", "protocol", "seed", "final_acc");
    for t in &s.targets {
        print!(" {:>12}", format!("ttt@{t}"));
    }
    println!();
    for r in &s.rows {
        print!("{:<12} {:>6} {:>9.4}", r.protocol.to_string(), r.seed, r.final_acc);
        for t in &r.time_to_target {
            match t {
                Some(t) => print!(" {t:>12.1}"),
                None => print!(" {:>12}", "/"),
            }
        }
        println!();
    }
    println!("times in {}; results in {}", s.time_unit, out.display());
    Ok(())
}
