//! Command-line surface: generate datasets, run pipelines from spec files,
//! benchmark layouts against each other, and benchmark storage backends.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad parameters,
//! 3 memory cap exceeded (the message names the failing stage),
//! 4 pipeline-spec errors (the message names the offending key).

mod bench;
mod gen;
mod iobench;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pixelpipe::dataflow::DataflowError;
use pixelpipe::engine::ExecConfig;

#[derive(Parser)]
#[command(name = "pixelpipe", version, about = "Data-parallel image pipeline workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalOpts,
}

#[derive(Args, Clone)]
struct GlobalOpts {
    /// Worker threads for the execution engine.
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
    /// Dataset partition count.
    #[arg(long, global = true, default_value_t = 4)]
    partitions: usize,
    /// Driver memory cap in bytes (0 = unlimited).
    #[arg(long = "driver-cap-bytes", global = true, default_value_t = 0)]
    driver_cap_bytes: u64,
    /// Seed for every randomized component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

impl GlobalOpts {
    fn exec_config(&self) -> ExecConfig {
        ExecConfig {
            num_workers: self.workers,
            num_partitions: self.partitions,
            driver_mem_cap: self.driver_cap_bytes,
            worker_mem_cap: 0,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Gen(gen::GenArgs),
    /// Run one pipeline described by a spec file.
    Run(run::RunArgs),
    /// Benchmark tasks across layouts and dataset sizes.
    Bench(bench::BenchArgs),
    /// Benchmark storage backend pairs.
    Iobench(iobench::IobenchArgs),
}

/// Error severity ladder for process exit codes.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(df) = err.downcast_ref::<DataflowError>() {
        if df.memory_exceeded().is_some() {
            return 3;
        }
        return match df {
            DataflowError::SpecError(_) => 4,
            DataflowError::BadParam(_) => 2,
            _ => 1,
        };
    }
    if err.downcast_ref::<pixelpipe::datagen::DatagenError>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => gen::cmd_gen(&args, &cli.global),
        Command::Run(args) => run::cmd_run(&args, &cli.global),
        Command::Bench(args) => bench::cmd_bench(&args, &cli.global),
        Command::Iobench(args) => iobench::cmd_iobench(&args, &cli.global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
