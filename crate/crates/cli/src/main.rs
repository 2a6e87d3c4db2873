//! `codesign`: runs one stage of a co-design experiment from a TOML config.
//!
//! Exit status: 0 on success, 2 for a missing input file, 3 for a config
//! schema error, 4 for an infeasible configuration, 1 for anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use accel_codesign::experiment::{Experiment, ExperimentError, Stage};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "codesign", version, about = "Workload/hardware co-design pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; stage artifacts go to `<out>/<stage>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `dotted.key=value`, applied to the config before it is read.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the workload graph.
    Generate(Common),
    /// Assign precisions and write the deployed graph.
    Quantize(Common),
    /// Build the execution plan and transfer plan.
    Partition(Common),
    /// Simulate serving and write the report.
    Simulate(Common),
    /// Run the configured parameter sweep.
    Sweep(Common),
    /// Compare reference and optimized kernels bit for bit.
    Validate(Common),
    /// Run generate, quantize, partition and simulate in order.
    Run(Common),
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let (stages, c): (&[Stage], Common) = match cli.cmd {
        Cmd::Generate(c) => (&[Stage::Generate], c),
        Cmd::Quantize(c) => (&[Stage::Quantize], c),
        Cmd::Partition(c) => (&[Stage::Partition], c),
        Cmd::Simulate(c) => (&[Stage::Simulate], c),
        Cmd::Sweep(c) => (&[Stage::Sweep], c),
        Cmd::Validate(c) => (&[Stage::Validate], c),
        Cmd::Run(c) => (&[Stage::Generate, Stage::Quantize, Stage::Partition, Stage::Simulate], c),
    };
    let exp = Experiment::load(&c.config, &c.overrides, c.seed)?;
    let out = exp.out_dir(c.out.as_deref());
    for &stage in stages {
        for f in exp.run(stage, &out)? {
            println!("{}: wrote {}", stage.name(), f.display());
        }
        if stage == Stage::Simulate || stage == Stage::Sweep || stage == Stage::Validate {
            let name = match stage {
                Stage::Simulate => "report.txt",
                Stage::Sweep => "sweep.csv",
                _ => "bitexact.txt",
            };
            let path = out.join(stage.name()).join(name);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ExperimentError::Other(format!("reading back {}: {e}", path.display())))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
