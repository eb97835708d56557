use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isac_core::cli::{cmd_fuse, cmd_oracle, cmd_run, exit_code, summary_table, RunOverrides};
use isac_core::config::RunConfig;
use isac_core::error::Result;
use isac_core::fusion::FusionParams;

#[derive(Parser)]
#[command(name = "isac", version, about = "Monostatic/bistatic mmWave sensing with PMB filtering and map fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, env = "ISAC_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
        /// Skip the fused variant.
        #[arg(long)]
        no_fusion: bool,
    },
    /// Fuse the bistatic state of one snapshot with the monostatic state of another.
    Fuse {
        bistatic: PathBuf,
        monostatic: PathBuf,
        output: PathBuf,
        /// Take fusion parameters from this run config instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a numeric self-check suite against independent oracles.
    Oracle {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(isac_core::checks::SUITES))]
        suite: String,
    },
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            seed,
            runs,
            output_dir,
            no_fusion,
        } => {
            let overrides = RunOverrides {
                seed,
                runs,
                output_dir,
                no_fusion,
            };
            let (dir, report) = cmd_run(&config, &overrides)?;
            print!("{}", summary_table(&report));
            println!("wrote {}", dir.display());
            Ok(true)
        }
        Command::Fuse {
            bistatic,
            monostatic,
            output,
            config,
        } => {
            let params = match config {
                Some(p) => RunConfig::load(&p)?.fusion_params(),
                None => FusionParams::default(),
            };
            cmd_fuse(&bistatic, &monostatic, &output, &params)?;
            println!("wrote {}", output.display());
            Ok(true)
        }
        Command::Oracle { suite } => cmd_oracle(&suite, &mut std::io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
