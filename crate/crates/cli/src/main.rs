use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coneflow_cli::commands;
use coneflow_core::verify::Level;

#[derive(Parser)]
#[command(name = "coneflow", version, about = "Weighted inverse mean curvature flow in a convex cone")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its output bundle.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of the config's `sweep` axes in parallel.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in verification suite.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        level: LevelArg,
    },
    /// Summarise an existing bundle into `<bundle>/report`.
    Report { bundle: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Run { config, out } => commands::cmd_run(&config, out.as_deref()),
        Command::Sweep { config, out } => commands::cmd_sweep(&config, out.as_deref()),
        Command::Verify { level } => {
            let level = match level {
                LevelArg::Quick => Level::Quick,
                LevelArg::Full => Level::Full,
            };
            commands::cmd_verify(level, &mut std::io::stdout())
        }
        Command::Report { bundle } => commands::cmd_report(&bundle),
    };
    ExitCode::from(code as u8)
}
