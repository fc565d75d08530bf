use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use propchaos_cli::{emit_plotdata, load, run, CliError, CliResult};

#[derive(Parser)]
#[command(name = "propchaos", version, about = "Seeded propagation-of-chaos experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and overrides.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key; may be repeated.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Worker threads; outputs do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a sweep report into gnuplot tables and fit coefficients.
    Plotdata {
        report: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            config,
            sets,
            threads,
            out,
        } => {
            if let Some(t) = threads {
                if t == 0 {
                    return Err(CliError::BadValue {
                        key: "threads".into(),
                        msg: "must be positive".into(),
                    });
                }
                // Fails only if a pool already exists, which cannot happen here.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            let cfg = load(config.as_deref(), &sets)?;
            run(&cfg, out.as_deref())?;
        }
        Command::Plotdata { report, out } => {
            let data = emit_plotdata(&report, &out)?;
            if data.dropped > 0 {
                eprintln!("warning dropped={} reason=\"non-positive estimate\"", data.dropped);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
