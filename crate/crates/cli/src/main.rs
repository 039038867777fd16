use clap::{Parser, Subcommand, ValueEnum};
use dropgraph_cli::{cmd_run, cmd_sweep, cmd_verify, Fault, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dropgraph", version, about = "DropGraph experiments and invariant checks")]
struct Cli {
    /// Worker threads (0 = one per core, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one config and write the reports.
    Run {
        /// Flat `key = value` config file.
        config: PathBuf,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Report directory, overriding the config's `out_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a config once per value of one regularizer field.
    Sweep {
        /// Flat `key = value` config file.
        config: PathBuf,
        /// alpha | rho | adjacency_mode | scheduler
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Report directory, overriding the config's `out_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the invariant suite and print a pass/fail table.
    Verify {
        /// Smaller sample counts.
        #[arg(long)]
        quick: bool,
        /// Break one component on purpose to see the suite catch it.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Eq6Sign,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Run { config, seeds, out_dir } => {
            let opts = RunOptions {
                seeds,
                out_dir,
                threads: cli.threads,
            };
            cmd_run(&config, &opts, &mut stdout).map(|_| ())
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out_dir,
        } => {
            let opts = RunOptions {
                seeds,
                out_dir,
                threads: cli.threads,
            };
            cmd_sweep(&config, &axis, &values, &opts, &mut stdout).map(|_| ())
        }
        Command::Verify { quick, inject_fault } => {
            let fault = inject_fault.map(|FaultArg::Eq6Sign| Fault::Eq6Sign);
            cmd_verify(quick, fault, &mut stdout).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
