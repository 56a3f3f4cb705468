use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvi_cli::commands::{cmd_compare, cmd_gap_check, cmd_generate, cmd_solve};
use mvi_cli::config::{RunConfig, SolverTag};
use mvi_cli::{CliError, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "mvi", version, about = "Misspecified VI solvers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Cournot instance from a market config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one solver and write a trace and a summary.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run several solvers on one instance into a combined trace.
    Compare {
        /// One run config per solver.
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a point with the gap and infeasibility metrics.
    GapCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    solver: Option<SolverTag>,
    #[arg(long)]
    trace_every: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        if let Some(t) = self.trace_every {
            cfg.trace_every = Some(t);
        }
        cfg.validate()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let path = cmd_generate(&config, &out, seed)?;
            println!("{}", path.display());
        }
        Command::Solve { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg)?;
            let out = cmd_solve(&cfg)?;
            let f = &out.summary.final_metrics;
            println!(
                "{} k={} infeas_ergodic={:.3e} gap_ergodic={:.3e} kkt_residual={:.3e}",
                cfg.solver.as_str(),
                cfg.k,
                f.infeas_ergodic,
                f.gap_ergodic,
                f.kkt_residual
            );
        }
        Command::Compare { config, overrides } => {
            if overrides.solver.is_some() {
                return Err(CliError::Config(
                    "--solver cannot be used with compare; each config names its solver".into(),
                ));
            }
            let mut cfgs = config
                .iter()
                .map(|p| RunConfig::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            for c in &mut cfgs {
                overrides.apply(c)?;
            }
            let out_dir = overrides
                .out
                .clone()
                .unwrap_or_else(|| cfgs[0].output_dir.clone());
            for o in cmd_compare(&cfgs, &out_dir)? {
                let f = &o.summary.final_metrics;
                println!(
                    "{} infeas_ergodic={:.3e} gap_ergodic={:.3e}",
                    o.summary.solver.as_str(),
                    f.infeas_ergodic,
                    f.gap_ergodic
                );
            }
        }
        Command::GapCheck { config, out, seed } => {
            let report = cmd_gap_check(&config, seed, out.as_deref())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
