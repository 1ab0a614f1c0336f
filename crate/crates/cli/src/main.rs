use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaoslab::commands::{cmd_chaos, cmd_constants, cmd_rates, cmd_solve, cmd_validate, expect_kind};
use chaoslab::config::{node_budget, ExperimentConfig, ExperimentKind};
use chaoslab::error::{CliError, Result, EXIT_USAGE};
use chaoslab::output::{num, Output};
use chaoslab::selftest;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "chaoslab", version, about = "Discrete-time McKean-Vlasov BSDE experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; files are printed to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for sampled experiments.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form constants and their grid oracle.
    Constants {
        #[arg(long, allow_negative_numbers = true)]
        beta: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        phi: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        delta: Option<f64>,
    },
    /// Check the standard-data conditions of a config.
    Validate,
    /// Solve the configured equation by Picard iteration.
    Solve,
    /// Particle-system gaps against the limit equation.
    Chaos,
    /// Sampled empirical-measure convergence rates.
    Rates,
    /// Quick run of the invariant suites.
    Selftest,
}

fn load(global: &Global, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let path = global.config.as_deref().ok_or_else(|| CliError::Config(format!("`{}` needs --config", kind.as_str())))?;
    let cfg = ExperimentConfig::load(path)?;
    expect_kind(&cfg, kind)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(Output, Option<PathBuf>)> {
    let g = &cli.global;
    let budget = node_budget()?;
    let with_dir = |out: Output, cfg: &ExperimentConfig| {
        let dir = g.out.clone().or_else(|| cfg.output.dir.as_ref().map(PathBuf::from));
        (out, dir)
    };
    Ok(match &cli.command {
        Command::Constants { beta, phi, gamma, delta } => match (beta, phi, &g.config) {
            (Some(b), Some(p), _) => (cmd_constants(*b, *p, *gamma, *delta)?, g.out.clone()),
            (None, None, Some(_)) => {
                let cfg = load(g, ExperimentKind::Constants)?;
                let c = cfg.experiment.constants.clone().ok_or_else(|| CliError::Config("missing experiment.constants".into()))?;
                with_dir(cmd_constants(c.beta, c.phi, c.gamma, c.delta)?, &cfg)
            }
            _ => return Err(CliError::Config("constants needs --beta and --phi, or --config".into())),
        },
        Command::Validate => {
            let cfg = load(g, ExperimentKind::Validate)?;
            with_dir(cmd_validate(&cfg)?, &cfg)
        }
        Command::Solve => {
            let cfg = load(g, ExperimentKind::Solve)?;
            with_dir(cmd_solve(&cfg, budget)?, &cfg)
        }
        Command::Chaos => {
            let cfg = load(g, ExperimentKind::Chaos)?;
            with_dir(cmd_chaos(&cfg, budget)?, &cfg)
        }
        Command::Rates => {
            let cfg = load(g, ExperimentKind::Rates)?;
            with_dir(cmd_rates(&cfg, g.seed, budget)?, &cfg)
        }
        Command::Selftest => (selftest::run(g.seed), g.out.clone()),
    })
}

fn finish(out: &Output, dir: Option<&Path>) -> Result<()> {
    print!("{}", out.emit(dir)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = run(&cli).and_then(|(out, dir)| finish(&out, dir.as_deref()).map(|_| out.code));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(diffs) = e.picard_trace() {
                eprintln!("picard trace (squared differences):");
                for (m, d) in diffs.iter().enumerate() {
                    eprintln!("  {} {}", m + 1, num(*d));
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
