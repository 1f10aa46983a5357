use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use difflab_core::experiments::{describe, run_experiment, ConfigError, ExperimentConfig, ExperimentError, Kind};

#[derive(Parser)]
#[command(name = "difflab", version, about = "Pinball machines and diffusion sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Counter-machine interpreter.
    Cm {
        #[command(subcommand)]
        action: CmAction,
    },
    /// Noisy force-field execution of a counter machine.
    Pinball {
        #[command(subcommand)]
        action: PinballAction,
    },
    /// Reverse-process sampling with the exact score.
    Diffusion {
        #[command(subcommand)]
        action: DiffusionAction,
    },
    /// Threshold circuits.
    Circuit {
        #[command(subcommand)]
        action: CircuitAction,
    },
}

#[derive(Subcommand)]
enum CmAction {
    /// Run a program on one input.
    Run(Common),
}

#[derive(Subcommand)]
enum PinballAction {
    /// Repeated trials at one cell size.
    Simulate(Common),
    /// Success rate across cell sizes with matched seeds.
    Leakage(Common),
}

#[derive(Subcommand)]
enum DiffusionAction {
    /// Token TV distance against step count.
    Converge(Common),
    /// Per-prefix token frequencies and margins.
    Prefix(Common),
    /// Majority vote with a recorded advice seed.
    Derandomize(Common),
}

#[derive(Subcommand)]
enum CircuitAction {
    /// Evaluate a gadget or a circuit file.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved plan without simulating.
    #[arg(long)]
    dry_run: bool,
    /// Trial, sample or repetition count (overrides the config).
    #[arg(long)]
    trials: Option<u64>,
    /// Suppress the one-line summary.
    #[arg(long)]
    quiet: bool,
}

fn resolve(kind: Kind, c: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.kind() != kind {
        return Err(ConfigError(format!("config is for {}, but this command runs {kind}", cfg.kind())).into());
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(n) = c.trials {
        cfg.override_trials(n)?;
    }
    Ok(cfg)
}

fn execute(kind: Kind, c: &Common) -> Result<bool, ExperimentError> {
    let cfg = resolve(kind, c)?;
    if c.dry_run {
        print!("{}", describe(&cfg)?);
        return Ok(true);
    }
    let (art, files) = run_experiment(&cfg)?;
    for w in &art.warnings {
        eprintln!("warning: {w}");
    }
    if !c.quiet {
        println!("{} [{}]", art.line, if art.passed { "pass" } else { "FAIL" });
        for f in files {
            println!("  wrote {}", f.display());
        }
    }
    Ok(art.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Cm { action: CmAction::Run(c) } => (Kind::CmRun, c),
        Command::Pinball { action: PinballAction::Simulate(c) } => (Kind::Pinball, c),
        Command::Pinball { action: PinballAction::Leakage(c) } => (Kind::Leakage, c),
        Command::Diffusion { action: DiffusionAction::Converge(c) } => (Kind::Converge, c),
        Command::Diffusion { action: DiffusionAction::Prefix(c) } => (Kind::Prefix, c),
        Command::Diffusion { action: DiffusionAction::Derandomize(c) } => (Kind::Derandomize, c),
        Command::Circuit { action: CircuitAction::Eval(c) } => (Kind::Circuit, c),
    };
    match execute(kind, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
