use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use mfg_ctt::config::{load_config, load_named, BUNDLED};
use mfg_ctt::runner::{configure_threads, output_dir, run, Command, RunOptions, EXIT_VALIDATION};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// gain search and near-Nash trajectory
    NearFp,
    /// damped Picard solve of the mean-field equations
    Solve,
    /// Monte Carlo population under the mean-field law
    Simulate,
    /// mean-field law against the LQG tracker on the same population
    Compare,
    /// mismatched true model with the plateau switch
    Robustness,
    /// property suites
    Verify,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::NearFp => Command::NearFp,
            Cmd::Solve => Command::Solve,
            Cmd::Simulate => Command::Simulate,
            Cmd::Compare => Command::Compare,
            Cmd::Robustness => Command::Robustness,
            Cmd::Verify => Command::Verify,
        }
    }
}

/// Collective target tracking for populations of space heaters.
///
/// Exit codes: 0 success, 1 I/O, 2 invalid configuration, 3 numerical
/// failure, 4 non-convergence (artifacts are still written).
#[derive(Debug, Parser)]
#[command(name = "mfg-ctt", version)]
struct Cli {
    command: Cmd,

    /// Bundled scenario name or path to a TOML file.
    #[arg(conflicts_with = "config")]
    scenario: Option<String>,

    /// Path to a TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory [default: out/<command>].
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Suppresses the summary on stdout.
    #[arg(long)]
    quiet: bool,

    /// Records paths of the first this-many agents into paths.csv.
    #[arg(long, default_value_t = 0)]
    paths: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let cfg = match (&cli.config, &cli.scenario) {
        (Some(path), _) => load_config(path),
        (None, Some(name)) => load_named(name),
        (None, None) if matches!(cli.command, Cmd::Verify) => load_named(BUNDLED[0]),
        (None, None) => {
            eprintln!("error: give a scenario ({}) or --config <path>", BUNDLED.join(", "));
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let command = Command::from(cli.command);
    let opts = RunOptions {
        out_dir: output_dir(cli.out.as_deref(), command),
        seed: cli.seed,
        quiet: cli.quiet,
        paths: cli.paths,
    };
    let outcome = run(command, &cfg, &opts);
    if outcome.exit_code == 0 {
        if !opts.quiet {
            print!("{}", outcome.report);
        }
    } else {
        eprint!("{}", outcome.report);
    }
    ExitCode::from(outcome.exit_code as u8)
}
