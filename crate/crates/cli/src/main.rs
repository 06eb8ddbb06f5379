use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aniso_tik_cli::{run_file, CliError, Mode, Overrides};

/// Space-variant anisotropic smoothing: image denoising and frequency-domain
/// waveform inversion driven by flat TOML run configs.
#[derive(Parser)]
#[command(name = "aniso-tik", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// RNG seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise an image with the adaptive anisotropic penalty.
    Denoise(CommonArgs),
    /// Run the multiscale waveform inversion.
    Fwi(CommonArgs),
    /// Forward-model observed data from a velocity model.
    Forward(CommonArgs),
    /// Generate synthetic models and images.
    Synth(CommonArgs),
    /// Run the built-in verification suite.
    Selftest(CommonArgs),
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    let (args, expected) = match cmd {
        Command::Denoise(a) => (a, Mode::Denoise),
        Command::Fwi(a) => (a, Mode::Fwi),
        Command::Forward(a) => (a, Mode::Forward),
        Command::Synth(a) => (a, Mode::Synth),
        Command::Selftest(a) => (a, Mode::Selftest),
    };
    // the config's mode must agree with the subcommand
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Core(aniso_tik_core::CoreError::io(&args.config, e)))?;
    let base_dir = args.config.parent().map(|p| p.to_path_buf());
    let cfg = aniso_tik_cli::RunConfig::parse(&text, base_dir.as_deref())?;
    if cfg.mode != expected {
        return Err(CliError::config(format!(
            "config mode is \"{}\" but the subcommand is \"{expected}\"",
            cfg.mode
        )));
    }
    let _ = run_file(&args.config, &Overrides {
        out_dir: args.out_dir.clone(),
        seed: args.seed,
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
