use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use taad::adaptation::Variant;
use taad::config::RunConfig;
use taad::pipeline;

#[derive(Parser)]
#[command(
    name = "taad",
    version,
    about = "Fault detection with test-time adaptation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML). Without it the built-in defaults apply, relative to
    /// the working directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Selection {
    /// Only this variant (baseline, adabn, mmd, taad).
    #[arg(long)]
    variant: Option<Variant>,
    /// Only this target unit.
    #[arg(long)]
    unit: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic fleet and its manifest.
    Simulate,
    /// Train the source autoencoder.
    Train,
    /// Build per-target checkpoints for each variant.
    Adapt(Selection),
    /// Score target streams with the adapted checkpoints.
    Detect(Selection),
    /// Tabulate false alarms and detection lead times from saved scores.
    Evaluate,
}

fn load(common: &Common) -> taad::Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p, common.seed),
        None => {
            let mut cfg = RunConfig::default();
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            Ok(cfg.resolved())
        }
    }
}

fn run(cli: Cli) -> taad::Result<()> {
    let cfg = load(&cli.common)?;
    match cli.command {
        Command::Simulate => {
            let m = pipeline::cmd_simulate(&cfg)?;
            println!(
                "wrote {} units to {}",
                m.units.len(),
                cfg.paths.data.display()
            );
        }
        Command::Train => {
            let log = pipeline::cmd_train(&cfg)?;
            println!(
                "source trained for {} epochs, best validation loss {:.4e}",
                log.epochs.len(),
                log.best_val_loss()
            );
        }
        Command::Adapt(sel) => {
            for p in pipeline::cmd_adapt(&cfg, sel.variant, sel.unit.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Detect(sel) => {
            for p in pipeline::cmd_detect(&cfg, sel.variant, sel.unit.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate => {
            let report = pipeline::cmd_evaluate(&cfg)?;
            print!("{}", report.render_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
