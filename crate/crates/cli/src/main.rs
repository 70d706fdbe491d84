use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tractseg_cli::commands;
use tractseg_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "tractseg", version, about = "White-matter tract segmentation from diffusion tensor images")]
struct Cli {
    /// JSON run configuration; defaults apply to every missing field.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set loss.weight=5` or `--set network.arch=vnet`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scan-rescan cohort.
    MakePhantom,
    /// Fit diffusion tensors and FA/MD maps for every cohort scan.
    FitTensor,
    /// Train a network on the train split.
    Train,
    /// Segment both scans of the selected subjects.
    Segment,
    /// Dice of the scan segmentations against the reference masks.
    Evaluate,
    /// Scan-rescan reproducibility report with Bland-Altman plots.
    ReproStats,
    /// Finite-difference check of every differentiable operator and loss.
    Gradcheck,
    /// Print the resolved configuration.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::MakePhantom => {
            let m = commands::make_phantom(&cfg)?;
            println!("wrote {} subjects to {}", m.subjects.len(), cfg.stage_dir("make-phantom").display());
        }
        Command::FitTensor => {
            let n = commands::fit_tensors(&cfg)?;
            println!("fitted {} subjects into {}", n, cfg.stage_dir("fit-tensor").display());
        }
        Command::Train => {
            let out = commands::train(&cfg)?;
            for r in &out.log {
                println!(
                    "epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}  {:.1}s",
                    r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
                );
            }
            match out.best_epoch {
                Some(e) => println!("best validation loss at epoch {e}"),
                None => println!("no epochs run; saved the initial parameters"),
            }
        }
        Command::Segment => {
            let t = commands::segment(&cfg)?;
            let total: f64 = t.iter().map(|t| t.seconds).sum();
            println!("segmented {} volumes, {:.3}s per volume", t.len(), total / t.len().max(1) as f64);
        }
        Command::Evaluate => {
            let (rows, s) = commands::evaluate(&cfg)?;
            for (subject, d) in &rows {
                println!("{subject}  dice {d:.4}");
            }
            println!("mean dice {:.4} (sd {:.4}) over {} subjects", s.mean_dice, s.sd_dice, s.subjects);
        }
        Command::ReproStats => {
            let out = commands::repro_stats(&cfg)?;
            let r = &out.report;
            println!("kappa {:.3} ({:.3}) {}", r.kappa.mean, r.kappa.sd, r.kappa.label);
            for (name, m) in [("FA", &r.fa), ("MD", &r.md), ("volume ml", &r.volume_ml)] {
                println!(
                    "{name}: diff {:.4e} ({:.4e})  mean {:.4e} ({:.4e})  R² {:.3}  paired p {:.3}",
                    m.diff_mean, m.diff_sd, m.mean, m.sd, m.r2, m.paired_t.p
                );
            }
        }
        Command::Gradcheck => {
            let rows = commands::gradcheck(&cfg)?;
            print!("{}", commands::format_gradcheck(&rows));
            let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
