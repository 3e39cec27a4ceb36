use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use radfuse::config::AblationMode;
use radfuse_cli::{cmd_eval, cmd_infer, cmd_plot_pr, cmd_synth, cmd_train, exit_code, resolve_config, DetectionSource};

#[derive(Parser)]
#[command(name = "radfuse", version, about = "Radar-camera BEV object detection")]
struct Cli {
    /// JSON run configuration; the desk profile when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ablation mode: R, R+C, R+C+W or R+C*+W.
    #[arg(long, global = true)]
    mode: Option<AblationMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        frames: usize,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or a detections file) on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "detections")]
        checkpoint: Option<PathBuf>,
        /// Score an existing detections file instead of running the model.
        #[arg(long, conflicts_with = "checkpoint")]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect objects in one frame.
    Infer {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Detections JSON-lines output.
        #[arg(long)]
        out: PathBuf,
        /// BEV overlay PNG.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Plot precision-recall curves from a report.
    PlotPr {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "class")]
        classes: Vec<String>,
        #[arg(long = "condition")]
        conditions: Vec<String>,
    },
}

fn run(cli: Cli) -> radfuse::Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), cli.seed, cli.mode)?;
    match cli.command {
        Command::Synth { out, frames } => {
            let entries = cmd_synth(&cfg, &out, frames)?;
            println!("wrote {} frames to {}", entries.len(), out.display());
        }
        Command::Train { data, out } => {
            let s = cmd_train(&cfg, &data, &out)?;
            if let Some(last) = s.history.last() {
                println!("{} steps, final loss {:.5}", s.steps, last.loss.total);
            }
        }
        Command::Eval {
            data,
            checkpoint,
            detections,
            out,
        } => {
            let source = match (&checkpoint, &detections) {
                (_, Some(d)) => DetectionSource::File(d),
                (Some(c), None) => DetectionSource::Checkpoint(c),
                (None, None) => unreachable!("clap requires one source"),
            };
            let report = cmd_eval(&cfg, &data, source, &out)?;
            print!("{}", report.to_text());
        }
        Command::Infer {
            frame,
            checkpoint,
            out,
            plot,
        } => {
            let recs = cmd_infer(&cfg, checkpoint.as_deref(), &frame, &out, plot.as_deref())?;
            println!("{} detections", recs.len());
        }
        Command::PlotPr {
            report,
            out,
            classes,
            conditions,
        } => {
            let drawn = cmd_plot_pr(&report, &out, &classes, &conditions)?;
            println!("{} curves", drawn.len());
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
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
