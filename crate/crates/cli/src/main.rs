use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safecritic::data::{save_scenes, simulate, SimConfig};
use safecritic::eval::{
    critic_report, evaluate_model, per_video, run_ablation, run_experiment, write_evaluation, write_plots, Ablation,
    DataSource, EvalResult, ExperimentConfig, PredictionFile,
};
use safecritic::model::SafeCritic;
use safecritic::{Error, Result};

#[derive(Parser)]
#[command(name = "safecritic", version, about = "Safety-aware multi-agent trajectory forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved model on scene files or a simulator preset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene file, directory of scene files, or simulator preset.
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Collision threshold in meters; defaults to the model's.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Writes results.csv, predictions.txt and plots here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene count for simulated data.
        #[arg(long)]
        scenes: Option<usize>,
        /// Simulator seed for simulated data.
        #[arg(long)]
        data_seed: Option<u64>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 8)]
        plots: usize,
    },
    /// Write simulated scenes as TrajNet files.
    Simulate {
        /// Preset name or preset file.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the config as is and with one component switched off.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// asr or critic.
        #[arg(long)]
        toggle: Ablation,
    },
    /// Draw trajectory and attention figures from a predictions file.
    Plot {
        /// predictions.txt, or a run directory containing one.
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Data(_) | Error::Io(_) | Error::Checkpoint(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn print_result(result: &EvalResult) {
    println!("K = {}, epsilon = {}", result.k, result.epsilon);
    println!("{}", result.aggregate);
    let videos = per_video(result);
    if videos.len() > 1 {
        for (v, agg) in videos {
            println!("  {v}: {agg}");
        }
    }
}

fn train(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let out = run_experiment(&cfg)?;
    println!("trained {} steps, wrote {}", out.trace.len(), cfg.out.display());
    print_result(&out.result);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    checkpoint: &Path,
    data: &str,
    k: usize,
    epsilon: Option<f64>,
    out: Option<&Path>,
    seed: u64,
    scenes: Option<usize>,
    data_seed: Option<u64>,
    batch: usize,
    plots: usize,
) -> Result<()> {
    let model = SafeCritic::load(checkpoint)?;
    let scenes = DataSource::resolve(data, scenes, data_seed)?.load()?;
    let epsilon = epsilon.unwrap_or(model.config.epsilon);
    let (preds, result) = evaluate_model(&model, &scenes, k, seed, epsilon, batch)?;
    print_result(&result);
    let critic = critic_report(&scenes, &preds, epsilon, &model)?;
    let auc = critic.auc.map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
    println!("critic AUC {auc} ({} of {} trajectories collide)", critic.positives(), critic.labels.len());
    if let Some(dir) = out {
        write_evaluation(dir, &model, &scenes, &preds, &result, plots)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn simulate_cmd(preset: &str, out: &Path, scenes: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut cfg = SimConfig::resolve(preset)?;
    if let Some(n) = scenes {
        cfg.scenes = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let stem =
        Path::new(preset).file_stem().map_or_else(|| "simulated".to_string(), |s| s.to_string_lossy().into_owned());
    let generated = simulate(&cfg)?;
    std::fs::create_dir_all(out)?;
    let path = save_scenes(out, &stem, &generated)?;
    println!("wrote {} scenes to {}", generated.len(), path.display());
    Ok(())
}

fn ablate(config: &Path, toggle: Ablation) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let (full, ablated) = run_ablation(&cfg, toggle)?;
    println!("full:     {}", full.result.aggregate);
    println!("no-{:<6}{}", format!("{}:", toggle.name()), ablated.result.aggregate);
    println!("wrote {}", cfg.out.join("ablation.csv").display());
    Ok(())
}

fn plot(result: &Path, out: &Path, scenes: usize) -> Result<()> {
    let file = if result.is_dir() { result.join("predictions.txt") } else { result.to_path_buf() };
    let predictions = PredictionFile::load(&file)?;
    let written = write_plots(&predictions, out, scenes)?;
    println!("wrote {} figures to {}", written.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => train(&config),
        Command::Eval { checkpoint, data, k, epsilon, out, seed, scenes, data_seed, batch, plots } => {
            eval(&checkpoint, &data, k, epsilon, out.as_deref(), seed, scenes, data_seed, batch, plots)
        }
        Command::Simulate { preset, out, scenes, seed } => simulate_cmd(&preset, &out, scenes, seed),
        Command::Ablate { config, toggle } => ablate(&config, toggle),
        Command::Plot { result, out, scenes } => plot(&result, &out, scenes),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
