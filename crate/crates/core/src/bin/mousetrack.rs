use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mousetrack::adjustment::{adjust, SolveMode, SolveOptions, StochasticConfig};
use mousetrack::deform::{train, DeformPredictor, SequenceModel, TrainConfig};
use mousetrack::evaluation::evaluate;
use mousetrack::io::{read_json, write_json, CamerasFile, TrackFile};
use mousetrack::model::RigidMouseModel;
use mousetrack::pipeline::{run_pipeline, PipelineConfig};
use mousetrack::plot::plot;
use mousetrack::simulator::{simulate, SceneConfig, SimulatedDataset};
use mousetrack::{config_hash, Error, EXIT_OK};

#[derive(Parser)]
#[command(
    name = "mousetrack",
    version,
    about = "Multi-camera mouse track reconstruction"
)]
struct Cli {
    /// Seed overriding the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration of the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for outputs without an explicit path.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Exit with status 4 when an acceptance check fails.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rigid,
    Deformed,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a multi-camera dataset with ground truth.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Camera file; defaults to `cameras.json` next to the dataset.
        #[arg(long)]
        cameras_out: Option<PathBuf>,
    },
    /// Train the deformation predictor on simulated datasets.
    TrainDeform {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the track of a dataset.
    Solve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// Trained deformation model; enables deformed mode.
        #[arg(long)]
        deform: Option<PathBuf>,
        /// Smoothness weight overriding the configuration.
        #[arg(long)]
        ws: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a track with the dataset's ground truth.
    Evaluate {
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the track SVG and CSV tables.
    Plot {
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Simulate, train, solve, evaluate and plot in one run.
    Pipeline,
}

/// Configuration of the `solve` command.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolveConfig {
    stochastic: StochasticConfig,
    options: SolveOptions,
}

fn config_or_default<T: Default + serde::de::DeserializeOwned>(
    path: &Option<PathBuf>,
) -> Result<T, Error> {
    path.as_deref().map_or_else(|| Ok(T::default()), read_json)
}

fn output(explicit: &Option<PathBuf>, out_dir: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out_dir.join(name))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let model = RigidMouseModel::table();
    match &cli.command {
        Command::Simulate { out, cameras_out } => {
            let mut cfg: SceneConfig = config_or_default(&cli.config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let ds = simulate(&cfg)?;
            let out = output(out, &cli.out_dir, "data.json");
            let cams_path = cameras_out
                .clone()
                .unwrap_or_else(|| out.with_file_name("cameras.json"));
            write_json(&out, &ds)?;
            write_json(
                &cams_path,
                &CamerasFile::new(ds.meta.config_hash.clone(), &ds.cameras()?),
            )?;
            println!(
                "simulated {} epochs, dropout {:.3}, config {} -> {}",
                ds.n_epochs(),
                ds.dropout_fraction(),
                ds.meta.config_hash,
                out.display()
            );
        }
        Command::TrainDeform { data, out } => {
            let mut cfg: TrainConfig = config_or_default(&cli.config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let datasets = data
                .iter()
                .map(|p| SimulatedDataset::import(p))
                .collect::<Result<Vec<_>, _>>()?;
            let (predictor, report) = train(cfg, &datasets, &model)?;
            let out = output(out, &cli.out_dir, "model.bin");
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            predictor.save(&out)?;
            println!(
                "trained, final loss {:.6} mm² -> {}",
                report.final_loss,
                out.display()
            );
        }
        Command::Solve {
            data,
            cameras,
            deform,
            ws,
            mode,
            out,
        } => {
            let mut cfg: SolveConfig = config_or_default(&cli.config)?;
            if let Some(ws) = ws {
                cfg.stochastic.smoothness_weight = *ws;
            }
            let ds = SimulatedDataset::import(data)?;
            let cams = read_json::<CamerasFile>(cameras)?.models()?;
            let predictor = deform.as_deref().map(SequenceModel::load).transpose()?;
            let mode = match (mode, &predictor) {
                (Some(Mode::Deformed), None) => {
                    return Err(Error::Usage("--mode deformed needs --deform".into()))
                }
                (Some(Mode::Rigid), _) | (None, None) => SolveMode::Rigid,
                (Some(Mode::Deformed), Some(_)) | (None, Some(_)) => SolveMode::Deformed,
            };
            let p = match mode {
                SolveMode::Rigid => None,
                SolveMode::Deformed => predictor.as_ref().map(|m| m as &dyn DeformPredictor),
            };
            let adj = adjust(&ds, &cams, &model, p, &cfg.stochastic, &cfg.options)?;
            let hash = config_hash(&(&ds.meta.config_hash, &cfg, mode));
            let out = output(out, &cli.out_dir, "track.json");
            write_json(&out, &TrackFile::new(hash, mode, &adj.track))?;
            let last = adj.reports.last().expect("at least one solve");
            println!(
                "solved {} epochs ({:?}), cost {:.6e} -> {:.6e} -> {}",
                adj.track.len(),
                mode,
                last.initial_cost,
                last.final_cost,
                out.display()
            );
        }
        Command::Evaluate { track, data, out } => {
            let ds = SimulatedDataset::import(data)?;
            let track = TrackFile::load(track)?.track();
            let report = evaluate(&track, &ds)?;
            let out = output(out, &cli.out_dir, "evaluation.json");
            write_json(&out, &report)?;
            println!(
                "position RMSE {:.4} mm, rotation RMSE {:.4} deg, completeness {:.3} -> {:.3}",
                report.position_summary.rms,
                report.rotation_summary.rms,
                report.completeness_input,
                report.completeness_output
            );
            if cli.check && report.completeness_output < 1.0 {
                return Err(Error::CheckFailed(format!(
                    "completeness {:.3} < 1",
                    report.completeness_output
                )));
            }
        }
        Command::Plot { track, data } => {
            let ds = SimulatedDataset::import(data)?;
            let track = TrackFile::load(track)?.track();
            for p in plot(&track, &ds, &cli.out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Pipeline => {
            let mut cfg: PipelineConfig = config_or_default(&cli.config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let (report, _) = run_pipeline(&cfg, &cli.out_dir)?;
            for c in &report.checks {
                println!(
                    "{} {}: {:.6} (threshold {:.6})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            let failed = report.failed_checks();
            if cli.check && !failed.is_empty() {
                let names: Vec<String> = failed
                    .iter()
                    .map(|c| format!("{} ({:.4} vs {:.4})", c.name, c.value, c.threshold))
                    .collect();
                return Err(Error::CheckFailed(names.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
