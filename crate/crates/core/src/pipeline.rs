//! One reproducible run: simulate, train the deformation predictor, solve
//! in rigid and deformed mode, evaluate and plot.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjustment::{adjust, SolveMode, SolveOptions, SolveReport, StochasticConfig};
use crate::deform::{all_windows, rigid_baseline_mse, train, DeformPredictor, TrainConfig};
use crate::evaluation::{evaluate, EvaluationReport};
use crate::io::{write_json, CamerasFile, TrackFile};
use crate::model::RigidMouseModel;
use crate::plot::plot;
use crate::simulator::{simulate, SceneConfig, SimulatedDataset};
use crate::{config_hash, Error};

/// Offset between the run seed and the seeds of the training scenes.
pub const TRAINING_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckThresholds {
    pub min_completeness_output: f64,
    pub max_position_rmse_mm: f64,
    pub max_rotation_rmse_deg: f64,
    /// Required ratio of rigid-baseline to predictor MSE on the run's own
    /// windows.
    pub min_predictor_gain: f64,
}

impl Default for CheckThresholds {
    fn default() -> Self {
        Self {
            min_completeness_output: 1.0,
            max_position_rmse_mm: 3.0,
            max_rotation_rmse_deg: 5.0,
            min_predictor_gain: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds the scene, the training scenes and the network.
    pub seed: u64,
    pub scene: SceneConfig,
    pub training_datasets: usize,
    pub train: TrainConfig,
    pub stochastic: StochasticConfig,
    pub solve: SolveOptions,
    pub checks: CheckThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scene: SceneConfig::default(),
            training_datasets: 3,
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            stochastic: StochasticConfig::default(),
            solve: SolveOptions::default(),
            checks: CheckThresholds::default(),
        }
    }
}

impl PipelineConfig {
    /// The configuration with every seed derived from `seed`.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.scene.seed = c.seed;
        c.train.seed = c.seed;
        c
    }

    pub fn training_scene(&self, i: usize) -> SceneConfig {
        SceneConfig {
            seed: self
                .seed
                .wrapping_add(TRAINING_SEED_OFFSET)
                .wrapping_add(i as u64),
            ..self.scene.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub final_loss: f64,
    /// Predictor MSE on the solved scene's windows, mm².
    pub heldout_mse: f64,
    pub rigid_baseline_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: SolveMode,
    pub solve: Vec<SolveReport>,
    pub evaluation: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub scene_config_hash: String,
    pub training: TrainingSummary,
    pub rigid: ModeResult,
    pub deformed: ModeResult,
    pub checks: Vec<CheckResult>,
}

impl PipelineReport {
    pub fn failed_checks(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn at_least(name: &str, value: f64, threshold: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        value,
        threshold,
        passed: value >= threshold,
    }
}

fn at_most(name: &str, value: f64, threshold: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        value,
        threshold,
        passed: value <= threshold,
    }
}

fn checks(report: &PipelineReport, t: &CheckThresholds) -> Vec<CheckResult> {
    let d = &report.deformed.evaluation;
    vec![
        at_least(
            "completeness",
            d.completeness_output,
            t.min_completeness_output,
        ),
        at_least(
            "completeness_gain",
            d.completeness_output,
            d.completeness_input,
        ),
        at_most(
            "position_rmse_mm",
            d.position_summary.rms,
            t.max_position_rmse_mm,
        ),
        at_most(
            "rotation_rmse_deg",
            d.rotation_summary.rms,
            t.max_rotation_rmse_deg,
        ),
        at_least(
            "predictor_gain",
            report.training.rigid_baseline_mse / report.training.heldout_mse.max(f64::MIN_POSITIVE),
            t.min_predictor_gain,
        ),
        at_most(
            "deformation_benefit_mm",
            d.part_rmse_total_mm,
            report.rigid.evaluation.part_rmse_total_mm,
        ),
    ]
}

/// Runs every stage, writing `data.json`, `cameras.json`, `model.bin`,
/// `track_rigid.json`, `track_deformed.json`, `report.json` and the plots
/// under `plots/` into `out_dir`. Check outcomes are recorded in the report;
/// acting on them is the caller's decision.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<(PipelineReport, Vec<PathBuf>), Error> {
    let config = config.seeded();
    let hash = config_hash(&config);
    let model = RigidMouseModel::table();
    let mut artifacts = Vec::new();

    let stage = |s| move |e: Error| e.in_stage(s);
    let dataset = simulate(&config.scene)
        .map_err(Error::from)
        .map_err(stage("simulate"))?;
    let cameras = dataset
        .cameras()
        .map_err(Error::from)
        .map_err(stage("simulate"))?;
    save(&mut artifacts, out_dir, "data.json", &dataset).map_err(stage("simulate"))?;
    let cameras_file = CamerasFile::new(dataset.meta.config_hash.clone(), &cameras);
    save(&mut artifacts, out_dir, "cameras.json", &cameras_file).map_err(stage("simulate"))?;

    let training: Vec<SimulatedDataset> = (0..config.training_datasets)
        .map(|i| simulate(&config.training_scene(i)))
        .collect::<Result<_, _>>()
        .map_err(Error::from)
        .map_err(stage("train-deform"))?;
    let (predictor, train_report) = train(config.train.clone(), &training, &model)
        .map_err(Error::from)
        .map_err(stage("train-deform"))?;
    let model_path = out_dir.join("model.bin");
    predictor
        .save(&model_path)
        .map_err(Error::from)
        .map_err(stage("train-deform"))?;
    artifacts.push(model_path);
    let windows = all_windows(&dataset, &model, config.train.half_width);
    let training_summary = TrainingSummary {
        final_loss: train_report.final_loss,
        heldout_mse: predictor
            .evaluate(&windows)
            .map_err(Error::from)
            .map_err(stage("train-deform"))?,
        rigid_baseline_mse: rigid_baseline_mse(&windows),
    };

    let mut results = Vec::new();
    for (mode, name, p) in [
        (SolveMode::Rigid, "track_rigid.json", None),
        (
            SolveMode::Deformed,
            "track_deformed.json",
            Some(&predictor as &dyn DeformPredictor),
        ),
    ] {
        let adj = adjust(
            &dataset,
            &cameras,
            &model,
            p,
            &config.stochastic,
            &config.solve,
        )
        .map_err(Error::from)
        .map_err(stage("solve"))?;
        let track_file = TrackFile::new(hash.clone(), mode, &adj.track);
        save(&mut artifacts, out_dir, name, &track_file).map_err(stage("solve"))?;
        let evaluation = evaluate(&adj.track, &dataset)
            .map_err(Error::from)
            .map_err(stage("evaluate"))?;
        if mode == SolveMode::Deformed {
            let plots = plot(&adj.track, &dataset, &out_dir.join("plots"))
                .map_err(Error::from)
                .map_err(stage("plot"))?;
            artifacts.extend(plots);
        }
        results.push(ModeResult {
            mode,
            solve: adj.reports,
            evaluation,
        });
    }
    let deformed = results.pop().expect("two modes");
    let rigid = results.pop().expect("two modes");
    let mut report = PipelineReport {
        config_hash: hash,
        scene_config_hash: dataset.meta.config_hash.clone(),
        training: training_summary,
        rigid,
        deformed,
        checks: Vec::new(),
    };
    report.checks = checks(&report, &config.checks);
    save(&mut artifacts, out_dir, "report.json", &report).map_err(stage("evaluate"))?;
    Ok((report, artifacts))
}

fn save<T: Serialize>(
    artifacts: &mut Vec<PathBuf>,
    dir: &Path,
    name: &str,
    value: &T,
) -> Result<(), Error> {
    let path = dir.join(name);
    write_json(&path, value)?;
    artifacts.push(path);
    Ok(())
}
