//! Learned per-part deformation: token windows around an epoch go through a
//! shared per-part LSTM that predicts the mid epoch's deformable positions.

mod network;
mod tokens;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use network::{Adam, Lstm};
pub use tokens::{
    all_windows, build_tokens, observed_deformable, part_present, Token, TokenSequence,
    MIN_VIEWS_FOR_PRESENCE,
};

use crate::model::RigidMouseModel;
use crate::simulator::SimulatedDataset;

pub const MODEL_FORMAT: &str = "mousetrack-deform-model";
pub const MODEL_VERSION: u32 = 1;

/// Floor on normalisation standard deviations, in mm.
pub const STD_FLOOR_MM: f64 = 1e-3;

/// Finite-difference step for [`jacobian`], in normalised input units.
pub const JACOBIAN_STEP: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DeformError {
    #[error(
        "window of half-width {half_width} around epoch {center} leaves the {epochs}-epoch dataset"
    )]
    WindowOutOfRange {
        center: usize,
        half_width: usize,
        epochs: usize,
    },
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("no training windows")]
    NoTrainingData,
    #[error("token sequence does not fit the model: {0}")]
    InvalidSequence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub half_width: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Decoupled weight decay per unit learning rate.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            half_width: 2,
            hidden: 32,
            epochs: 200,
            learning_rate: 3e-3,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Per-coordinate z-score statistics of rigid positions and of
/// deformable-minus-rigid offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub rigid_mean: [f64; 3],
    pub rigid_std: [f64; 3],
    pub offset_mean: [f64; 3],
    pub offset_std: [f64; 3],
}

fn mean_std(samples: impl Iterator<Item = Vector3<f64>>) -> ([f64; 3], [f64; 3]) {
    let (mut n, mut sum, mut sq) = (0usize, Vector3::zeros(), Vector3::zeros());
    for s in samples {
        n += 1;
        sum += s;
        sq += s.component_mul(&s);
    }
    let n = n.max(1) as f64;
    let mean = sum / n;
    let var = sq / n - mean.component_mul(&mean);
    let std = var.map(|v| v.max(0.0).sqrt().max(STD_FLOOR_MM));
    (mean.into(), std.into())
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            rigid_mean: [0.0; 3],
            rigid_std: [1.0; 3],
            offset_mean: [0.0; 3],
            offset_std: [1.0; 3],
        }
    }

    pub fn fit(windows: &[TokenSequence]) -> Self {
        let tokens = windows.iter().flat_map(|w| w.tokens.iter());
        let (rigid_mean, rigid_std) = mean_std(tokens.clone().map(|t| t.rigid));
        let offsets = windows.iter().flat_map(|w| {
            let mid = w.mid_rigid();
            w.target.iter().flat_map(move |tg| {
                tg.iter()
                    .zip(mid.clone())
                    .map(|(d, r)| d - r)
                    .collect::<Vec<_>>()
            })
        });
        let observed = tokens.filter_map(|t| t.deformable.map(|d| d - t.rigid));
        let (offset_mean, offset_std) = mean_std(offsets.chain(observed));
        Self {
            rigid_mean,
            rigid_std,
            offset_mean,
            offset_std,
        }
    }

    fn rigid(&self, v: &Vector3<f64>) -> [f64; 3] {
        std::array::from_fn(|c| (v[c] - self.rigid_mean[c]) / self.rigid_std[c])
    }

    fn offset(&self, v: &Vector3<f64>) -> [f64; 3] {
        std::array::from_fn(|c| (v[c] - self.offset_mean[c]) / self.offset_std[c])
    }

    fn offset_back(&self, z: &[f64]) -> Vector3<f64> {
        Vector3::from_fn(|c, _| z[c] * self.offset_std[c] + self.offset_mean[c])
    }
}

/// Anything that maps a token window to mid-epoch deformable positions.
pub trait DeformPredictor {
    /// Predicted deformable position of every masked part, mid-epoch model
    /// frame, mm.
    fn predict(&self, tokens: &TokenSequence) -> Result<Vec<Vector3<f64>>, DeformError>;

    /// Epochs on each side of the predicted epoch the predictor expects.
    fn half_width(&self) -> usize {
        2
    }

    /// Size of one normalised input unit in mm, per coordinate.
    fn input_scale(&self) -> Vector3<f64> {
        Vector3::repeat(1.0)
    }

    /// Predicted offsets from the rigid positions.
    fn predict_offsets(&self, tokens: &TokenSequence) -> Result<Vec<Vector3<f64>>, DeformError> {
        let pred = self.predict(tokens)?;
        Ok(pred
            .iter()
            .zip(tokens.mid_rigid())
            .map(|(p, r)| p - r)
            .collect())
    }
}

/// Central-difference Jacobian of the stacked masked predictions with
/// respect to the stacked mid-epoch rigid inputs (`3M × 3M`).
pub fn jacobian<P: DeformPredictor + ?Sized>(
    predictor: &P,
    tokens: &TokenSequence,
) -> Result<DMatrix<f64>, DeformError> {
    jacobian_with_step(predictor, tokens, JACOBIAN_STEP)
}

pub fn jacobian_with_step<P: DeformPredictor + ?Sized>(
    predictor: &P,
    tokens: &TokenSequence,
    step: f64,
) -> Result<DMatrix<f64>, DeformError> {
    let m = tokens.parts;
    let scale = predictor.input_scale();
    let mut jac = DMatrix::zeros(3 * m, 3 * m);
    let mid = tokens.half_width;
    for j in 0..m {
        for c in 0..3 {
            let h = step * scale[c];
            let mut plus = tokens.clone();
            plus.token_mut(mid, j).rigid[c] += h;
            let mut minus = tokens.clone();
            minus.token_mut(mid, j).rigid[c] -= h;
            let (yp, ym) = (predictor.predict(&plus)?, predictor.predict(&minus)?);
            for i in 0..m {
                for r in 0..3 {
                    jac[(3 * i + r, 3 * j + c)] = (yp[i][r] - ym[i][r]) / (2.0 * h);
                }
            }
        }
    }
    Ok(jac)
}

/// Affine map of the stacked mid-epoch rigid positions.
#[derive(Debug, Clone)]
pub struct LinearPredictor {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DeformPredictor for LinearPredictor {
    fn predict(&self, tokens: &TokenSequence) -> Result<Vec<Vector3<f64>>, DeformError> {
        let x = DVector::from_iterator(
            3 * tokens.parts,
            tokens.mid_rigid().iter().flat_map(|v| v.iter().copied()),
        );
        if self.weights.ncols() != x.len() {
            return Err(DeformError::InvalidSequence(format!(
                "expected {} inputs, got {}",
                self.weights.ncols(),
                x.len()
            )));
        }
        let y = &self.weights * x + &self.bias;
        Ok(y.as_slice()
            .chunks(3)
            .map(Vector3::from_column_slice)
            .collect())
    }
}

/// Zero offsets: the deformable position is the rigid one.
#[derive(Debug, Clone, Copy, Default)]
pub struct RigidPassThrough;

impl DeformPredictor for RigidPassThrough {
    fn predict(&self, tokens: &TokenSequence) -> Result<Vec<Vector3<f64>>, DeformError> {
        Ok(tokens.mid_rigid())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared masked-coordinate error per training epoch, mm².
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
}

/// Shared per-part LSTM. Each part's sequence carries, per epoch, the
/// normalised rigid position, the normalised observed offset (zero when
/// missing or masked), a presence flag and the part's one-hot code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceModel {
    pub config: TrainConfig,
    pub parts: usize,
    pub normalization: Normalization,
    pub network: Option<Lstm>,
    pub final_loss: Option<f64>,
}

impl SequenceModel {
    pub fn new(config: TrainConfig, parts: usize) -> Self {
        Self {
            config,
            parts,
            normalization: Normalization::identity(),
            network: None,
            final_loss: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        7 + self.parts
    }

    pub fn is_trained(&self) -> bool {
        self.network.is_some()
    }

    fn check(&self, seq: &TokenSequence) -> Result<(), DeformError> {
        if seq.parts != self.parts || seq.half_width != self.config.half_width {
            return Err(DeformError::InvalidSequence(format!(
                "{} parts, half-width {}; model expects {} parts, half-width {}",
                seq.parts, seq.half_width, self.parts, self.config.half_width
            )));
        }
        if seq.tokens.len() != seq.epochs() * seq.parts {
            return Err(DeformError::InvalidSequence("token count".into()));
        }
        Ok(())
    }

    /// Flattened `steps × D` inputs of one part's sequence.
    fn part_inputs(&self, seq: &TokenSequence, part: usize) -> Vec<f64> {
        let norm = &self.normalization;
        let mut x = Vec::with_capacity(seq.epochs() * self.input_dim());
        for s in 0..seq.epochs() {
            let tok = seq.token(s, part);
            x.extend(norm.rigid(&tok.rigid));
            match tok.deformable {
                Some(d) => {
                    x.extend(norm.offset(&(d - tok.rigid)));
                    x.push(1.0);
                }
                None => x.extend([0.0; 4]),
            }
            x.extend((0..self.parts).map(|p| if p == part { 1.0 } else { 0.0 }));
        }
        x
    }

    fn batch(&self, inputs: &[&[f64]], steps: usize) -> Vec<DMatrix<f64>> {
        let d = self.input_dim();
        (0..steps)
            .map(|s| DMatrix::from_fn(d, inputs.len(), |r, c| inputs[c][s * d + r]))
            .collect()
    }

    fn target(&self, seq: &TokenSequence, part: usize) -> Option<[f64; 3]> {
        let tg = seq.target.as_ref()?;
        let rigid = seq.token(seq.half_width, part).rigid;
        Some(self.normalization.offset(&(tg[part] - rigid)))
    }

    /// Trains from scratch on `windows`; deterministic given the seed and
    /// the window order.
    pub fn train(&mut self, windows: &[TokenSequence]) -> Result<TrainReport, DeformError> {
        let windows: Vec<&TokenSequence> = windows.iter().filter(|w| w.target.is_some()).collect();
        if windows.is_empty() {
            return Err(DeformError::NoTrainingData);
        }
        for w in &windows {
            self.check(w)?;
        }
        let owned: Vec<TokenSequence> = windows.iter().map(|w| (*w).clone()).collect();
        self.normalization = Normalization::fit(&owned);

        let examples: Vec<(Vec<f64>, [f64; 3])> = windows
            .iter()
            .flat_map(|w| (0..self.parts).map(move |i| (*w, i)))
            .map(|(w, i)| (self.part_inputs(w, i), self.target(w, i).unwrap()))
            .collect();
        let steps = 2 * self.config.half_width + 1;

        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = Lstm::init(self.input_dim(), cfg.hidden, 3, steps, &mut rng);
        let mut adam = Adam::new(&net, cfg.learning_rate);
        let std = self.normalization.offset_std;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut loss_curve = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            let progress = epoch as f64 / cfg.epochs as f64;
            adam.lr = cfg.learning_rate
                * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            order.shuffle(&mut rng);
            let mut sse = 0.0;
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let inputs: Vec<&[f64]> = batch.iter().map(|&e| examples[e].0.as_slice()).collect();
                let trace = net.forward_batch(&self.batch(&inputs, steps));
                let scale = 2.0 / (3.0 * batch.len() as f64);
                let d_out = DMatrix::from_fn(3, batch.len(), |c, b| {
                    let r = trace.output[(c, b)] - examples[batch[b]].1[c];
                    sse += (r * std[c]).powi(2);
                    scale * r
                });
                let mut grad = Lstm::zeros(net.input, net.hidden, net.output, net.steps);
                net.backward(&trace, &d_out, &mut grad);
                adam.update(&mut net, &grad, cfg.weight_decay);
            }
            let loss = sse / (3.0 * examples.len() as f64);
            if !loss.is_finite() || !net.is_finite() {
                return Err(DeformError::DivergedLoss { epoch });
            }
            log::debug!("deform epoch {epoch}: loss {loss:.6} mm^2");
            loss_curve.push(loss);
        }
        self.network = Some(net);
        let final_loss = self.evaluate(&owned)?;
        self.final_loss = Some(final_loss);
        Ok(TrainReport {
            loss_curve,
            final_loss,
        })
    }

    /// Mean squared masked-coordinate error on windows with targets, mm².
    pub fn evaluate(&self, windows: &[TokenSequence]) -> Result<f64, DeformError> {
        let (mut sse, mut n) = (0.0, 0usize);
        for w in windows {
            let Some(target) = &w.target else { continue };
            let pred = self.predict(w)?;
            for (p, t) in pred.iter().zip(target) {
                sse += (p - t).norm_squared();
                n += 3;
            }
        }
        if n == 0 {
            return Err(DeformError::NoTrainingData);
        }
        Ok(sse / n as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), DeformError> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config_hash: crate::config_hash(&self.config),
            model: self.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| DeformError::Format(e.to_string()))?;
        fs::write(path, text).map_err(|source| DeformError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DeformError> {
        let text = fs::read_to_string(path).map_err(|source| DeformError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, DeformError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| DeformError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(DeformError::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        if let Some(net) = &file.model.network {
            let steps = 2 * file.model.config.half_width + 1;
            let expected = Lstm::zeros(file.model.input_dim(), net.hidden, 3, steps);
            let sizes = |n: &Lstm| n.buffers().map(|b| b.len());
            if (net.input, net.output, net.steps) != (expected.input, 3, steps)
                || sizes(net) != sizes(&expected)
            {
                return Err(DeformError::Format("network shape mismatch".into()));
            }
        }
        Ok(file.model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    /// Hash of the training configuration.
    #[serde(default)]
    config_hash: String,
    model: SequenceModel,
}

impl DeformPredictor for SequenceModel {
    fn half_width(&self) -> usize {
        self.config.half_width
    }

    fn predict(&self, tokens: &TokenSequence) -> Result<Vec<Vector3<f64>>, DeformError> {
        let net = self.network.as_ref().ok_or(DeformError::UntrainedModel)?;
        self.check(tokens)?;
        let inputs: Vec<Vec<f64>> = (0..self.parts)
            .map(|i| self.part_inputs(tokens, i))
            .collect();
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let out = net
            .forward_batch(&self.batch(&refs, tokens.epochs()))
            .output;
        Ok((0..self.parts)
            .map(|i| {
                let z: Vec<f64> = out.column(i).iter().copied().collect();
                tokens.token(tokens.half_width, i).rigid + self.normalization.offset_back(&z)
            })
            .collect())
    }

    fn input_scale(&self) -> Vector3<f64> {
        Vector3::from(self.normalization.rigid_std)
    }
}

/// Builds windows from every dataset and trains a fresh model.
pub fn train(
    config: TrainConfig,
    datasets: &[SimulatedDataset],
    model: &RigidMouseModel<f64>,
) -> Result<(SequenceModel, TrainReport), DeformError> {
    let windows: Vec<TokenSequence> = datasets
        .iter()
        .flat_map(|d| all_windows(d, model, config.half_width))
        .collect();
    let mut seq = SequenceModel::new(config, model.len());
    let report = seq.train(&windows)?;
    Ok((seq, report))
}

/// Mean squared error of predicting the deformable positions by the rigid
/// ones, mm².
pub fn rigid_baseline_mse(windows: &[TokenSequence]) -> f64 {
    let (mut sse, mut n) = (0.0, 0usize);
    for w in windows {
        if let Some(target) = &w.target {
            for (t, r) in target.iter().zip(w.mid_rigid()) {
                sse += (t - r).norm_squared();
                n += 3;
            }
        }
    }
    sse / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate, SceneConfig};

    fn scene(n: usize, deformation: bool, seed: u64) -> SimulatedDataset {
        simulate(&SceneConfig {
            n_epochs: n,
            deformation,
            seed,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn five_epoch_window_counts() {
        let ds = scene(5, true, 1);
        let seq = build_tokens(&ds, &RigidMouseModel::table(), 2, 2).unwrap();
        assert_eq!(seq.tokens.len(), 40);
        assert_eq!(seq.masked_count(), 8);
        assert!(seq
            .tokens
            .iter()
            .filter(|t| t.masked)
            .all(|t| t.deformable.is_none()));
        assert!(matches!(
            build_tokens(&ds, &RigidMouseModel::table(), 1, 2),
            Err(DeformError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_deformation_tokens_are_rigid() {
        let ds = simulate(&SceneConfig {
            n_epochs: 12,
            deformation: false,
            noise_sigma_px: 0.0,
            ..SceneConfig::default()
        })
        .unwrap();
        let seq = build_tokens(&ds, &RigidMouseModel::table(), 5, 2).unwrap();
        for t in seq.tokens.iter().filter(|t| !t.masked) {
            assert!((t.deformable.unwrap() - t.rigid).norm() < 1e-6);
        }
    }

    #[test]
    fn untrained_model_refuses_to_predict() {
        let ds = scene(5, true, 1);
        let seq = build_tokens(&ds, &RigidMouseModel::table(), 2, 2).unwrap();
        let model = SequenceModel::new(TrainConfig::default(), 8);
        assert!(matches!(
            model.predict(&seq),
            Err(DeformError::UntrainedModel)
        ));
    }

    #[test]
    fn non_finite_data_diverges() {
        let ds = scene(8, true, 1);
        let rigid = RigidMouseModel::table();
        let mut windows = all_windows(&ds, &rigid, 2);
        windows[0].target.as_mut().unwrap()[0].x = f64::NAN;
        let mut model = SequenceModel::new(quick(), 8);
        assert!(matches!(
            model.train(&windows),
            Err(DeformError::DivergedLoss { .. })
        ));
    }

    #[test]
    fn linear_toy_jacobian_is_its_weights() {
        let ds = scene(5, true, 1);
        let seq = build_tokens(&ds, &RigidMouseModel::table(), 2, 2).unwrap();
        let weights = DMatrix::from_fn(24, 24, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        let toy = LinearPredictor {
            weights: weights.clone(),
            bias: DVector::from_element(24, 0.5),
        };
        let jac = jacobian(&toy, &seq).unwrap();
        assert!((jac - weights).abs().max() < 1e-6);
    }

    #[test]
    fn model_file_round_trip() {
        let ds = scene(10, true, 4);
        let (model, _) = train(
            quick(),
            std::slice::from_ref(&ds),
            &RigidMouseModel::table(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let back = SequenceModel::load(&path).unwrap();
        let seq = build_tokens(&ds, &RigidMouseModel::table(), 4, 2).unwrap();
        assert_eq!(model.predict(&seq).unwrap(), back.predict(&seq).unwrap());
        assert!(matches!(
            SequenceModel::from_json("{\"format\":\"x\",\"version\":1}"),
            Err(DeformError::Format(_))
        ));
    }
}
