//! Minibatch training with Adam, convergence detection and exact resume.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint;
use crate::autodiff::{AdamConfig, AdamState, Graph};
use crate::data::{frame_to_pointset, load_frame_paths, preprocess_image, Frame, FramePaths};
use crate::error::{Error, Result};
use crate::geometry::{jet_colormap, CameraIntrinsics};
use crate::models::{ModelConfig, ModelInput, ModelKind, PointPlan, PoseModel, RgbInput};
use crate::pose::Pose;

/// Epochs averaged on each side of the convergence comparison.
pub const CONVERGENCE_WINDOW: usize = 10;
/// Relative improvement below which training counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Redraw crops and point samples every epoch.
    pub augment: bool,
    /// Stop early once the loss plateaus.
    pub stop_at_convergence: bool,
    #[serde(default)]
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over the planned `epochs`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last epoch.
    Cosine,
}

impl LrSchedule {
    /// Rate for an epoch counted from 0 out of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let x = epoch as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * x.min(1.0)).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            augment: false,
            stop_at_convergence: true,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let a = &self.adam;
        let ok = a.lr > 0.0
            && a.lr.is_finite()
            && a.weight_decay >= 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid optimiser settings {a:?}")));
        }
        Ok(())
    }
}

/// Mixes a base seed with up to two counters.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finaliser
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Network input for one frame. `train_mode` selects random crops; `seed`
/// fixes both the crop and the point sample.
pub fn prepare_input(
    config: &ModelConfig,
    frame: &Frame,
    k: &CameraIntrinsics,
    train_mode: bool,
    seed: u64,
) -> Result<ModelInput> {
    let points = if config.kind.uses_points() {
        let cloud = frame_to_pointset(frame, k, config.num_points, derive_seed(seed, 1, 0))?;
        Some(PointPlan::new(config, &cloud)?)
    } else {
        None
    };
    let image = match config.kind {
        ModelKind::Fusionloc => Some(RgbInput::Image(preprocess_image(
            &frame.rgb,
            train_mode,
            derive_seed(seed, 2, 0),
        )?)),
        ModelKind::DepthPosenet => Some(RgbInput::Image(preprocess_image(
            &jet_colormap(&frame.depth)?,
            train_mode,
            derive_seed(seed, 2, 0),
        )?)),
        ModelKind::PointnetPose => None,
    };
    Ok(ModelInput { points, image })
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub input: ModelInput,
    pub target: Pose,
}

#[derive(Debug, Clone)]
enum Source {
    Frames(Vec<Frame>),
    Paths(Vec<FramePaths>),
    Samples,
}

/// Training data: frames held in memory, frames read from disk on demand,
/// or fixed prepared samples.
///
/// Without augmentation sample `i` always uses a centre crop and a point
/// sample seeded by `(seed, i)`; in-memory frames are prepared once and
/// cached. With augmentation crops and point samples are redrawn per epoch.
#[derive(Debug, Clone)]
pub struct TrainSet {
    source: Source,
    k: CameraIntrinsics,
    cached: Option<Vec<Sample>>,
}

impl TrainSet {
    pub fn new(frames: Vec<Frame>, k: CameraIntrinsics) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::degenerate("training set is empty"));
        }
        Ok(Self {
            source: Source::Frames(frames),
            k,
            cached: None,
        })
    }

    /// Frames loaded from disk whenever they are needed.
    pub fn from_paths(paths: Vec<FramePaths>, k: CameraIntrinsics) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::degenerate("training set is empty"));
        }
        Ok(Self {
            source: Source::Paths(paths),
            k,
            cached: None,
        })
    }

    /// Prepared samples used as they are; augmentation has no effect.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::degenerate("training set is empty"));
        }
        Ok(Self {
            source: Source::Samples,
            k: CameraIntrinsics::default(),
            cached: Some(samples),
        })
    }

    pub fn len(&self) -> usize {
        match &self.source {
            Source::Frames(f) => f.len(),
            Source::Paths(p) => p.len(),
            Source::Samples => self.cached.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn prepare(
        &self,
        config: &ModelConfig,
        frame: &Frame,
        i: usize,
        seed: u64,
        augment: Option<u64>,
    ) -> Result<Sample> {
        let input = match augment {
            Some(a) => prepare_input(config, frame, &self.k, true, derive_seed(a, i as u64, 1))?,
            None => prepare_input(config, frame, &self.k, false, derive_seed(seed, i as u64, 0))?,
        };
        Ok(Sample {
            input,
            target: frame.pose,
        })
    }

    fn cache(&mut self, config: &ModelConfig, seed: u64) -> Result<()> {
        if self.cached.is_some() {
            return Ok(());
        }
        if let Source::Frames(frames) = &self.source {
            let samples = frames
                .iter()
                .enumerate()
                .map(|(i, f)| self.prepare(config, f, i, seed, None))
                .collect::<Result<_>>()?;
            self.cached = Some(samples);
        }
        Ok(())
    }

    fn sample(&self, config: &ModelConfig, i: usize, seed: u64, augment: Option<u64>) -> Result<Sample> {
        match (&self.source, &self.cached, augment) {
            (Source::Samples, Some(c), _) | (Source::Frames(_), Some(c), None) => Ok(c[i].clone()),
            (Source::Frames(f), _, _) => self.prepare(config, &f[i], i, seed, augment),
            (Source::Paths(p), _, _) => self.prepare(config, &load_frame_paths(&p[i], &self.k)?, i, seed, augment),
            (Source::Samples, None, _) => unreachable!("sample sets are always cached"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    pub beta: f64,
    pub gamma: f64,
    pub steps: u64,
}

/// True when the mean of the last window of epoch losses improves on the
/// window before it by less than `CONVERGENCE_TOL` relative.
pub fn has_converged(losses: &[f64]) -> bool {
    let w = CONVERGENCE_WINDOW;
    if losses.len() < 2 * w {
        return false;
    }
    let n = losses.len();
    let last: f64 = losses[n - w..].iter().sum::<f64>() / w as f64;
    let prev: f64 = losses[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
    prev - last < CONVERGENCE_TOL * prev.abs()
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: PoseModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(model: PoseModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam, &model.params);
        Ok(Self {
            model,
            adam,
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// One optimiser step on `batch`; returns the mean loss.
    pub fn step(&mut self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for s in batch {
            let grads = {
                let mut g = Graph::new(&self.model.params);
                let (loss, _) = self.model.loss(&mut g, &s.input, &s.target)?;
                total += g.value(loss).item()?;
                let scaled = g.scalar_mul(loss, scale)?;
                g.backward(scaled)?
            };
            self.model.params.accumulate(&grads);
        }
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("loss is {mean}")));
        }
        self.adam.step(&mut self.model.params);
        Ok(mean)
    }

    /// Runs one shuffled pass over `data`.
    pub fn train_epoch(&mut self, data: &mut TrainSet) -> Result<EpochStats> {
        let epoch = self.epoch;
        let cfg = self.config;
        if !cfg.augment {
            data.cache(self.model.config(), cfg.seed)?;
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 7));
        order.shuffle(&mut rng);
        self.adam.config.lr = cfg.schedule.rate(cfg.adam.lr, epoch, cfg.epochs);
        let aug_seed = cfg.augment.then(|| derive_seed(cfg.seed, epoch as u64, 11));
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&i| data.sample(self.model.config(), i, cfg.seed, aug_seed))
                .collect::<Result<Vec<_>>>()?;
            let loss = self.step(&batch).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {} batch {b}: {m}", epoch + 1)),
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
            steps += 1;
        }
        self.epoch += 1;
        let (beta, gamma) = self.model.loss_weights.values(&self.model.params);
        let stats = EpochStats {
            epoch: self.epoch,
            loss: loss_sum / data.len() as f64,
            beta,
            gamma,
            steps,
        };
        self.history.push(stats);
        Ok(stats)
    }

    pub fn converged(&self) -> bool {
        let losses: Vec<f64> = self.history.iter().map(|h| h.loss).collect();
        has_converged(&losses)
    }

    /// Trains until `config.epochs` epochs are complete or, when enabled,
    /// until convergence. `on_epoch` sees every epoch as it finishes.
    pub fn fit<F>(&mut self, data: &mut TrainSet, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer, &EpochStats) -> Result<()>,
    {
        while self.epoch < self.config.epochs {
            let stats = self.train_epoch(data)?;
            on_epoch(self, &stats)?;
            if self.config.stop_at_convergence && self.converged() {
                break;
            }
        }
        Ok(())
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "model_config": self.model.config().to_toml(),
            "train_config": self.config,
            "epoch": self.epoch,
            "history": self.history,
        })
    }

    /// Checkpoint with optimiser state and enough metadata to resume.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.model.params, Some(&self.adam), &self.meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        let bad = |what: &str| Error::ingestion(path, format!("checkpoint metadata lacks {what}"));
        let toml = ck.meta["model_config"].as_str().ok_or_else(|| bad("model_config"))?;
        let model_config = ModelConfig::from_toml(toml)?;
        let config: TrainConfig =
            serde_json::from_value(ck.meta["train_config"].clone()).map_err(|_| bad("train_config"))?;
        let epoch = ck.meta["epoch"].as_u64().ok_or_else(|| bad("epoch"))? as usize;
        let history: Vec<EpochStats> =
            serde_json::from_value(ck.meta["history"].clone()).map_err(|_| bad("history"))?;
        let model = PoseModel::from_checkpoint(model_config, &ck)?;
        let adam = ck.adam.ok_or_else(|| bad("optimiser state"))?;
        Ok(Self {
            model,
            adam,
            config,
            epoch,
            history,
        })
    }
}

/// Model config stored in a checkpoint's metadata, if any.
pub fn checkpoint_model_config(ck: &checkpoint::Checkpoint) -> Option<Result<ModelConfig>> {
    ck.meta["model_config"].as_str().map(ModelConfig::from_toml)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_rule() {
        let falling: Vec<f64> = (0..20).map(|i| 100.0 - i as f64).collect();
        assert!(!has_converged(&falling));
        let flat = vec![5.0; 20];
        assert!(has_converged(&flat));
        assert!(!has_converged(&[1.0; 19]));
        // Negative losses: improvement still measured against |prev|.
        let neg: Vec<f64> = (0..20).map(|i| -1.0 - 0.1 * i as f64).collect();
        assert!(!has_converged(&neg));
    }

    #[test]
    fn cosine_schedule_ends_at_zero() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.rate(1e-3, 0, 10), 1e-3);
        assert!((s.rate(1e-3, 5, 10) - 5e-4).abs() < 1e-18);
        assert!(s.rate(1e-3, 10, 10).abs() < 1e-18);
        assert_eq!(LrSchedule::Constant.rate(2.0, 7, 10), 2.0);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
        assert_ne!(derive_seed(1, 0, 1), derive_seed(1, 1, 0));
        assert_eq!(derive_seed(4, 5, 6), derive_seed(4, 5, 6));
    }

    #[test]
    fn batch_size_zero_rejected() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
