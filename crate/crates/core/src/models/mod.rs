//! The three pose regressors: FusionLoc (image + point streams), PointNet-Pose
//! (point stream only) and the depth-only PoseNet stand-in (jet-coloured
//! depth through the image stream).
//!
//! Every network predicts a position and a log-quaternion orientation.

mod config;
mod layers;
mod point_stream;
mod rgb_stream;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    FusionConfig, LossInit, ModelConfig, ModelKind, PointStreamConfig, RgbStreamConfig, SaLayerConfig, FEATURE_DIM,
    IMAGE_SIZE,
};
pub use layers::{ConvBlock, Linear, Mlp};
pub use point_stream::{PointPlan, PointStream, SaLevelPlan};
pub use rgb_stream::{Attention, RgbInput, RgbStream};

use crate::autodiff::{Checkpoint, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::pose::{pose_loss, quat_exp, LossWeights, Pose};

/// Per-sample network input. Which fields are needed depends on the kind:
/// FusionLoc uses both, PointNet-Pose only `points`, depth-PoseNet only
/// `image` (holding the jet-coloured depth).
#[derive(Debug, Clone, Default)]
pub struct ModelInput {
    pub points: Option<PointPlan>,
    pub image: Option<RgbInput>,
}

#[derive(Debug, Clone, Copy)]
pub struct PoseOutput {
    pub t: Var,
    pub logq: Var,
}

/// Two width-3 linear heads on a shared hidden vector.
#[derive(Debug, Clone)]
pub struct PoseHeads {
    pub t: Linear,
    pub q: Linear,
}

impl PoseHeads {
    fn new(store: &mut ParamStore, inputs: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            t: Linear::new(store, "head.t", inputs, 3, rng)?,
            q: Linear::new(store, "head.q", inputs, 3, rng)?,
        })
    }

    fn forward(&self, g: &mut Graph<'_>, hidden: Var) -> Result<PoseOutput> {
        let width = g.value(hidden).len();
        let row = g.reshape(hidden, &[1, width])?;
        let t = self.t.forward(g, row)?;
        let q = self.q.forward(g, row)?;
        Ok(PoseOutput {
            t: g.reshape(t, &[3])?,
            logq: g.reshape(q, &[3])?,
        })
    }
}

#[derive(Debug, Clone)]
enum Network {
    Fusion {
        point: PointStream,
        rgb: RgbStream,
        head: Mlp,
        out: PoseHeads,
    },
    PointNet {
        point: PointStream,
        out: PoseHeads,
    },
    Depth {
        rgb: RgbStream,
        out: PoseHeads,
    },
}

/// A network together with its parameters and loss weights.
#[derive(Debug, Clone)]
pub struct PoseModel {
    config: ModelConfig,
    pub params: ParamStore,
    net: Network,
    pub loss_weights: LossWeights,
}

impl PoseModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let net = match config.kind {
            ModelKind::Fusionloc => {
                let point = PointStream::new(&config, &mut params, &mut rng)?;
                let rgb = RgbStream::new(&config, &mut params, "rgb", &mut rng)?;
                let head = Mlp::new(
                    &mut params,
                    "fusion",
                    config.fused_dim(),
                    &config.fusion.head_widths,
                    true,
                    &mut rng,
                )?;
                let hidden = config.fusion.head_widths.last().copied().unwrap_or(config.fused_dim());
                let out = PoseHeads::new(&mut params, hidden, &mut rng)?;
                Network::Fusion { point, rgb, head, out }
            }
            ModelKind::PointnetPose => {
                let point = PointStream::new(&config, &mut params, &mut rng)?;
                let out = PoseHeads::new(&mut params, config.point.feature_dim, &mut rng)?;
                Network::PointNet { point, out }
            }
            ModelKind::DepthPosenet => {
                let rgb = RgbStream::new(&config, &mut params, "depth", &mut rng)?;
                let out = PoseHeads::new(&mut params, config.rgb.feature_dim, &mut rng)?;
                Network::Depth { rgb, out }
            }
        };
        let loss_weights = LossWeights::register(&mut params, config.loss.beta, config.loss.gamma)?;
        Ok(Self {
            config,
            params,
            net,
            loss_weights,
        })
    }

    /// Rebuilds the model described by `config` and loads checkpointed
    /// values into it; names and shapes must match exactly.
    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config)?;
        model.params.load_values_from(&ck.params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Number of trainable scalars, loss weights included.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn point_stream(&self) -> Option<&PointStream> {
        match &self.net {
            Network::Fusion { point, .. } | Network::PointNet { point, .. } => Some(point),
            Network::Depth { .. } => None,
        }
    }

    pub fn rgb_stream(&self) -> Option<&RgbStream> {
        match &self.net {
            Network::Fusion { rgb, .. } | Network::Depth { rgb, .. } => Some(rgb),
            Network::PointNet { .. } => None,
        }
    }

    /// Fusion head on precomputed stream features (FusionLoc only).
    pub fn fusion_head(&self, g: &mut Graph<'_>, f_rgb: Var, f_pc: Var) -> Result<PoseOutput> {
        let Network::Fusion { head, out, .. } = &self.net else {
            return Err(Error::invalid("fusion head exists only on FusionLoc"));
        };
        let fused = g.concat(&[f_rgb, f_pc], 0)?;
        let width = g.value(fused).len();
        let row = g.reshape(fused, &[1, width])?;
        let hidden = head.forward(g, row)?;
        out.forward(g, hidden)
    }

    pub fn forward(&self, g: &mut Graph<'_>, input: &ModelInput) -> Result<PoseOutput> {
        let points = || {
            input
                .points
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{} needs a point set", self.kind().as_str())))
        };
        let image = || {
            input
                .image
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{} needs an image input", self.kind().as_str())))
        };
        match &self.net {
            Network::Fusion { point, rgb, .. } => {
                let f_rgb = rgb.forward(g, image()?)?;
                let f_pc = point.forward(g, points()?)?;
                self.fusion_head(g, f_rgb, f_pc)
            }
            Network::PointNet { point, out } => {
                let f = point.forward(g, points()?)?;
                out.forward(g, f)
            }
            Network::Depth { rgb, out } => {
                let f = rgb.forward(g, image()?)?;
                out.forward(g, f)
            }
        }
    }

    /// Forward pass plus the pose loss against `target`.
    pub fn loss(&self, g: &mut Graph<'_>, input: &ModelInput, target: &Pose) -> Result<(Var, PoseOutput)> {
        let out = self.forward(g, input)?;
        let loss = pose_loss(g, out.t, out.logq, target.t, target.q.log(), &self.loss_weights)?;
        Ok((loss, out))
    }

    /// Decoded pose prediction.
    pub fn predict(&self, input: &ModelInput) -> Result<Pose> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, input)?;
        decode(&g, out)
    }
}

/// Turns network outputs into a pose via the quaternion exponential.
pub fn decode(g: &Graph<'_>, out: PoseOutput) -> Result<Pose> {
    let t = g.value(out.t).data();
    let w = g.value(out.logq).data();
    Pose::new([t[0], t[1], t[2]], quat_exp([w[0], w[1], w[2]]))
}
