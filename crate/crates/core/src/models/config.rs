use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which network to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// RGB stream with attention fused with the point stream.
    Fusionloc,
    /// Point stream plus a linear pose head.
    PointnetPose,
    /// Jet-coloured depth through the image encoder plus a linear pose head.
    DepthPosenet,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fusionloc => "fusionloc",
            ModelKind::PointnetPose => "pointnet-pose",
            ModelKind::DepthPosenet => "depth-posenet",
        }
    }

    pub fn uses_points(self) -> bool {
        matches!(self, ModelKind::Fusionloc | ModelKind::PointnetPose)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusionloc" => Ok(ModelKind::Fusionloc),
            "pointnet-pose" => Ok(ModelKind::PointnetPose),
            "depth-posenet" => Ok(ModelKind::DepthPosenet),
            other => Err(Error::invalid(format!(
                "unknown model {other:?} (expected fusionloc, pointnet-pose or depth-posenet)"
            ))),
        }
    }
}

/// One set-abstraction level: sample, group, shared perceptron, max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaLayerConfig {
    pub centroids: usize,
    pub radius: f64,
    pub k: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStreamConfig {
    pub sa_layers: Vec<SaLayerConfig>,
    /// Shared perceptron applied to every surviving point before pooling.
    pub global_widths: Vec<usize>,
    /// Hidden widths of the post-pooling perceptron; its output is `feature_dim`.
    pub head_widths: Vec<usize>,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbStreamConfig {
    /// Output channels of the stride-2 3x3 convolution blocks.
    pub encoder_widths: Vec<usize>,
    pub image_size: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Hidden widths between the concatenated features and the two heads.
    pub head_widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossInit {
    pub beta: f64,
    pub gamma: f64,
}

/// Complete description of a model; serialised as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Seeds weight initialisation and centroid sampling.
    pub seed: u64,
    pub num_points: usize,
    pub point: PointStreamConfig,
    pub rgb: RgbStreamConfig,
    pub fusion: FusionConfig,
    pub loss: LossInit,
}

pub const FEATURE_DIM: usize = 1024;
pub const IMAGE_SIZE: usize = 224;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Fusionloc,
            seed: 0,
            num_points: 1024,
            point: PointStreamConfig {
                sa_layers: vec![
                    SaLayerConfig {
                        centroids: 256,
                        radius: 0.2,
                        k: 32,
                        widths: vec![64, 64, 128],
                    },
                    SaLayerConfig {
                        centroids: 64,
                        radius: 0.4,
                        k: 64,
                        widths: vec![128, 128, 256],
                    },
                ],
                global_widths: vec![256, 512, 1024],
                head_widths: vec![512, 256],
                feature_dim: FEATURE_DIM,
            },
            rgb: RgbStreamConfig {
                encoder_widths: vec![32, 64, 128, 256, 256],
                image_size: IMAGE_SIZE,
                feature_dim: FEATURE_DIM,
            },
            fusion: FusionConfig {
                head_widths: vec![1024],
            },
            loss: LossInit { beta: 0.0, gamma: -3.0 },
        }
    }
}

impl ModelConfig {
    /// Narrow widths and fewer centroids for CPU-scale experiments. Feature
    /// sizes and input contracts are the same as the default.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.point.sa_layers = vec![
            SaLayerConfig {
                centroids: 64,
                radius: 0.4,
                k: 16,
                widths: vec![16, 16, 32],
            },
            SaLayerConfig {
                centroids: 16,
                radius: 1.0,
                k: 16,
                widths: vec![32, 32, 64],
            },
        ];
        c.point.global_widths = vec![64, 128, 1024];
        c.point.head_widths = vec![128, 64];
        c.rgb.encoder_widths = vec![8, 8, 16, 16, 16];
        c
    }

    pub fn with_kind(mut self, kind: ModelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("model config: {m}")));
        let p = &self.point;
        if self.num_points == 0 {
            return bad("num_points must be positive".into());
        }
        if p.feature_dim != FEATURE_DIM || self.rgb.feature_dim != FEATURE_DIM {
            return bad(format!("stream feature dims must be {FEATURE_DIM}"));
        }
        if p.global_widths.last() != Some(&FEATURE_DIM) {
            return bad(format!("final global width must be {FEATURE_DIM}"));
        }
        let mut prev = self.num_points;
        for (i, l) in p.sa_layers.iter().enumerate() {
            if l.centroids == 0 || l.centroids >= prev {
                return bad(format!(
                    "SA layer {i}: centroid count {} must be in 1..{prev}",
                    l.centroids
                ));
            }
            if l.radius.is_nan() || l.radius <= 0.0 || l.k == 0 || l.widths.is_empty() {
                return bad(format!("SA layer {i}: needs radius > 0, k >= 1, widths"));
            }
            prev = l.centroids;
        }
        if self.rgb.image_size != IMAGE_SIZE {
            return bad(format!("image size must be {IMAGE_SIZE}"));
        }
        if self.rgb.encoder_widths.is_empty() {
            return bad("encoder needs at least one block".into());
        }
        let all_widths = p
            .sa_layers
            .iter()
            .flat_map(|l| l.widths.iter())
            .chain(&p.global_widths)
            .chain(&p.head_widths)
            .chain(&self.rgb.encoder_widths)
            .chain(&self.fusion.head_widths);
        if all_widths.into_iter().any(|w| *w == 0) {
            return bad("layer widths must be positive".into());
        }
        if !self.loss.beta.is_finite() || !self.loss.gamma.is_finite() {
            return bad("loss weight initial values must be finite".into());
        }
        Ok(())
    }

    /// Width of the flattened encoder output.
    pub fn encoder_flat_dim(&self) -> usize {
        let mut side = self.rgb.image_size;
        for _ in &self.rgb.encoder_widths {
            side = (side + 2 - 3) / 2 + 1;
        }
        side * side * self.rgb.encoder_widths.last().copied().unwrap_or(3)
    }

    /// Concatenated feature width entering the fusion head.
    pub fn fused_dim(&self) -> usize {
        self.point.feature_dim + self.rgb.feature_dim
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config is always serialisable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidInput(m) => Error::ingestion(path, m),
            other => other,
        })
    }
}
