//! Image stream: a compact strided convolutional encoder, a fully connected
//! projection to the feature width, and scalar-position self-attention.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{ConvBlock, Linear};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// What enters the image stream.
#[derive(Debug, Clone, PartialEq)]
pub enum RgbInput {
    /// Normalised `[3, 224, 224]` image.
    Image(Tensor),
    /// Precomputed pre-attention feature of length `feature_dim`; bypasses
    /// the encoder and projection.
    Features(Tensor),
}

/// Self-attention over the entries of a feature vector: entry `i` attends to
/// entry `j` with score `(W_theta x)_i (W_phi x)_j`, rows are softmax
/// normalised and mix `W_g x`. The result is added back to `x`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub w_theta: ParamId,
    pub w_phi: ParamId,
    pub w_g: ParamId,
    dim: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_theta: store.add_kaiming(format!("{name}.w_theta"), &[dim, dim], dim, rng)?,
            w_phi: store.add_kaiming(format!("{name}.w_phi"), &[dim, dim], dim, rng)?,
            w_g: store.add_kaiming(format!("{name}.w_g"), &[dim, dim], dim, rng)?,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.value(x).len() != self.dim {
            return Err(Error::invalid(format!(
                "attention expects length {}, got {:?}",
                self.dim,
                g.value(x).shape()
            )));
        }
        let c = self.dim;
        let col = g.reshape(x, &[c, 1])?;
        let wt = g.param(self.w_theta);
        let wp = g.param(self.w_phi);
        let wg = g.param(self.w_g);
        let theta = g.matmul(wt, col)?;
        let phi = g.matmul(wp, col)?;
        let phi = g.reshape(phi, &[1, c])?;
        let scores = g.matmul(theta, phi)?;
        let attn = g.softmax(scores, 1)?;
        let value = g.matmul(wg, col)?;
        let y = g.matmul(attn, value)?;
        let y = g.reshape(y, &[c])?;
        let x = g.reshape(x, &[c])?;
        g.add(y, x)
    }
}

#[derive(Debug, Clone)]
pub struct RgbStream {
    convs: Vec<ConvBlock>,
    fc: Linear,
    pub attention: Attention,
    feature_dim: usize,
    image_size: usize,
}

impl RgbStream {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore, name: &str, rng: &mut R) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &w) in config.rgb.encoder_widths.iter().enumerate() {
            convs.push(ConvBlock::new(store, &format!("{name}.conv{i}"), cin, w, rng)?);
            cin = w;
        }
        let fc = Linear::new(
            store,
            &format!("{name}.fc"),
            config.encoder_flat_dim(),
            config.rgb.feature_dim,
            rng,
        )?;
        let attention = Attention::new(store, &format!("{name}.attn"), config.rgb.feature_dim, rng)?;
        Ok(Self {
            convs,
            fc,
            attention,
            feature_dim: config.rgb.feature_dim,
            image_size: config.rgb.image_size,
        })
    }

    /// Encoder and projection output, before attention.
    pub fn pre_attention(&self, g: &mut Graph<'_>, input: &RgbInput) -> Result<Var> {
        match input {
            RgbInput::Image(img) => {
                let s = self.image_size;
                if img.shape() != [3, s, s] {
                    return Err(Error::invalid(format!(
                        "image stream expects [3, {s}, {s}], got {:?}",
                        img.shape()
                    )));
                }
                let mut x = g.input(img.clone())?;
                for conv in &self.convs {
                    x = conv.forward(g, x)?;
                }
                let flat = g.value(x).len();
                let x = g.reshape(x, &[1, flat])?;
                let y = self.fc.forward(g, x)?;
                g.reshape(y, &[self.feature_dim])
            }
            RgbInput::Features(f) => {
                if f.len() != self.feature_dim {
                    return Err(Error::invalid(format!(
                        "precomputed feature must have {} values, got {}",
                        self.feature_dim,
                        f.len()
                    )));
                }
                g.input(f.clone().reshaped(vec![self.feature_dim])?)
            }
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, input: &RgbInput) -> Result<Var> {
        let x = self.pre_attention(g, input)?;
        self.attention.forward(g, x)
    }
}
