//! Point stream: set abstraction levels, then a shared perceptron over the
//! surviving points, global max pooling and a post-pooling perceptron.
//!
//! There is no input or feature alignment transform: the network sees raw
//! camera-frame coordinates, so rigid motions of the cloud change its output.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::Mlp;
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::pointcloud::{ball_query_group, farthest_point_sample};

/// Sampling and grouping for one set-abstraction level. None of this depends
/// on learned weights, so it is computed once per input cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SaLevelPlan {
    /// Centroid coordinates, in sampling order.
    pub centroids: Vec<Point3>,
    /// Neighbour indices into the previous level's points, `G * K` entries.
    pub group_idx: Vec<usize>,
    /// Neighbour coordinates relative to their centroid, `[G * K, 3]`.
    pub rel: Tensor,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPlan {
    pub levels: Vec<SaLevelPlan>,
    /// Points entering the global perceptron (last centroids, or the input
    /// cloud when there are no SA levels).
    pub top: Vec<Point3>,
}

impl PointPlan {
    pub fn new(config: &ModelConfig, cloud: &PointCloud) -> Result<Self> {
        if cloud.len() != config.num_points {
            return Err(Error::invalid(format!(
                "point stream expects {} points, got {}",
                config.num_points,
                cloud.len()
            )));
        }
        if cloud.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point cloud has non-finite coordinates"));
        }
        let mut pts = cloud.clone();
        let mut levels = Vec::with_capacity(config.point.sa_layers.len());
        for (l, layer) in config.point.sa_layers.iter().enumerate() {
            let fps = farthest_point_sample(&pts, layer.centroids, config.seed.wrapping_add(l as u64))?;
            let grouped = ball_query_group(&pts, &[], 0, &fps, layer.radius, layer.k)?;
            let rel = Tensor::new(vec![fps.len() * layer.k, 3], grouped.rows)?;
            levels.push(SaLevelPlan {
                centroids: grouped.centroids.clone(),
                group_idx: grouped.indices,
                rel,
                k: layer.k,
            });
            pts = PointCloud::new(grouped.centroids);
        }
        Ok(Self {
            levels,
            top: pts.points,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PointStream {
    sa: Vec<Mlp>,
    global: Mlp,
    head: Mlp,
}

impl PointStream {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let p = &config.point;
        let mut channels = 0;
        let mut sa = Vec::with_capacity(p.sa_layers.len());
        for (i, layer) in p.sa_layers.iter().enumerate() {
            sa.push(Mlp::new(
                store,
                &format!("point.sa{i}"),
                3 + channels,
                &layer.widths,
                true,
                rng,
            )?);
            channels = *layer.widths.last().expect("validated non-empty");
        }
        let global = Mlp::new(store, "point.global", 3 + channels, &p.global_widths, true, rng)?;
        let mut head_widths = p.head_widths.clone();
        head_widths.push(p.feature_dim);
        let head = Mlp::new(
            store,
            "point.head",
            *p.global_widths.last().expect("validated non-empty"),
            &head_widths,
            false,
            rng,
        )?;
        Ok(Self { sa, global, head })
    }

    /// Feature vector of length `feature_dim` for a planned cloud.
    pub fn forward(&self, g: &mut Graph<'_>, plan: &PointPlan) -> Result<Var> {
        if plan.levels.len() != self.sa.len() {
            return Err(Error::invalid("point plan does not match the network's SA levels"));
        }
        let mut feats: Option<Var> = None;
        for (level, mlp) in plan.levels.iter().zip(&self.sa) {
            let rel = g.input(level.rel.clone())?;
            let x = match feats {
                None => rel,
                Some(f) => {
                    let gathered = g.gather_rows(f, &level.group_idx)?;
                    g.concat(&[rel, gathered], 1)?
                }
            };
            let y = mlp.forward(g, x)?;
            let width = g.value(y).shape()[1];
            let groups = level.centroids.len();
            let y = g.reshape(y, &[groups, level.k, width])?;
            feats = Some(g.max_over_set(y, 1)?);
        }
        let coords = Tensor::new(vec![plan.top.len(), 3], plan.top.iter().flatten().copied().collect())?;
        let coords = g.input(coords)?;
        let x = match feats {
            None => coords,
            Some(f) => g.concat(&[coords, f], 1)?,
        };
        let h = self.global.forward(g, x)?;
        let pooled = g.max_over_set(h, 0)?;
        let width = g.value(pooled).len();
        let row = g.reshape(pooled, &[1, width])?;
        let out = self.head.forward(g, row)?;
        let width = g.value(out).len();
        g.reshape(out, &[width])
    }
}
