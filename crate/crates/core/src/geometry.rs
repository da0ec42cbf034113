//! Pinhole lifting of depth maps into camera-frame point clouds, and the
//! depth-convolution smearing experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fu: f64, fv: f64, cu: f64, cv: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fu,
            fv,
            cu,
            cv,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Commonly used Kinect v1 depth calibration for 7 Scenes (640x480).
    pub fn seven_scenes() -> Self {
        Self {
            fu: 585.0,
            fv: 585.0,
            cu: 320.0,
            cv: 240.0,
            width: 640,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fu.is_finite()
            && self.fv.is_finite()
            && self.fu > 0.0
            && self.fv > 0.0
            && self.cu >= 0.0
            && self.cu < self.width as f64
            && self.cv >= 0.0
            && self.cv < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Back-projects pixel `(u, v)` at depth `z`.
    pub fn lift(&self, u: f64, v: f64, z: f64) -> Point3 {
        [z * (u - self.cu) / self.fu, z * (v - self.cv) / self.fv, z]
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: Point3) -> (f64, f64) {
        (p[0] * self.fu / p[2] + self.cu, p[1] * self.fv / p[2] + self.cv)
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::seven_scenes()
    }
}

/// Metric depth per pixel (row-major) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if depth.len() != width * height || valid.len() != width * height {
            return Err(Error::invalid(format!(
                "depth map {width}x{height} needs {} values, got {} depths and {} flags",
                width * height,
                depth.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..depth.len()).find(|&i| valid[i] && !(depth[i].is_finite() && depth[i] >= 0.0)) {
            return Err(Error::invalid(format!("valid pixel {i} has depth {}", depth[i])));
        }
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    /// Marks every finite, strictly positive value valid.
    pub fn from_meters(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        let valid = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let depth = depth
            .into_iter()
            .map(|d| if d.is_finite() { d.max(0.0) } else { 0.0 })
            .collect();
        Self::new(width, height, depth, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then_some(self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Every depth multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.depth.iter().map(|d| d * s).collect(),
            self.valid.clone(),
        )
    }
}

/// Unordered set of camera-frame points in meters (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, t: Point3) -> Self {
        Self::new(
            self.points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        )
    }
}

/// 8-bit interleaved RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "rgb image {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// One point per valid pixel, in row-major pixel order:
/// `z = D(u,v)`, `x = z (u - cu) / fu`, `y = z (v - cv) / fv`.
pub fn depth_to_pointcloud(depth: &DepthMap, k: &CameraIntrinsics) -> Result<PointCloud> {
    k.validate()?;
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::invalid(format!(
            "depth map {}x{} does not match intrinsics {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    let mut points = Vec::with_capacity(depth.valid_count());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            if depth.valid[i] {
                points.push(k.lift(u as f64, v as f64, depth.depth[i]));
            }
        }
    }
    Ok(PointCloud::new(points))
}

/// Box-filters valid depths over a `kernel_size`² window. Out-of-bounds and
/// invalid neighbours are left out of the average; the mask is unchanged.
pub fn convolve_depth(depth: &DepthMap, kernel_size: usize) -> Result<DepthMap> {
    if kernel_size < 3 || kernel_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel size must be odd and >= 3, got {kernel_size}"
        )));
    }
    let r = kernel_size / 2;
    let (w, h) = (depth.width, depth.height);
    let mut out = depth.depth.clone();
    for v in 0..h {
        let (v0, v1) = (v.saturating_sub(r), (v + r).min(h - 1));
        for u in 0..w {
            let i = v * w + u;
            if !depth.valid[i] {
                continue;
            }
            let (u0, u1) = (u.saturating_sub(r), (u + r).min(w - 1));
            // Offsets from the centre value keep constant regions exact.
            let centre = depth.depth[i];
            let mut acc = 0.0;
            let mut n = 0usize;
            for vv in v0..=v1 {
                let row = vv * w;
                for uu in u0..=u1 {
                    if depth.valid[row + uu] {
                        acc += depth.depth[row + uu] - centre;
                        n += 1;
                    }
                }
            }
            out[i] = centre + acc / n as f64;
        }
    }
    DepthMap::new(w, h, out, depth.valid.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmearStats {
    pub mean_displacement: f64,
    pub max_displacement: f64,
}

/// Per-index displacement between two clouds lifted from the same pixels.
pub fn smear_metric(original: &PointCloud, convolved: &PointCloud) -> Result<SmearStats> {
    if original.len() != convolved.len() {
        return Err(Error::invalid(format!(
            "clouds differ in length: {} vs {}",
            original.len(),
            convolved.len()
        )));
    }
    if original.is_empty() {
        return Ok(SmearStats {
            mean_displacement: 0.0,
            max_displacement: 0.0,
        });
    }
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for (a, b) in original.points.iter().zip(&convolved.points) {
        let d = distance(*a, *b);
        sum += d;
        max = max.max(d);
    }
    Ok(SmearStats {
        mean_displacement: sum / original.len() as f64,
        max_displacement: max,
    })
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Standard jet ramp at `t` in [0, 1], channels in [0, 1].
pub fn jet(t: f64) -> [f64; 3] {
    let ch = |offset: f64| (1.5 - (4.0 * t - offset).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// False-colours depth with the jet ramp over the valid depth range;
/// invalid pixels are black.
pub fn jet_colormap(depth: &DepthMap) -> Result<RgbImage> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (d, ok) in depth.depth.iter().zip(&depth.valid) {
        if *ok {
            lo = lo.min(*d);
            hi = hi.max(*d);
        }
    }
    if lo >= hi {
        return Err(Error::degenerate(
            "jet colormap needs at least two distinct valid depths",
        ));
    }
    let mut data = Vec::with_capacity(depth.depth.len() * 3);
    for (d, ok) in depth.depth.iter().zip(&depth.valid) {
        if *ok {
            let c = jet((d - lo) / (hi - lo));
            data.extend(c.iter().map(|x| (x * 255.0).round() as u8));
        } else {
            data.extend_from_slice(&[0, 0, 0]);
        }
    }
    RgbImage::new(depth.width, depth.height, data)
}
