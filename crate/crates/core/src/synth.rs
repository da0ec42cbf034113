//! Procedural indoor scenes with exact ground truth.
//!
//! A room (floor, ceiling, four walls; y up, floor at y = 0) holds 2-4
//! axis-aligned boxes standing on the floor. A camera moves on a seeded
//! smooth elliptical trajectory looking outward, and every pixel's depth is
//! found by ray casting, so lifted depth lands on the geometry up to rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Point3, RgbImage};
use crate::pose::{rotmat_to_quat, Pose, Vec3};

pub const SYNTH_SCENE_NAME: &str = "synthetic";

const ROOM_MIN: Vec3 = [-3.0, 0.0, -2.5];
const ROOM_MAX: Vec3 = [3.0, 2.8, 2.5];
const SWEEP: f64 = 0.8 * std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals z-depth for camera rays with unit z component.
    pub t: f64,
    pub surface: usize,
    pub point: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub seed: u64,
    boxes: Vec<Aabb>,
    colors: Vec<[f64; 3]>,
    center: [f64; 2],
    radii: [f64; 2],
    phase: f64,
    height: f64,
    wobble: f64,
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Entry parameter of a ray into a box, if it enters in front of the origin.
fn ray_box(origin: Vec3, dir: Vec3, b: &Aabb) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let t1 = (b.min[i] - origin[i]) / dir[i];
        let t2 = (b.max[i] - origin[i]) / dir[i];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    (t_near <= t_far && t_near > 0.0).then_some(t_near)
}

/// Distance from `p` to the surface of an axis-aligned box (inside or out).
fn box_surface_distance(p: Point3, b: &Aabb) -> f64 {
    let inside = (0..3).all(|i| p[i] >= b.min[i] && p[i] <= b.max[i]);
    if inside {
        (0..3)
            .map(|i| (p[i] - b.min[i]).min(b.max[i] - p[i]))
            .fold(f64::INFINITY, f64::min)
    } else {
        let d: Vec<f64> = (0..3)
            .map(|i| (b.min[i] - p[i]).max(0.0).max(p[i] - b.max[i]))
            .collect();
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

impl SynthScene {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_boxes = rng.random_range(2..=4);
        let offset = rng.random_range(0.0..std::f64::consts::TAU);
        let step = std::f64::consts::TAU / n_boxes as f64;
        let boxes = (0..n_boxes)
            .map(|i| {
                let theta = offset + i as f64 * step + rng.random_range(-0.2..0.2);
                let (cx, cz) = (2.3 * theta.cos(), 1.85 * theta.sin());
                let hx = rng.random_range(0.2..0.4);
                let hz = rng.random_range(0.2..0.4);
                let h = rng.random_range(0.4..1.5);
                Aabb {
                    min: [cx - hx, 0.0, cz - hz],
                    max: [cx + hx, h, cz + hz],
                }
            })
            .collect();
        let colors = (0..6 + n_boxes)
            .map(|_| {
                [
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                ]
            })
            .collect();
        Self {
            seed,
            boxes,
            colors,
            center: [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)],
            radii: [rng.random_range(1.0..1.2), rng.random_range(0.7..0.9)],
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            height: rng.random_range(1.3..1.5),
            wobble: rng.random_range(0.2..0.4),
        }
    }

    pub fn box_count(&self) -> usize {
        self.boxes.len()
    }

    /// Camera-to-world pose at trajectory parameter `s` in `[0, 1]`.
    pub fn pose_at(&self, s: f64) -> Pose {
        let tau = std::f64::consts::TAU;
        let a = self.phase + SWEEP * s;
        let position = [
            self.center[0] + self.radii[0] * a.cos(),
            self.height + 0.1 * (tau * s).sin(),
            self.center[1] + self.radii[1] * a.sin(),
        ];
        let yaw = a + self.wobble * (1.3 * tau * s).sin();
        let pitch = -0.2 + 0.1 * (tau * s).sin();
        let forward = [yaw.cos() * pitch.cos(), pitch.sin(), yaw.sin() * pitch.cos()];
        let z_c = normalize(forward);
        let x_c = normalize(cross(z_c, [0.0, 1.0, 0.0]));
        let y_c = cross(z_c, x_c);
        let r = [
            [x_c[0], y_c[0], z_c[0]],
            [x_c[1], y_c[1], z_c[1]],
            [x_c[2], y_c[2], z_c[2]],
        ];
        let q = rotmat_to_quat(&r).expect("look-at basis is a rotation");
        Pose::new(position, q).expect("finite position")
    }

    /// Nearest surface hit along `origin + t dir` with `t > 0`.
    pub fn cast(&self, origin: Vec3, dir: Vec3) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..3 {
            let (bound, surface) = if dir[i] > 0.0 {
                (ROOM_MAX[i], 2 * i + 1)
            } else if dir[i] < 0.0 {
                (ROOM_MIN[i], 2 * i)
            } else {
                continue;
            };
            let t = (bound - origin[i]) / dir[i];
            if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, surface));
            }
        }
        for (j, b) in self.boxes.iter().enumerate() {
            if let Some(t) = ray_box(origin, dir, b) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, 6 + j));
                }
            }
        }
        best.map(|(t, surface)| Hit {
            t,
            surface,
            point: [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]],
        })
    }

    /// Camera ray through (possibly fractional) pixel `(u, v)`.
    pub fn cast_pixel(&self, pose: &Pose, k: &CameraIntrinsics, u: f64, v: f64) -> Option<Hit> {
        let dir_cam = [(u - k.cu) / k.fu, (v - k.cv) / k.fv, 1.0];
        self.cast(pose.t, pose.q.rotate(dir_cam))
    }

    /// Distance from a world point to the nearest room or box surface.
    pub fn distance_to_surfaces(&self, p: Point3) -> f64 {
        let room = (0..3)
            .map(|i| (p[i] - ROOM_MIN[i]).abs().min((ROOM_MAX[i] - p[i]).abs()))
            .fold(f64::INFINITY, f64::min);
        self.boxes
            .iter()
            .map(|b| box_surface_distance(p, b))
            .fold(room, f64::min)
    }

    fn shade(&self, hit: &Hit) -> [u8; 3] {
        let p = hit.point;
        let pattern = 0.5 + 0.5 * (3.0 * (p[0] + p[2]) + 2.0 * p[1]).sin();
        let falloff = 1.0 / (1.0 + 0.15 * hit.t);
        let base = self.colors[hit.surface];
        let mut out = [0u8; 3];
        for (o, c) in out.iter_mut().zip(base) {
            *o = (255.0 * c * (0.35 + 0.65 * pattern) * falloff)
                .round()
                .clamp(0.0, 255.0) as u8;
        }
        out
    }

    /// Depth map and colour image seen from `pose`.
    pub fn render(&self, pose: &Pose, k: &CameraIntrinsics) -> Result<(DepthMap, RgbImage)> {
        let n = k.width * k.height;
        let mut depth = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        let mut rgb = Vec::with_capacity(3 * n);
        for v in 0..k.height {
            for u in 0..k.width {
                match self.cast_pixel(pose, k, u as f64, v as f64) {
                    Some(hit) => {
                        depth.push(hit.t);
                        valid.push(true);
                        rgb.extend(self.shade(&hit));
                    }
                    None => {
                        depth.push(0.0);
                        valid.push(false);
                        rgb.extend([0, 0, 0]);
                    }
                }
            }
        }
        Ok((
            DepthMap::new(k.width, k.height, depth, valid)?,
            RgbImage::new(k.width, k.height, rgb)?,
        ))
    }

    pub fn frame(&self, s: f64, index: usize, k: &CameraIntrinsics) -> Result<Frame> {
        let pose = self.pose_at(s);
        let (depth, rgb) = self.render(&pose, k)?;
        Ok(Frame {
            rgb,
            depth,
            pose,
            scene: SYNTH_SCENE_NAME.to_string(),
            sequence: "seq-01".to_string(),
            index,
        })
    }
}

/// Evenly spaced trajectory parameters `i / (n - 1)`; `[0]` when `n == 1`.
pub fn trajectory_params(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// `n_test` parameters halfway between consecutive training parameters,
/// spread evenly along the trajectory.
pub fn midpoint_params(n_train: usize, n_test: usize) -> Result<Vec<f64>> {
    if n_train < 2 || n_test == 0 || n_test > n_train - 1 {
        return Err(Error::invalid(format!(
            "cannot place {n_test} midpoints between {n_train} training frames"
        )));
    }
    let gaps = n_train - 1;
    Ok((0..n_test)
        .map(|j| {
            let gap = (2 * j + 1) * gaps / (2 * n_test);
            (gap as f64 + 0.5) / gaps as f64
        })
        .collect())
}

/// Frames at the given trajectory parameters, indexed from `first_index`.
pub fn synth_frames_at(seed: u64, params: &[f64], first_index: usize, k: &CameraIntrinsics) -> Result<Vec<Frame>> {
    let scene = SynthScene::new(seed);
    params
        .iter()
        .enumerate()
        .map(|(i, &s)| scene.frame(s, first_index + i, k))
        .collect()
}

/// `n_frames` frames evenly spaced along the seeded trajectory.
pub fn synth_scene(seed: u64, n_frames: usize) -> Result<Vec<Frame>> {
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be at least 1"));
    }
    synth_frames_at(seed, &trajectory_params(n_frames), 0, &CameraIntrinsics::seven_scenes())
}

/// Left half at `near`, right half at `far`: a fronto-parallel depth step.
pub fn step_depth_map(k: &CameraIntrinsics, near: f64, far: f64) -> Result<DepthMap> {
    let depth = (0..k.height)
        .flat_map(|_| (0..k.width).map(|u| if u < k.width / 2 { near } else { far }))
        .collect();
    DepthMap::from_meters(k.width, k.height, depth)
}

pub fn constant_depth_map(k: &CameraIntrinsics, d: f64) -> Result<DepthMap> {
    DepthMap::from_meters(k.width, k.height, vec![d; k.width * k.height])
}

/// World-frame distance between the point the camera at `pose` sees through
/// pixel `(u, v)` and `p`, or `None` when `p` projects outside the image or
/// behind the camera.
pub fn reprojection_gap(scene: &SynthScene, pose: &Pose, k: &CameraIntrinsics, p: Point3) -> Option<f64> {
    let local = pose.q.conjugate().rotate(sub(p, pose.t));
    if local[2] <= 0.0 {
        return None;
    }
    let (u, v) = k.project(local);
    if u < 0.0 || v < 0.0 || u > (k.width - 1) as f64 || v > (k.height - 1) as f64 {
        return None;
    }
    let hit = scene.cast_pixel(pose, k, u, v)?;
    Some(crate::geometry::distance(hit.point, p))
}
