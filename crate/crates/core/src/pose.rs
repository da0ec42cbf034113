//! Quaternion geometry, the learnable-weight pose loss and the median error
//! metrics used for reporting.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// Unit quaternion `(u, v)` kept in the hemisphere `u >= 0`. On the `u == 0`
/// boundary the first non-zero component of `v` is made positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    u: f64,
    v: Vec3,
}

impl UnitQuaternion {
    /// Normalises and canonicalises `(u, v)`.
    pub fn new(u: f64, v: Vec3) -> Result<Self> {
        let n = (u * u + dot3(v, v)).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::invalid(format!("cannot normalise quaternion ({u}, {v:?})")));
        }
        let (mut u, mut v) = (u / n, [v[0] / n, v[1] / n, v[2] / n]);
        let flip = u < 0.0 || (u == 0.0 && v.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0));
        if flip {
            u = -u;
            v = [-v[0], -v[1], -v[2]];
        }
        Ok(Self { u, v })
    }

    pub fn identity() -> Self {
        Self { u: 1.0, v: [0.0; 3] }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = norm3(axis);
        if n == 0.0 {
            return Err(Error::invalid("zero rotation axis"));
        }
        let s = (angle / 2.0).sin() / n;
        Self::new((angle / 2.0).cos(), [axis[0] * s, axis[1] * s, axis[2] * s])
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> Vec3 {
        self.v
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.u * other.u + dot3(self.v, other.v)
    }

    pub fn conjugate(&self) -> Self {
        Self {
            u: self.u,
            v: [-self.v[0], -self.v[1], -self.v[2]],
        }
    }

    /// Hamilton product, not re-canonicalised.
    fn mul_raw(&self, o: &Self) -> (f64, Vec3) {
        let c = cross(self.v, o.v);
        (
            self.u * o.u - dot3(self.v, o.v),
            [
                self.u * o.v[0] + o.u * self.v[0] + c[0],
                self.u * o.v[1] + o.u * self.v[1] + c[1],
                self.u * o.v[2] + o.u * self.v[2] + c[2],
            ],
        )
    }

    pub fn compose(&self, o: &Self) -> Result<Self> {
        let (u, v) = self.mul_raw(o);
        Self::new(u, v)
    }

    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let t = cross(self.v, p);
        let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
        let c = cross(self.v, t);
        [
            p[0] + self.u * t[0] + c[0],
            p[1] + self.u * t[1] + c[1],
            p[2] + self.u * t[2] + c[2],
        ]
    }

    pub fn to_rotation_matrix(&self) -> Mat3 {
        let (w, [x, y, z]) = (self.u, self.v);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    pub fn log(&self) -> Vec3 {
        quat_log(self)
    }

    pub fn exp(w: Vec3) -> Self {
        quat_exp(w)
    }
}

/// `(v / |v|) * arccos(u)`, or zero when `v` vanishes. Evaluated as
/// `atan2(|v|, u)`, which equals `arccos(u)` on unit quaternions and keeps
/// full precision near the identity.
pub fn quat_log(q: &UnitQuaternion) -> Vec3 {
    let n = norm3(q.v);
    if n == 0.0 {
        return [0.0; 3];
    }
    let s = n.atan2(q.u) / n;
    [q.v[0] * s, q.v[1] * s, q.v[2] * s]
}

/// Inverse of [`quat_log`]: `(cos|w|, sin|w| * w/|w|)`.
pub fn quat_exp(w: Vec3) -> UnitQuaternion {
    let n = norm3(w);
    if n == 0.0 {
        return UnitQuaternion::identity();
    }
    let s = n.sin() / n;
    UnitQuaternion::new(n.cos(), [w[0] * s, w[1] * s, w[2] * s]).expect("exp of a finite vector is a unit quaternion")
}

/// Converts a rotation matrix with Shepperd's largest-diagonal branch.
pub fn rotmat_to_quat(r: &Mat3) -> Result<UnitQuaternion> {
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("rotation matrix has non-finite entries"));
    }
    for i in 0..3 {
        for j in 0..3 {
            let rrt: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (rrt - expect).abs() > 1e-4 {
                return Err(Error::invalid(format!(
                    "matrix is not orthonormal (R R^T [{i}][{j}] = {rrt})"
                )));
            }
        }
    }
    let det = dot3(r[0], cross(r[1], r[2]));
    if (det - 1.0).abs() > 1e-4 {
        return Err(Error::invalid(format!("rotation determinant {det} != 1")));
    }
    let trace = r[0][0] + r[1][1] + r[2][2];
    let (w, x, y, z);
    if trace >= r[0][0] && trace >= r[1][1] && trace >= r[2][2] {
        let s = (1.0 + trace).sqrt() * 2.0;
        w = s / 4.0;
        x = (r[2][1] - r[1][2]) / s;
        y = (r[0][2] - r[2][0]) / s;
        z = (r[1][0] - r[0][1]) / s;
    } else if r[0][0] >= r[1][1] && r[0][0] >= r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        w = (r[2][1] - r[1][2]) / s;
        x = s / 4.0;
        y = (r[0][1] + r[1][0]) / s;
        z = (r[0][2] + r[2][0]) / s;
    } else if r[1][1] >= r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        w = (r[0][2] - r[2][0]) / s;
        x = (r[0][1] + r[1][0]) / s;
        y = s / 4.0;
        z = (r[1][2] + r[2][1]) / s;
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        w = (r[1][0] - r[0][1]) / s;
        x = (r[0][2] + r[2][0]) / s;
        y = (r[1][2] + r[2][1]) / s;
        z = s / 4.0;
    }
    UnitQuaternion::new(w, [x, y, z])
}

/// Camera pose: position `t` and orientation `q` (camera-to-world).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub t: Vec3,
    pub q: UnitQuaternion,
}

impl Pose {
    pub fn new(t: Vec3, q: UnitQuaternion) -> Result<Self> {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite position {t:?}")));
        }
        Ok(Self { t, q })
    }

    pub fn identity() -> Self {
        Self {
            t: [0.0; 3],
            q: UnitQuaternion::identity(),
        }
    }

    /// Decomposes a row-major homogeneous 4x4 transform.
    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Result<Self> {
        let bottom = m[3];
        if bottom[0].abs() > 1e-6 || bottom[1].abs() > 1e-6 || bottom[2].abs() > 1e-6 || (bottom[3] - 1.0).abs() > 1e-6
        {
            return Err(Error::invalid(format!("bottom row {bottom:?} is not [0 0 0 1]")));
        }
        let r = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        Self::new([m[0][3], m[1][3], m[2][3]], rotmat_to_quat(&r)?)
    }

    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self.q.to_rotation_matrix();
        [
            [r[0][0], r[0][1], r[0][2], self.t[0]],
            [r[1][0], r[1][1], r[1][2], self.t[1]],
            [r[2][0], r[2][1], r[2][2], self.t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Maps a camera-frame point into the world frame.
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        let r = self.q.rotate(p);
        [r[0] + self.t[0], r[1] + self.t[1], r[2] + self.t[2]]
    }
}

/// The two learnable loss weights, stored as scalar parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossWeights {
    pub beta: ParamId,
    pub gamma: ParamId,
}

impl LossWeights {
    pub const BETA: &'static str = "loss.beta";
    pub const GAMMA: &'static str = "loss.gamma";

    pub fn register(store: &mut ParamStore, beta: f64, gamma: f64) -> Result<Self> {
        Ok(Self {
            beta: store.add(Self::BETA, Tensor::scalar(beta))?,
            gamma: store.add(Self::GAMMA, Tensor::scalar(gamma))?,
        })
    }

    pub fn values(&self, store: &ParamStore) -> (f64, f64) {
        (store.value(self.beta).data()[0], store.value(self.gamma).data()[0])
    }
}

/// `|t - t*|_1 e^-beta + beta + |log q - log q*|_2 e^-gamma + gamma`.
pub fn pose_loss(
    g: &mut Graph<'_>,
    pred_t: Var,
    pred_logq: Var,
    true_t: Vec3,
    true_logq: Vec3,
    weights: &LossWeights,
) -> Result<Var> {
    let true_t = g.input(Tensor::vector(true_t.to_vec()))?;
    let true_logq = g.input(Tensor::vector(true_logq.to_vec()))?;
    let beta = g.param(weights.beta);
    let gamma = g.param(weights.gamma);

    let dt = g.sub(pred_t, true_t)?;
    let rt = g.l1_norm(dt)?;
    let nb = g.negate(beta)?;
    let wt = g.exp(nb)?;
    let lt = g.mul(rt, wt)?;
    let lt = g.add(lt, beta)?;

    let dq = g.sub(pred_logq, true_logq)?;
    let rq = g.l2_norm(dq)?;
    let ng = g.negate(gamma)?;
    let wq = g.exp(ng)?;
    let lq = g.mul(rq, wq)?;
    let lq = g.add(lq, gamma)?;

    g.add(lt, lq)
}

pub fn translation_error(pred: &Pose, truth: &Pose) -> f64 {
    norm3([pred.t[0] - truth.t[0], pred.t[1] - truth.t[1], pred.t[2] - truth.t[2]])
}

/// Angle of the relative rotation, `2 arccos |<q1, q2>|`, in degrees.
pub fn rotation_error(pred: &Pose, truth: &Pose) -> f64 {
    // atan2 form of the same angle; stable for small errors.
    let (w, v) = pred.q.conjugate().mul_raw(&truth.q);
    (2.0 * norm3(v).atan2(w.abs())).to_degrees()
}

/// Component-wise medians of `(meters, degrees)` pairs.
pub fn median_errors(per_frame: &[(f64, f64)]) -> Result<(f64, f64)> {
    if per_frame.is_empty() {
        return Err(Error::degenerate("median of an empty error list"));
    }
    let t: Vec<f64> = per_frame.iter().map(|e| e.0).collect();
    let r: Vec<f64> = per_frame.iter().map(|e| e.1).collect();
    Ok((median(t), median(r)))
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
