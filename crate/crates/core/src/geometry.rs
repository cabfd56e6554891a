//! Rigid-body poses, the pinhole camera and the keypoint reprojection map.
//!
//! Poses are stored camera-to-world. A keypoint hosted in frame `i` is
//! parameterized by its pixel `x_i` and depth `d_i` along the optical axis;
//! it maps into frame `j` through the relative motion `T_j⁻¹ T_i`.
//!
//! Twists are ordered `[ω, v]` (rotation first) and pose increments are
//! applied on the left: `T ← exp(δ)·T`.

use nalgebra::{Matrix2x6, Matrix3, Matrix4, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Angles below this use the Taylor expansions of the Rodrigues coefficients.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Projected depths at or below this are treated as behind the camera.
pub const MIN_PROJECTED_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point behind camera (depth {0:.3e})")]
    CheiralityViolation(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("failed to read intrinsics: {0}")]
    Io(String),
}

/// Tangent-space increment `[ω (rad), v (m)]`.
pub type Twist = Vector6<f64>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rigid transform, camera-to-world unless stated otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = se3_log(self);
        write!(
            f,
            "Pose(t=[{:.4}, {:.4}, {:.4}], ω=[{:.4}, {:.4}, {:.4}])",
            self.translation.x, self.translation.y, self.translation.z, w[0], w[1], w[2]
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Pose {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Left-multiplicative retraction `exp(delta)·self`.
    /// `exp(δ)·T`, with the rotation projected back onto SO(3) so that
    /// long chains of updates do not drift.
    pub fn retract(&self, delta: &Twist) -> Pose {
        let p = se3_exp(delta).compose(self);
        Pose {
            rotation: orthonormalize(&p.rotation),
            translation: p.translation,
        }
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Rotation angle of this pose, in radians.
    pub fn angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }
}

/// Rotation matrix through the normalized quaternion of an almost
/// orthonormal matrix.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r));
    nalgebra::UnitQuaternion::new_normalize(q.into_inner()).to_rotation_matrix().into_inner()
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(t: &Pose) -> Pose {
    t.inverse()
}

/// Rodrigues exponential of a rotation vector.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + w * a + w * w * b
}

/// Rotation vector of a rotation matrix, stable through θ = π.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axis2 = vee(&(r - r.transpose())); // 2 sinθ · axis
    let sin = 0.5 * axis2.norm();
    let theta = sin.atan2(cos);
    if theta < SMALL_ANGLE {
        // θ/(2 sinθ) ≈ ½(1 + θ²/6)
        return axis2 * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if sin > 1e-6 {
        return axis2 * (theta / (2.0 * sin));
    }
    // Near π: sym(R) - cosθ·I = (1 - cosθ)·a aᵀ; take its best-conditioned column.
    let b = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos) / (1.0 - cos);
    let k = (0..3)
        .max_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap())
        .unwrap();
    let mut axis = b.column(k).into_owned() / b[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    // fix the sign with the antisymmetric part when it carries any signal
    if axis.dot(&axis2) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// `V(ω)`, the left Jacobian of SO(3), and its inverse.
fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + w * b + w * w * c
}

fn left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / theta2
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

pub fn se3_exp(xi: &Twist) -> Pose {
    let omega = Vector3::new(xi[0], xi[1], xi[2]);
    let v = Vector3::new(xi[3], xi[4], xi[5]);
    Pose {
        rotation: so3_exp(&omega),
        translation: left_jacobian(&omega) * v,
    }
}

pub fn se3_log(t: &Pose) -> Twist {
    let omega = so3_log(&t.rotation);
    let v = left_jacobian_inv(&omega) * t.translation;
    Twist::new(omega.x, omega.y, omega.z, v.x, v.y, v.z)
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={} fy={} cx={} cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Ray through `pixel` scaled to unit depth.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; the caller checks its depth.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    fn project_jacobian(&self, p: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        nalgebra::Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    /// Parses a single `fx fy cx cy` line.
    pub fn parse(text: &str) -> Result<Self, GeometryError> {
        let line = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .ok_or_else(|| GeometryError::InvalidIntrinsics("empty intrinsics".into()))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GeometryError::InvalidIntrinsics(e.to_string()))?;
        if vals.len() != 4 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "expected 4 values, found {}",
                vals.len()
            )));
        }
        Self::new(vals[0], vals[1], vals[2], vals[3])
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_line(&self) -> String {
        format!("{} {} {} {}", self.fx, self.fy, self.cx, self.cy)
    }
}

/// Result of mapping a host keypoint into a target frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reprojection {
    pub pixel: Vector2<f64>,
    /// Depth of the point in the target camera.
    pub depth: f64,
}

/// Maps pixel `x_i` at depth `d_i` in camera `i` into camera `j`.
pub fn reproject(
    t_i: &Pose,
    t_j: &Pose,
    k: &Intrinsics,
    x_i: &Vector2<f64>,
    d_i: f64,
) -> Result<Reprojection, GeometryError> {
    let p_i = k.unproject(x_i) * d_i;
    let p_j = t_j.inverse().transform_point(&t_i.transform_point(&p_i));
    if p_j.z <= MIN_PROJECTED_DEPTH {
        return Err(GeometryError::CheiralityViolation(p_j.z));
    }
    Ok(Reprojection {
        pixel: k.project(&p_j),
        depth: p_j.z,
    })
}

/// Reprojection with its Jacobians w.r.t. left increments of both poses
/// and the host depth.
#[derive(Clone, Copy, Debug)]
pub struct ReprojectionJacobian {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub d_host: Matrix2x6<f64>,
    pub d_target: Matrix2x6<f64>,
    pub d_depth: Vector2<f64>,
}

pub fn reproject_with_jacobians(
    t_i: &Pose,
    t_j: &Pose,
    k: &Intrinsics,
    x_i: &Vector2<f64>,
    d_i: f64,
) -> Result<ReprojectionJacobian, GeometryError> {
    let ray = k.unproject(x_i);
    let p_w = t_i.transform_point(&(ray * d_i));
    let rjt = t_j.rotation.transpose();
    let p_j = rjt * (p_w - t_j.translation);
    if p_j.z <= MIN_PROJECTED_DEPTH {
        return Err(GeometryError::CheiralityViolation(p_j.z));
    }
    let dproj = k.project_jacobian(&p_j);
    let pw_hat = skew(&p_w);

    // d p_j / d δ_i = R_jᵀ [-[p_w]×, I],  d p_j / d δ_j = R_jᵀ [[p_w]×, -I]
    let mut dpi = nalgebra::Matrix3x6::zeros();
    dpi.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rjt * -pw_hat));
    dpi.fixed_view_mut::<3, 3>(0, 3).copy_from(&rjt);
    let dpj = -dpi;
    let dpd = rjt * (t_i.rotation * ray);

    Ok(ReprojectionJacobian {
        pixel: k.project(&p_j),
        depth: p_j.z,
        d_host: dproj * dpi,
        d_target: dproj * dpj,
        d_depth: dproj * dpd,
    })
}
