use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{invalid, Result};

/// Below this rotation angle the exponential and logarithm switch to their
/// Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix with `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rigid-body transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 (tolerance 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(err < 1e-9) || !(rotation.determinant() > 0.0) || !translation.iter().all(|x| x.is_finite()) {
            return invalid(format!("not a rigid transform (orthonormality error {err:e})"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    /// Rotation about a unit axis followed by translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let w = axis.normalize() * angle;
        let r = Self::exp(&Vector6::new(0.0, 0.0, 0.0, w.x, w.y, w.z)).rotation;
        Self { rotation: r, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Position of the frame origin expressed in the source frame. For a
    /// world-to-camera pose this is the camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Adjoint in (translation, rotation) ordering:
    /// `exp(adjoint() * xi) == self * exp(xi) * self.inverse()`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(hat(&self.translation) * self.rotation));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        ad
    }

    pub fn exp(xi: &Vector6<f64>) -> PoseSE3 {
        let rho = xi.fixed_rows::<3>(0).into_owned();
        let omega = xi.fixed_rows::<3>(3).into_owned();
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let (a, b, c) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            let (s, co) = theta.sin_cos();
            (s / theta, (1.0 - co) / theta2, (theta - s) / (theta2 * theta))
        };
        let w = hat(&omega);
        let w2 = w * w;
        let rotation = Matrix3::identity() + w * a + w2 * b;
        let v = Matrix3::identity() + w * b + w2 * c;
        PoseSE3 { rotation, translation: v * rho }
    }

    /// Inverse of [`PoseSE3::exp`] for rotation angles in `[0, pi]`.
    pub fn log(&self) -> Vector6<f64> {
        let r = &self.rotation;
        let skew = vee(&(r - r.transpose())) * 0.5;
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = skew.norm();
        let theta = sin.atan2(cos);
        let omega = if theta < SMALL_ANGLE {
            skew * (1.0 + theta * theta / 6.0)
        } else if std::f64::consts::PI - theta < 1e-6 {
            // sin(theta) carries no direction information here; read the axis
            // off the symmetric part instead.
            let b = (1.0 - cos) / (theta * theta);
            let outer = ((r + r.transpose()) * 0.5 - Matrix3::identity()) / b
                + Matrix3::identity() * (theta * theta);
            let i = (0..3).max_by(|&i, &j| outer[(i, i)].total_cmp(&outer[(j, j)])).unwrap_or(0);
            let mut axis = outer.column(i).into_owned() / outer[(i, i)].max(f64::MIN_POSITIVE).sqrt();
            if axis.dot(&skew) < 0.0 {
                axis = -axis;
            }
            axis.normalize() * theta
        } else {
            skew * (theta / sin)
        };
        let w = hat(&omega);
        let theta2 = theta * theta;
        let coef = if theta < 1e-3 {
            1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / theta2
        };
        let v_inv = Matrix3::identity() - w * 0.5 + w * w * coef;
        let rho = v_inv * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z)
    }

    /// Left-multiplicative update `exp(delta) * self`.
    pub fn retract(&self, delta: &Vector6<f64>) -> PoseSE3 {
        PoseSE3::exp(delta).compose(self)
    }

    /// Rotation angle (radians) and translation norm of `self`.
    pub fn magnitude(&self) -> (f64, f64) {
        let w = self.log();
        (w.fixed_rows::<3>(3).norm(), self.translation.norm())
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

impl Mul<&PoseSE3> for &PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: &PoseSE3) -> PoseSE3 {
        self.compose(rhs)
    }
}
