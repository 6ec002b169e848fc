use nalgebra::{Matrix2, Matrix3, Vector3};

use super::camera::{CameraIntrinsics, PixelPoint};
use super::se3::PoseSE3;
use crate::error::{invalid, Error, Result};

const DEGENERATE_W: f64 = 1e-9;

/// Plane `{x : normal . x + distance = 0}` in some camera frame. With the
/// normal facing the camera the distance is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParams {
    normal: Vector3<f64>,
    distance: f64,
}

impl PlaneParams {
    /// The normal is renormalized; its norm must already be 1 to within 1e-6.
    pub fn new(normal: Vector3<f64>, distance: f64) -> Result<Self> {
        let n = normal.norm();
        if !((n - 1.0).abs() < 1e-6) {
            return invalid(format!("plane normal must be unit length, got norm {n}"));
        }
        if !(distance > 0.0) || !distance.is_finite() {
            return invalid(format!("plane distance must be positive, got {distance}"));
        }
        Ok(Self { normal: normal / n, distance })
    }

    /// The plane with the given facing normal passing through `point`.
    pub fn through_point(normal: Vector3<f64>, point: &Vector3<f64>) -> Result<Self> {
        let n = normal.normalize();
        Self::new(n, -n.dot(point))
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.distance
    }

    /// The same plane expressed in the frame `pose` maps into. The result may
    /// face away from the new origin, in which case it is returned with its
    /// raw (possibly non-positive) distance via `Err`.
    pub fn transformed(&self, pose: &PoseSE3) -> Result<PlaneParams> {
        let n = pose.rotation() * self.normal;
        let d = self.distance - n.dot(pose.translation());
        if d > 0.0 {
            Ok(PlaneParams { normal: n, distance: d })
        } else {
            Err(Error::BackFacing("transformed"))
        }
    }

    /// Depth along the camera ray through `x` at which it meets the plane.
    pub fn ray_depth(&self, bearing: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(bearing);
        if denom.abs() < 1e-15 {
            return None;
        }
        let s = -self.distance / denom;
        (s > 0.0).then_some(s * bearing.z)
    }
}

/// Homography mapping reference pixels of points on `plane` (reference
/// frame) to target pixels, `H = K (R - t n^T / d) K^-1`, scaled so that
/// `H[(2,2)] = 1` whenever that entry is not vanishingly small.
pub fn plane_homography(k: &CameraIntrinsics, t: &PoseSE3, plane: &PlaneParams) -> Matrix3<f64> {
    let g = t.rotation() - t.translation() * plane.normal().transpose() / plane.distance();
    let h = k.matrix() * g * k.inverse_matrix();
    let h33 = h[(2, 2)];
    if h33.abs() > DEGENERATE_W {
        h / h33
    } else {
        h
    }
}

pub fn apply_homography(h: &Matrix3<f64>, x: PixelPoint) -> Result<PixelPoint> {
    let w = h * x.homogeneous();
    if w.z.abs() < DEGENERATE_W || !w.z.is_finite() {
        return Err(Error::DegenerateWarp(w.z));
    }
    Ok(PixelPoint::new(w.x / w.z, w.y / w.z))
}

/// Differential of the dehomogenized warp `x -> H x` at `x`: the affine
/// approximation of the warp around that pixel.
pub fn warp_jacobian(h: &Matrix3<f64>, x: PixelPoint) -> Result<Matrix2<f64>> {
    let w = h * x.homogeneous();
    if w.z.abs() < DEGENERATE_W || !w.z.is_finite() {
        return Err(Error::DegenerateWarp(w.z));
    }
    let (u, v) = (w.x / w.z, w.y / w.z);
    Ok(Matrix2::new(
        h[(0, 0)] - u * h[(2, 0)],
        h[(0, 1)] - u * h[(2, 1)],
        h[(1, 0)] - v * h[(2, 0)],
        h[(1, 1)] - v * h[(2, 1)],
    ) / w.z)
}
