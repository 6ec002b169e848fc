//! Perspective deformation of image patches.
//!
//! A patch around a host pixel is mapped into the target view by the
//! homography of the local surface plane. Its first-order (affine)
//! approximation around the patch center is the warp differential `A`.
//! Patch-based residuals assume the patch moves by a reference transform `S`
//! (a pure translation unless configured otherwise), so each patch offset `o`
//! is displaced by `delta(o) = (A - S) o` relative to where the residual
//! samples it. Projected through the local image gradient this displacement
//! becomes an intensity-residual variance contribution.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_homography, bearing, plane_homography, warp_jacobian, CameraIntrinsics, PixelPoint,
    PlaneParams, PoseSE3, MIN_DEPTH,
};

/// Above this condition number the warp differential is treated as
/// degenerate and the observation gets zero weight downstream.
pub const MAX_CONDITION: f64 = 100.0;

/// Transform against which deformation is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeformationReference {
    /// Any non-identity differential counts as deformation.
    #[default]
    Translation,
    /// Only the non-similarity part (anisotropic scale, shear) counts.
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationState {
    differential: Matrix2<f64>,
    reference: Matrix2<f64>,
    center_warp: PixelPoint,
    condition_number: f64,
}

impl DeformationState {
    pub fn new(differential: Matrix2<f64>, center_warp: PixelPoint, reference: DeformationReference) -> Self {
        let s = match reference {
            DeformationReference::Translation => Matrix2::identity(),
            DeformationReference::Similarity => closest_similarity(&differential),
        };
        Self {
            differential,
            reference: s,
            center_warp,
            condition_number: condition_number(&differential),
        }
    }

    /// Warp differential `A` at the patch center.
    pub fn differential(&self) -> &Matrix2<f64> {
        &self.differential
    }

    /// Reference transform `S`.
    pub fn reference(&self) -> &Matrix2<f64> {
        &self.reference
    }

    /// Target-view position of the patch center.
    pub fn center_warp(&self) -> PixelPoint {
        self.center_warp
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// `delta(o) = (A - S) o`.
    pub fn displacement(&self, offset: &Vector2<f64>) -> Vector2<f64> {
        (self.differential - self.reference) * offset
    }

    /// Where the residual samples offset `o`: the rigidly moved patch.
    pub fn reference_position(&self, offset: &Vector2<f64>) -> PixelPoint {
        self.center_warp.offset(&(self.reference * offset))
    }

    /// Affine prediction of where offset `o` really lands.
    pub fn affine_position(&self, offset: &Vector2<f64>) -> PixelPoint {
        self.center_warp.offset(&(self.differential * offset))
    }

    /// `cond(A) > MAX_CONDITION` or `det(A) <= 0`.
    pub fn is_degenerate(&self) -> bool {
        !(self.condition_number <= MAX_CONDITION) || !(self.differential.determinant() > 0.0)
    }
}

fn closest_similarity(a: &Matrix2<f64>) -> Matrix2<f64> {
    let p = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let q = 0.5 * (a[(1, 0)] - a[(0, 1)]);
    Matrix2::new(p, -q, q, p)
}

fn condition_number(a: &Matrix2<f64>) -> f64 {
    let sv = a.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Deformation of the patch centered at host pixel `x` on `plane` (host
/// frame) when seen from the target view `t` (host-to-target).
pub fn deformation_state(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    plane: &PlaneParams,
    x: PixelPoint,
) -> Result<DeformationState> {
    deformation_state_with(k, t, plane, x, DeformationReference::Translation)
}

pub fn deformation_state_with(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    plane: &PlaneParams,
    x: PixelPoint,
    reference: DeformationReference,
) -> Result<DeformationState> {
    let ray = bearing(k, x);
    if !(plane.normal().dot(&ray) < 0.0) {
        return Err(Error::BackFacing("host"));
    }
    let depth = plane.ray_depth(&ray).ok_or(Error::NonPositiveDepth(0.0))?;
    let p_target = t.transform_point(&(ray * depth));
    if !(p_target.z > MIN_DEPTH) {
        return Err(Error::NonPositiveDepth(p_target.z));
    }
    let n_target = t.rotation() * plane.normal();
    if !(n_target.dot(&p_target) < 0.0) {
        return Err(Error::BackFacing("target"));
    }
    let h = plane_homography(k, t, plane);
    let a = warp_jacobian(&h, x)?;
    let center = apply_homography(&h, x)?;
    Ok(DeformationState::new(a, center, reference))
}

/// Intensity variance caused by deformation at one patch offset under the
/// deterministic-displacement reading: `(g . delta(o))^2`, with `g` the
/// target-image gradient where the residual samples the offset.
pub fn deformation_noise(ds: &DeformationState, grad_target: &Vector2<f64>, offset: &Vector2<f64>) -> f64 {
    let e = grad_target.dot(&ds.displacement(offset));
    e * e
}

/// Stochastic-displacement alternative: `g^T Sigma_delta g` for a displacement
/// with covariance `Sigma_delta`. With `Sigma_delta = delta delta^T` it equals
/// [`deformation_noise`].
pub fn stochastic_deformation_noise(grad_target: &Vector2<f64>, displacement_cov: &Matrix2<f64>) -> f64 {
    (grad_target.transpose() * displacement_cov * grad_target)[(0, 0)].max(0.0)
}
