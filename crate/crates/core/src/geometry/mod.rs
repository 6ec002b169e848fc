//! Pinhole camera geometry, rigid poses, plane-induced warps and the
//! analytic Jacobians used by the covariance model and the estimator.
//!
//! Conventions used throughout the crate:
//! - Pixel (0, 0) is the center of the top-left pixel.
//! - A pose `T` maps points from its source frame into its target frame,
//!   `p_target = R * p_source + t`. Camera poses are world-to-camera.
//! - A plane is `{x : normal . x + distance = 0}` with the normal facing the
//!   observing camera, so `distance > 0` for visible planes.
//! - SE(3) tangent vectors are ordered (translation, rotation) and pose
//!   updates are left-multiplicative: `T <- exp(xi) * T`.

mod camera;
mod homography;
mod jacobians;
mod se3;

pub use camera::{backproject, bearing, project, CameraIntrinsics, PixelPoint, MIN_DEPTH};
pub use homography::{apply_homography, plane_homography, warp_jacobian, PlaneParams};
pub use jacobians::{
    inverse_depth_jacobians, project_inverse_depth, projection_jacobian, reprojection_jacobians,
    InverseDepthJacobians, ReprojectionJacobians,
};
pub use se3::{hat, PoseSE3};
