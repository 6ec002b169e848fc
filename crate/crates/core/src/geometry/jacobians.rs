use nalgebra::{Matrix2x3, Matrix2x6, Vector2, Vector3};

use super::camera::{bearing, CameraIntrinsics, PixelPoint, MIN_DEPTH};
use super::se3::{hat, PoseSE3};
use crate::error::{Error, Result};

/// d(pixel)/d(point) of the pinhole projection at a camera-frame point.
pub fn projection_jacobian(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
    if !(p.z > MIN_DEPTH) {
        return Err(Error::NonPositiveDepth(p.z));
    }
    let iz = 1.0 / p.z;
    Ok(Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionJacobians {
    pub pixel: PixelPoint,
    /// With respect to a left perturbation `exp(xi) * T`.
    pub d_pose: Matrix2x6<f64>,
    /// With respect to the source-frame point.
    pub d_point: Matrix2x3<f64>,
}

/// Jacobians of `project(K, T p)`.
pub fn reprojection_jacobians(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    p: &Vector3<f64>,
) -> Result<ReprojectionJacobians> {
    let pt = t.transform_point(p);
    let jp = projection_jacobian(k, &pt)?;
    let mut d_pose = Matrix2x6::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&jp);
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-jp * hat(&pt)));
    Ok(ReprojectionJacobians {
        pixel: PixelPoint::new(k.fx * pt.x / pt.z + k.cx, k.fy * pt.y / pt.z + k.cy),
        d_pose,
        d_point: jp * t.rotation(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDepthJacobians {
    pub pixel: PixelPoint,
    pub d_pose: Matrix2x6<f64>,
    pub d_inv_depth: Vector2<f64>,
}

/// Projection of the host pixel `x` at inverse depth `rho` through the
/// host-to-target pose. Evaluated as `project(R b + rho t)`, which stays
/// finite as `rho -> 0` (points at infinity).
pub fn project_inverse_depth(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    x: PixelPoint,
    rho: f64,
) -> Result<PixelPoint> {
    let q = scaled_target_point(k, t, x, rho);
    if !(q.z > MIN_DEPTH) {
        return Err(Error::NonPositiveDepth(q.z));
    }
    Ok(PixelPoint::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy))
}

fn scaled_target_point(k: &CameraIntrinsics, t: &PoseSE3, x: PixelPoint, rho: f64) -> Vector3<f64> {
    t.rotation() * bearing(k, x) + t.translation() * rho
}

/// Jacobians of [`project_inverse_depth`] with respect to a left pose
/// perturbation and to the inverse depth.
pub fn inverse_depth_jacobians(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    x: PixelPoint,
    rho: f64,
) -> Result<InverseDepthJacobians> {
    let q = scaled_target_point(k, t, x, rho);
    let jq = projection_jacobian(k, &q)?;
    let mut d_pose = Matrix2x6::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jq * rho));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-jq * hat(&q)));
    Ok(InverseDepthJacobians {
        pixel: PixelPoint::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy),
        d_pose,
        d_inv_depth: jq * t.translation(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;

    #[test]
    fn principal_axis_translation_derivative() {
        let k = CameraIntrinsics::tum_default();
        let p = Vector3::new(0.0, 0.0, 2.5);
        let j = reprojection_jacobians(&k, &PoseSE3::identity(), &p).unwrap();
        assert_relative_eq!(j.d_pose[(0, 0)], k.fx / 2.5, epsilon = 1e-12);
        assert_eq!(j.d_pose[(1, 0)], 0.0);
    }

    #[test]
    fn translation_sensitivity_vanishes_at_infinity() {
        let k = CameraIntrinsics::tum_default();
        let t = PoseSE3::exp(&Vector6::new(0.3, 0.1, -0.2, 0.05, 0.02, 0.01));
        let x = PixelPoint::new(200.0, 300.0);
        let far = inverse_depth_jacobians(&k, &t, x, 0.0).unwrap();
        assert_eq!(far.d_pose.fixed_view::<2, 3>(0, 0).amax(), 0.0);
        let near = inverse_depth_jacobians(&k, &t, x, 1e-6).unwrap();
        assert!(near.d_pose.fixed_view::<2, 3>(0, 0).amax() < 1e-3);
        assert!(far.d_inv_depth.norm() > 0.0);
    }

    #[test]
    fn inverse_depth_projection_agrees_with_point_projection() {
        let k = CameraIntrinsics::tum_default();
        let t = PoseSE3::exp(&Vector6::new(0.3, 0.1, -0.2, 0.05, 0.02, 0.01));
        let x = PixelPoint::new(123.0, 321.0);
        let rho = 0.4;
        let p = bearing(&k, x) / rho;
        let a = project_inverse_depth(&k, &t, x, rho).unwrap();
        let b = project(&k, &t.transform_point(&p)).unwrap();
        assert_relative_eq!(a.to_vector(), b.to_vector(), epsilon = 1e-10);
    }
}
