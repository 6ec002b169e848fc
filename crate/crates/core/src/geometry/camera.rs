use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{invalid, Error, Result};

/// Depth below which a point counts as on or behind the camera plane.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return invalid(format!("focal lengths must be positive, got ({fx}, {fy})"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return invalid(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            ));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// TUM RGB-D "default" intrinsics at 640x480.
    pub fn tum_default() -> Self {
        Self { fx: 525.0, fy: 525.0, cx: 319.5, cy: 239.5, width: 640, height: 480 }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { u: v.x, v: v.y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn homogeneous(self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    pub fn offset(self, o: &Vector2<f64>) -> Self {
        Self { u: self.u + o.x, v: self.v + o.y }
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// `m <= u <= width - 1 - m` and likewise for `v`.
    pub fn in_bounds(self, width: usize, height: usize, margin: f64) -> bool {
        self.is_finite()
            && self.u >= margin
            && self.v >= margin
            && self.u <= width as f64 - 1.0 - margin
            && self.v <= height as f64 - 1.0 - margin
    }

    pub fn check_bounds(self, width: usize, height: usize, margin: f64) -> Result<Self> {
        if self.in_bounds(width, height, margin) {
            Ok(self)
        } else {
            Err(Error::OutOfBounds { u: self.u, v: self.v, margin })
        }
    }
}

pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<PixelPoint> {
    if !(p.z > MIN_DEPTH) {
        return Err(Error::NonPositiveDepth(p.z));
    }
    Ok(PixelPoint {
        u: k.fx * p.x / p.z + k.cx,
        v: k.fy * p.y / p.z + k.cy,
    })
}

/// Normalized viewing ray through `x` with unit z component.
pub fn bearing(k: &CameraIntrinsics, x: PixelPoint) -> Vector3<f64> {
    Vector3::new((x.u - k.cx) / k.fx, (x.v - k.cy) / k.fy, 1.0)
}

pub fn backproject(k: &CameraIntrinsics, x: PixelPoint, depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(bearing(k, x) * depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap()
    }

    #[test]
    fn projects_principal_axis_and_similar_triangles() {
        let x = project(&unit(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((x.u, x.v), (0.0, 0.0));
        let x = project(&unit(), &Vector3::new(0.2, 0.0, 2.0)).unwrap();
        assert_relative_eq!(x.u, 0.1, epsilon = 1e-15);
        assert_eq!(x.v, 0.0);
        let tum = CameraIntrinsics::tum_default();
        let x = project(&tum, &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((x.u, x.v), (319.5, 239.5));
    }

    #[test]
    fn rejects_points_behind_camera() {
        assert!(matches!(
            project(&unit(), &Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(project(&unit(), &Vector3::new(1.0, 0.0, -1.0)).is_err());
        assert!(backproject(&unit(), PixelPoint::new(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn backprojects_inverse_of_projection() {
        let p = backproject(&unit(), PixelPoint::new(0.0, 0.0), 1.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
        let p = backproject(&unit(), PixelPoint::new(0.1, 0.0), 2.0).unwrap();
        assert_relative_eq!(p, Vector3::new(0.2, 0.0, 2.0), epsilon = 1e-15);
    }

    #[test]
    fn validates_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 0.0, 4, 4).is_err());
        let k = CameraIntrinsics::tum_default();
        assert_relative_eq!(k.matrix() * k.inverse_matrix(), Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn bounds_predicate_uses_margin() {
        let x = PixelPoint::new(2.0, 2.0);
        assert!(x.in_bounds(10, 10, 2.0));
        assert!(!x.in_bounds(10, 10, 2.5));
        assert!(PixelPoint::new(7.0, 7.0).in_bounds(10, 10, 2.0));
        assert!(!PixelPoint::new(7.1, 7.0).in_bounds(10, 10, 2.0));
        assert!(!PixelPoint::new(f64::NAN, 1.0).in_bounds(10, 10, 0.0));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(u in 0.0..639.0f64, v in 0.0..479.0f64, depth in 0.1..50.0f64) {
            let k = CameraIntrinsics::tum_default();
            let x = PixelPoint::new(u, v);
            let p = backproject(&k, x, depth).unwrap();
            prop_assert!((p.z - depth).abs() < 1e-12);
            let y = project(&k, &p).unwrap();
            prop_assert!((y.u - u).abs() < 1e-10 && (y.v - v).abs() < 1e-10);
        }
    }
}
