//! Local planar surface around each observed point: patch layouts, the
//! surface point itself, and normal estimation from depth maps.

use nalgebra::{DMatrix, Vector2, Vector3};

use crate::error::{invalid, Error, Result};
use crate::geometry::{bearing, CameraIntrinsics, PixelPoint, PlaneParams};
use crate::image::DepthImage;

/// Pixel offsets of a residual patch relative to its center.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    name: String,
    offsets: Vec<Vector2<f64>>,
}

impl PatchSpec {
    /// The offsets must contain `(0, 0)` exactly once and be distinct.
    pub fn new(name: impl Into<String>, offsets: Vec<Vector2<f64>>) -> Result<Self> {
        let centers = offsets.iter().filter(|o| o.x == 0.0 && o.y == 0.0).count();
        if centers != 1 {
            return invalid(format!("patch must contain the center exactly once, found {centers}"));
        }
        for (i, a) in offsets.iter().enumerate() {
            if !a.iter().all(|c| c.is_finite()) || offsets[..i].contains(a) {
                return invalid(format!("patch offset {a:?} is repeated or not finite"));
            }
        }
        Ok(Self { name: name.into(), offsets })
    }

    /// Eight-pixel spread pattern of direct odometry systems: the center
    /// plus seven offsets inside a 5x5 footprint.
    pub fn pattern8() -> Self {
        let offsets = [(0, -2), (-1, -1), (1, -1), (-2, 0), (0, 0), (2, 0), (-1, 1), (0, 2)]
            .iter()
            .map(|&(x, y)| Vector2::new(x as f64, y as f64))
            .collect();
        Self { name: "pattern8".into(), offsets }
    }

    /// [`Self::pattern8`] with offsets doubled (9x9 footprint).
    pub fn pattern8_wide() -> Self {
        let offsets = Self::pattern8().offsets.iter().map(|o| o * 2.0).collect();
        Self { name: "pattern8_wide".into(), offsets }
    }

    pub fn dense3x3() -> Self {
        let offsets = (-1..=1)
            .flat_map(|y| (-1..=1).map(move |x| Vector2::new(x as f64, y as f64)))
            .collect();
        Self { name: "dense3x3".into(), offsets }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pattern8" => Ok(Self::pattern8()),
            "pattern8_wide" => Ok(Self::pattern8_wide()),
            "dense3x3" => Ok(Self::dense3x3()),
            other => invalid(format!("unknown patch pattern '{other}'")),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn offsets(&self) -> &[Vector2<f64>] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Largest offset coordinate magnitude.
    pub fn radius(&self) -> f64 {
        self.offsets.iter().map(|o| o.amax()).fold(0.0, f64::max)
    }
}

/// A 3D point anchored at a host-view pixel with its local surface normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub host_view: usize,
    pub host_pixel: PixelPoint,
    inverse_depth: f64,
    normal: Vector3<f64>,
    pub patch: PatchSpec,
}

impl SurfacePoint {
    /// Validates the inverse depth, normal length and that the surface faces
    /// the host camera (`normal . ray < 0`).
    pub fn new(
        k: &CameraIntrinsics,
        host_view: usize,
        host_pixel: PixelPoint,
        inverse_depth: f64,
        normal: Vector3<f64>,
        patch: PatchSpec,
    ) -> Result<Self> {
        if !(inverse_depth > 0.0) || !inverse_depth.is_finite() {
            return invalid(format!("inverse depth must be positive, got {inverse_depth}"));
        }
        let n = normal.norm();
        if !((n - 1.0).abs() < 1e-6) {
            return invalid(format!("surface normal must be unit length, got norm {n}"));
        }
        let normal = normal / n;
        if !(normal.dot(&bearing(k, host_pixel)) < 0.0) {
            return Err(Error::BackFacing("host"));
        }
        Ok(Self { host_view, host_pixel, inverse_depth, normal, patch })
    }

    pub fn inverse_depth(&self) -> f64 {
        self.inverse_depth
    }

    pub fn depth(&self) -> f64 {
        1.0 / self.inverse_depth
    }

    /// Normal in the host-camera frame.
    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    /// Host-frame 3D point.
    pub fn point(&self, k: &CameraIntrinsics) -> Vector3<f64> {
        bearing(k, self.host_pixel) / self.inverse_depth
    }

    /// Same surface with a different inverse depth along the same ray.
    pub fn with_inverse_depth(&self, inverse_depth: f64) -> Result<Self> {
        if !(inverse_depth > 0.0) || !inverse_depth.is_finite() {
            return invalid(format!("inverse depth must be positive, got {inverse_depth}"));
        }
        Ok(Self { inverse_depth, ..self.clone() })
    }

    /// Angle between the surface normal and the direction back to the host
    /// camera, in radians. 0 is fronto-parallel, pi/2 grazing.
    pub fn slant(&self, k: &CameraIntrinsics) -> f64 {
        let ray = bearing(k, self.host_pixel).normalize();
        (-self.normal.dot(&ray)).clamp(-1.0, 1.0).acos()
    }
}

/// Host-frame plane through the surface point with the point's normal.
pub fn plane_from_point(sp: &SurfacePoint, k: &CameraIntrinsics) -> Result<PlaneParams> {
    PlaneParams::through_point(sp.normal, &sp.point(k))
}

/// Total-least-squares plane normal of the backprojected depth pixels in a
/// `window x window` neighborhood of `x`, oriented towards the camera.
///
/// Requires at least half of the window to carry valid depth.
pub fn fit_normal_from_depthmap(
    depth: &DepthImage,
    x: PixelPoint,
    k: &CameraIntrinsics,
    window: usize,
) -> Result<Vector3<f64>> {
    if window < 3 || window % 2 == 0 {
        return invalid(format!("window must be odd and at least 3, got {window}"));
    }
    let (cx, cy) = (x.u.round() as i64, x.v.round() as i64);
    let half = (window / 2) as i64;
    let total = window * window;
    let mut points = Vec::with_capacity(total);
    for y in cy - half..=cy + half {
        for xx in cx - half..=cx + half {
            if xx < 0 || y < 0 || xx >= depth.width() as i64 || y >= depth.height() as i64 {
                continue;
            }
            if let Some(d) = depth.valid(xx as usize, y as usize) {
                points.push(bearing(k, PixelPoint::new(xx as f64, y as f64)) * d);
            }
        }
    }
    if 2 * points.len() < total {
        return Err(Error::InsufficientDepth { valid: points.len(), total });
    }
    let mut normal = tls_plane_normal(&points)?;
    if normal.dot(&bearing(k, x)) > 0.0 {
        normal = -normal;
    }
    Ok(normal)
}

/// Unoriented total-least-squares normal of a point set: the right singular
/// vector of the mean-centered points with the smallest singular value.
fn tls_plane_normal(points: &[Vector3<f64>]) -> Result<Vector3<f64>> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit);
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let centered = DMatrix::from_fn(points.len(), 3, |r, c| points[r][c] - centroid[c]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateFit)?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = |i: usize| svd.singular_values[order[i]];
    if s(1) - s(2) <= 1e-12 * s(0).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateFit);
    }
    Ok(Vector3::new(v_t[(order[2], 0)], v_t[(order[2], 1)], v_t[(order[2], 2)]).normalize())
}
