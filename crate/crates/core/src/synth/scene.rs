use std::sync::Arc;

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::geometry::{apply_homography, bearing, CameraIntrinsics, PixelPoint, PlaneParams, PoseSE3};
use crate::image::{DepthImage, GrayImage, ImageSampler};

use super::texture::Texture;

/// A textured plane in world coordinates. The texture is a function of the
/// plane coordinates `(e1 . (X - origin), e2 . (X - origin))` in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedPlane {
    pub plane: PlaneParams,
    pub origin: Vector3<f64>,
    pub axes: [Vector3<f64>; 2],
    /// Half extents along the two axes; `None` is unbounded.
    pub half_extent: Option<Vector2<f64>>,
    pub texture: Texture,
}

impl TexturedPlane {
    /// Plane through `origin` with the given normal, in-plane axes chosen
    /// deterministically from the normal.
    pub fn new(normal: Vector3<f64>, origin: Vector3<f64>, half_extent: Option<Vector2<f64>>, texture: Texture) -> Result<Self> {
        let plane = PlaneParams::through_point(normal, &origin)?;
        let n = *plane.normal();
        let helper = if n.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
        let e1 = helper.cross(&n).normalize();
        let e2 = n.cross(&e1);
        Ok(Self { plane, origin, axes: [e1, e2], half_extent, texture })
    }

    pub fn plane_coords(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let d = x - self.origin;
        Vector2::new(self.axes[0].dot(&d), self.axes[1].dot(&d))
    }

    fn contains(&self, uv: &Vector2<f64>) -> bool {
        match &self.half_extent {
            None => true,
            Some(h) => uv.x.abs() <= h.x && uv.y.abs() <= h.y,
        }
    }

    /// Ray parameter of the intersection of `origin + s dir`, if in front
    /// and inside the extent.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let n = self.plane.normal();
        let denom = n.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let s = -(n.dot(origin) + self.plane.distance()) / denom;
        if !(s > 0.0) {
            return None;
        }
        self.contains(&self.plane_coords(&(origin + dir * s))).then_some(s)
    }
}

/// Planes, a camera and a trajectory. World = first camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub camera: CameraIntrinsics,
    pub planes: Vec<TexturedPlane>,
    /// World-to-camera poses.
    pub poses: Vec<PoseSE3>,
    pub seed: u64,
}

/// What a pixel ray hits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub plane: usize,
    /// World point.
    pub point: Vector3<f64>,
    /// Camera-frame depth (z).
    pub depth: f64,
}

impl SyntheticScene {
    pub fn new(camera: CameraIntrinsics, planes: Vec<TexturedPlane>, poses: Vec<PoseSE3>, seed: u64) -> Self {
        Self { camera, planes, poses, seed }
    }

    /// Nearest plane along the ray through pixel `x` of a camera at `pose`.
    pub fn cast(&self, pose: &PoseSE3, x: PixelPoint) -> Option<RayHit> {
        let b = bearing(&self.camera, x);
        let c = pose.center();
        let dir = pose.rotation().transpose() * b;
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.planes.iter().enumerate() {
            if let Some(s) = p.intersect(&c, &dir) {
                if best.is_none_or(|(_, bs)| s < bs) {
                    best = Some((i, s));
                }
            }
        }
        // The bearing has unit z, so the ray parameter is the depth.
        best.map(|(plane, s)| RayHit { plane, point: c + dir * s, depth: s })
    }

    pub fn sampler(self: &Arc<Self>, view: usize) -> Result<ViewSampler> {
        match self.poses.get(view) {
            Some(p) => Ok(ViewSampler::new(self.clone(), *p)),
            None => invalid(format!("scene has no view {view}")),
        }
    }
}

/// Continuous, noiseless image of a scene from an arbitrary pose with exact
/// analytic gradients.
#[derive(Debug, Clone)]
pub struct ViewSampler {
    scene: Arc<SyntheticScene>,
    pose: PoseSE3,
}

impl ViewSampler {
    pub fn new(scene: Arc<SyntheticScene>, pose: PoseSE3) -> Self {
        Self { scene, pose }
    }

    pub fn pose(&self) -> &PoseSE3 {
        &self.pose
    }

    fn inside(&self, u: f64, v: f64) -> bool {
        let k = &self.scene.camera;
        u >= 0.0 && v >= 0.0 && u <= (k.width - 1) as f64 && v <= (k.height - 1) as f64
    }

    pub fn depth(&self, u: f64, v: f64) -> Option<f64> {
        self.scene.cast(&self.pose, PixelPoint::new(u, v)).map(|h| h.depth)
    }
}

impl ImageSampler for ViewSampler {
    fn width(&self) -> usize {
        self.scene.camera.width
    }

    fn height(&self) -> usize {
        self.scene.camera.height
    }

    fn intensity(&self, u: f64, v: f64) -> Option<f64> {
        if !self.inside(u, v) {
            return None;
        }
        let hit = self.scene.cast(&self.pose, PixelPoint::new(u, v))?;
        let plane = &self.scene.planes[hit.plane];
        Some(plane.texture.value(&plane.plane_coords(&hit.point)))
    }

    fn gradient(&self, u: f64, v: f64) -> Option<Vector2<f64>> {
        if !self.inside(u, v) {
            return None;
        }
        let k = &self.scene.camera;
        let hit = self.scene.cast(&self.pose, PixelPoint::new(u, v))?;
        let plane = &self.scene.planes[hit.plane];
        // X(u, v) = c + s r with r = R^T K^-1 (u, v, 1) and s chosen so X is
        // on the plane; differentiate through s.
        let rt = self.pose.rotation().transpose();
        let r = rt * bearing(k, PixelPoint::new(u, v));
        let n = plane.plane.normal();
        let nr = n.dot(&r);
        let s = hit.depth;
        let du = rt * Vector3::new(1.0 / k.fx, 0.0, 0.0);
        let dv = rt * Vector3::new(0.0, 1.0 / k.fy, 0.0);
        let dx_du = (du - r * (n.dot(&du) / nr)) * s;
        let dx_dv = (dv - r * (n.dot(&dv) / nr)) * s;
        let to_plane = Matrix2x3::from_rows(&[plane.axes[0].transpose(), plane.axes[1].transpose()]);
        let g = plane.texture.gradient(&plane.plane_coords(&hit.point));
        Some(Vector2::new(g.dot(&(to_plane * dx_du)), g.dot(&(to_plane * dx_dv))))
    }
}

/// `source(H^-1 y)`: the view of a plane seen by `source`, through the
/// plane-induced homography `H` from source to target pixels.
#[derive(Clone)]
pub struct HomographySampler<S> {
    source: S,
    h_inv: Matrix3<f64>,
    width: usize,
    height: usize,
}

impl<S: ImageSampler> HomographySampler<S> {
    pub fn new(source: S, h: &Matrix3<f64>) -> Result<Self> {
        let Some(h_inv) = h.try_inverse() else {
            return Err(crate::error::Error::DegenerateWarp(0.0));
        };
        let (width, height) = (source.width(), source.height());
        Ok(Self { source, h_inv, width, height })
    }

    fn source_pixel(&self, u: f64, v: f64) -> Option<PixelPoint> {
        apply_homography(&self.h_inv, PixelPoint::new(u, v)).ok()
    }
}

impl<S: ImageSampler> ImageSampler for HomographySampler<S> {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn intensity(&self, u: f64, v: f64) -> Option<f64> {
        let x = self.source_pixel(u, v)?;
        self.source.intensity(x.u, x.v)
    }

    fn gradient(&self, u: f64, v: f64) -> Option<Vector2<f64>> {
        let x = self.source_pixel(u, v)?;
        let g = self.source.gradient(x.u, x.v)?;
        let j = crate::geometry::warp_jacobian(&self.h_inv, PixelPoint::new(u, v)).ok()?;
        Some(j.transpose() * g)
    }
}

/// Point-sampled intensity and z-depth rasters of view `view`. Pixels that
/// hit no plane get intensity 0 and depth 0 (invalid).
pub fn render(scene: &SyntheticScene, view: usize) -> Result<(GrayImage, DepthImage)> {
    let Some(pose) = scene.poses.get(view) else {
        return invalid(format!("scene has no view {view}"));
    };
    let k = &scene.camera;
    let hits: Vec<Option<(f64, f64)>> = crate::parallel::par_map_range(k.width * k.height, |i| {
        let x = PixelPoint::new((i % k.width) as f64, (i / k.width) as f64);
        scene.cast(pose, x).map(|h| {
            let p = &scene.planes[h.plane];
            (p.texture.value(&p.plane_coords(&h.point)), h.depth)
        })
    });
    let intensity = hits.iter().map(|h| h.map_or(0.0, |v| v.0)).collect();
    let depth = hits.iter().map(|h| h.map_or(0.0, |v| v.1)).collect();
    Ok((GrayImage::new(k.width, k.height, intensity)?, DepthImage::new(k.width, k.height, depth)?))
}

/// Adds i.i.d. Gaussian noise of std `sigma` to every pixel.
pub fn add_noise<R: Rng + ?Sized>(image: &mut GrayImage, sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    for v in image.data_mut() {
        *v += normal.sample(rng);
    }
}
