//! Residual covariances as the sum of photometric (sensor), geometric
//! (inverse depth and relative pose) and perspective-deformation noise, for
//! patch-based photometric residuals and for 2D keypoint residuals.

use nalgebra::{Matrix2, Matrix6, SymmetricEigen, Vector2};

use crate::deformation::{deformation_noise, deformation_state_with, DeformationReference, DeformationState};
use crate::error::{invalid, Error, Result};
use crate::geometry::{inverse_depth_jacobians, CameraIntrinsics, PoseSE3};
use crate::image::ImageSampler;
use crate::surface::{plane_from_point, SurfacePoint};

/// Variances below this are clamped before whitening.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Standard deviation of a point's inverse depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InverseDepthStd {
    /// In 1/m.
    Absolute(f64),
    /// As a fraction of the inverse depth itself.
    Relative(f64),
}

impl InverseDepthStd {
    pub fn at(&self, inverse_depth: f64) -> f64 {
        match *self {
            InverseDepthStd::Absolute(s) => s,
            InverseDepthStd::Relative(f) => f * inverse_depth,
        }
    }

    fn value(&self) -> f64 {
        match *self {
            InverseDepthStd::Absolute(s) | InverseDepthStd::Relative(s) => s,
        }
    }
}

/// Source noise magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Intensity noise std per image, gray levels.
    pub sigma_intensity: f64,
    /// Keypoint detection std at octave scale 1, pixels.
    pub sigma_keypoint: f64,
    pub inverse_depth: InverseDepthStd,
    /// Covariance of the host-to-target pose tangent (translation, rotation).
    pub pose_cov: Option<Matrix6<f64>>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_intensity: 2.0,
            sigma_keypoint: 1.0,
            inverse_depth: InverseDepthStd::Absolute(0.0),
            pose_cov: None,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_intensity", self.sigma_intensity),
            ("sigma_keypoint", self.sigma_keypoint),
            ("inverse_depth", self.inverse_depth.value()),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return invalid(format!("{name} must be a non-negative finite std, got {v}"));
            }
        }
        if let Some(c) = &self.pose_cov {
            if (c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
                return invalid("pose covariance is not symmetric");
            }
            let eig = SymmetricEigen::new(*c).eigenvalues;
            if eig.min() < -1e-12 * eig.amax().max(f64::MIN_POSITIVE) {
                return invalid("pose covariance is not positive semi-definite");
            }
        }
        Ok(())
    }

    /// Isotropic pose covariance from per-axis stds of the translation (m)
    /// and rotation (rad) tangent components.
    pub fn isotropic_pose_cov(translation_std: f64, rotation_std: f64) -> Option<Matrix6<f64>> {
        if translation_std == 0.0 && rotation_std == 0.0 {
            return None;
        }
        let t2 = translation_std * translation_std;
        let r2 = rotation_std * rotation_std;
        Some(Matrix6::from_diagonal(&nalgebra::Vector6::new(t2, t2, t2, r2, r2, r2)))
    }
}

/// Model knobs that are not noise magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub reference: DeformationReference,
    /// Scale of the deformation-to-keypoint covariance conversion.
    pub kappa: f64,
    /// Radius of the keypoint descriptor footprint at octave scale 1, pixels.
    pub feature_radius: f64,
    /// Required margin of every patch pixel in both images.
    pub margin: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { reference: DeformationReference::Translation, kappa: 1.0, feature_radius: 8.0, margin: 2.0 }
    }
}

/// Variance of one patch offset's residual, split by noise source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetVariance {
    pub offset: Vector2<f64>,
    pub photometric: f64,
    pub geometric: f64,
    pub deformation: f64,
}

impl OffsetVariance {
    pub fn total(&self) -> f64 {
        self.photometric + self.geometric + self.deformation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricResidualCov {
    pub offsets: Vec<OffsetVariance>,
    /// The warp differential is degenerate; every offset has infinite
    /// variance.
    pub degenerate: bool,
}

impl PhotometricResidualCov {
    pub fn totals(&self) -> Vec<f64> {
        self.offsets
            .iter()
            .map(|o| if self.degenerate { f64::INFINITY } else { o.total() })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureResidualCov {
    pub detection: Matrix2<f64>,
    pub geometric: Matrix2<f64>,
    pub deformation: Matrix2<f64>,
    pub degenerate: bool,
}

impl FeatureResidualCov {
    pub fn total(&self) -> Matrix2<f64> {
        self.detection + self.geometric + self.deformation
    }
}

/// First-order pixel covariance of the projected point caused by its
/// inverse-depth noise and the relative-pose noise.
pub fn geometric_pixel_cov(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    sp: &SurfacePoint,
    noise: &NoiseParams,
) -> Result<Matrix2<f64>> {
    let j = inverse_depth_jacobians(k, t, sp.host_pixel, sp.inverse_depth())?;
    let s = noise.inverse_depth.at(sp.inverse_depth());
    let mut cov = j.d_inv_depth * j.d_inv_depth.transpose() * (s * s);
    if let Some(pc) = &noise.pose_cov {
        cov += j.d_pose * pc * j.d_pose.transpose();
    }
    Ok(symmetrize(&cov))
}

fn symmetrize(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

fn surface_deformation(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    sp: &SurfacePoint,
    reference: DeformationReference,
) -> Result<DeformationState> {
    let plane = plane_from_point(sp, k)?;
    deformation_state_with(k, t, &plane, sp.host_pixel, reference)
}

/// Per-offset variance of the patch residual
/// `I_target(center_warp + S o) - I_host(x + o)`:
/// `2 sigma_I^2 + g^T Sigma_geo g + (g . delta(o))^2` with `g` the target
/// gradient where the residual samples offset `o`.
pub fn photometric_residual_cov(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    sp: &SurfacePoint,
    host: &dyn ImageSampler,
    target: &dyn ImageSampler,
    noise: &NoiseParams,
    options: &ModelOptions,
) -> Result<PhotometricResidualCov> {
    let ds = surface_deformation(k, t, sp, options.reference)?;
    let geo = geometric_pixel_cov(k, t, sp, noise)?;
    let photometric = 2.0 * noise.sigma_intensity * noise.sigma_intensity;
    let mut offsets = Vec::with_capacity(sp.patch.len());
    for o in sp.patch.offsets() {
        sp.host_pixel.offset(o).check_bounds(host.width(), host.height(), options.margin)?;
        let y = ds.reference_position(o).check_bounds(target.width(), target.height(), options.margin)?;
        let g = target.gradient(y.u, y.v).ok_or(Error::OutOfBounds { u: y.u, v: y.v, margin: options.margin })?;
        offsets.push(OffsetVariance {
            offset: *o,
            photometric,
            geometric: (g.transpose() * geo * g)[(0, 0)].max(0.0),
            deformation: deformation_noise(&ds, &g, o),
        });
    }
    Ok(PhotometricResidualCov { offsets, degenerate: ds.is_degenerate() })
}

/// 2x2 keypoint residual covariance
/// `sigma_kp^2 s^2 I + Sigma_geo + kappa (A - S) Sigma_patch (A - S)^T`,
/// where `Sigma_patch = (r s)^2 / 4 I` is the second moment of a disk
/// footprint of radius `r s`.
pub fn feature_residual_cov(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    sp: &SurfacePoint,
    noise: &NoiseParams,
    octave_scale: f64,
    options: &ModelOptions,
) -> Result<FeatureResidualCov> {
    if !(octave_scale > 0.0) {
        return invalid(format!("octave scale must be positive, got {octave_scale}"));
    }
    let ds = surface_deformation(k, t, sp, options.reference)?;
    let geometric = geometric_pixel_cov(k, t, sp, noise)?;
    let sd = noise.sigma_keypoint * octave_scale;
    let radius = options.feature_radius * octave_scale;
    let d = ds.differential() - ds.reference();
    let deformation = symmetrize(&(d * d.transpose() * (options.kappa * radius * radius / 4.0)));
    Ok(FeatureResidualCov {
        detection: Matrix2::identity() * (sd * sd),
        geometric,
        deformation,
        degenerate: ds.is_degenerate(),
    })
}

/// `r / sigma`. Infinite variance whitens to 0 (no information).
pub fn whiten_scalar(residual: f64, variance: f64) -> Result<f64> {
    if variance == f64::INFINITY {
        return Ok(0.0);
    }
    if !(variance > 0.0) {
        return Err(Error::SingularCovariance);
    }
    Ok(residual / variance.max(VARIANCE_FLOOR).sqrt())
}

/// `L^-1` for a 2x2 covariance `L L^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Whitener2 {
    l_inv: Matrix2<f64>,
}

impl Whitener2 {
    pub fn new(cov: &Matrix2<f64>) -> Result<Self> {
        if !cov.iter().all(|x| x.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let eig = SymmetricEigen::new(symmetrize(cov)).eigenvalues;
        if !(eig.max() > 0.0) || eig.min() < 1e-12 * eig.max() {
            return Err(Error::SingularCovariance);
        }
        let a = cov[(0, 0)].sqrt();
        let b = cov[(1, 0)] / a;
        let c = (cov[(1, 1)] - b * b).max(VARIANCE_FLOOR).sqrt();
        Ok(Self { l_inv: Matrix2::new(1.0 / a, 0.0, -b / (a * c), 1.0 / c) })
    }

    pub fn identity() -> Self {
        Self { l_inv: Matrix2::identity() }
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.l_inv
    }

    pub fn apply(&self, r: &Vector2<f64>) -> Vector2<f64> {
        self.l_inv * r
    }
}

pub fn whiten(residual: &Vector2<f64>, cov: &Matrix2<f64>) -> Result<Vector2<f64>> {
    Ok(Whitener2::new(cov)?.apply(residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bearing, PixelPoint};
    use crate::image::GrayImage;
    use crate::surface::PatchSpec;
    use approx::assert_relative_eq;
    use nalgebra::{Vector3, Vector6};
    use proptest::prelude::*;

    fn tum() -> CameraIntrinsics {
        CameraIntrinsics::tum_default()
    }

    fn point(slant_deg: f64) -> SurfacePoint {
        let s = slant_deg.to_radians();
        let x = PixelPoint::new(320.0, 240.0);
        let n = Vector3::new(s.sin(), 0.0, -s.cos());
        SurfacePoint::new(&tum(), 0, x, 0.5, n, PatchSpec::pattern8()).unwrap()
    }

    fn ramp() -> GrayImage {
        GrayImage::from_fn(640, 480, |x, y| 0.3 * x as f64 + 0.1 * y as f64 + 0.0005 * (x * x) as f64)
    }

    fn moved() -> PoseSE3 {
        PoseSE3::exp(&Vector6::new(0.1, 0.02, 0.05, 0.02, 0.1, 0.01))
    }

    fn full_noise() -> NoiseParams {
        NoiseParams {
            sigma_intensity: 2.0,
            sigma_keypoint: 1.0,
            inverse_depth: InverseDepthStd::Relative(0.01),
            pose_cov: NoiseParams::isotropic_pose_cov(1e-3, 1e-3),
        }
    }

    #[test]
    fn no_source_noise_gives_zero_geometric_cov() {
        let noise = NoiseParams::default();
        let c = geometric_pixel_cov(&tum(), &moved(), &point(20.0), &noise).unwrap();
        assert_eq!(c, Matrix2::zeros());
    }

    #[test]
    fn lateral_baseline_closed_form() {
        let k = tum();
        let sp = SurfacePoint::new(&k, 0, PixelPoint::new(k.cx, k.cy), 0.5, -Vector3::z(), PatchSpec::pattern8()).unwrap();
        let b = 0.2;
        let t = PoseSE3::from_translation(Vector3::new(b, 0.0, 0.0));
        let sigma = 0.01;
        let noise = NoiseParams { inverse_depth: InverseDepthStd::Absolute(sigma), ..NoiseParams::default() };
        let c = geometric_pixel_cov(&k, &t, &sp, &noise).unwrap();
        assert_relative_eq!(c[(0, 0)], (k.fx * b * sigma).powi(2), epsilon = 1e-12);
        assert_eq!((c[(0, 1)], c[(1, 0)], c[(1, 1)]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn textureless_images_only_see_sensor_noise() {
        let img = GrayImage::constant(640, 480, 100.0);
        let cov = photometric_residual_cov(&tum(), &moved(), &point(40.0), &img, &img, &full_noise(), &ModelOptions::default()).unwrap();
        for o in &cov.offsets {
            assert_relative_eq!(o.total(), 8.0);
            assert_eq!((o.geometric, o.deformation), (0.0, 0.0));
        }
    }

    #[test]
    fn identity_pose_without_geometric_noise_is_sensor_noise() {
        let img = ramp();
        let noise = NoiseParams { pose_cov: None, inverse_depth: InverseDepthStd::Absolute(0.0), ..full_noise() };
        let cov = photometric_residual_cov(&tum(), &PoseSE3::identity(), &point(50.0), &img, &img, &noise, &ModelOptions::default()).unwrap();
        for o in &cov.offsets {
            assert!(o.deformation < 1e-20);
            assert_relative_eq!(o.total(), 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn source_isolation() {
        let img = ramp();
        let opts = ModelOptions::default();
        let (k, t, sp) = (tum(), moved(), point(30.0));
        let full = photometric_residual_cov(&k, &t, &sp, &img, &img, &full_noise(), &opts).unwrap();
        let no_i = NoiseParams { sigma_intensity: 0.0, ..full_noise() };
        let no_geo = NoiseParams { inverse_depth: InverseDepthStd::Absolute(0.0), pose_cov: None, ..full_noise() };
        let a = photometric_residual_cov(&k, &t, &sp, &img, &img, &no_i, &opts).unwrap();
        let b = photometric_residual_cov(&k, &t, &sp, &img, &img, &no_geo, &opts).unwrap();
        for ((f, a), b) in full.offsets.iter().zip(&a.offsets).zip(&b.offsets) {
            assert_eq!(a.photometric, 0.0);
            assert_eq!((a.geometric, a.deformation), (f.geometric, f.deformation));
            assert_eq!(b.geometric, 0.0);
            assert_eq!((b.photometric, b.deformation), (f.photometric, f.deformation));
            assert!(f.geometric > 0.0);
        }
        assert!(full.offsets.iter().any(|o| o.deformation > 0.0));
        let feat = feature_residual_cov(&k, &t, &sp, &full_noise(), 1.0, &opts).unwrap();
        let feat_nokp = feature_residual_cov(&k, &t, &sp, &NoiseParams { sigma_keypoint: 0.0, ..full_noise() }, 1.0, &opts).unwrap();
        assert_eq!(feat_nokp.detection, Matrix2::zeros());
        assert_eq!((feat_nokp.geometric, feat_nokp.deformation), (feat.geometric, feat.deformation));
    }

    #[test]
    fn out_of_bounds_patch_is_rejected() {
        let img = ramp();
        let k = tum();
        let sp = SurfacePoint::new(&k, 0, PixelPoint::new(1.0, 240.0), 0.5, -Vector3::z(), PatchSpec::pattern8()).unwrap();
        let err = photometric_residual_cov(&k, &PoseSE3::identity(), &sp, &img, &img, &full_noise(), &ModelOptions::default());
        assert!(matches!(err, Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn feature_detection_only_and_octave_scaling() {
        let k = tum();
        let noise = NoiseParams { sigma_keypoint: 1.5, ..NoiseParams::default() };
        let c1 = feature_residual_cov(&k, &PoseSE3::identity(), &point(30.0), &noise, 1.0, &ModelOptions::default()).unwrap();
        assert_relative_eq!(c1.total(), Matrix2::identity() * 2.25, epsilon = 1e-12);
        let c2 = feature_residual_cov(&k, &PoseSE3::identity(), &point(30.0), &noise, 2.0, &ModelOptions::default()).unwrap();
        assert_relative_eq!(c2.detection, c1.detection * 4.0);
    }

    #[test]
    fn whitening_examples() {
        assert_relative_eq!(whiten_scalar(3.0, 9.0).unwrap(), 1.0);
        assert_eq!(whiten_scalar(3.0, f64::INFINITY).unwrap(), 0.0);
        assert!(whiten_scalar(3.0, 0.0).is_err());
        let r = Vector2::new(0.3, -2.0);
        assert_eq!(whiten(&r, &Matrix2::identity()).unwrap(), r);
        assert_eq!(whiten(&r, &Matrix2::new(1.0, 1.0, 1.0, 1.0)).unwrap_err(), Error::SingularCovariance);
        assert!(Whitener2::new(&Matrix2::zeros()).is_err());
        let cov = Matrix2::new(4.0, 1.0, 1.0, 2.0);
        let w = Whitener2::new(&cov).unwrap();
        assert_relative_eq!(w.matrix() * cov * w.matrix().transpose(), Matrix2::identity(), epsilon = 1e-14);
    }

    #[test]
    fn noise_validation() {
        assert!(full_noise().validate().is_ok());
        assert!(NoiseParams { sigma_intensity: -1.0, ..full_noise() }.validate().is_err());
        let mut bad = Matrix6::identity();
        bad[(0, 0)] = -1.0;
        assert!(NoiseParams { pose_cov: Some(bad), ..full_noise() }.validate().is_err());
    }

    fn psd(m: &Matrix2<f64>) -> bool {
        (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0) && SymmetricEigen::new(*m).eigenvalues.min() >= -1e-9 * m.amax().max(1.0)
    }

    proptest! {
        #[test]
        fn feature_cov_is_psd_and_grows_with_sources(
            slant in 0.0..70.0f64,
            rot in prop::array::uniform3(-0.2..0.2f64),
            tr in prop::array::uniform3(-0.3..0.3f64),
            kp in 0.0..3.0f64,
            rel in 0.0..0.05f64,
            octave in 1.0..4.0f64,
        ) {
            let k = tum();
            let t = PoseSE3::exp(&Vector6::new(tr[0], tr[1], tr[2], rot[0], rot[1], rot[2]));
            let sp = point(slant);
            let noise = NoiseParams {
                sigma_keypoint: kp,
                inverse_depth: InverseDepthStd::Relative(rel),
                pose_cov: NoiseParams::isotropic_pose_cov(1e-3, 1e-3),
                ..NoiseParams::default()
            };
            let Ok(c) = feature_residual_cov(&k, &t, &sp, &noise, octave, &ModelOptions::default()) else { return Ok(()) };
            prop_assert!(psd(&c.total()) && psd(&c.geometric) && psd(&c.deformation));
            // Adding a source never shrinks any eigenvalue.
            let base = SymmetricEigen::new(c.detection).eigenvalues;
            let tot = SymmetricEigen::new(c.total()).eigenvalues;
            prop_assert!(tot.min() >= base.min() - 1e-9 && tot.max() >= base.max() - 1e-9);
            prop_assert!(psd(&(c.total() - c.detection)));
        }
    }

    #[test]
    fn gradient_site_follows_reference_transform() {
        // With a pure translation the residual for an offset is sampled at
        // center_warp + o.
        let k = tum();
        let sp = point(0.0);
        let t = PoseSE3::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let plane = plane_from_point(&sp, &k).unwrap();
        let ds = deformation_state_with(&k, &t, &plane, sp.host_pixel, DeformationReference::Translation).unwrap();
        let expect = bearing(&k, sp.host_pixel) / sp.inverse_depth() + t.translation();
        let c = crate::geometry::project(&k, &expect).unwrap();
        assert_relative_eq!(ds.center_warp().to_vector(), c.to_vector(), epsilon = 1e-9);
    }
}
