use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covariance::NoiseParams;
use crate::error::{invalid, Error, Result};
use crate::geometry::{apply_homography, bearing, plane_homography, project_inverse_depth, CameraIntrinsics, PlaneParams, PoseSE3};
use crate::image::ImageSampler;
use crate::parallel::par_map_range;
use crate::rng::SeedTree;
use crate::surface::SurfacePoint;

use super::texture::{random_sinusoids, Corner, Texture};

/// Largest tolerated fraction of excluded draws.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Sample statistics of a set of vector draws.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCov {
    pub n: usize,
    pub mean: DVector<f64>,
    /// Unbiased covariance about the sample mean.
    pub cov: DMatrix<f64>,
    /// Mean of `x x^T` (about zero).
    pub second_moment: DMatrix<f64>,
    /// Standard error of each entry of `cov`.
    pub std_error: DMatrix<f64>,
    /// Standard error of each entry of `second_moment`.
    pub second_moment_std_error: DMatrix<f64>,
    /// Draws excluded before computing the statistics.
    pub excluded: usize,
}

impl EmpiricalCov {
    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return invalid(format!("need at least 2 samples, got {n}"));
        }
        let d = samples[0].len();
        let mean = samples.iter().fold(DVector::zeros(d), |acc, s| acc + s) / n as f64;
        let mut cov = DMatrix::zeros(d, d);
        let mut raw = DMatrix::zeros(d, d);
        for s in samples {
            let c = s - &mean;
            cov += &c * c.transpose();
            raw += s * s.transpose();
        }
        cov /= (n - 1) as f64;
        raw /= n as f64;
        let mut se = DMatrix::zeros(d, d);
        let mut raw_se = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (mut a, mut b) = (0.0, 0.0);
                for s in samples {
                    let zc = (s[i] - mean[i]) * (s[j] - mean[j]) - cov[(i, j)];
                    let zr = s[i] * s[j] - raw[(i, j)];
                    a += zc * zc;
                    b += zr * zr;
                }
                se[(i, j)] = (a / (n - 1) as f64 / n as f64).sqrt();
                raw_se[(i, j)] = (b / (n - 1) as f64 / n as f64).sqrt();
            }
        }
        Ok(Self { n, mean, cov, second_moment: raw, std_error: se, second_moment_std_error: raw_se, excluded: 0 })
    }

    /// Drops failed draws, enforcing the exclusion budget.
    pub fn from_draws(draws: Vec<Option<DVector<f64>>>) -> Result<Self> {
        let total = draws.len();
        let samples: Vec<DVector<f64>> = draws.into_iter().flatten().collect();
        let excluded = total - samples.len();
        if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
            return Err(Error::DegenerateDraws { excluded, total });
        }
        let mut e = Self::from_samples(&samples)?;
        e.excluded = excluded;
        Ok(e)
    }
}

/// Draws inverse-depth and relative-pose perturbations from `NoiseParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricNoise {
    sigma_inverse_depth: f64,
    pose_sqrt: Option<Matrix6<f64>>,
}

impl GeometricNoise {
    pub fn new(noise: &NoiseParams, inverse_depth: f64) -> Self {
        let pose_sqrt = noise.pose_cov.map(|c| {
            let e = SymmetricEigen::new(c);
            let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
            e.eigenvectors * Matrix6::from_diagonal(&s)
        });
        Self { sigma_inverse_depth: noise.inverse_depth.at(inverse_depth), pose_sqrt }
    }

    /// Returns `(rho + e_rho, exp(xi) * t)`.
    pub fn perturb<R: Rng + ?Sized>(&self, rng: &mut R, rho: f64, t: &PoseSE3) -> (f64, PoseSE3) {
        let z: f64 = rng.sample(StandardNormal);
        let rho = rho + self.sigma_inverse_depth * z;
        let pose = match &self.pose_sqrt {
            Some(l) => {
                let xi = l * Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                t.retract(&xi)
            }
            None => *t,
        };
        (rho, pose)
    }
}

fn draw_rng(seed: u64, name: &str, i: usize) -> ChaCha8Rng {
    SeedTree::new(seed).stream(name, i as u64)
}

/// Scatter of the projected pixel under inverse-depth and pose noise.
pub fn empirical_geometric_cov(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    sp: &SurfacePoint,
    noise: &NoiseParams,
    n: usize,
    seed: u64,
) -> Result<EmpiricalCov> {
    let g = GeometricNoise::new(noise, sp.inverse_depth());
    let draws = par_map_range(n, |i| {
        let mut rng = draw_rng(seed, "geometric", i);
        let (rho, pose) = g.perturb(&mut rng, sp.inverse_depth(), t);
        project_inverse_depth(k, &pose, sp.host_pixel, rho).ok().map(|p| DVector::from_vec(vec![p.u, p.v]))
    });
    EmpiricalCov::from_draws(draws)
}

/// Host-to-target homography of the plane through the host pixel at inverse
/// depth `rho` with the surface point's normal.
fn surface_homography(k: &CameraIntrinsics, t: &PoseSE3, sp: &SurfacePoint, rho: f64) -> Result<Matrix3<f64>> {
    let plane = PlaneParams::through_point(*sp.normal(), &(bearing(k, sp.host_pixel) / rho))?;
    Ok(plane_homography(k, t, &plane))
}

/// Per-offset residual `I_t(w(x) + o) - I_h(x + o)` under the noise model:
/// the target image shows the surface with the drawn (true) geometry,
/// the patch is sampled at the nominal rigid warp, and both images carry
/// independent intensity noise. `host` is the noiseless host image.
pub fn empirical_photometric_cov<S: ImageSampler>(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    sp: &SurfacePoint,
    host: &S,
    noise: &NoiseParams,
    n: usize,
    seed: u64,
) -> Result<EmpiricalCov> {
    if n < 1000 {
        return invalid(format!("photometric Monte Carlo needs at least 1000 draws, got {n}"));
    }
    let center = project_inverse_depth(k, t, sp.host_pixel, sp.inverse_depth())?;
    let offsets = sp.patch.offsets().to_vec();
    let host_values: Vec<f64> = offsets
        .iter()
        .map(|o| {
            let x = sp.host_pixel.offset(o);
            host.intensity(x.u, x.v).ok_or(Error::OutOfBounds { u: x.u, v: x.v, margin: 0.0 })
        })
        .collect::<Result<_>>()?;
    let g = GeometricNoise::new(noise, sp.inverse_depth());
    let sigma = noise.sigma_intensity;
    let draws = par_map_range(n, |i| {
        let mut rng = draw_rng(seed, "photometric", i);
        let (rho, pose) = g.perturb(&mut rng, sp.inverse_depth(), t);
        if !(rho > 0.0) {
            return None;
        }
        let h_inv = surface_homography(k, &pose, sp, rho).ok()?.try_inverse()?;
        let mut r = DVector::zeros(offsets.len());
        for (j, o) in offsets.iter().enumerate() {
            let src = apply_homography(&h_inv, center.offset(o)).ok()?;
            let it = host.intensity(src.u, src.v)? + sigma * rng.sample::<f64, _>(StandardNormal);
            let ih = host_values[j] + sigma * rng.sample::<f64, _>(StandardNormal);
            r[j] = it - ih;
        }
        Some(r)
    });
    EmpiricalCov::from_draws(draws)
}

/// Re-detection oracle settings. Each draw textures the surface (in host
/// pixel units) with a smooth X-junction of random orientation at the
/// keypoint plus randomly drawn sinusoids, so deformation errors vary from
/// draw to draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerOracleSpec {
    /// Std of the Gaussian structure-tensor window, host pixels. The
    /// window's footprint radius is twice this.
    pub window_sigma: f64,
    /// Integer search half-width around the expected position, pixels.
    pub search: i32,
    pub corner_amplitude: f64,
    pub corner_width: f64,
    pub overlay_count: usize,
    pub overlay_amplitude: f64,
    pub overlay_min_wavelength: f64,
    pub overlay_max_wavelength: f64,
}

impl Default for CornerOracleSpec {
    fn default() -> Self {
        Self {
            window_sigma: 4.0,
            search: 4,
            corner_amplitude: 60.0,
            corner_width: 2.0,
            overlay_count: 8,
            overlay_amplitude: 20.0,
            overlay_min_wavelength: 8.0,
            overlay_max_wavelength: 24.0,
        }
    }
}

impl CornerOracleSpec {
    pub fn footprint_radius(&self) -> f64 {
        2.0 * self.window_sigma
    }
}

const HARRIS_K: f64 = 0.04;

/// Harris response peak in a square raster (row-major, `size x size`,
/// centered), refined by a least-squares quadratic on the 3x3 neighborhood.
/// Returns the offset from the raster center.
pub fn detect_corner(raster: &[f64], size: usize, window_sigma: f64, search: i32) -> Option<Vector2<f64>> {
    let c = (size / 2) as i32;
    let at = |x: i32, y: i32| raster[(y as usize) * size + x as usize];
    let radius = (3.0 * window_sigma).ceil() as i32;
    if c - search - 1 - radius - 1 < 0 {
        return None;
    }
    let weights: Vec<f64> = (-radius..=radius).map(|d| (-0.5 * (d as f64 / window_sigma).powi(2)).exp()).collect();
    let response = |px: i32, py: i32| {
        let (mut a, mut b, mut cc) = (0.0, 0.0, 0.0);
        for dy in -radius..=radius {
            let wy = weights[(dy + radius) as usize];
            for dx in -radius..=radius {
                let w = wy * weights[(dx + radius) as usize];
                let (x, y) = (px + dx, py + dy);
                let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
                let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
                a += w * gx * gx;
                b += w * gx * gy;
                cc += w * gy * gy;
            }
        }
        a * cc - b * b - HARRIS_K * (a + cc) * (a + cc)
    };
    let span = search + 1;
    let side = (2 * span + 1) as usize;
    let mut map = vec![0.0; side * side];
    for y in -span..=span {
        for x in -span..=span {
            map[((y + span) as usize) * side + (x + span) as usize] = response(c + x, c + y);
        }
    }
    let m = |x: i32, y: i32| map[((y + span) as usize) * side + (x + span) as usize];
    let (mut bx, mut by) = (0, 0);
    for y in -search..=search {
        for x in -search..=search {
            if m(x, y) > m(bx, by) {
                (bx, by) = (x, y);
            }
        }
    }
    if bx.abs() == search || by.abs() == search {
        return None;
    }
    // f = a + b x + c y + d x^2 + e x y + f y^2 on the 3x3 grid.
    let mut ata = nalgebra::Matrix6::<f64>::zeros();
    let mut atb = Vector6::zeros();
    for y in -1..=1 {
        for x in -1..=1 {
            let (xf, yf) = (x as f64, y as f64);
            let row = Vector6::new(1.0, xf, yf, xf * xf, xf * yf, yf * yf);
            ata += row * row.transpose();
            atb += row * m(bx + x, by + y);
        }
    }
    let q = ata.cholesky()?.solve(&atb);
    let hess = nalgebra::Matrix2::new(2.0 * q[3], q[4], q[4], 2.0 * q[5]);
    if !(hess.determinant() > 0.0 && hess[(0, 0)] < 0.0) {
        return None;
    }
    let s = -(hess.try_inverse()? * Vector2::new(q[1], q[2]));
    if s.norm() > 1.0 {
        return None;
    }
    Some(Vector2::new(bx as f64, by as f64) + s)
}

/// Keypoint localization scatter: the corner is re-detected in the target
/// patch (rendered with the drawn geometry) and in the host patch; the error
/// is the target detection minus the nominal warp of the host detection.
pub fn empirical_feature_cov(
    k: &CameraIntrinsics,
    t: &PoseSE3,
    sp: &SurfacePoint,
    noise: &NoiseParams,
    spec: &CornerOracleSpec,
    n: usize,
    seed: u64,
) -> Result<EmpiricalCov> {
    let h_nominal = surface_homography(k, t, sp, sp.inverse_depth())?;
    let center = apply_homography(&h_nominal, sp.host_pixel)?;
    let g = GeometricNoise::new(noise, sp.inverse_depth());
    let half = (3.0 * spec.window_sigma).ceil() as usize + spec.search as usize + 3;
    let size = 2 * half + 1;
    let sigma = noise.sigma_intensity;
    let x0 = sp.host_pixel.to_vector();
    let draws = par_map_range(n, |i| {
        let mut rng = draw_rng(seed, "feature", i);
        let angle = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let texture = Texture {
            base: 127.5,
            sinusoids: random_sinusoids(&mut rng, spec.overlay_count, spec.overlay_min_wavelength, spec.overlay_max_wavelength, spec.overlay_amplitude),
            corner: Some(Corner { center: x0, amplitude: spec.corner_amplitude, width: spec.corner_width, angle }),
        };
        let (rho, pose) = g.perturb(&mut rng, sp.inverse_depth(), t);
        if !(rho > 0.0) {
            return None;
        }
        let h_inv = surface_homography(k, &pose, sp, rho).ok()?.try_inverse()?;
        let mut host = vec![0.0; size * size];
        let mut target = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let q = Vector2::new(x as f64 - half as f64, y as f64 - half as f64);
                host[y * size + x] = texture.value(&(x0 + q)) + sigma * rng.sample::<f64, _>(StandardNormal);
                let src = apply_homography(&h_inv, center.offset(&q)).ok()?;
                target[y * size + x] = texture.value(&src.to_vector()) + sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let ph = detect_corner(&host, size, spec.window_sigma, spec.search)?;
        let pt = detect_corner(&target, size, spec.window_sigma, spec.search)?;
        let expected = apply_homography(&h_nominal, sp.host_pixel.offset(&ph)).ok()?;
        let err = center.offset(&pt).to_vector() - expected.to_vector();
        Some(DVector::from_vec(vec![err.x, err.y]))
    });
    EmpiricalCov::from_draws(draws)
}
