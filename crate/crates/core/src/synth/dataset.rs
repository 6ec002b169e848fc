//! Seeded bundle-adjustment problems on textured multi-panel scenes.

use std::sync::Arc;

use nalgebra::{Cholesky, Matrix3, Vector2, Vector3, Vector6};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{ModelOptions, NoiseParams};
use crate::error::{invalid, Error, Result};
use crate::estimator::{
    feature_model_cov, BAProblem, BAState, FeatureObservation, FeaturePoint, Mode, PhotometricObservation, PhotometricPoint,
    ProblemData,
};
use crate::geometry::{bearing, project, CameraIntrinsics, PixelPoint, PoseSE3};
use crate::image::ImageSampler;
use crate::rng::SeedTree;
use crate::surface::PatchSpec;

use super::scene::{add_noise, render, SyntheticScene, TexturedPlane};
use super::texture::Texture;

/// Scene layout and sampling parameters of a synthetic BA problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub mode: Mode,
    pub num_views: usize,
    pub num_points: usize,
    /// Distance of the panels from the first camera, meters.
    pub scene_depth: f64,
    /// Lateral camera displacement between consecutive views, meters.
    pub view_step: f64,
    /// One textured panel per entry, tilted away from the first camera by
    /// this angle (degrees) about a random axis.
    pub panel_slants_deg: Vec<f64>,
    /// Texture wavelength range on the panels, meters.
    pub texture_wavelengths: (f64, f64),
    /// Feature observations get octave scale `octave_factor^k`, `k` uniform
    /// in `0..octave_levels`.
    pub octave_levels: usize,
    pub octave_factor: f64,
    /// Residual patch of photometric points.
    pub patch: PatchSpec,
    /// Minimum host gradient norm of a photometric point, intensity/pixel.
    pub min_gradient: f64,
    /// Std of the initial pose perturbation (translation m, rotation rad).
    pub init_translation_std: f64,
    pub init_rotation_std: f64,
    /// Relative std of the initial inverse-depth perturbation.
    pub init_inverse_depth_std: f64,
}

impl DatasetSpec {
    pub fn photometric() -> Self {
        Self {
            mode: Mode::Photometric,
            num_views: 6,
            num_points: 300,
            scene_depth: 2.0,
            view_step: 0.1,
            panel_slants_deg: vec![0.0, 20.0, 50.0, 70.0],
            texture_wavelengths: (0.04, 0.15),
            octave_levels: 1,
            octave_factor: 1.2,
            patch: PatchSpec::pattern8_wide(),
            min_gradient: 8.0,
            init_translation_std: 2e-3,
            init_rotation_std: 1e-3,
            init_inverse_depth_std: 0.01,
        }
    }

    pub fn feature() -> Self {
        Self {
            mode: Mode::Feature,
            num_points: 80,
            octave_levels: 12,
            min_gradient: 0.0,
            init_translation_std: 0.01,
            init_rotation_std: 5e-3,
            init_inverse_depth_std: 0.05,
            ..Self::photometric()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_views < 2 || self.num_points == 0 {
            return invalid("dataset needs at least 2 views and 1 point");
        }
        if self.panel_slants_deg.is_empty() || self.panel_slants_deg.iter().any(|s| !(0.0..85.0).contains(s)) {
            return invalid("panel slants must lie in [0, 85) degrees");
        }
        let (a, b) = self.texture_wavelengths;
        if !(a > 0.0 && b >= a) {
            return invalid("texture wavelength range is invalid");
        }
        if !(self.scene_depth > 0.0 && self.view_step >= 0.0 && self.octave_levels >= 1 && self.octave_factor >= 1.0) {
            return invalid("dataset geometry parameters are invalid");
        }
        Ok(())
    }
}

/// A problem with its ground truth and a perturbed starting point.
#[derive(Clone)]
pub struct BADataset {
    pub problem: BAProblem,
    pub ground_truth: BAState,
    pub initial: BAState,
    pub scene: Arc<SyntheticScene>,
    /// Slant of each point's surface as seen from its host view, degrees.
    pub slants: Vec<f64>,
}

/// World-to-camera pose of a camera at `c` looking at `p` (y down).
pub fn look_at(c: &Vector3<f64>, p: &Vector3<f64>) -> PoseSE3 {
    let z = (p - c).normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]).transpose();
    PoseSE3::new(r, -(r * c)).expect("look-at rotation is orthonormal")
}

/// Panels tiled over the first camera's view, and a sideways trajectory
/// whose cameras look at points drifting with them.
pub fn make_scene(camera: &CameraIntrinsics, spec: &DatasetSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream("panels", 0);
    let mut slants = spec.panel_slants_deg.clone();
    slants.shuffle(&mut rng);
    let n = slants.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let d = spec.scene_depth;
    let half_w = (camera.cx + 0.5) / camera.fx * d;
    let half_h = (camera.cy + 0.5) / camera.fy * d;
    let mut planes = Vec::with_capacity(n);
    for (i, slant) in slants.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let center = Vector3::new(
            -half_w + (2.0 * c as f64 + 1.0) * half_w / cols as f64,
            -half_h + (2.0 * r as f64 + 1.0) * half_h / rows as f64,
            d,
        );
        let s = slant.to_radians();
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        // Tilt away from the line of sight to the panel center.
        let los = center.normalize();
        let helper = if los.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
        let e1 = helper.cross(&los).normalize();
        let e2 = los.cross(&e1);
        let normal = -los * s.cos() + (e1 * az.cos() + e2 * az.sin()) * s.sin();
        let texture = Texture::random(&mut rng, 8, spec.texture_wavelengths.0, spec.texture_wavelengths.1);
        let extent = Vector2::new(half_w / cols as f64, half_h / rows as f64) * 1.1;
        planes.push(TexturedPlane::new(normal, center, Some(extent), texture)?);
    }
    let poses = (0..spec.num_views)
        .map(|i| {
            if i == 0 {
                return PoseSE3::identity();
            }
            let t = i as f64 * spec.view_step;
            let c = Vector3::new(t, 0.3 * t * (i as f64).sin(), 0.0);
            look_at(&c, &Vector3::new(0.5 * t, 0.0, d))
        })
        .collect();
    Ok(SyntheticScene::new(*camera, planes, poses, seed))
}

/// Border kept free around projected points (patch, gradient stencil and
/// bounds margin of the covariance model, plus slack for the estimate).
const IMAGE_MARGIN: f64 = 12.0;

struct Track {
    plane: usize,
    world: Vector3<f64>,
    host: usize,
    views: Vec<usize>,
}

/// Generates a seeded BA problem with ground truth.
///
/// Photometric mode renders noisy rasters of every view; points are pixels
/// with sufficient gradient, each observed in every other view that sees
/// the same panel unoccluded. Feature mode observes each point in all
/// views with keypoint noise drawn from the model covariance at the ground
/// truth, so the model is exactly consistent with the data. Surface
/// normals are the true panel normals.
pub fn make_ba_dataset(
    camera: &CameraIntrinsics,
    spec: &DatasetSpec,
    noise: &NoiseParams,
    model: &ModelOptions,
    seed: u64,
) -> Result<BADataset> {
    noise.validate()?;
    let scene = Arc::new(make_scene(camera, spec, seed)?);
    let tree = SeedTree::new(seed);
    let samplers: Vec<_> = (0..spec.num_views).map(|v| scene.sampler(v)).collect::<Result<_>>()?;
    let mut tracks = Vec::with_capacity(spec.num_points);
    let mut rng = tree.stream("points", 0);
    let mut attempts = 0;
    while tracks.len() < spec.num_points {
        attempts += 1;
        if attempts > 200 * spec.num_points {
            return invalid(format!("could only place {} of {} points", tracks.len(), spec.num_points));
        }
        let host = tracks.len() % spec.num_views;
        let x = PixelPoint::new(
            rng.random_range(IMAGE_MARGIN..camera.width as f64 - 1.0 - IMAGE_MARGIN),
            rng.random_range(IMAGE_MARGIN..camera.height as f64 - 1.0 - IMAGE_MARGIN),
        );
        let Some(hit) = scene.cast(&scene.poses[host], x) else { continue };
        if spec.mode == Mode::Photometric {
            match samplers[host].gradient(x.u, x.v) {
                Some(g) if g.norm() >= spec.min_gradient => {}
                _ => continue,
            }
        }
        let views: Vec<usize> = (0..spec.num_views).filter(|&v| sees(&scene, v, hit.plane, &hit.point)).collect();
        if !views.contains(&host) || views.len() < 2 {
            continue;
        }
        tracks.push(Track { plane: hit.plane, world: hit.point, host, views });
    }

    let poses = scene.poses.clone();
    let slants = tracks
        .iter()
        .map(|t| {
            let ray = (t.world - poses[t.host].center()).normalize();
            (-scene.planes[t.plane].plane.normal().dot(&ray)).clamp(-1.0, 1.0).acos().to_degrees()
        })
        .collect();
    let world_normals: Vec<Vector3<f64>> = tracks.iter().map(|t| *scene.planes[t.plane].plane.normal()).collect();

    let mut init_rng = tree.stream("initial", 0);
    let initial_poses: Vec<PoseSE3> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                return *p;
            }
            let xi = Vector6::from_fn(|r, _| {
                let std = if r < 3 { spec.init_translation_std } else { spec.init_rotation_std };
                std * init_rng.sample::<f64, _>(StandardNormal)
            });
            p.retract(&xi)
        })
        .collect();
    let depth_factors: Vec<f64> = (0..tracks.len())
        .map(|j| if j == 0 { 1.0 } else { (1.0 + spec.init_inverse_depth_std * init_rng.sample::<f64, _>(StandardNormal)).max(0.2) })
        .collect();

    let (problem, ground_truth, initial) = match spec.mode {
        Mode::Photometric => {
            let images: Vec<Arc<dyn ImageSampler>> = (0..spec.num_views)
                .map(|v| {
                    let (mut img, _) = render(&scene, v)?;
                    add_noise(&mut img, noise.sigma_intensity, &mut tree.stream("image", v as u64));
                    Ok(Arc::new(img) as Arc<dyn ImageSampler>)
                })
                .collect::<Result<_>>()?;
            let mut points = Vec::with_capacity(tracks.len());
            let mut observations = Vec::new();
            let mut inverse_depths = Vec::with_capacity(tracks.len());
            for (j, t) in tracks.iter().enumerate() {
                let pose = &poses[t.host];
                let xh = pose.transform_point(&t.world);
                points.push(PhotometricPoint {
                    host_view: t.host,
                    host_pixel: project(camera, &xh)?,
                    normal: pose.rotation() * world_normals[j],
                    patch: spec.patch.clone(),
                });
                inverse_depths.push(1.0 / xh.z);
                observations.extend(t.views.iter().filter(|&&v| v != t.host).map(|&view| PhotometricObservation { point: j, view }));
            }
            let initial_depths = inverse_depths.iter().zip(&depth_factors).map(|(r, f)| r * f).collect();
            let problem = BAProblem {
                camera: *camera,
                num_views: spec.num_views,
                data: ProblemData::Photometric { images, points, observations },
                noise: *noise,
                model: *model,
            };
            (problem, BAState::photometric(poses.clone(), inverse_depths), BAState::photometric(initial_poses, initial_depths))
        }
        Mode::Feature => {
            let points: Vec<FeaturePoint> =
                tracks.iter().zip(&world_normals).map(|(t, n)| FeaturePoint { host_view: t.host, normal: *n }).collect();
            let positions: Vec<Vector3<f64>> = tracks.iter().map(|t| t.world).collect();
            let truth = BAState::feature(poses.clone(), positions);
            let mut obs_rng = tree.stream("observations", 0);
            let mut observations = Vec::new();
            for (j, t) in tracks.iter().enumerate() {
                for &view in &t.views {
                    let k = obs_rng.random_range(0..spec.octave_levels);
                    let measured = project(camera, &poses[view].transform_point(&t.world))?;
                    observations.push(FeatureObservation { point: j, view, measured, octave_scale: spec.octave_factor.powi(k as i32) });
                }
            }
            let mut problem = BAProblem {
                camera: *camera,
                num_views: spec.num_views,
                data: ProblemData::Feature { points, observations },
                noise: *noise,
                model: *model,
            };
            let perturbed: Vec<Vector2<f64>> = {
                let ProblemData::Feature { points, observations } = &problem.data else { unreachable!() };
                observations
                    .iter()
                    .map(|o| {
                        let cov = feature_model_cov(&problem, &truth, &points[o.point], o.point, o.view, o.octave_scale)?;
                        let l = Cholesky::new(cov).ok_or(Error::SingularCovariance)?.l();
                        let z = Vector2::new(obs_rng.sample(StandardNormal), obs_rng.sample(StandardNormal));
                        Ok(o.measured.to_vector() + l * z)
                    })
                    .collect::<Result<_>>()?
            };
            if let ProblemData::Feature { observations, .. } = &mut problem.data {
                for (o, m) in observations.iter_mut().zip(perturbed) {
                    o.measured = PixelPoint::from_vector(&m);
                }
            }
            let initial_positions = tracks
                .iter()
                .zip(&depth_factors)
                .map(|(t, f)| {
                    let host = &poses[t.host];
                    host.inverse().transform_point(&(host.transform_point(&t.world) / *f))
                })
                .collect();
            (problem, truth, BAState::feature(initial_poses, initial_positions))
        }
    };
    problem.validate()?;
    Ok(BADataset { problem, ground_truth, initial, scene, slants })
}

/// Whether view `v` sees `world` on `plane`: in front, inside the image
/// margin, facing the camera, unoccluded, and away from panel borders.
fn sees(scene: &SyntheticScene, v: usize, plane: usize, world: &Vector3<f64>) -> bool {
    let k = &scene.camera;
    let pose = &scene.poses[v];
    let pc = pose.transform_point(world);
    let Ok(x) = project(k, &pc) else { return false };
    if !x.in_bounds(k.width, k.height, IMAGE_MARGIN) {
        return false;
    }
    let normal_cam = pose.rotation() * scene.planes[plane].plane.normal();
    if !(normal_cam.dot(&bearing(k, x).normalize()) < -0.05) {
        return false;
    }
    let probe = IMAGE_MARGIN / 2.0;
    [(0.0, 0.0), (probe, 0.0), (-probe, 0.0), (0.0, probe), (0.0, -probe)].iter().all(|(du, dv)| {
        scene.cast(pose, PixelPoint::new(x.u + du, x.v + dv)).is_some_and(|h| h.plane == plane)
    }) && scene.cast(pose, x).is_some_and(|h| (h.depth - pc.z).abs() < 1e-6 * pc.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{compute_weights, evaluate_residuals, EvalOptions, Weighting};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::tum_default()
    }

    fn small(mode: Mode) -> DatasetSpec {
        let base = if mode == Mode::Photometric { DatasetSpec::photometric() } else { DatasetSpec::feature() };
        DatasetSpec { num_points: 24, num_views: 4, ..base }
    }

    #[test]
    fn look_at_origin_is_identity() {
        assert_eq!(look_at(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.0)), PoseSE3::identity());
    }

    #[test]
    fn datasets_are_deterministic() {
        for mode in [Mode::Photometric, Mode::Feature] {
            let noise = NoiseParams::default();
            let a = make_ba_dataset(&k(), &small(mode), &noise, &ModelOptions::default(), 5).unwrap();
            let b = make_ba_dataset(&k(), &small(mode), &noise, &ModelOptions::default(), 5).unwrap();
            assert_eq!(a.ground_truth, b.ground_truth);
            assert_eq!(a.initial, b.initial);
            assert_eq!(a.slants, b.slants);
            let c = make_ba_dataset(&k(), &small(mode), &noise, &ModelOptions::default(), 6).unwrap();
            assert_ne!(a.ground_truth, c.ground_truth);
            if let (ProblemData::Feature { observations: oa, .. }, ProblemData::Feature { observations: ob, .. }) =
                (&a.problem.data, &b.problem.data)
            {
                assert_eq!(oa, ob);
            }
        }
    }

    #[test]
    fn ground_truth_residuals_are_small_without_noise() {
        let quiet = NoiseParams { sigma_intensity: 0.0, sigma_keypoint: 0.0, ..NoiseParams::default() };
        let model = ModelOptions { kappa: 0.0, ..ModelOptions::default() };
        let d = make_ba_dataset(&k(), &small(Mode::Feature), &NoiseParams { sigma_keypoint: 1e-9, ..quiet }, &model, 2).unwrap();
        let w = compute_weights(&d.problem, &d.ground_truth, Weighting::Uniform);
        let e = evaluate_residuals(&d.problem, &d.ground_truth, &w, EvalOptions::default()).unwrap();
        assert!(e.residual_vector().amax() < 1e-6);
        // A single fronto-parallel panel seen over a short baseline leaves
        // only interpolation and a little deformation in the residuals.
        let flat = DatasetSpec { panel_slants_deg: vec![0.0], view_step: 0.01, ..small(Mode::Photometric) };
        let d = make_ba_dataset(&k(), &flat, &quiet, &model, 2).unwrap();
        let rms = |problem: &BAProblem, state: &BAState| {
            let w = compute_weights(problem, state, Weighting::Uniform);
            let e = evaluate_residuals(problem, state, &w, EvalOptions::default()).unwrap();
            assert_eq!(e.dropped, 0);
            (e.residual_vector().norm_squared() / e.residual_vector().len() as f64).sqrt()
        };
        let flat_rms = rms(&d.problem, &d.ground_truth);
        assert!(flat_rms < 1.0, "{flat_rms}");
        let d = make_ba_dataset(&k(), &small(Mode::Photometric), &quiet, &model, 2).unwrap();
        let (truth, start) = (rms(&d.problem, &d.ground_truth), rms(&d.problem, &d.initial));
        assert!(truth < start, "{truth} vs {start}");
    }

    #[test]
    fn points_are_hosted_round_robin_and_seen_twice() {
        let d = make_ba_dataset(&k(), &small(Mode::Feature), &NoiseParams::default(), &ModelOptions::default(), 9).unwrap();
        let ProblemData::Feature { points, .. } = &d.problem.data else { panic!() };
        for (j, p) in points.iter().enumerate() {
            assert_eq!(p.host_view, j % 4);
        }
        assert!(d.slants.iter().all(|s| (0.0..90.0).contains(s)));
        d.problem.validate().unwrap();
    }
}
