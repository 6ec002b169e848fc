//! Small deterministic problems for testing estimators: exact ground
//! truth, measurements drawn from the model covariance, perturbed states.
//! Construction panics on failure.

use std::sync::Arc;

use nalgebra::{Cholesky, Vector2, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{ModelOptions, NoiseParams};
use crate::estimator::{feature_model_cov, BAProblem, BAState, PhotometricObservation, PhotometricPoint, ProblemData};
use crate::geometry::{project, CameraIntrinsics, PixelPoint, PoseSE3};
use crate::image::ImageSampler;
use crate::rng::SeedTree;
use crate::surface::PatchSpec;

use super::{make_ba_dataset, BADataset, DatasetSpec, SyntheticScene, Texture, TexturedPlane};

/// Two fronto-parallel panels at different depths and cameras that only
/// translate parallel to them, rendered analytically. Patches then move
/// rigidly between views, so the ground truth has exactly zero residual.
pub fn flat_photometric(k: &CameraIntrinsics, seed: u64, num_points: usize, patch: PatchSpec) -> (BAProblem, BAState) {
    let k = *k;
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream("texture", 0);
    let planes = vec![
        TexturedPlane::new(-Vector3::z(), Vector3::new(-0.6, 0.0, 2.0), Some(Vector2::new(0.62, 2.0)), Texture::random(&mut rng, 8, 0.08, 0.2))
            .expect("fixture construction"),
        TexturedPlane::new(-Vector3::z(), Vector3::new(0.9, 0.0, 3.0), Some(Vector2::new(0.9, 3.0)), Texture::random(&mut rng, 8, 0.08, 0.2))
            .expect("fixture construction"),
    ];
    let poses: Vec<PoseSE3> = [(0.0, 0.0), (-0.05, 0.01), (-0.1, -0.02), (-0.03, 0.05)]
        .iter()
        .map(|&(x, y)| PoseSE3::from_translation(Vector3::new(x, y, 0.0)))
        .collect();
    let scene = Arc::new(SyntheticScene::new(k, planes, poses.clone(), seed));
    let images: Vec<Arc<dyn ImageSampler>> =
        (0..poses.len()).map(|v| Arc::new(scene.sampler(v).expect("fixture construction")) as Arc<dyn ImageSampler>).collect();
    let mut points = Vec::new();
    let mut observations = Vec::new();
    let mut inverse_depths = Vec::new();
    let mut prng = tree.stream("points", 0);
    while points.len() < num_points {
        let host = points.len() % poses.len();
        let x = PixelPoint::new(prng.random_range(40.0..600.0), prng.random_range(40.0..440.0));
        let Some(hit) = scene.cast(&poses[host], x) else { continue };
        let g = images[host].gradient(x.u, x.v).expect("fixture construction");
        if g.norm() < 5.0 {
            continue;
        }
        // Stay clear of the depth edge between the panels.
        let edge = [-12.0, 12.0].iter().all(|du| scene.cast(&poses[host], PixelPoint::new(x.u + du, x.v)).is_some_and(|h| h.plane == hit.plane));
        if !edge {
            continue;
        }
        let views: Vec<usize> = (0..poses.len())
            .filter(|&v| v != host)
            .filter(|&v| {
                let p = project(&k, &poses[v].transform_point(&hit.point)).expect("fixture construction");
                p.in_bounds(k.width, k.height, 15.0)
                    && [-12.0, 12.0].iter().all(|du| scene.cast(&poses[v], PixelPoint::new(p.u + du, p.v)).is_some_and(|h| h.plane == hit.plane))
            })
            .collect();
        if views.is_empty() {
            continue;
        }
        let j = points.len();
        observations.extend(views.iter().map(|&view| PhotometricObservation { point: j, view }));
        points.push(PhotometricPoint { host_view: host, host_pixel: x, normal: -Vector3::z(), patch: patch.clone() });
        inverse_depths.push(1.0 / poses[host].transform_point(&hit.point).z);
    }
    let problem = BAProblem {
        camera: k,
        num_views: poses.len(),
        data: ProblemData::Photometric { images, points, observations },
        noise: NoiseParams::default(),
        model: ModelOptions::default(),
    };
    (problem, BAState::photometric(poses, inverse_depths))
}

/// Feature dataset whose measurements are replaced by exact projections.
pub fn exact_feature(k: &CameraIntrinsics, seed: u64, num_points: usize) -> BADataset {
    let spec = DatasetSpec { num_points, num_views: 4, ..DatasetSpec::feature() };
    let mut d = make_ba_dataset(k, &spec, &NoiseParams::default(), &ModelOptions::default(), seed).expect("fixture construction");
    let k = d.problem.camera;
    let truth = d.ground_truth.clone();
    if let ProblemData::Feature { observations, .. } = &mut d.problem.data {
        for o in observations {
            o.measured = project(&k, &truth.poses[o.view].transform_point(&truth.positions[o.point])).expect("fixture construction");
        }
    }
    d
}

/// Redraws every keypoint measurement of a feature dataset from the model
/// covariance at the ground truth.
pub fn redraw_feature_noise(d: &BADataset, seed: u64) -> BAProblem {
    let mut problem = d.problem.clone();
    let truth = &d.ground_truth;
    let mut rng = SeedTree::new(seed).stream("redraw", 0);
    let k = problem.camera;
    let ProblemData::Feature { points, observations } = &problem.data else { panic!("feature dataset expected") };
    let measured: Vec<PixelPoint> = observations
        .iter()
        .map(|o| {
            let cov = feature_model_cov(&problem, truth, &points[o.point], o.point, o.view, o.octave_scale).expect("fixture construction");
            let l = Cholesky::new(cov).expect("fixture construction").l();
            let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let p = project(&k, &truth.poses[o.view].transform_point(&truth.positions[o.point])).expect("fixture construction");
            PixelPoint::from_vector(&(p.to_vector() + l * z))
        })
        .collect();
    if let ProblemData::Feature { observations, .. } = &mut problem.data {
        for (o, m) in observations.iter_mut().zip(measured) {
            o.measured = m;
        }
    }
    problem
}

/// Perturbs every pose but the first by a tangent vector of the given std,
/// and every inverse depth / position but the gauge point's.
pub fn perturb_state(state: &BAState, pose_std: f64, depth_rel: f64, seed: u64) -> BAState {
    let mut rng = SeedTree::new(seed).stream("perturb", 0);
    let mut s = state.clone();
    for p in s.poses.iter_mut().skip(1) {
        let xi = Vector6::from_fn(|_, _| pose_std * rng.sample::<f64, _>(StandardNormal));
        *p = p.retract(&xi);
    }
    for rho in s.inverse_depths.iter_mut().skip(1) {
        *rho *= 1.0 + depth_rel * rng.sample::<f64, _>(StandardNormal);
    }
    for x in s.positions.iter_mut().skip(1) {
        *x *= 1.0 + depth_rel * rng.sample::<f64, _>(StandardNormal);
    }
    s
}

/// Largest pose error (translation m, rotation rad) between two states.
pub fn pose_error(a: &BAState, b: &BAState) -> f64 {
    a.poses
        .iter()
        .zip(&b.poses)
        .map(|(p, q)| p.compose(&q.inverse()).log().amax())
        .fold(0.0, f64::max)
}
