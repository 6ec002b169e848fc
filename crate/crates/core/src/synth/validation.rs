//! Model-versus-oracle validation suites and the paired weighting studies
//! that drive the experiment harness.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2, Vector3};
use rand::Rng;

use crate::covariance::{
    feature_residual_cov, geometric_pixel_cov, photometric_residual_cov, InverseDepthStd, ModelOptions, NoiseParams,
};
use crate::error::{invalid, Result};
use crate::estimator::{solve, BAProblem, BAState, Mode, ProblemData, SolverConfig, Weighting};
use crate::geometry::{bearing, project_inverse_depth, CameraIntrinsics, PixelPoint, PoseSE3};
use crate::information::{filter_points, log_det, PointContributions};
use crate::metrics::{ate_rmse, camera_centers, Alignment};
use crate::parallel::par_map_range;
use crate::rng::SeedTree;
use crate::surface::{PatchSpec, SurfacePoint};

use super::dataset::{make_ba_dataset, DatasetSpec};
use super::montecarlo::{empirical_feature_cov, empirical_geometric_cov, empirical_photometric_cov, CornerOracleSpec};
use super::scene::{SyntheticScene, TexturedPlane};
use super::texture::Texture;

fn to_matrix2(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn largest_eigenvalue(m: &Matrix2<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.max()
}

/// Unit normal tilted `slant_deg` away from the optical axis towards the
/// image direction `azimuth_deg`, facing the camera.
pub fn slanted_normal(slant_deg: f64, azimuth_deg: f64) -> Vector3<f64> {
    let (s, a) = (slant_deg.to_radians(), azimuth_deg.to_radians());
    Vector3::new(s.sin() * a.cos(), s.sin() * a.sin(), -s.cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricSuiteSpec {
    pub configurations: usize,
    pub draws: usize,
    /// Relative inverse-depth std.
    pub inverse_depth_rel: f64,
    /// Isotropic pose tangent std (translation m, rotation rad).
    pub pose_translation_std: f64,
    pub pose_rotation_std: f64,
}

impl Default for GeometricSuiteSpec {
    fn default() -> Self {
        Self { configurations: 12, draws: 100_000, inverse_depth_rel: 0.01, pose_translation_std: 1e-3, pose_rotation_std: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricCase {
    pub index: usize,
    pub pixel: PixelPoint,
    pub depth: f64,
    pub pose: PoseSE3,
    pub model: Matrix2<f64>,
    pub empirical: Matrix2<f64>,
    /// `||empirical - model||_F / ||model||_F`.
    pub rel_error: f64,
}

/// Analytic projected-pixel covariance against its Monte Carlo scatter on
/// random points and relative poses.
pub fn geometric_suite(k: &CameraIntrinsics, spec: &GeometricSuiteSpec, seed: u64) -> Result<Vec<GeometricCase>> {
    let tree = SeedTree::new(seed).child("geometric");
    let noise = NoiseParams {
        inverse_depth: InverseDepthStd::Relative(spec.inverse_depth_rel),
        pose_cov: NoiseParams::isotropic_pose_cov(spec.pose_translation_std, spec.pose_rotation_std),
        ..NoiseParams::default()
    };
    noise.validate()?;
    let mut cases = Vec::with_capacity(spec.configurations);
    let mut attempt = 0u64;
    while cases.len() < spec.configurations {
        let mut rng = tree.stream("configuration", attempt);
        attempt += 1;
        let pixel = PixelPoint::new(rng.random_range(80.0..k.width as f64 - 80.0), rng.random_range(80.0..k.height as f64 - 80.0));
        let depth = rng.random_range(1.0..4.0);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let translation = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2));
        let pose = PoseSE3::from_axis_angle(&axis, rng.random_range(0.0..10f64.to_radians()), translation);
        let Ok(target) = project_inverse_depth(k, &pose, pixel, 1.0 / depth) else { continue };
        if !target.in_bounds(k.width, k.height, 20.0) {
            continue;
        }
        let sp = SurfacePoint::new(k, 0, pixel, 1.0 / depth, -bearing(k, pixel).normalize(), PatchSpec::pattern8())?;
        let model = geometric_pixel_cov(k, &pose, &sp, &noise)?;
        let empirical = to_matrix2(&empirical_geometric_cov(k, &pose, &sp, &noise, spec.draws, tree.child("draws").seed() + attempt)?.cov);
        let rel_error = (empirical - model).norm() / model.norm();
        cases.push(GeometricCase { index: cases.len(), pixel, depth, pose, model, empirical, rel_error });
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricSuiteSpec {
    pub slants_deg: Vec<f64>,
    /// Lateral camera displacement as a fraction of the depth.
    pub baselines: Vec<f64>,
    pub depth: f64,
    /// Image direction towards which the plane is tilted.
    pub tilt_azimuth_deg: f64,
    pub draws: usize,
    pub texture_wavelengths: (f64, f64),
    pub patch: PatchSpec,
    /// Only offsets up to this norm are compared.
    pub max_offset: f64,
}

impl Default for PhotometricSuiteSpec {
    fn default() -> Self {
        Self {
            slants_deg: vec![0.0, 15.0, 30.0, 45.0],
            baselines: vec![0.02, 0.05, 0.1],
            depth: 2.0,
            tilt_azimuth_deg: 30.0,
            draws: 100_000,
            texture_wavelengths: (0.06, 0.2),
            patch: PatchSpec::pattern8(),
            max_offset: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetComparison {
    pub offset: Vector2<f64>,
    pub model_var: f64,
    /// Deformation share of `model_var`.
    pub deformation_var: f64,
    /// Mean squared residual over the draws.
    pub empirical_var: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricCase {
    pub slant_deg: f64,
    pub baseline: f64,
    pub offsets: Vec<OffsetComparison>,
}

/// Host view of a single textured plane through the image center with the
/// given normal, and the laterally displaced target pose.
fn plane_setup(
    k: &CameraIntrinsics,
    spec: &PhotometricSuiteSpec,
    normal: Vector3<f64>,
    baseline: f64,
    seed: u64,
) -> Result<(Arc<SyntheticScene>, SurfacePoint, PoseSE3)> {
    let x = PixelPoint::new(k.cx, k.cy);
    let p = bearing(k, x) * spec.depth;
    let mut rng = SeedTree::new(seed).stream("texture", 0);
    let (lo, hi) = spec.texture_wavelengths;
    let plane = TexturedPlane::new(normal, p, None, Texture::random(&mut rng, 8, lo, hi))?;
    let t = PoseSE3::from_translation(Vector3::new(-baseline * spec.depth, 0.0, 0.0));
    let scene = Arc::new(SyntheticScene::new(*k, vec![plane], vec![PoseSE3::identity(), t], seed));
    let sp = SurfacePoint::new(k, 0, x, 1.0 / spec.depth, normal, spec.patch.clone())?;
    Ok((scene, sp, t))
}

/// Per-offset residual variance of the model against the Monte Carlo
/// residuals on a slant x baseline grid.
pub fn photometric_suite(
    k: &CameraIntrinsics,
    spec: &PhotometricSuiteSpec,
    noise: &NoiseParams,
    model: &ModelOptions,
    seed: u64,
) -> Result<Vec<PhotometricCase>> {
    let tree = SeedTree::new(seed).child("photometric");
    let mut cases = Vec::new();
    for (i, &slant) in spec.slants_deg.iter().enumerate() {
        for (j, &baseline) in spec.baselines.iter().enumerate() {
            let index = (i * spec.baselines.len() + j) as u64;
            let normal = slanted_normal(slant, spec.tilt_azimuth_deg);
            let (scene, sp, t) = plane_setup(k, spec, normal, baseline, tree.child("scene").seed() + index)?;
            let host = scene.sampler(0)?;
            let target = scene.sampler(1)?;
            let cov = photometric_residual_cov(k, &t, &sp, &host, &target, noise, model)?;
            let emp = empirical_photometric_cov(k, &t, &sp, &host, noise, spec.draws, tree.child("draws").seed() + index)?;
            let offsets = cov
                .offsets
                .iter()
                .enumerate()
                .filter(|(_, o)| o.offset.norm() <= spec.max_offset)
                .map(|(m, o)| {
                    let empirical_var = emp.second_moment[(m, m)];
                    let model_var = o.total();
                    OffsetComparison {
                        offset: o.offset,
                        model_var,
                        deformation_var: o.deformation,
                        empirical_var,
                        rel_error: (model_var - empirical_var).abs() / empirical_var,
                    }
                })
                .collect();
            cases.push(PhotometricCase { slant_deg: slant, baseline, offsets });
        }
    }
    Ok(cases)
}

/// Sum of the deformation variances for a fronto-parallel plane seen from
/// the host pose itself.
pub fn trivial_deformation(k: &CameraIntrinsics, spec: &PhotometricSuiteSpec, noise: &NoiseParams, model: &ModelOptions, seed: u64) -> Result<f64> {
    let (scene, sp, _) = plane_setup(k, spec, -Vector3::z(), 0.0, seed)?;
    let host = scene.sampler(0)?;
    let cov = photometric_residual_cov(k, &PoseSE3::identity(), &sp, &host, &host, noise, model)?;
    Ok(cov.offsets.iter().map(|o| o.deformation).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSuiteSpec {
    pub slants_deg: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
    /// Lateral displacement of the target camera, meters.
    pub baseline: f64,
    pub depth: f64,
    pub draws: usize,
    pub oracle: CornerOracleSpec,
}

impl Default for FeatureSuiteSpec {
    fn default() -> Self {
        Self {
            slants_deg: vec![0.0, 15.0, 25.0, 35.0, 45.0],
            azimuths_deg: vec![0.0, 45.0, 90.0],
            baseline: 0.2,
            depth: 2.0,
            draws: 2000,
            oracle: CornerOracleSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCase {
    pub slant_deg: f64,
    pub azimuth_deg: f64,
    pub model: Matrix2<f64>,
    pub empirical: Matrix2<f64>,
    pub model_max_eigenvalue: f64,
    pub empirical_max_eigenvalue: f64,
    pub rel_error: f64,
}

/// Keypoint covariance model against re-detection scatter. A fronto-parallel
/// configuration is evaluated once and shared by all azimuths.
pub fn feature_suite(
    k: &CameraIntrinsics,
    spec: &FeatureSuiteSpec,
    noise: &NoiseParams,
    model: &ModelOptions,
    seed: u64,
) -> Result<Vec<FeatureCase>> {
    let tree = SeedTree::new(seed).child("feature");
    let x = PixelPoint::new(k.cx, k.cy);
    let t = PoseSE3::from_translation(Vector3::new(-spec.baseline, 0.0, 0.0));
    let mut configs = Vec::new();
    for &slant in &spec.slants_deg {
        if slant == 0.0 {
            configs.push((0.0, 0.0));
        } else {
            configs.extend(spec.azimuths_deg.iter().map(|&a| (slant, a)));
        }
    }
    let options = ModelOptions { feature_radius: spec.oracle.footprint_radius(), ..*model };
    configs
        .iter()
        .enumerate()
        .map(|(i, &(slant, azimuth))| {
            let sp = SurfacePoint::new(k, 0, x, 1.0 / spec.depth, slanted_normal(slant, azimuth), PatchSpec::pattern8())?;
            let model = feature_residual_cov(k, &t, &sp, noise, 1.0, &options)?.total();
            let emp = empirical_feature_cov(k, &t, &sp, noise, &spec.oracle, spec.draws, tree.seed() + i as u64)?;
            let empirical = to_matrix2(&emp.cov);
            let (m, e) = (largest_eigenvalue(&model), largest_eigenvalue(&empirical));
            Ok(FeatureCase {
                slant_deg: slant,
                azimuth_deg: azimuth,
                model,
                empirical,
                model_max_eigenvalue: m,
                empirical_max_eigenvalue: e,
                rel_error: (m - e).abs() / e,
            })
        })
        .collect()
}

/// Pairs `(fronto, slanted)` of case indices and whether model and
/// empirical scatter order their largest eigenvalues the same way.
pub fn feature_ordering(cases: &[FeatureCase]) -> Vec<(usize, usize, bool)> {
    let fronto: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].slant_deg == 0.0).collect();
    let mut pairs = Vec::new();
    for &f in &fronto {
        for s in (0..cases.len()).filter(|&i| cases[i].slant_deg != 0.0) {
            let m = cases[s].model_max_eigenvalue > cases[f].model_max_eigenvalue;
            let e = cases[s].empirical_max_eigenvalue > cases[f].empirical_max_eigenvalue;
            pairs.push((f, s, m == e));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub dataset: DatasetSpec,
    pub noise: NoiseParams,
    pub model: ModelOptions,
    pub solver: SolverConfig,
    pub seeds: usize,
    pub seed_base: u64,
}

impl BenchmarkSpec {
    pub fn photometric() -> Self {
        Self {
            dataset: DatasetSpec::photometric(),
            noise: NoiseParams { sigma_intensity: 2.0, ..NoiseParams::default() },
            model: ModelOptions::default(),
            solver: SolverConfig::default(),
            seeds: 20,
            seed_base: 1000,
        }
    }

    pub fn feature() -> Self {
        Self {
            dataset: DatasetSpec::feature(),
            noise: NoiseParams { sigma_keypoint: 1.0, ..NoiseParams::default() },
            ..Self::photometric()
        }
    }

    /// Photometric trajectories are compared up to scale.
    pub fn alignment(&self) -> Alignment {
        match self.dataset.mode {
            Mode::Photometric => Alignment::Similarity,
            Mode::Feature => Alignment::Rigid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub seed: u64,
    pub initial_ate: f64,
    /// ATE after uniform and after model weighting.
    pub uniform_ate: f64,
    pub model_ate: f64,
    pub uniform_iterations: usize,
    pub model_iterations: usize,
}

/// Solves each seeded problem from the same start with both weightings.
pub fn ba_benchmark(k: &CameraIntrinsics, spec: &BenchmarkSpec) -> Result<Vec<BenchmarkRun>> {
    if spec.seeds == 0 {
        return invalid("benchmark needs at least one seed");
    }
    let align = spec.alignment();
    par_map_range(spec.seeds, |i| {
        let seed = spec.seed_base + i as u64;
        let d = make_ba_dataset(k, &spec.dataset, &spec.noise, &spec.model, seed)?;
        let gt = camera_centers(&d.ground_truth.poses);
        let run = |w| -> Result<(f64, usize)> {
            let r = solve(&d.problem, &d.initial, &SolverConfig { weighting: w, ..spec.solver })?;
            Ok((ate_rmse(&camera_centers(&r.state.poses), &gt, align)?, r.iterations))
        };
        let (uniform_ate, uniform_iterations) = run(Weighting::Uniform)?;
        let (model_ate, model_iterations) = run(Weighting::Model)?;
        Ok(BenchmarkRun {
            seed,
            initial_ate: ate_rmse(&camera_centers(&d.initial.poses), &gt, align)?,
            uniform_ate,
            model_ate,
            uniform_iterations,
            model_iterations,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationStudySpec {
    pub dataset: DatasetSpec,
    pub noise: NoiseParams,
    pub model: ModelOptions,
    /// Slant of the high-deformation variant relative to the host ray.
    pub grazing_slant_deg: f64,
}

impl Default for InformationStudySpec {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec { num_points: 40, octave_levels: 1, ..DatasetSpec::feature() },
            noise: NoiseParams { sigma_keypoint: 0.14, ..NoiseParams::default() },
            model: ModelOptions { kappa: 0.27, ..ModelOptions::default() },
            grazing_slant_deg: 70.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedGain {
    pub point: usize,
    /// Number of views observing the point, host included.
    pub views: usize,
    pub weighting: Weighting,
    /// Gain of the point with a surface facing its host camera.
    pub low_deformation: f64,
    /// Gain of the same observations on a grazing surface.
    pub high_deformation: f64,
}

/// Rotates the host-facing normal of a point by `slant_deg` about an axis
/// perpendicular to its viewing ray.
fn grazing_normal(ray: &Vector3<f64>, slant_deg: f64) -> Vector3<f64> {
    let facing = -ray.normalize();
    let axis = facing.cross(&Vector3::y()).normalize();
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), slant_deg.to_radians()) * facing
}

/// Copy of a feature problem where each point's surface faces its host
/// camera, or is grazing where `grazing(point)` holds.
fn with_surface_normals(problem: &BAProblem, truth: &BAState, slant_deg: f64, grazing: impl Fn(usize) -> bool) -> BAProblem {
    let mut problem = problem.clone();
    if let ProblemData::Feature { points, .. } = &mut problem.data {
        for (j, p) in points.iter_mut().enumerate() {
            let host = &truth.poses[p.host_view];
            let ray = host.transform_point(&truth.positions[j]);
            let n = if grazing(j) { grazing_normal(&ray, slant_deg) } else { -ray.normalize() };
            p.normal = host.inverse().rotation() * n;
        }
    }
    problem
}

/// For every point of a feature problem at the ground truth, the entropy
/// drop of the cameras from its observations when its surface faces the
/// host camera versus when it is grazing, with every other point facing.
/// With only two views the deformation of a laterally moving camera acts
/// along the epipolar line, which the point's depth absorbs, so the two
/// gains can coincide.
pub fn deformation_gain_study(k: &CameraIntrinsics, spec: &InformationStudySpec, seed: u64) -> Result<Vec<PairedGain>> {
    if spec.dataset.mode != Mode::Feature {
        return invalid("the information study uses feature problems");
    }
    let d = make_ba_dataset(k, &spec.dataset, &spec.noise, &spec.model, seed)?;
    let truth = &d.ground_truth;
    let with_normals = |grazing: bool| with_surface_normals(&d.problem, truth, spec.grazing_slant_deg, |_| grazing);
    let mut views = vec![0; d.problem.num_points()];
    for p in d.problem.observation_points() {
        views[p] += 1;
    }
    let facing = with_normals(false);
    let grazing = with_normals(true);
    let mut out = Vec::new();
    for w in [Weighting::Uniform, Weighting::Model] {
        let low = PointContributions::compute(&facing, truth, w)?;
        let high = PointContributions::compute(&grazing, truth, w)?;
        let all = low.marginal(&vec![true; low.num_points()]);
        // Point 0 anchors the scale gauge, so its gain is not comparable.
        for j in 1..low.num_points() {
            let rest = &all - &low.per_point[j];
            let base = log_det(&rest);
            let gain = |c: &DMatrix<f64>| match (log_det(&(&rest + c)), base) {
                (Some(a), Some(b)) => 0.5 * (a - b),
                _ => f64::NAN,
            };
            out.push(PairedGain {
                point: j,
                views: views[j],
                weighting: w,
                low_deformation: gain(&low.per_point[j]),
                high_deformation: gain(&high.per_point[j]),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedSelection {
    pub weighting: Weighting,
    pub threshold: f64,
    /// Kept points whose surface faces the host camera / is grazing.
    pub kept_facing: usize,
    pub kept_grazing: usize,
}

/// Visibility filtering of a feature problem in which every odd point lies
/// on a grazing surface. The threshold is the median single-point gain of
/// the full set under the same weighting.
pub fn mixed_visibility_study(k: &CameraIntrinsics, spec: &InformationStudySpec, seed: u64) -> Result<Vec<MixedSelection>> {
    if spec.dataset.mode != Mode::Feature {
        return invalid("the information study uses feature problems");
    }
    let d = make_ba_dataset(k, &spec.dataset, &spec.noise, &spec.model, seed)?;
    let problem = with_surface_normals(&d.problem, &d.ground_truth, spec.grazing_slant_deg, |j| j % 2 == 1);
    [Weighting::Uniform, Weighting::Model]
        .into_iter()
        .map(|w| {
            let contributions = PointContributions::compute(&problem, &d.ground_truth, w)?;
            let all = vec![true; contributions.num_points()];
            let gains: Vec<f64> = (1..contributions.num_points()).map(|j| contributions.gain(j, &all).gain).collect();
            let threshold = crate::stats::median(&gains);
            let selection = filter_points(&contributions, threshold)?;
            let kept_grazing = selection.included.iter().filter(|&&j| j % 2 == 1).count();
            Ok(MixedSelection {
                weighting: w,
                threshold,
                kept_facing: selection.included.len() - kept_grazing,
                kept_grazing,
            })
        })
        .collect()
}
