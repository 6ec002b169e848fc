//! Acceptance suite: runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion. Exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mvcov::config::ExperimentConfig;
use mvcov::report::Report;
use mvcov::run_and_write;
use mvcov_core::estimator::{compute_weights, evaluate_residuals, BAProblem, BAState, EvalOptions, StateLayout, Weighting};
use mvcov_core::geometry::{
    apply_homography, inverse_depth_jacobians, plane_homography, project, project_inverse_depth, projection_jacobian,
    reprojection_jacobians, warp_jacobian, CameraIntrinsics, PixelPoint, PlaneParams, PoseSE3,
};
use mvcov_core::information::{entropy, linear_information};
use mvcov_core::rng::SeedTree;
use mvcov_core::stats::chi_square_standard_normal;
use mvcov_core::surface::PatchSpec;
use mvcov_core::synth::fixtures::{exact_feature, flat_photometric, perturb_state, redraw_feature_noise};
use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

const JACOBIAN_INPUTS: usize = 1000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn k() -> CameraIntrinsics {
    CameraIntrinsics::tum_default()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance")
}

/// Loads an acceptance config with its output redirected under `out`.
fn acceptance_config(name: &str, out: &Path, threads: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&configs_dir().join(format!("{name}.toml"))).expect("acceptance config loads");
    c.experiment.output = out.join(name);
    c.experiment.threads = threads;
    c
}

struct Run {
    report: Report,
    csv: Vec<u8>,
    elapsed: Duration,
}

fn run(name: &str, out: &Path, threads: usize) -> Run {
    let config = acceptance_config(name, out, threads);
    let start = Instant::now();
    let report = run_and_write(&config).unwrap_or_else(|e| panic!("{name}: {e:#}"));
    let elapsed = start.elapsed();
    let csv = fs::read(config.experiment.output.join("report.csv")).unwrap();
    Run { report, csv, elapsed }
}

/// Verdict of a run's tolerance checks within a runtime budget.
fn judge(run: &Run, budget: Duration) -> Outcome {
    let failed: Vec<String> = run.report.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    let details: Vec<&str> = run.report.checks.iter().map(|c| c.detail.as_str()).collect();
    let in_time = run.elapsed <= budget;
    let mut detail = format!("{}; {:.1} s (budget {} s)", details.join("; "), run.elapsed.as_secs_f64(), budget.as_secs());
    if !failed.is_empty() {
        detail = format!("failed [{}]; {detail}", failed.join(" | "));
    }
    outcome(failed.is_empty() && in_time, detail)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

fn random_pose(rng: &mut impl Rng, translation: f64, rotation: f64) -> PoseSE3 {
    let xi = Vector6::from_fn(|i, _| gaussian(rng) * if i < 3 { translation } else { rotation });
    PoseSE3::exp(&xi)
}

fn rel(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm()
}

/// Central differences of `f` along each coordinate of `x`.
fn numeric_jacobian(x: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|c| {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[c] += h;
            minus[c] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

fn pixel_vec(p: PixelPoint) -> DVector<f64> {
    DVector::from_column_slice(&[p.u, p.v])
}

/// Projection, reprojection and inverse-depth Jacobians against central
/// differences; returns the worst relative error.
fn projection_jacobians_error(rng: &mut impl Rng) -> f64 {
    let k = k();
    let mut worst: f64 = 0.0;
    for _ in 0..JACOBIAN_INPUTS {
        let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8), rng.random_range(1.0..5.0));
        let x = DVector::from_column_slice(p.as_slice());
        let numeric = numeric_jacobian(&x, 1e-6, |q| pixel_vec(project(&k, &Vector3::new(q[0], q[1], q[2])).unwrap()));
        let analytic = projection_jacobian(&k, &p).unwrap();
        worst = worst.max(rel(&DMatrix::from_column_slice(2, 3, analytic.as_slice()), &numeric));

        let t = random_pose(rng, 0.1, 0.05);
        let j = reprojection_jacobians(&k, &t, &p).unwrap();
        let numeric_pose =
            numeric_jacobian(&DVector::zeros(6), 1e-6, |xi| pixel_vec(project(&k, &PoseSE3::exp(&Vector6::from_column_slice(xi.as_slice())).compose(&t).transform_point(&p)).unwrap()));
        worst = worst.max(rel(&DMatrix::from_column_slice(2, 6, j.d_pose.as_slice()), &numeric_pose));
        let numeric_point = numeric_jacobian(&x, 1e-6, |q| pixel_vec(project(&k, &t.transform_point(&Vector3::new(q[0], q[1], q[2]))).unwrap()));
        worst = worst.max(rel(&DMatrix::from_column_slice(2, 3, j.d_point.as_slice()), &numeric_point));

        let host = PixelPoint::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
        let rho = 1.0 / p.z;
        let j = inverse_depth_jacobians(&k, &t, host, rho).unwrap();
        let numeric_pose = numeric_jacobian(&DVector::zeros(6), 1e-6, |xi| {
            pixel_vec(project_inverse_depth(&k, &PoseSE3::exp(&Vector6::from_column_slice(xi.as_slice())).compose(&t), host, rho).unwrap())
        });
        worst = worst.max(rel(&DMatrix::from_column_slice(2, 6, j.d_pose.as_slice()), &numeric_pose));
        let numeric_rho = numeric_jacobian(&DVector::from_element(1, rho), 1e-7, |r| pixel_vec(project_inverse_depth(&k, &t, host, r[0]).unwrap()));
        worst = worst.max(rel(&DMatrix::from_column_slice(2, 1, j.d_inv_depth.as_slice()), &numeric_rho));
    }
    worst
}

/// Differential of the plane-induced warp against central differences.
fn warp_differential_error(rng: &mut impl Rng) -> f64 {
    let k = k();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < JACOBIAN_INPUTS {
        let slant = rng.random_range(0.0f64..60.0).to_radians();
        let azimuth = rng.random_range(0.0f64..360.0).to_radians();
        let normal = Vector3::new(slant.sin() * azimuth.cos(), slant.sin() * azimuth.sin(), -slant.cos());
        let plane = PlaneParams::new(normal, rng.random_range(1.0..4.0)).unwrap();
        let t = random_pose(rng, 0.2, 0.1);
        let x = PixelPoint::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
        let h = plane_homography(&k, &t, &plane);
        let Ok(analytic) = warp_jacobian(&h, x) else { continue };
        let numeric = numeric_jacobian(&pixel_vec(x), 1e-4, |q| pixel_vec(apply_homography(&h, PixelPoint::new(q[0], q[1])).unwrap()));
        worst = worst.max(rel(&DMatrix::from_column_slice(2, 2, analytic.as_slice()), &numeric));
        done += 1;
    }
    worst
}

/// Analytic Jacobian of the weighted residuals against central differences
/// along the tangent coordinates, with the weights frozen.
fn ba_jacobian_error(problem: &BAProblem, state: &BAState, weighting: Weighting) -> f64 {
    let weights = compute_weights(problem, state, weighting);
    let layout = StateLayout::new(problem);
    let eval = evaluate_residuals(problem, state, &weights, EvalOptions::default()).unwrap();
    assert_eq!(eval.dropped, 0);
    let analytic = eval.jacobian(&layout);
    let residuals = |step: &DVector<f64>| {
        let e = evaluate_residuals(problem, &layout.retract(state, step), &weights, EvalOptions::default()).unwrap();
        assert_eq!(e.dropped, 0);
        e.residual_vector()
    };
    let numeric = numeric_jacobian(&DVector::zeros(layout.dim()), 1e-6, residuals);
    rel(&analytic, &numeric)
}

fn ba_jacobians_error() -> (f64, f64) {
    let d = exact_feature(&k(), 9, 12);
    let feature = redraw_feature_noise(&d, 2);
    let (photometric, truth) = flat_photometric(&k(), 10, 8, PatchSpec::pattern8());
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..JACOBIAN_INPUTS {
        let w = if i % 2 == 0 { Weighting::Model } else { Weighting::Uniform };
        let s = perturb_state(&d.ground_truth, 1e-2, 5e-2, 10_000 + i as u64);
        worst.0 = worst.0.max(ba_jacobian_error(&feature, &s, w));
        let s = perturb_state(&truth, 3e-3, 2e-2, 20_000 + i as u64);
        worst.1 = worst.1.max(ba_jacobian_error(&photometric, &s, w));
    }
    worst
}

/// Whitened feature residuals at the ground truth of problems whose
/// measurements are drawn from the model covariance.
fn whitened_feature_residuals(count: usize) -> Vec<f64> {
    let mut samples = Vec::with_capacity(count);
    let mut seed = 0;
    while samples.len() < count {
        let d = exact_feature(&k(), 300 + seed, 80);
        let problem = redraw_feature_noise(&d, 400 + seed);
        let weights = compute_weights(&problem, &d.ground_truth, Weighting::Model);
        let e = evaluate_residuals(&problem, &d.ground_truth, &weights, EvalOptions::default()).unwrap();
        samples.extend(e.residual_vector().iter());
        seed += 1;
    }
    samples.truncate(count);
    samples
}

fn spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n)
}

/// Largest entropy increase over random information updates `L -> L + U`
/// with `U` positive semi-definite, possibly rank-deficient.
fn entropy_monotonicity(rng: &mut impl Rng) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let prior = spd(rng, n);
        let rank = rng.random_range(0..=n);
        let j = random_matrix(rng, rank, n);
        let update = j.transpose() * spd(rng, rank) * &j;
        worst = worst.max(entropy(&(&prior + update)) - entropy(&prior));
    }
    worst
}

/// Inverse information of a linear-Gaussian model against the covariance
/// of the generalized least-squares estimator `A y`, computed directly.
fn linear_posterior_error(rng: &mut impl Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let m = n + rng.random_range(2..=6);
        let j = random_matrix(rng, m, n);
        let cov = spd(rng, m);
        let info = linear_information(&j, &cov).unwrap();
        let posterior = info.matrix.clone().try_inverse().unwrap();
        let cov_inv = cov.clone().try_inverse().unwrap();
        let normal = j.transpose() * &cov_inv * &j;
        let a = normal.lu().solve(&(j.transpose() * &cov_inv)).unwrap();
        let oracle = &a * &cov * a.transpose();
        worst = worst.max((posterior - &oracle).norm() / oracle.norm());
    }
    worst
}

fn main() -> ExitCode {
    let out = tempfile::tempdir().unwrap();
    let first = out.path().join("first");
    let second = out.path().join("second");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut runs = Vec::new();

    let geometric = run("geometric", &first, 0);
    results.push(("1 geometric covariance oracle", judge(&geometric, Duration::from_secs(60))));
    runs.push(("geometric", geometric));

    let photometric = run("photometric", &first, 0);
    results.push(("2 photometric covariance oracle", judge(&photometric, Duration::from_secs(300))));
    runs.push(("photometric", photometric));

    let feature = run("feature", &first, 0);
    results.push(("3 feature covariance ordering", judge(&feature, Duration::from_secs(600))));
    runs.push(("feature", feature));

    let benchmark = run("benchmark", &first, 0);
    results.push(("4 weighted BA accuracy", judge(&benchmark, Duration::from_secs(600))));
    runs.push(("benchmark", benchmark));

    let samples = whitened_feature_residuals(10_000);
    let chi = chi_square_standard_normal(&samples, 20).unwrap();
    results.push((
        "5 whitening consistency",
        outcome(
            chi.p_value > 0.01,
            format!("{} whitened residuals, chi-square {:.2} on {} dof, p = {:.3}", samples.len(), chi.statistic, chi.dof, chi.p_value),
        ),
    ));

    let mut rng = SeedTree::new(7).stream("jacobians", 0);
    let projection = projection_jacobians_error(&mut rng);
    let warp = warp_differential_error(&mut rng);
    let (ba_feature, ba_photometric) = ba_jacobians_error();
    results.push((
        "6 Jacobian suite",
        outcome(
            projection <= 1e-5 && warp <= 1e-5 && ba_feature <= 1e-4 && ba_photometric <= 1e-4,
            format!(
                "{JACOBIAN_INPUTS} inputs each; worst relative error: projection {projection:.1e}, warp differential {warp:.1e} (tolerance 1e-5); \
                 feature BA {ba_feature:.1e}, photometric BA {ba_photometric:.1e} (tolerance 1e-4)"
            ),
        ),
    ));

    let mut rng = SeedTree::new(8).stream("information", 0);
    let increase = entropy_monotonicity(&mut rng);
    let posterior = linear_posterior_error(&mut rng);
    let information = run("information", &first, 0);
    let study = judge(&information, Duration::from_secs(600));
    results.push((
        "7 information properties",
        outcome(
            increase <= 0.0 && posterior <= 1e-9 && study.passed,
            format!("largest entropy change under 1000 PSD updates {increase:.2e} nats; linear posterior vs inverse information {posterior:.1e}; {}", study.detail),
        ),
    ));
    runs.push(("information", information));

    // The repeat runs use a single worker thread.
    let mismatched: Vec<&str> = runs.iter().filter(|(name, r)| run(name, &second, 1).csv != r.csv).map(|(name, _)| *name).collect();
    results.push((
        "8 determinism",
        outcome(
            mismatched.is_empty(),
            if mismatched.is_empty() {
                format!("{} acceptance configs rerun with one thread give bit-identical report.csv", runs.len())
            } else {
                format!("report.csv differs for {}", mismatched.join(", "))
            },
        ),
    ));

    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    if results.iter().all(|(_, o)| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
