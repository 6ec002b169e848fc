use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvcov_core::covariance::{InverseDepthStd, ModelOptions, NoiseParams};
use mvcov_core::estimator::{solve, SolverConfig, Weighting};
use mvcov_core::geometry::{CameraIntrinsics, PixelPoint, PoseSE3};
use mvcov_core::information::{visibility_filter, PointContributions};
use mvcov_core::parallel::{num_threads, with_threads};
use mvcov_core::surface::{PatchSpec, SurfacePoint};
use mvcov_core::synth::{empirical_geometric_cov, make_ba_dataset, DatasetSpec};
use nalgebra::Vector3;

/// Thread counts to compare: one worker against the full pool.
fn thread_counts() -> Vec<(&'static str, usize)> {
    let mut v = vec![("sequential", 1)];
    if num_threads() > 1 {
        v.push(("parallel", 0));
    }
    v
}

fn geometric_monte_carlo(c: &mut Criterion) {
    let k = CameraIntrinsics::tum_default();
    let t = PoseSE3::from_translation(Vector3::new(-0.1, 0.0, 0.0));
    let sp = SurfacePoint::new(&k, 0, PixelPoint::new(320.0, 240.0), 0.5, -Vector3::z(), PatchSpec::pattern8()).unwrap();
    let noise = NoiseParams {
        inverse_depth: InverseDepthStd::Relative(0.01),
        pose_cov: NoiseParams::isotropic_pose_cov(1e-3, 1e-3),
        ..NoiseParams::default()
    };
    let mut group = c.benchmark_group("geometric_monte_carlo");
    group.sample_size(10);
    for (name, threads) in thread_counts() {
        group.bench_function(BenchmarkId::new(name, 100_000), |b| {
            b.iter(|| with_threads(threads, || empirical_geometric_cov(&k, &t, &sp, &noise, 100_000, 7).unwrap()))
        });
    }
    group.finish();
}

fn bundle_adjustment(c: &mut Criterion) {
    let k = CameraIntrinsics::tum_default();
    let noise = NoiseParams { sigma_keypoint: 1.0, ..NoiseParams::default() };
    let d = make_ba_dataset(&k, &DatasetSpec::feature(), &noise, &ModelOptions::default(), 11).unwrap();
    let config = SolverConfig { weighting: Weighting::Model, ..SolverConfig::default() };
    let mut group = c.benchmark_group("feature_bundle_adjustment");
    group.sample_size(10);
    for (name, threads) in thread_counts() {
        group.bench_function(name, |b| b.iter(|| with_threads(threads, || solve(&d.problem, &d.initial, &config).unwrap())));
    }
    group.finish();
}

fn information(c: &mut Criterion) {
    let k = CameraIntrinsics::tum_default();
    let spec = DatasetSpec { num_points: 100, ..DatasetSpec::photometric() };
    let d = make_ba_dataset(&k, &spec, &NoiseParams::default(), &ModelOptions::default(), 12).unwrap();
    let mut group = c.benchmark_group("photometric_information");
    group.sample_size(10);
    for (name, threads) in thread_counts() {
        group.bench_function(BenchmarkId::new("contributions", name), |b| {
            b.iter(|| with_threads(threads, || PointContributions::compute(&d.problem, &d.ground_truth, Weighting::Model).unwrap()))
        });
        group.bench_function(BenchmarkId::new("visibility_filter", name), |b| {
            b.iter(|| with_threads(threads, || visibility_filter(&d.problem, &d.ground_truth, Weighting::Model, 1e-3).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, geometric_monte_carlo, bundle_adjustment, information);
criterion_main!(benches);
