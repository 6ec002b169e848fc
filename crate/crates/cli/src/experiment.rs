//! Maps each experiment kind onto the validation suites and turns their
//! results into report rows and tolerance checks.

use anyhow::{anyhow, Context, Result};
use mvcov_core::estimator::Weighting;
use mvcov_core::geometry::CameraIntrinsics;
use mvcov_core::information::{information_matrix, point_information_gain};
use mvcov_core::parallel::with_threads;
use mvcov_core::stats::{median, sign_test_p};
use mvcov_core::synth::{
    ba_benchmark, deformation_gain_study, feature_ordering, feature_suite, geometric_suite, make_ba_dataset, mixed_visibility_study,
    photometric_suite, trivial_deformation,
};
use nalgebra::Matrix2;

use crate::config::{ExperimentConfig, ExperimentKind, ModeName};
use crate::report::Report;
use crate::tum::{load_rgbd_sequence, LoadOptions};

/// Fewest random configurations a geometric validation accepts.
pub const MIN_GEOMETRIC_CONFIGURATIONS: usize = 10;

fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::Uniform => "uniform",
        Weighting::Model => "model",
    }
}

fn push_matrix(report: &mut Report, experiment: &str, seed: u64, prefix: &str, m: &Matrix2<f64>) {
    report.push(experiment, seed, format!("{prefix}_uu"), m[(0, 0)]);
    report.push(experiment, seed, format!("{prefix}_uv"), m[(0, 1)]);
    report.push(experiment, seed, format!("{prefix}_vv"), m[(1, 1)]);
}

/// Runs the configured experiment on the configured thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    with_threads(config.experiment.threads, || {
        let k = config.camera()?;
        let mut report = Report::default();
        let kind = config.experiment.kind;
        match kind {
            ExperimentKind::ValidateGeometric => validate_geometric(config, &k, &mut report),
            ExperimentKind::ValidatePhotometric => validate_photometric(config, &k, &mut report),
            ExperimentKind::ValidateFeature => validate_feature(config, &k, &mut report),
            ExperimentKind::BaBenchmark => benchmark(config, &k, &mut report),
            ExperimentKind::InformationStudy => information_study(config, &k, &mut report),
        }
        .with_context(|| format!("experiment {kind}"))?;
        if config.dataset.sequence.is_some() {
            ingest_sequence(config, &k, &mut report).context("loading the RGB-D sequence")?;
        }
        Ok(report)
    })
}

fn validate_geometric(config: &ExperimentConfig, k: &CameraIntrinsics, report: &mut Report) -> Result<()> {
    let name = config.experiment.kind.name();
    let spec = config.geometric_spec();
    let tol = config.validation.tolerance;
    for seed in config.seeds() {
        let cases = geometric_suite(k, &spec, seed)?;
        let worst = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
        for c in &cases {
            let p = format!("case{:02}", c.index);
            report.push(name, seed, format!("{p}.rel_frobenius"), c.rel_error);
            report.push(name, seed, format!("{p}.depth"), c.depth);
            push_matrix(report, name, seed, &format!("{p}.model"), &c.model);
            push_matrix(report, name, seed, &format!("{p}.empirical"), &c.empirical);
        }
        report.push(name, seed, "configurations", cases.len() as f64);
        report.push(name, seed, "worst_rel_frobenius", worst);
        report.check(
            format!("geometric configuration count, seed {seed}"),
            cases.len() >= MIN_GEOMETRIC_CONFIGURATIONS,
            format!("{} configurations (at least {MIN_GEOMETRIC_CONFIGURATIONS})", cases.len()),
        );
        report.check(
            format!("geometric covariance, seed {seed}"),
            worst <= tol,
            format!("worst relative Frobenius error {worst:.4} (tolerance {tol})"),
        );
    }
    Ok(())
}

fn validate_photometric(config: &ExperimentConfig, k: &CameraIntrinsics, report: &mut Report) -> Result<()> {
    let name = config.experiment.kind.name();
    let spec = config.photometric_spec();
    let noise = config.noise_params();
    let model = config.model_options();
    let tol = config.validation.tolerance;
    for seed in config.seeds() {
        let cases = photometric_suite(k, &spec, &noise, &model, seed)?;
        let mut worst: f64 = 0.0;
        for c in &cases {
            let label = format!("slant{:02}_baseline{:03}", c.slant_deg.round() as i64, (c.baseline * 1000.0).round() as i64);
            for o in &c.offsets {
                let p = format!("{label}.offset{:+}{:+}", o.offset.x as i64, o.offset.y as i64);
                report.push(name, seed, format!("{p}.model_var"), o.model_var);
                report.push(name, seed, format!("{p}.deformation_var"), o.deformation_var);
                report.push(name, seed, format!("{p}.empirical_var"), o.empirical_var);
                report.push(name, seed, format!("{p}.rel_error"), o.rel_error);
                worst = worst.max(o.rel_error);
            }
        }
        let trivial = trivial_deformation(k, &spec, &noise, &model, seed)?;
        report.push(name, seed, "worst_rel_error", worst);
        report.push(name, seed, "trivial_deformation_var", trivial);
        report.check(
            format!("photometric per-offset variance, seed {seed}"),
            worst <= tol,
            format!("{} configurations, worst relative error {worst:.4} (tolerance {tol})", cases.len()),
        );
        report.check(
            format!("zero deformation without motion, seed {seed}"),
            trivial == 0.0,
            format!("deformation variance {trivial:e}"),
        );
    }
    Ok(())
}

fn validate_feature(config: &ExperimentConfig, k: &CameraIntrinsics, report: &mut Report) -> Result<()> {
    let name = config.experiment.kind.name();
    let spec = config.feature_spec();
    let noise = config.noise_params();
    let model = config.model_options();
    let tol = config.validation.tolerance;
    for seed in config.seeds() {
        let cases = feature_suite(k, &spec, &noise, &model, seed)?;
        let label = |i: usize| format!("slant{:02}_azimuth{:03}", cases[i].slant_deg.round() as i64, cases[i].azimuth_deg.round() as i64);
        let mut worst: f64 = 0.0;
        for (i, c) in cases.iter().enumerate() {
            let p = label(i);
            report.push(name, seed, format!("{p}.model_max_eigenvalue"), c.model_max_eigenvalue);
            report.push(name, seed, format!("{p}.empirical_max_eigenvalue"), c.empirical_max_eigenvalue);
            report.push(name, seed, format!("{p}.rel_error"), c.rel_error);
            push_matrix(report, name, seed, &format!("{p}.model"), &c.model);
            push_matrix(report, name, seed, &format!("{p}.empirical"), &c.empirical);
            worst = worst.max(c.rel_error);
        }
        let pairs = feature_ordering(&cases);
        for &(f, s, agree) in &pairs {
            report.push(name, seed, format!("ordering.{}.{}", label(f), label(s)), if agree { 1.0 } else { 0.0 });
        }
        let agreeing = pairs.iter().filter(|p| p.2).count();
        report.push(name, seed, "worst_rel_error", worst);
        report.push(name, seed, "ordering_agreement", agreeing as f64 / pairs.len().max(1) as f64);
        report.check(
            format!("feature eigenvalue ordering, seed {seed}"),
            !pairs.is_empty() && agreeing == pairs.len(),
            format!("{agreeing}/{} paired slant configurations agree", pairs.len()),
        );
        report.check(
            format!("feature largest eigenvalue, seed {seed}"),
            worst <= tol,
            format!("worst relative error {worst:.4} (tolerance {tol})"),
        );
    }
    Ok(())
}

fn benchmark(config: &ExperimentConfig, k: &CameraIntrinsics, report: &mut Report) -> Result<()> {
    let name = config.experiment.kind.name();
    let alpha = config.validation.significance;
    for &mode in &config.dataset.modes {
        let spec = config.benchmark_spec(mode).map_err(|e| anyhow!(e))?;
        let runs = ba_benchmark(k, &spec).with_context(|| format!("{} benchmark", mode.name()))?;
        let m = mode.name();
        for r in &runs {
            report.push(name, r.seed, format!("{m}.initial.ate_rmse"), r.initial_ate);
            report.push(name, r.seed, format!("{m}.uniform.ate_rmse"), r.uniform_ate);
            report.push(name, r.seed, format!("{m}.model.ate_rmse"), r.model_ate);
            report.push(name, r.seed, format!("{m}.uniform.iterations"), r.uniform_iterations as f64);
            report.push(name, r.seed, format!("{m}.model.iterations"), r.model_iterations as f64);
        }
        let uniform: Vec<f64> = runs.iter().map(|r| r.uniform_ate).collect();
        let model: Vec<f64> = runs.iter().map(|r| r.model_ate).collect();
        let wins = runs.iter().filter(|r| r.model_ate < r.uniform_ate).count();
        let p = sign_test_p(wins, runs.len());
        let (mu, mm) = (median(&uniform), median(&model));
        let seed = config.experiment.seed;
        report.push(name, seed, format!("{m}.summary.median_uniform_ate"), mu);
        report.push(name, seed, format!("{m}.summary.median_model_ate"), mm);
        report.push(name, seed, format!("{m}.summary.model_wins"), wins as f64);
        report.push(name, seed, format!("{m}.summary.sign_test_p"), p);
        report.check(
            format!("{m} weighted BA accuracy"),
            mm < mu && p < alpha,
            format!("median ATE model {mm:.3e} vs uniform {mu:.3e}, model better on {wins}/{} seeds, sign test p = {p:.2e}", runs.len()),
        );
    }
    Ok(())
}

fn information_study(config: &ExperimentConfig, k: &CameraIntrinsics, report: &mut Report) -> Result<()> {
    let name = config.experiment.kind.name();
    let spec = config.study_spec().map_err(|e| anyhow!(e))?;
    for seed in config.seeds() {
        let gains = deformation_gain_study(k, &spec, seed)?;
        let mut strict = (0, 0);
        let mut unchanged = (0, 0);
        for g in &gains {
            let w = weighting_name(g.weighting);
            let p = format!("point{:03}.{w}", g.point);
            report.push(name, seed, format!("{p}.low_deformation_gain"), g.low_deformation);
            report.push(name, seed, format!("{p}.high_deformation_gain"), g.high_deformation);
            report.push(name, seed, format!("point{:03}.views", g.point), g.views as f64);
            // Two views leave the deformation along the epipolar line, where
            // depth absorbs it; only points seen three or more times count.
            if g.views < 3 {
                continue;
            }
            match g.weighting {
                Weighting::Model => {
                    strict.1 += 1;
                    if g.high_deformation < g.low_deformation {
                        strict.0 += 1;
                    }
                }
                Weighting::Uniform => {
                    unchanged.1 += 1;
                    if g.high_deformation == g.low_deformation {
                        unchanged.0 += 1;
                    }
                }
            }
        }
        report.push(name, seed, "model.strictly_smaller", strict.0 as f64);
        report.push(name, seed, "model.compared", strict.1 as f64);
        report.check(
            format!("deformation lowers model information gain, seed {seed}"),
            strict.1 > 0 && strict.0 == strict.1,
            format!("{}/{} points with three or more views", strict.0, strict.1),
        );
        report.check(
            format!("uniform gain ignores deformation, seed {seed}"),
            unchanged.0 == unchanged.1,
            format!("{}/{} points unchanged", unchanged.0, unchanged.1),
        );
        for s in mixed_visibility_study(k, &spec, seed)? {
            let w = weighting_name(s.weighting);
            report.push(name, seed, format!("mixed.{w}.threshold"), s.threshold);
            report.push(name, seed, format!("mixed.{w}.kept_facing"), s.kept_facing as f64);
            report.push(name, seed, format!("mixed.{w}.kept_grazing"), s.kept_grazing as f64);
        }
    }
    Ok(())
}

fn ingest_sequence(config: &ExperimentConfig, k: &CameraIntrinsics, report: &mut Report) -> Result<()> {
    let d = &config.dataset;
    let dir = d.sequence.as_ref().expect("caller checked");
    let options = LoadOptions {
        depth_scale: d.depth_scale,
        max_time_gap: d.max_time_gap,
        groundtruth: (!d.groundtruth.as_os_str().is_empty()).then(|| d.groundtruth.clone()),
        camera: Some(*k),
    };
    let seq = load_rgbd_sequence(dir, &d.association, &options)?;
    let seed = config.experiment.seed;
    let valid: usize = seq.frames.iter().map(|f| f.depth.data().iter().filter(|&&z| z > 0.0).count()).sum();
    report.push("sequence", seed, "frames", seq.frames.len() as f64);
    report.push("sequence", seed, "frames_dropped", seq.dropped.len() as f64);
    report.push("sequence", seed, "frames_with_pose", seq.frames.iter().filter(|f| f.pose.is_some()).count() as f64);
    report.push("sequence", seed, "valid_depth_pixels", valid as f64);
    Ok(())
}

/// Information carried by one point of the configured synthetic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PointInfo {
    pub mode: ModeName,
    pub point: usize,
    pub weighting: &'static str,
    pub views: usize,
    /// Slant of the point's surface as seen from its host view, degrees.
    pub slant_deg: f64,
    /// Entropy drop of the cameras from the point's observations, nats.
    pub gain: f64,
    pub regularized: bool,
    /// Entropy of the full posterior, bits.
    pub entropy_bits: f64,
}

/// Evaluates `point` of the first configured dataset mode at the ground
/// truth, seeded with the experiment seed.
pub fn point_info(config: &ExperimentConfig, point: usize) -> Result<PointInfo> {
    with_threads(config.experiment.threads, || {
        let k = config.camera()?;
        let mode = config.dataset.modes[0];
        let spec = config.dataset_spec(mode).map_err(|e| anyhow!(e))?;
        let d = make_ba_dataset(&k, &spec, &config.noise_params(), &config.model_options(), config.experiment.seed)?;
        let n = d.problem.num_points();
        if point >= n {
            return Err(anyhow!("point {point} does not exist; the problem has {n} points"));
        }
        let weighting: Weighting = config.estimator.weighting.into();
        let gain = point_information_gain(&d.problem, &d.ground_truth, weighting, point)?;
        let info = information_matrix(&d.problem, &d.ground_truth, weighting)?;
        Ok(PointInfo {
            mode,
            point,
            weighting: weighting_name(weighting),
            views: d.problem.observation_points().into_iter().filter(|&p| p == point).count(),
            slant_deg: d.slants[point],
            gain: gain.gain,
            regularized: gain.regularized,
            entropy_bits: info.entropy_bits(),
        })
    })
}
