use nalgebra::Matrix2;

use crate::covariance::{feature_residual_cov, photometric_residual_cov, Whitener2};
use crate::error::Result;
use crate::geometry::{project, PoseSE3};
use crate::parallel::par_map_range;
use crate::surface::SurfacePoint;

use super::problem::{BAProblem, BAState, ProblemData, Weighting};

/// Whitening applied to one observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationWeight {
    /// `1 / sigma` per patch offset; 0 for an infinite variance.
    PerOffset(Vec<f64>),
    Whitener(Whitener2),
    /// No usable covariance: the observation carries no weight.
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub per_observation: Vec<ObservationWeight>,
}

impl Weights {
    pub fn excluded(&self) -> usize {
        self.per_observation.iter().filter(|w| matches!(w, ObservationWeight::Excluded)).count()
    }
}

/// Whether covariances are recomputed before `iteration` when refreshing
/// every `every` iterations (0 = compute once and freeze).
pub fn refresh_due(every: usize, iteration: usize) -> bool {
    iteration == 0 || (every > 0 && iteration % every == 0)
}

/// Evaluates the residual covariances at `state`.
pub fn compute_weights(problem: &BAProblem, state: &BAState, weighting: Weighting) -> Weights {
    let per_observation = match &problem.data {
        ProblemData::Photometric { images, points, observations } => par_map_range(observations.len(), |i| {
            let obs = &observations[i];
            let pt = &points[obs.point];
            match weighting {
                Weighting::Uniform => ObservationWeight::PerOffset(vec![1.0; pt.patch.len()]),
                Weighting::Model => {
                    let cov = SurfacePoint::new(
                        &problem.camera,
                        pt.host_view,
                        pt.host_pixel,
                        state.inverse_depths[obs.point],
                        pt.normal,
                        pt.patch.clone(),
                    )
                    .and_then(|sp| {
                        photometric_residual_cov(
                            &problem.camera,
                            &state.relative_pose(pt.host_view, obs.view),
                            &sp,
                            images[pt.host_view].as_ref(),
                            images[obs.view].as_ref(),
                            &problem.noise,
                            &problem.model,
                        )
                    });
                    match cov {
                        Ok(c) if !c.degenerate => ObservationWeight::PerOffset(
                            c.totals().iter().map(|&v| if v.is_finite() && v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect(),
                        ),
                        _ => ObservationWeight::Excluded,
                    }
                }
            }
        }),
        ProblemData::Feature { points, observations } => par_map_range(observations.len(), |i| {
            let obs = &observations[i];
            match weighting {
                Weighting::Uniform => ObservationWeight::Whitener(Whitener2::identity()),
                Weighting::Model => match feature_weight(problem, state, &points[obs.point], obs.point, obs.view, obs.octave_scale) {
                    Ok(w) => ObservationWeight::Whitener(w),
                    Err(_) => ObservationWeight::Excluded,
                },
            }
        }),
    };
    Weights { per_observation }
}

fn feature_weight(
    problem: &BAProblem,
    state: &BAState,
    point: &super::problem::FeaturePoint,
    point_id: usize,
    view: usize,
    octave_scale: f64,
) -> Result<Whitener2> {
    Whitener2::new(&feature_model_cov(problem, state, point, point_id, view, octave_scale)?)
}

/// Model covariance of a keypoint observation at `state`: the host pixel and
/// depth follow from the point position, the normal is rotated into the
/// host frame.
pub fn feature_model_cov(
    problem: &BAProblem,
    state: &BAState,
    point: &super::problem::FeaturePoint,
    point_id: usize,
    view: usize,
    octave_scale: f64,
) -> Result<Matrix2<f64>> {
    let k = &problem.camera;
    let host: &PoseSE3 = &state.poses[point.host_view];
    let x_host = host.transform_point(&state.positions[point_id]);
    let pixel = project(k, &x_host)?;
    let normal = host.rotation() * point.normal;
    let sp = SurfacePoint::new(k, point.host_view, pixel, 1.0 / x_host.z, normal, crate::surface::PatchSpec::pattern8())?;
    let cov = feature_residual_cov(k, &state.relative_pose(point.host_view, view), &sp, &problem.noise, octave_scale, &problem.model)?;
    if cov.degenerate {
        return Err(crate::error::Error::DegenerateWarp(f64::INFINITY));
    }
    Ok(cov.total())
}
