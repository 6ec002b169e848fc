use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::Result;
use crate::geometry::{inverse_depth_jacobians, reprojection_jacobians};
use crate::parallel::par_map_range;

use super::layout::StateLayout;
use super::problem::{BAProblem, BAState, ProblemData};
use super::weights::{ObservationWeight, Weights};

/// Huber threshold in whitened units.
pub const HUBER_DELTA: f64 = 1.345;

/// Whitened residuals of one observation with their Jacobian blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub observation: usize,
    pub point: usize,
    pub residuals: DVector<f64>,
    /// `(global column offset, rows x 6 block)` for each free pose involved.
    pub pose_jacobians: Vec<(usize, DMatrix<f64>)>,
    /// Jacobian with respect to the point's free parameters (may have zero
    /// columns for the gauge point).
    pub point_jacobian: DMatrix<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub blocks: Vec<ResidualBlock>,
    pub cost: f64,
    /// Observations that could not be evaluated at this state (point behind
    /// a camera, patch out of bounds).
    pub dropped: usize,
    /// Observations carrying zero weight.
    pub excluded: usize,
}

impl Evaluation {
    pub fn residual_vector(&self) -> DVector<f64> {
        let rows: Vec<f64> = self.blocks.iter().flat_map(|b| b.residuals.iter().copied()).collect();
        DVector::from_vec(rows)
    }

    /// Stacked dense Jacobian over the gauge-reduced state.
    pub fn jacobian(&self, layout: &StateLayout) -> DMatrix<f64> {
        let rows: usize = self.blocks.iter().map(|b| b.residuals.len()).sum();
        let mut j = DMatrix::zeros(rows, layout.dim());
        let mut r = 0;
        for b in &self.blocks {
            let n = b.residuals.len();
            for (col, block) in &b.pose_jacobians {
                j.view_mut((r, *col), (n, 6)).copy_from(block);
            }
            let pc = layout.pose_dim() + layout.point_offset(b.point);
            j.view_mut((r, pc), (n, b.point_jacobian.ncols())).copy_from(&b.point_jacobian);
            r += n;
        }
        j
    }
}

/// Residual-and-Jacobian evaluation options.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    /// Huber threshold in whitened units; `None` is plain least squares.
    pub huber: Option<f64>,
}

/// Evaluates every observation (in parallel) at `state` with fixed weights.
pub fn evaluate_residuals(problem: &BAProblem, state: &BAState, weights: &Weights, options: EvalOptions) -> Result<Evaluation> {
    problem.check_state(state)?;
    let layout = StateLayout::new(problem);
    let results: Vec<Option<ResidualBlock>> = par_map_range(problem.num_observations(), |i| {
        let weight = &weights.per_observation[i];
        if matches!(weight, ObservationWeight::Excluded) {
            return None;
        }
        let block = match &problem.data {
            ProblemData::Photometric { .. } => photometric_block(problem, &layout, state, i, weight),
            ProblemData::Feature { .. } => feature_block(problem, &layout, state, i, weight),
        }?;
        Some(robustify(block, options.huber))
    });
    let excluded = weights.excluded();
    let mut blocks = Vec::with_capacity(results.len());
    let mut dropped = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(b) => blocks.push(b),
            None if !matches!(weights.per_observation[i], ObservationWeight::Excluded) => dropped += 1,
            None => {}
        }
    }
    let cost = blocks.iter().map(|b| b.cost).sum();
    Ok(Evaluation { blocks, cost, dropped, excluded })
}

fn robustify(mut block: ResidualBlock, huber: Option<f64>) -> ResidualBlock {
    let Some(delta) = huber else {
        block.cost = 0.5 * block.residuals.norm_squared();
        return block;
    };
    // Per scalar residual for patches, per 2-vector for keypoints.
    let groups: Vec<(usize, usize)> = if block.residuals.len() == 2 {
        vec![(0, 2)]
    } else {
        (0..block.residuals.len()).map(|i| (i, 1)).collect()
    };
    let mut cost = 0.0;
    for (start, len) in groups {
        let e = block.residuals.rows(start, len).norm();
        if e <= delta {
            cost += 0.5 * e * e;
        } else {
            cost += delta * (e - 0.5 * delta);
            let s = (delta / e).sqrt();
            block.residuals.rows_mut(start, len).scale_mut(s);
            for (_, j) in block.pose_jacobians.iter_mut() {
                j.rows_mut(start, len).scale_mut(s);
            }
            block.point_jacobian.rows_mut(start, len).scale_mut(s);
        }
    }
    block.cost = cost;
    block
}

fn photometric_block(
    problem: &BAProblem,
    layout: &StateLayout,
    state: &BAState,
    index: usize,
    weight: &ObservationWeight,
) -> Option<ResidualBlock> {
    let ProblemData::Photometric { images, points, observations } = &problem.data else { unreachable!() };
    let ObservationWeight::PerOffset(w) = weight else { return None };
    let obs = observations[index];
    let pt = &points[obs.point];
    let t = state.relative_pose(pt.host_view, obs.view);
    let rho = state.inverse_depths[obs.point];
    let jac = inverse_depth_jacobians(&problem.camera, &t, pt.host_pixel, rho).ok()?;
    let host_img = images[pt.host_view].as_ref();
    let target_img = images[obs.view].as_ref();
    let n = pt.patch.len();
    let margin = problem.model.margin;
    let mut residuals = DVector::zeros(n);
    let mut d_center = DMatrix::zeros(n, 2);
    for (k, o) in pt.patch.offsets().iter().enumerate() {
        let x = pt.host_pixel.offset(o);
        let y = jac.pixel.offset(o);
        if !y.in_bounds(target_img.width(), target_img.height(), margin) {
            return None;
        }
        let ih = host_img.intensity(x.u, x.v)?;
        let it = target_img.intensity(y.u, y.v)?;
        let g = target_img.gradient(y.u, y.v)?;
        residuals[k] = w[k] * (it - ih);
        d_center[(k, 0)] = w[k] * g.x;
        d_center[(k, 1)] = w[k] * g.y;
    }
    let d_pose = to_dmatrix(&jac.d_pose);
    let mut pose_jacobians = Vec::new();
    if let Some(c) = layout.pose_offset(obs.view) {
        pose_jacobians.push((c, &d_center * &d_pose));
    }
    if let Some(c) = layout.pose_offset(pt.host_view) {
        let ad = t.adjoint();
        let ad = DMatrix::from_iterator(6, 6, ad.iter().copied());
        pose_jacobians.push((c, -(&d_center * &d_pose) * ad));
    }
    let point_jacobian = if layout.point_dim(obs.point) == 0 {
        DMatrix::zeros(n, 0)
    } else {
        &d_center * DMatrix::from_column_slice(2, 1, jac.d_inv_depth.as_slice())
    };
    Some(ResidualBlock { observation: index, point: obs.point, residuals, pose_jacobians, point_jacobian, cost: 0.0 })
}

fn feature_block(
    problem: &BAProblem,
    layout: &StateLayout,
    state: &BAState,
    index: usize,
    weight: &ObservationWeight,
) -> Option<ResidualBlock> {
    let ProblemData::Feature { observations, .. } = &problem.data else { unreachable!() };
    let ObservationWeight::Whitener(w) = weight else { return None };
    let obs = observations[index];
    let rj = reprojection_jacobians(&problem.camera, &state.poses[obs.view], &state.positions[obs.point]).ok()?;
    let l = to_dmatrix(w.matrix());
    let r = Vector2::new(obs.measured.u - rj.pixel.u, obs.measured.v - rj.pixel.v);
    let residuals = DVector::from_column_slice(w.apply(&r).as_slice());
    let mut pose_jacobians = Vec::new();
    if let Some(c) = layout.pose_offset(obs.view) {
        pose_jacobians.push((c, -(&l * to_dmatrix(&rj.d_pose))));
    }
    let pd = layout.point_dim(obs.point);
    let d_point = -(&l * to_dmatrix(&rj.d_point));
    let point_jacobian = d_point.columns(0, pd).into_owned();
    Some(ResidualBlock { observation: index, point: obs.point, residuals, pose_jacobians, point_jacobian, cost: 0.0 })
}

fn to_dmatrix<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::RawStorage<f64, R, C>>(
    m: &nalgebra::Matrix<f64, R, C, S>,
) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}
