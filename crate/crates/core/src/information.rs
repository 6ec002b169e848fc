//! Information matrices, state entropy and per-point information gain.
//!
//! All quantities live on the gauge-reduced state of the estimator. The
//! gain of a point is the entropy drop of the state shared with the other
//! points (cameras and other points) when the point's observations are
//! added, with the point's own parameters marginalized. Because the other
//! points' blocks are untouched, this equals the entropy drop of the camera
//! marginal, which is what is computed.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::estimator::{compute_weights, evaluate_residuals, BAProblem, BAState, BlockSystem, EvalOptions, StateLayout, Weighting};
use crate::parallel::par_map;

/// Diagonal load, relative to the largest diagonal entry, added to singular
/// camera marginals for gain computation.
pub const GAIN_REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct InformationState {
    pub matrix: DMatrix<f64>,
    /// Nats; `+inf` when the matrix is singular.
    pub entropy: f64,
    pub singular: bool,
    /// Observations without a usable covariance or outside the images.
    pub skipped_observations: usize,
}

impl InformationState {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let entropy = entropy(&matrix);
        Self { singular: entropy.is_infinite(), matrix, entropy, skipped_observations: 0 }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn entropy_bits(&self) -> f64 {
        self.entropy / std::f64::consts::LN_2
    }
}

/// `ln det` of a symmetric positive definite matrix, `None` otherwise.
pub fn log_det(info: &DMatrix<f64>) -> Option<f64> {
    if info.nrows() == 0 {
        return Some(0.0);
    }
    let chol = info.clone().cholesky()?;
    let ld = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    ld.is_finite().then_some(ld)
}

/// Differential entropy `0.5 ln((2 pi e)^k / det info)` in nats of the
/// Gaussian with information matrix `info`; `+inf` if it is singular.
pub fn entropy(info: &DMatrix<f64>) -> f64 {
    let k = info.nrows() as f64;
    match log_det(info) {
        Some(ld) => 0.5 * (k * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() - ld),
        None => f64::INFINITY,
    }
}

/// Information `J^T cov^-1 J` of a linear-Gaussian measurement model.
pub fn linear_information(jacobian: &DMatrix<f64>, residual_cov: &DMatrix<f64>) -> Result<InformationState> {
    if residual_cov.nrows() != jacobian.nrows() || !residual_cov.is_square() {
        return invalid("residual covariance does not match the Jacobian rows");
    }
    let chol = residual_cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let whitened = chol.l().solve_lower_triangular(jacobian).ok_or(Error::SingularCovariance)?;
    Ok(InformationState::from_matrix(whitened.transpose() * whitened))
}

/// Gauss-Newton information of the weighted problem at `state`.
pub fn information_matrix(problem: &BAProblem, state: &BAState, weighting: Weighting) -> Result<InformationState> {
    let (system, skipped) = linearize(problem, state, weighting)?;
    let mut info = InformationState::from_matrix(symmetrize(system.dense()));
    info.skipped_observations = skipped;
    Ok(info)
}

fn linearize(problem: &BAProblem, state: &BAState, weighting: Weighting) -> Result<(BlockSystem, usize)> {
    let weights = compute_weights(problem, state, weighting);
    let eval = evaluate_residuals(problem, state, &weights, EvalOptions::default())?;
    Ok((BlockSystem::from_evaluation(StateLayout::new(problem), &eval), eval.excluded + eval.dropped))
}

/// Each point's information on the cameras after marginalizing the point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointContributions {
    pub per_point: Vec<DMatrix<f64>>,
    pub skipped_observations: usize,
}

impl PointContributions {
    pub fn compute(problem: &BAProblem, state: &BAState, weighting: Weighting) -> Result<Self> {
        let weights = compute_weights(problem, state, weighting);
        let eval = evaluate_residuals(problem, state, &weights, EvalOptions::default())?;
        let layout = StateLayout::new(problem);
        let c = layout.pose_dim();
        let mut blocks_of = vec![Vec::new(); layout.num_points];
        for b in &eval.blocks {
            blocks_of[b.point].push(b);
        }
        let per_point = par_map(&blocks_of, |blocks| {
            let Some(first) = blocks.first() else {
                return DMatrix::zeros(c, c);
            };
            let d = first.point_jacobian.ncols();
            let mut hcc = DMatrix::zeros(c, c);
            let mut hcp = DMatrix::zeros(c, d);
            let mut hpp = DMatrix::zeros(d, d);
            for b in blocks {
                let jp = &b.point_jacobian;
                for (ca, ja) in &b.pose_jacobians {
                    for (cb, jb) in &b.pose_jacobians {
                        let mut h = hcc.view_mut((*ca, *cb), (6, 6));
                        h += ja.transpose() * jb;
                    }
                    if d > 0 {
                        let mut h = hcp.rows_mut(*ca, 6);
                        h += ja.transpose() * jp;
                    }
                }
                if d > 0 {
                    hpp += jp.transpose() * jp;
                }
            }
            if d > 0 {
                hcc -= &hcp * pseudo_inverse(&hpp) * hcp.transpose();
            }
            symmetrize(hcc)
        });
        Ok(Self { per_point, skipped_observations: eval.excluded + eval.dropped })
    }

    pub fn num_points(&self) -> usize {
        self.per_point.len()
    }

    /// Camera marginal of the points flagged in `included`.
    pub fn marginal(&self, included: &[bool]) -> DMatrix<f64> {
        let c = self.per_point.first().map_or(0, |m| m.nrows());
        let mut s = DMatrix::zeros(c, c);
        for (m, _) in self.per_point.iter().zip(included).filter(|(_, &inc)| inc) {
            s += m;
        }
        s
    }

    /// Gain of `point` relative to the included set (which contains it).
    pub fn gain(&self, point: usize, included: &[bool]) -> PointGain {
        self.gain_against(point, &self.marginal(included))
    }

    fn gain_against(&self, point: usize, with: &DMatrix<f64>) -> PointGain {
        let contribution = &self.per_point[point];
        if contribution.amax() == 0.0 {
            return PointGain { point, gain: 0.0, regularized: false };
        }
        let without = with - contribution;
        if let (Some(a), Some(b)) = (log_det(with), log_det(&without)) {
            return PointGain { point, gain: (0.5 * (a - b)).max(0.0), regularized: false };
        }
        let scale = with.diagonal().max().max(1.0);
        let reg = DMatrix::identity(with.nrows(), with.nrows()) * (GAIN_REGULARIZATION * scale);
        let a = log_det(&(with + &reg));
        let b = log_det(&(without + &reg));
        let gain = match (a, b) {
            (Some(a), Some(b)) => (0.5 * (a - b)).max(0.0),
            _ => 0.0,
        };
        PointGain { point, gain, regularized: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGain {
    pub point: usize,
    /// Entropy drop in nats.
    pub gain: f64,
    /// The gain was measured against the regularized camera marginal.
    pub regularized: bool,
}

/// Entropy drop from adding `point`'s observations to those of all others.
pub fn point_information_gain(problem: &BAProblem, state: &BAState, weighting: Weighting, point: usize) -> Result<PointGain> {
    if point >= problem.num_points() {
        return invalid(format!("point {point} does not exist"));
    }
    let contributions = PointContributions::compute(problem, state, weighting)?;
    Ok(contributions.gain(point, &vec![true; contributions.num_points()]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityResult {
    /// Kept points in ascending id order.
    pub included: Vec<usize>,
    /// Removed points in removal order.
    pub removed: Vec<usize>,
    /// Some gain was measured against a regularized marginal.
    pub regularized: bool,
}

/// Greedy point selection: while some included point's gain is below
/// `threshold`, remove the one with the smallest gain (ties broken by the
/// lower id) and recompute the gains of the rest.
pub fn visibility_filter(problem: &BAProblem, state: &BAState, weighting: Weighting, threshold: f64) -> Result<VisibilityResult> {
    let contributions = PointContributions::compute(problem, state, weighting)?;
    filter_points(&contributions, threshold)
}

pub fn filter_points(contributions: &PointContributions, threshold: f64) -> Result<VisibilityResult> {
    if !(threshold >= 0.0) {
        return invalid(format!("visibility threshold must be non-negative, got {threshold}"));
    }
    let n = contributions.num_points();
    let mut included = vec![true; n];
    let mut removed = Vec::new();
    let mut regularized = false;
    loop {
        let marginal = contributions.marginal(&included);
        let candidates: Vec<usize> = (0..n).filter(|&p| included[p]).collect();
        let gains = par_map(&candidates, |&p| contributions.gain_against(p, &marginal));
        regularized |= gains.iter().any(|g| g.regularized);
        let worst = gains
            .iter()
            .filter(|g| g.gain < threshold)
            .min_by(|a, b| a.gain.total_cmp(&b.gain).then(a.point.cmp(&b.point)));
        match worst {
            Some(g) => {
                included[g.point] = false;
                removed.push(g.point);
            }
            None => break,
        }
    }
    Ok(VisibilityResult { included: (0..n).filter(|&p| included[p]).collect(), removed, regularized })
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let tol = eig.eigenvalues.amax() * 1e-12;
    let mut inv = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol {
            let v = eig.eigenvectors.column(i);
            inv += v * v.transpose() / l;
        }
    }
    inv
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
