//! Covariance-weighted bundle adjustment in photometric (patch intensity)
//! and feature (keypoint reprojection) modes.
//!
//! The solver is Levenberg-Marquardt over gauge-reduced parameters with the
//! point blocks eliminated by a Schur complement. Residual covariances are
//! computed at the start and either frozen or refreshed every `k`
//! iterations; each refresh starts a new phase whose cost is measured under
//! its own weights.

mod evaluate;
mod layout;
pub mod lm;
mod normal;
mod problem;
mod weights;

use nalgebra::DVector;

pub use evaluate::{evaluate_residuals, EvalOptions, Evaluation, ResidualBlock, HUBER_DELTA};
pub use layout::StateLayout;
pub use lm::{levenberg_marquardt, Cost, LeastSquares, LmOutcome, LmSettings};
pub use normal::BlockSystem;
pub use problem::{
    BAProblem, BAState, FeatureObservation, FeaturePoint, Mode, PhotometricObservation, PhotometricPoint, ProblemData,
    Weighting,
};
pub use weights::{compute_weights, feature_model_cov, refresh_due, ObservationWeight, Weights};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub weighting: Weighting,
    /// Recompute covariances every this many iterations; 0 freezes them
    /// after the first evaluation.
    pub refresh_every: usize,
    /// Enables the Huber kernel with this threshold (whitened units).
    pub huber: Option<f64>,
    pub lm: LmSettings,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { weighting: Weighting::Model, refresh_every: 0, huber: None, lm: LmSettings::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Index of the weight phase the cost was measured in.
    pub phase: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub state: BAState,
    /// Iterations before which the covariances were (re)computed.
    pub weight_refreshes: Vec<usize>,
    /// Observations without a usable covariance in the last phase.
    pub excluded_observations: usize,
    /// Observations that could not be evaluated at the final state.
    pub dropped_observations: usize,
    /// Gauss-Newton information at the final state with the last weights.
    pub information: BlockSystem,
}

/// The least-squares system for one weight phase.
pub struct WeightedProblem<'a> {
    pub problem: &'a BAProblem,
    pub weights: Weights,
    pub options: EvalOptions,
    pub layout: StateLayout,
}

impl<'a> WeightedProblem<'a> {
    pub fn new(problem: &'a BAProblem, state: &BAState, weighting: Weighting, options: EvalOptions) -> Self {
        Self { problem, weights: compute_weights(problem, state, weighting), options, layout: StateLayout::new(problem) }
    }

    pub fn evaluate(&self, state: &BAState) -> Result<Evaluation> {
        evaluate_residuals(self.problem, state, &self.weights, self.options)
    }

    pub fn system(&self, state: &BAState) -> Result<BlockSystem> {
        Ok(BlockSystem::from_evaluation(self.layout, &self.evaluate(state)?))
    }
}

impl LeastSquares for WeightedProblem<'_> {
    type State = BAState;
    type Linearization = BlockSystem;

    fn linearize(&self, state: &BAState) -> Result<(Cost, BlockSystem)> {
        let eval = self.evaluate(state)?;
        let cost = Cost { value: eval.cost, dropped: eval.dropped };
        Ok((cost, BlockSystem::from_evaluation(self.layout, &eval)))
    }

    fn cost(&self, state: &BAState) -> Result<Cost> {
        let eval = self.evaluate(state)?;
        Ok(Cost { value: eval.cost, dropped: eval.dropped })
    }

    fn solve_damped(&self, lin: &BlockSystem, lambda: f64) -> Option<DVector<f64>> {
        lin.solve_damped(lambda)
    }

    fn retract(&self, state: &BAState, step: &DVector<f64>) -> BAState {
        self.layout.retract(state, step)
    }
}

/// Runs weighted bundle adjustment from `init`.
pub fn solve(problem: &BAProblem, init: &BAState, config: &SolverConfig) -> Result<SolveReport> {
    problem.validate()?;
    problem.check_state(init)?;
    let options = EvalOptions { huber: config.huber };
    let mut state = init.clone();
    let mut trace = Vec::new();
    let mut refreshes = Vec::new();
    let mut iterations = 0;
    let mut initial_cost = None;
    let mut phase = 0;
    loop {
        refreshes.push(iterations);
        let system = WeightedProblem::new(problem, &state, config.weighting, options);
        let budget = config.lm.max_iterations - iterations;
        let max_iterations = if config.refresh_every == 0 { budget } else { config.refresh_every.min(budget) };
        let outcome = levenberg_marquardt(&system, state, &LmSettings { max_iterations, ..config.lm })?;
        initial_cost.get_or_insert(outcome.initial_cost);
        for (i, c) in outcome.trace.iter().enumerate() {
            trace.push(TraceEntry { iteration: iterations + i + 1, phase, cost: *c });
        }
        iterations += outcome.iterations;
        state = outcome.state;
        let converged = outcome.converged;
        let done = config.refresh_every == 0 || converged || iterations >= config.lm.max_iterations || outcome.iterations == 0;
        if done {
            let eval = system.evaluate(&state)?;
            return Ok(SolveReport {
                iterations,
                initial_cost: initial_cost.unwrap_or(outcome.final_cost),
                final_cost: outcome.final_cost,
                trace,
                converged,
                excluded_observations: eval.excluded,
                dropped_observations: eval.dropped,
                information: BlockSystem::from_evaluation(system.layout, &eval),
                state,
                weight_refreshes: refreshes,
            });
        }
        phase += 1;
    }
}
