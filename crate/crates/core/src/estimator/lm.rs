//! Levenberg-Marquardt with Marquardt (diagonal) damping over an abstract
//! least-squares system.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Cost of a state together with the number of residual groups that could
/// not be evaluated there. A trial state that loses residuals is never
/// accepted, whatever its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub value: f64,
    pub dropped: usize,
}

pub trait LeastSquares {
    type State: Clone;
    type Linearization;

    fn linearize(&self, state: &Self::State) -> Result<(Cost, Self::Linearization)>;
    fn cost(&self, state: &Self::State) -> Result<Cost>;
    /// Solves the damped normal equations; `None` when they are singular.
    fn solve_damped(&self, lin: &Self::Linearization, lambda: f64) -> Option<DVector<f64>>;
    fn retract(&self, state: &Self::State, step: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub initial_lambda: f64,
    pub accept_factor: f64,
    pub reject_factor: f64,
    pub relative_cost_tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    /// Singular normal equations at or above this damping are an error.
    pub singular_lambda: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-4,
            accept_factor: 0.5,
            reject_factor: 4.0,
            relative_cost_tolerance: 1e-8,
            step_tolerance: 1e-10,
            max_iterations: 50,
            singular_lambda: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome<S> {
    pub state: S,
    /// Iterations used, accepted or not.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each iteration (unchanged on rejected steps).
    pub trace: Vec<f64>,
    pub converged: bool,
    pub lambda: f64,
}

/// Damping beyond which no further progress is attempted.
const LAMBDA_CEILING: f64 = 1e16;

pub fn levenberg_marquardt<P: LeastSquares>(problem: &P, init: P::State, settings: &LmSettings) -> Result<LmOutcome<P::State>> {
    let mut state = init;
    let (mut cost, mut lin) = problem.linearize(&state)?;
    let initial_cost = cost.value;
    let mut lambda = settings.initial_lambda;
    let mut trace = Vec::new();
    let mut converged = cost.value == 0.0;
    let mut iterations = 0;
    while !converged && iterations < settings.max_iterations {
        iterations += 1;
        let Some(step) = problem.solve_damped(&lin, lambda) else {
            if lambda >= settings.singular_lambda {
                return Err(Error::SingularNormalEquations(lambda));
            }
            lambda *= settings.reject_factor;
            trace.push(cost.value);
            continue;
        };
        let step_norm = step.norm();
        let trial = problem.retract(&state, &step);
        let trial_cost = problem.cost(&trial)?;
        if trial_cost.dropped <= cost.dropped && trial_cost.value < cost.value {
            let relative = (cost.value - trial_cost.value) / cost.value;
            state = trial;
            let (c, l) = problem.linearize(&state)?;
            cost = c;
            lin = l;
            lambda *= settings.accept_factor;
            converged = relative < settings.relative_cost_tolerance || step_norm < settings.step_tolerance || cost.value == 0.0;
        } else {
            lambda *= settings.reject_factor;
            if step_norm < settings.step_tolerance {
                converged = true;
            } else if lambda > LAMBDA_CEILING {
                trace.push(cost.value);
                break;
            }
        }
        trace.push(cost.value);
    }
    Ok(LmOutcome { state, iterations, initial_cost, final_cost: cost.value, trace, converged, lambda })
}
