//! Cooperative two-parameter-set updates for arbitrary differentiable
//! approximators.
//!
//! Two copies of the same approximator are trained against each other. The
//! value parameters `r` take a gradient step on `(g + α J(j; x) − J(i; r))²`
//! with `x` frozen; the target parameters `x` then take a gradient step on
//! `(J(i; r') − J(i; x))²` using the freshly updated `r'`. With a linear
//! approximator this is exactly the alternating coordinate-descent evaluator.

mod approximator;
mod control;
mod gridworld;

pub use approximator::{
    gradient_self_test, DifferentiableApproximator, GradientMismatch, LinearApproximator,
    QuadraticApproximator, TabularQ,
};
pub use control::{
    coop_q_step, epsilon_greedy_action, greedy_action, greedy_rollout, run_control, ControlConfig,
    ControlLog, EpisodeRecord, ExplorationPolicy, QFactorModel, QTransition, StartRule,
    TargetUpdate,
};
pub use gridworld::{GridAction, GridWorld};

use thiserror::Error;

use crate::agents::{Transition, DIVERGENCE_NORM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoopError {
    #[error("diverged at step {step}: parameters non-finite or norm above {DIVERGENCE_NORM:e}")]
    Diverged { step: u64 },
    #[error("parameter length {actual} does not match approximator dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("action {action} out of range for {n_actions} actions")]
    Action { action: usize, n_actions: usize },
    #[error("invalid gridworld: {0}")]
    Grid(String),
    #[error("invalid control configuration: {0}")]
    Config(String),
}

/// Constant step sizes of the plain gradient optimizer used for both
/// parameter sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdRates {
    pub value_rate: f64,
    pub target_rate: f64,
}

pub(crate) fn check_finite(params: &[&[f64]], step: u64) -> Result<(), CoopError> {
    for p in params {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(CoopError::Diverged { step });
        }
    }
    Ok(())
}

/// One cooperative evaluation step on a state transition. Returns the TD
/// error seen by the value step.
pub fn coop_eval_step<A>(
    value_params: &mut [f64],
    target_params: &mut [f64],
    transition: &Transition,
    approximator: &A,
    discount: f64,
    rates: SgdRates,
) -> Result<f64, CoopError>
where
    A: DifferentiableApproximator<Input = usize>,
{
    let dim = approximator.params_dim();
    for len in [value_params.len(), target_params.len()] {
        if len != dim {
            return Err(CoopError::Dimension {
                expected: dim,
                actual: len,
            });
        }
    }
    let (i, j) = (transition.from_state, transition.to_state);
    let mut grad = vec![0.0; dim];

    let d = transition.reward + discount * approximator.value(j, target_params)
        - approximator.value(i, value_params);
    approximator.gradient(i, value_params, &mut grad);
    let r_scale = rates.value_rate * d;
    for (r, g) in value_params.iter_mut().zip(&grad) {
        *r += r_scale * g;
    }

    let gap = approximator.value(i, value_params) - approximator.value(i, target_params);
    approximator.gradient(i, target_params, &mut grad);
    let x_scale = rates.target_rate * gap;
    for (x, g) in target_params.iter_mut().zip(&grad) {
        *x += x_scale * g;
    }

    check_finite(&[value_params, target_params], transition.step_index)?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Algorithm, Evaluator, StepSizeSchedule};
    use crate::chain::{FeatureMap, WeightedNorm};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn linear_reduces_to_alternating_cd() {
        let w = WeightedNorm::new(&[0.2, 0.3, 0.5]).unwrap();
        let fm = FeatureMap::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.5, 1.0, 0.3, -0.8]),
            &w,
        )
        .unwrap();
        let rates = SgdRates {
            value_rate: 0.1,
            target_rate: 0.3,
        };
        let mut eval = Evaluator::new(
            fm.clone(),
            0.9,
            Algorithm::AlternatingCd {
                value_rate: StepSizeSchedule::constant(rates.value_rate).unwrap(),
                target_rate: StepSizeSchedule::constant(rates.target_rate).unwrap(),
            },
            DVector::from_column_slice(&[1.0, -1.0]),
            Some(DVector::from_column_slice(&[0.5, 2.0])),
        )
        .unwrap();
        let lin = LinearApproximator::new(fm);
        let mut r = vec![1.0, -1.0];
        let mut x = vec![0.5, 2.0];
        for (k, (i, j, g)) in [(0, 1, 1.0), (1, 2, 0.0), (2, 0, -1.0), (2, 2, 0.5)]
            .into_iter()
            .cycle()
            .take(100)
            .enumerate()
        {
            let t = Transition::new(i, j, g).at(k as u64);
            let d1 = eval.step(&t).unwrap();
            let d2 = coop_eval_step(&mut r, &mut x, &t, &lin, 0.9, rates).unwrap();
            assert_eq!(d1, d2);
            assert_eq!(eval.state().primary.as_slice(), r.as_slice());
            assert_eq!(eval.state().auxiliary.as_slice(), x.as_slice());
        }
    }

    #[test]
    fn no_error_no_movement() {
        let w = WeightedNorm::new(&[0.5, 0.5]).unwrap();
        let fm = FeatureMap::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]), &w).unwrap();
        let lin = LinearApproximator::new(fm);
        // J(0) = 1, J(1) = 2 with p = 1; g = 1 − 0.5·2 = 0 gives zero TD error
        let mut r = vec![1.0];
        let mut x = vec![1.0];
        let t = Transition::new(0, 1, 0.0);
        let d = coop_eval_step(
            &mut r,
            &mut x,
            &t,
            &lin,
            0.5,
            SgdRates {
                value_rate: 0.7,
                target_rate: 0.7,
            },
        )
        .unwrap();
        assert_eq!(d, 0.0);
        assert_eq!((r[0], x[0]), (1.0, 1.0));
    }

    #[test]
    fn quadratic_step_matches_hand_chain_rule() {
        // J(i, p) = p² φ(i) on two states with φ = [1, −0.5]
        let w = WeightedNorm::new(&[0.5, 0.5]).unwrap();
        let fm = FeatureMap::new(DMatrix::from_column_slice(2, 1, &[1.0, -0.5]), &w).unwrap();
        let quad = QuadraticApproximator::new(fm);
        let (alpha, beta, gamma) = (0.9, 0.1, 0.2);
        let (r0, x0, g) = (1.5, -0.8, 2.0);
        let mut r = vec![r0];
        let mut x = vec![x0];
        let t = Transition::new(0, 1, g);
        coop_eval_step(
            &mut r,
            &mut x,
            &t,
            &quad,
            alpha,
            SgdRates {
                value_rate: beta,
                target_rate: gamma,
            },
        )
        .unwrap();
        let d = g + alpha * (x0 * x0 * -0.5) - r0 * r0;
        let r1 = r0 + beta * d * (2.0 * r0);
        let gap = r1 * r1 - x0 * x0;
        let x1 = x0 + gamma * gap * (2.0 * x0);
        assert!((r[0] - r1).abs() < 1e-12);
        assert!((x[0] - x1).abs() < 1e-12);
    }

    #[test]
    fn dimension_checked() {
        let w = WeightedNorm::new(&[1.0]).unwrap();
        let fm = FeatureMap::new(DMatrix::from_element(1, 1, 1.0), &w).unwrap();
        let lin = LinearApproximator::new(fm);
        let err = coop_eval_step(
            &mut [0.0, 0.0],
            &mut [0.0],
            &Transition::new(0, 0, 1.0),
            &lin,
            0.9,
            SgdRates {
                value_rate: 0.1,
                target_rate: 0.1,
            },
        )
        .unwrap_err();
        assert_eq!(
            err,
            CoopError::Dimension {
                expected: 1,
                actual: 2
            }
        );
    }
}
