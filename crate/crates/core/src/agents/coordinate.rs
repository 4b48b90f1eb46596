//! Coordinate-descent TD(0): for each batch, drive r to the least-squares
//! solution against the frozen target `x`, then drive `x` onto `r`.
//!
//! With the enumerated batch (every transition weighted by `π(i)P(i,j)`) the
//! r-loop converges to `ΠT(Φx_k)`, so the outer sequence follows exact
//! projected value iteration.

use nalgebra::DVector;

use super::{dot, AgentError, Transition, DIVERGENCE_NORM};
use crate::chain::{FeatureMap, MarkovRewardProcess};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTransition {
    pub transition: Transition,
    pub weight: f64,
}

/// Settings for one pair of inner loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub value_rate: f64,
    pub target_rate: f64,
    /// Loop ends once the max-norm change of one inner step drops below this.
    pub tolerance: f64,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterIterate {
    /// `r_{k+1}`
    pub value: DVector<f64>,
    /// `x_{k+1}`
    pub target: DVector<f64>,
    pub value_iterations: usize,
    pub target_iterations: usize,
    pub cap_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateDescentRun {
    pub initial_value: DVector<f64>,
    pub initial_target: DVector<f64>,
    pub outer: Vec<OuterIterate>,
    pub cap_hits: usize,
}

impl CoordinateDescentRun {
    /// `x_k` for `k = 0..=outer.len()`.
    pub fn targets(&self) -> impl Iterator<Item = &DVector<f64>> {
        std::iter::once(&self.initial_target).chain(self.outer.iter().map(|o| &o.target))
    }
}

/// Every transition of `mrp` with positive weight `π(i)P(i,j)`.
pub fn expected_batch(mrp: &MarkovRewardProcess) -> Vec<WeightedTransition> {
    mrp.weighted_transitions()
        .into_iter()
        .map(|(i, j, weight)| WeightedTransition {
            transition: Transition::new(i, j, mrp.reward()[(i, j)]),
            weight,
        })
        .collect()
}

pub(crate) struct OuterOutcome {
    pub value_iterations: usize,
    pub target_iterations: usize,
    pub cap_hit: bool,
}

pub(crate) fn outer_step(
    features: &FeatureMap,
    discount: f64,
    batch: &[WeightedTransition],
    inner: &InnerLoop,
    value: &mut DVector<f64>,
    target: &mut DVector<f64>,
) -> OuterOutcome {
    let k = features.n_features();
    let mut delta = vec![0.0; k];
    let mut cap_hit = false;

    let mut value_iterations = 0;
    loop {
        delta.iter_mut().for_each(|d| *d = 0.0);
        for wt in batch {
            let t = &wt.transition;
            let phi_i = features.row(t.from_state);
            let phi_j = features.row(t.to_state);
            let d =
                t.reward + discount * dot(phi_j, target.as_slice()) - dot(phi_i, value.as_slice());
            let scale = inner.value_rate * (wt.weight * d);
            for (acc, f) in delta.iter_mut().zip(phi_i) {
                *acc += scale * f;
            }
        }
        apply(value, &delta);
        value_iterations += 1;
        if converged(&delta, inner.tolerance) {
            break;
        }
        if value_iterations >= inner.cap || !finite(value) {
            cap_hit = true;
            break;
        }
    }

    let mut target_iterations = 0;
    loop {
        delta.iter_mut().for_each(|d| *d = 0.0);
        for wt in batch {
            let phi_i = features.row(wt.transition.from_state);
            let gap = dot(phi_i, value.as_slice()) - dot(phi_i, target.as_slice());
            let scale = inner.target_rate * (wt.weight * gap);
            for (acc, f) in delta.iter_mut().zip(phi_i) {
                *acc += scale * f;
            }
        }
        apply(target, &delta);
        target_iterations += 1;
        if converged(&delta, inner.tolerance) {
            break;
        }
        if target_iterations >= inner.cap || !finite(target) {
            cap_hit = true;
            break;
        }
    }

    OuterOutcome {
        value_iterations,
        target_iterations,
        cap_hit,
    }
}

fn apply(v: &mut DVector<f64>, delta: &[f64]) {
    for (p, d) in v.iter_mut().zip(delta) {
        *p += d;
    }
}

fn converged(delta: &[f64], tolerance: f64) -> bool {
    delta.iter().all(|d| d.abs() < tolerance)
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite()) && v.norm() <= DIVERGENCE_NORM
}

/// Runs coordinate-descent TD(0) over a sequence of batches.
///
/// A stream of single transitions is a sequence of one-element batches with
/// weight 1. Cap hits are counted, not fatal; divergence is.
pub fn coordinate_descent_td0<'a, I>(
    features: &FeatureMap,
    discount: f64,
    batches: I,
    r0: DVector<f64>,
    x0: DVector<f64>,
    inner: InnerLoop,
) -> Result<CoordinateDescentRun, AgentError>
where
    I: IntoIterator<Item = &'a [WeightedTransition]>,
{
    let k = features.n_features();
    for (what, v) in [
        ("initial value vector", &r0),
        ("initial target vector", &x0),
    ] {
        if v.len() != k {
            return Err(AgentError::Dimension {
                what,
                expected: k,
                actual: v.len(),
            });
        }
    }
    if inner.tolerance.is_nan() || inner.tolerance <= 0.0 || inner.cap == 0 {
        return Err(AgentError::InvalidParameter {
            name: "inner loop",
            reason: "tolerance must be positive and cap at least 1".into(),
        });
    }
    let mut value = r0.clone();
    let mut target = x0.clone();
    let mut outer = Vec::new();
    let mut cap_hits = 0;
    for batch in batches {
        for wt in batch {
            let t = &wt.transition;
            for state in [t.from_state, t.to_state] {
                if state >= features.n_states() {
                    return Err(AgentError::StateIndex {
                        state,
                        n_states: features.n_states(),
                    });
                }
            }
        }
        let outcome = outer_step(features, discount, batch, &inner, &mut value, &mut target);
        if !finite(&value) || !finite(&target) {
            return Err(AgentError::Diverged {
                step: outer.len() as u64 + 1,
            });
        }
        if outcome.cap_hit {
            cap_hits += 1;
        }
        outer.push(OuterIterate {
            value: value.clone(),
            target: target.clone(),
            value_iterations: outcome.value_iterations,
            target_iterations: outcome.target_iterations,
            cap_hit: outcome.cap_hit,
        });
    }
    Ok(CoordinateDescentRun {
        initial_value: r0,
        initial_target: x0,
        outer,
        cap_hits,
    })
}
