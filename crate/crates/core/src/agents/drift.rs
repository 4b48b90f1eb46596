//! Closed-form mean one-step updates (the mean-ODE drift) of each evaluator.
//!
//! Each formula is written in matrix form from `P`, `G`, `D` and `Φ`; none of
//! them enumerates transitions, so they can be checked against an
//! enumeration average of [`Evaluator::step`].

use nalgebra::{DMatrix, DVector};

use super::{AgentError, Algorithm, AlgorithmTag, Evaluator};
use crate::chain::MarkovRewardProcess;

/// Expected change of the primary and auxiliary vectors over one step with
/// `i ~ π`, `j ~ P(i, ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedUpdate {
    pub primary: DVector<f64>,
    pub auxiliary: DVector<f64>,
}

struct Moments<'a> {
    phi: &'a DMatrix<f64>,
    phi_t_d: DMatrix<f64>,
    p_phi: DMatrix<f64>,
    alpha: f64,
    g_bar: &'a DVector<f64>,
}

impl Moments<'_> {
    /// `ḡ + αPΦ·target − Φ·current`
    fn residual(&self, current: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
        self.g_bar + &self.p_phi * target * self.alpha - self.phi * current
    }
}

/// Analytic expected update at the evaluator's current state and step size.
///
/// For TD(λ) the trace is the one carried into the step, and the step is
/// assumed not to start an episode.
pub fn expected_update(
    evaluator: &Evaluator,
    mrp: &MarkovRewardProcess,
) -> Result<ExpectedUpdate, AgentError> {
    let features = evaluator.features();
    if features.n_states() != mrp.n_states() {
        return Err(AgentError::Dimension {
            what: "chain states",
            expected: features.n_states(),
            actual: mrp.n_states(),
        });
    }
    let phi = features.matrix();
    let d = mrp.weighting();
    let moments = Moments {
        phi,
        phi_t_d: d.scale_rows(phi).transpose(),
        p_phi: mrp.transition() * phi,
        alpha: evaluator.discount(),
        g_bar: mrp.expected_reward(),
    };
    let state = evaluator.state();
    let t = state.steps;
    let theta = &state.primary;
    let aux = &state.auxiliary;
    let zero = DVector::zeros(theta.len());

    let update = match evaluator.algorithm() {
        Algorithm::Td0 { rate } => ExpectedUpdate {
            primary: &moments.phi_t_d * moments.residual(theta, theta) * rate.rate(t),
            auxiliary: zero,
        },
        Algorithm::TdLambda { rate, lambda, .. } => {
            // z' = αλz + φ(i);  E[d z'] = αλ z · πᵀδ̄ + ΦᵀDδ̄
            let residual = moments.residual(theta, theta);
            let decay = moments.alpha * lambda;
            let mean_d = d.weights().dot(&residual);
            let primary = (aux * (decay * mean_d) + &moments.phi_t_d * &residual) * rate.rate(t);
            let mean_phi = phi.transpose() * d.weights();
            ExpectedUpdate {
                primary,
                auxiliary: aux * decay - aux + mean_phi,
            }
        }
        Algorithm::ResidualGradient { rate } => {
            // E[d(φ(i) − αφ(j))] = ΦᵀDδ̄ − α Σ_ij π(i)P(i,j) d_ij φ(j)
            //   with Σ_ij M_ij d_ij φ(j) = Φᵀ(M∘G)ᵀ1 + αΦᵀdiag(Mᵀ1)Φθ − ΦᵀMᵀΦθ
            let m = d.scale_rows(mrp.transition());
            let ones = DVector::from_element(m.nrows(), 1.0);
            let reward_term = phi.transpose() * (m.component_mul(mrp.reward()).transpose() * &ones);
            let inflow = m.transpose() * &ones;
            let next_term = phi.transpose() * DMatrix::from_diagonal(&inflow) * phi * theta;
            let cross_term = phi.transpose() * m.transpose() * phi * theta;
            let next_weighted = reward_term + next_term * moments.alpha - cross_term;
            let primary = (&moments.phi_t_d * moments.residual(theta, theta)
                - next_weighted * moments.alpha)
                * rate.rate(t);
            ExpectedUpdate {
                primary,
                auxiliary: zero,
            }
        }
        Algorithm::Gtd2 {
            rate,
            correction_rate,
        } => {
            let gram = &moments.phi_t_d * phi;
            let correlation = &moments.phi_t_d * moments.residual(theta, theta);
            let a_t = (phi - &moments.p_phi * moments.alpha).transpose() * d.scale_rows(phi);
            ExpectedUpdate {
                primary: a_t * aux * rate.rate(t),
                auxiliary: (correlation - gram * aux) * correction_rate.rate(t),
            }
        }
        Algorithm::AlternatingCd {
            value_rate,
            target_rate,
        } => {
            // r' = r + βdφ(i);  x' = x + γφ(i)φ(i)ᵀ(r' − x)
            let beta = value_rate.rate(t);
            let gamma = target_rate.rate(t);
            let residual = moments.residual(theta, aux);
            let gram = &moments.phi_t_d * phi;
            let sq_norms = DVector::from_fn(phi.nrows(), |i, _| phi.row(i).norm_squared());
            let third = &moments.phi_t_d * residual.component_mul(&sq_norms);
            ExpectedUpdate {
                primary: &moments.phi_t_d * &residual * beta,
                auxiliary: (gram * (theta - aux) + third * beta) * gamma,
            }
        }
        Algorithm::CoordinateDescent { .. } => {
            return Err(AgentError::NoDrift(AlgorithmTag::CoordinateDescent))
        }
    };
    Ok(update)
}
