use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{
    gram_condition_check, spd_condition, ChainError, FeatureMap, MarkovRewardProcess,
    MatrixDisplay, ValueVector, WeightedNorm, DEFAULT_CONDITION_BOUND,
};

/// `(TJ)(i) = Σ_j P(i,j) (g(i,j) + α J(j))`, evaluated term by term.
pub fn bellman_apply(
    mrp: &MarkovRewardProcess,
    values: &ValueVector,
) -> Result<ValueVector, ChainError> {
    mrp.check_len("value vector", values.len())?;
    let n = mrp.n_states();
    let p = mrp.transition();
    let g = mrp.reward();
    let alpha = mrp.discount();
    let out = DVector::from_fn(n, |i, _| {
        (0..n)
            .map(|j| p[(i, j)] * (g[(i, j)] + alpha * values[j]))
            .sum::<f64>()
    });
    Ok(ValueVector(out))
}

/// λ-weighted Bellman map `T^λ J = (I − λαP)⁻¹ (ḡ + α(1−λ) P J)`.
///
/// At `λ = 0` this returns [`bellman_apply`] unchanged.
pub fn lambda_bellman_apply(
    mrp: &MarkovRewardProcess,
    values: &ValueVector,
    lambda: f64,
) -> Result<ValueVector, ChainError> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(ChainError::Lambda(lambda));
    }
    if lambda == 0.0 {
        return bellman_apply(mrp, values);
    }
    mrp.check_len("value vector", values.len())?;
    let n = mrp.n_states();
    let alpha = mrp.discount();
    let p = mrp.transition();
    let lhs = DMatrix::identity(n, n) - p * (lambda * alpha);
    let rhs = mrp.expected_reward() + (p * &**values) * (alpha * (1.0 - lambda));
    let solved = lhs
        .lu()
        .solve(&rhs)
        .expect("I - λαP is nonsingular for λα < 1");
    Ok(ValueVector(solved))
}

fn gram_factor(
    features: &FeatureMap,
    weighting: &WeightedNorm,
) -> Result<Cholesky<f64, Dyn>, ChainError> {
    let gram = weighting.gram(features.matrix());
    gram_condition_check(&gram, DEFAULT_CONDITION_BOUND)?;
    gram.cholesky().ok_or(ChainError::DegenerateFeatures {
        condition: f64::INFINITY,
        bound: DEFAULT_CONDITION_BOUND,
    })
}

/// `Π = Φ (ΦᵀDΦ)⁻¹ ΦᵀD`
pub fn projection_matrix(
    features: &FeatureMap,
    weighting: &WeightedNorm,
) -> Result<DMatrix<f64>, ChainError> {
    if features.n_states() != weighting.len() {
        return Err(ChainError::Dimension {
            context: "weighting",
            expected: features.n_states(),
            actual: weighting.len(),
        });
    }
    let chol = gram_factor(features, weighting)?;
    let phi = features.matrix();
    let phi_t_d = weighting.scale_rows(phi).transpose();
    Ok(phi * chol.solve(&phi_t_d))
}

fn check_problem(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    theta: &DVector<f64>,
) -> Result<(), ChainError> {
    mrp.check_len("feature rows", features.n_states())?;
    if theta.len() != features.n_features() {
        return Err(ChainError::Dimension {
            context: "parameter vector",
            expected: features.n_features(),
            actual: theta.len(),
        });
    }
    Ok(())
}

/// `δ̄ = TΦθ − Φθ`
fn bellman_residual(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    theta: &DVector<f64>,
) -> Result<DVector<f64>, ChainError> {
    check_problem(mrp, features, theta)?;
    let values = ValueVector(features.values(theta));
    let backed_up = bellman_apply(mrp, &values)?;
    Ok(backed_up.0 - values.0)
}

/// Mean squared Bellman error `‖TΦθ − Φθ‖²_D`.
pub fn msbe(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    theta: &DVector<f64>,
) -> Result<f64, ChainError> {
    let residual = bellman_residual(mrp, features, theta)?;
    Ok(mrp.weighting().norm_squared(&residual))
}

/// `∇θ msbe = −2 (Φ − αPΦ)ᵀ D (TΦθ − Φθ)`
pub fn msbe_gradient(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    theta: &DVector<f64>,
) -> Result<DVector<f64>, ChainError> {
    let residual = bellman_residual(mrp, features, theta)?;
    let phi = features.matrix();
    let diff = phi - (mrp.transition() * phi) * mrp.discount();
    let weighted = residual.component_mul(mrp.weighting().weights());
    Ok(diff.transpose() * weighted * -2.0)
}

/// Mean squared projected Bellman error `‖ΠTΦθ − Φθ‖²_D`, computed as
/// `(ΦᵀDδ̄)ᵀ (ΦᵀDΦ)⁻¹ (ΦᵀDδ̄)`.
pub fn mspbe(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    theta: &DVector<f64>,
) -> Result<f64, ChainError> {
    let residual = bellman_residual(mrp, features, theta)?;
    let chol = gram_factor(features, mrp.weighting())?;
    let correlation =
        features.matrix().transpose() * residual.component_mul(mrp.weighting().weights());
    let solved = chol.solve(&correlation);
    Ok(correlation.dot(&solved).max(0.0))
}

/// The linear system `A r = b` of the TD(0) fixed point:
/// `A = ΦᵀD(Φ − αPΦ)`, `b = ΦᵀDḡ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub fn td_system(mrp: &MarkovRewardProcess, features: &FeatureMap) -> Result<TdSystem, ChainError> {
    mrp.check_len("feature rows", features.n_states())?;
    let phi = features.matrix();
    let d = mrp.weighting();
    let phi_t_d = d.scale_rows(phi).transpose();
    let a = &phi_t_d * (phi - (mrp.transition() * phi) * mrp.discount());
    let b = &phi_t_d * mrp.expected_reward();
    Ok(TdSystem { a, b })
}

/// Solves `ΠT(Φr*) = Φr*` for `r*`.
pub fn td_fixed_point(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
) -> Result<DVector<f64>, ChainError> {
    let TdSystem { a, b } = td_system(mrp, features)?;
    let svd = a.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let singular = |a: &DMatrix<f64>| ChainError::NoFixedPoint {
        matrix: MatrixDisplay(a).to_string(),
        condition,
    };
    if condition.is_nan() || condition > DEFAULT_CONDITION_BOUND {
        return Err(singular(&a));
    }
    a.clone().lu().solve(&b).ok_or_else(|| singular(&a))
}

/// Exact projected value iteration `Φr_{t+1} = ΠT(Φr_t)`.
///
/// Returns `iterations + 1` vectors starting with `r0`.
pub fn projected_value_iteration(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    r0: &DVector<f64>,
    iterations: usize,
) -> Result<Vec<DVector<f64>>, ChainError> {
    check_problem(mrp, features, r0)?;
    let chol = gram_factor(features, mrp.weighting())?;
    let phi = features.matrix();
    let phi_t_d = mrp.weighting().scale_rows(phi).transpose();
    let mut out = Vec::with_capacity(iterations + 1);
    out.push(r0.clone());
    for _ in 0..iterations {
        let current = out.last().expect("nonempty");
        let target = bellman_apply(mrp, &ValueVector(phi * current))?;
        out.push(chol.solve(&(&phi_t_d * &target.0)));
    }
    Ok(out)
}

/// `J* = (I − αP)⁻¹ ḡ`; rejects `α = 1`.
pub fn exact_value(mrp: &MarkovRewardProcess) -> Result<ValueVector, ChainError> {
    if mrp.discount() >= 1.0 {
        return Err(ChainError::Undiscounted);
    }
    let n = mrp.n_states();
    let lhs = DMatrix::identity(n, n) - mrp.transition() * mrp.discount();
    let solved = lhs
        .lu()
        .solve(mrp.expected_reward())
        .expect("I - αP is nonsingular for α < 1");
    Ok(ValueVector(solved))
}

/// A chain paired with its linear architecture, checked once.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationProblem {
    mrp: MarkovRewardProcess,
    features: FeatureMap,
}

impl EvaluationProblem {
    pub fn new(mrp: MarkovRewardProcess, features: FeatureMap) -> Result<Self, ChainError> {
        mrp.check_len("feature rows", features.n_states())?;
        gram_condition_check(
            &mrp.weighting().gram(features.matrix()),
            DEFAULT_CONDITION_BOUND,
        )?;
        Ok(Self { mrp, features })
    }

    pub fn mrp(&self) -> &MarkovRewardProcess {
        &self.mrp
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn msbe(&self, theta: &DVector<f64>) -> Result<f64, ChainError> {
        msbe(&self.mrp, &self.features, theta)
    }

    pub fn mspbe(&self, theta: &DVector<f64>) -> Result<f64, ChainError> {
        mspbe(&self.mrp, &self.features, theta)
    }

    pub fn fixed_point(&self) -> Result<DVector<f64>, ChainError> {
        td_fixed_point(&self.mrp, &self.features)
    }

    pub fn gram_condition(&self) -> f64 {
        spd_condition(&self.mrp.weighting().gram(self.features.matrix()))
    }
}
