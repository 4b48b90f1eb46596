//! Finite Markov reward processes and the exact operators built on them.
//!
//! Everything in here is a pure function of immutable inputs. These
//! routines are the ground truth the online evaluators are checked against:
//! the Bellman map, its λ-weighted average, the D-weighted projection onto
//! the feature span, the two error functionals and the fixed-point solvers.

mod mdp;
mod ops;

pub use mdp::{FiniteMdp, OptimalSolution};
pub use ops::{
    bellman_apply, exact_value, lambda_bellman_apply, msbe, msbe_gradient, mspbe,
    projected_value_iteration, projection_matrix, td_fixed_point, td_system, EvaluationProblem,
    TdSystem,
};

use std::fmt;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Tolerance used for row sums and weighting normalisation.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// Default upper bound on the condition number of the weighted Gram matrix.
pub const DEFAULT_CONDITION_BOUND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("transition row {row} sums to {sum} (must be 1)")]
    RowSum { row: usize, sum: f64 },
    #[error("transition entry ({row}, {col}) = {value} is not a probability")]
    Probability { row: usize, col: usize, value: f64 },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("weighting entry {index} = {value} is negative")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weighting sums to {sum} (must be 1)")]
    WeightSum { sum: f64 },
    #[error("discount {0} is outside (0, 1]")]
    Discount(f64),
    #[error("feature column {0} is identically zero")]
    ZeroFeatureColumn(usize),
    #[error("feature matrix has {features} columns but only {states} states")]
    TooManyFeatures { features: usize, states: usize },
    #[error(
        "degenerate features under weighting: Gram matrix condition number {condition:e} exceeds bound {bound:e}"
    )]
    DegenerateFeatures { condition: f64, bound: f64 },
    #[error("no unique TD fixed point: A = {matrix} is singular (condition number {condition:e})")]
    NoFixedPoint { matrix: String, condition: f64 },
    #[error("undiscounted value may be unbounded (discount = 1)")]
    Undiscounted,
    #[error("lambda {0} is outside [0, 1)")]
    Lambda(f64),
}

/// Diagonal weighting matrix `D = diag(π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNorm {
    diag: DVector<f64>,
}

impl WeightedNorm {
    pub fn new(weights: &[f64]) -> Result<Self, ChainError> {
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(ChainError::NonFinite {
                    what: "weighting",
                    index,
                });
            }
            if value < 0.0 {
                return Err(ChainError::NegativeWeight { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(ChainError::WeightSum { sum });
        }
        Ok(Self {
            diag: DVector::from_column_slice(weights),
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }

    /// `‖v‖²_D = Σ π(i) v(i)²`
    pub fn norm_squared(&self, v: &DVector<f64>) -> f64 {
        self.diag.iter().zip(v.iter()).map(|(w, x)| w * x * x).sum()
    }

    /// `ΦᵀDΦ` for the given feature matrix.
    pub fn gram(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        phi.transpose() * self.scale_rows(phi)
    }

    /// `D·M`, i.e. row `i` of `M` scaled by `π(i)`.
    pub fn scale_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.diag[i];
        }
        out
    }
}

/// A value estimate, one entry per state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector(DVector<f64>);

impl ValueVector {
    pub fn new(values: DVector<f64>) -> Result<Self, ChainError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ChainError::NonFinite {
                what: "value",
                index,
            });
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, ChainError> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl Deref for ValueVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Finite-state Markov reward process under a fixed policy.
///
/// `transition[(i, j)]` is `P(i, j)`, `reward[(i, j)]` is `g(i, j)`. The
/// weighting `π` defines the norm every objective is measured in. It is an
/// explicit input and is never derived from `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRewardProcess {
    transition: DMatrix<f64>,
    reward: DMatrix<f64>,
    discount: f64,
    weighting: WeightedNorm,
    expected_reward: DVector<f64>,
}

impl MarkovRewardProcess {
    pub fn new(
        transition: DMatrix<f64>,
        reward: DMatrix<f64>,
        discount: f64,
        weighting: &[f64],
    ) -> Result<Self, ChainError> {
        let n = transition.nrows();
        if transition.ncols() != n {
            return Err(ChainError::Dimension {
                context: "transition columns",
                expected: n,
                actual: transition.ncols(),
            });
        }
        if reward.shape() != (n, n) {
            return Err(ChainError::Dimension {
                context: "reward matrix",
                expected: n,
                actual: reward.nrows(),
            });
        }
        if weighting.len() != n {
            return Err(ChainError::Dimension {
                context: "weighting",
                expected: n,
                actual: weighting.len(),
            });
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(ChainError::Discount(discount));
        }
        for row in 0..n {
            for col in 0..n {
                let value = transition[(row, col)];
                if !(0.0..=1.0).contains(&value) {
                    return Err(ChainError::Probability { row, col, value });
                }
                if !reward[(row, col)].is_finite() {
                    return Err(ChainError::NonFinite {
                        what: "reward",
                        index: row * n + col,
                    });
                }
            }
            let sum: f64 = transition.row(row).iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(ChainError::RowSum { row, sum });
            }
        }
        let weighting = WeightedNorm::new(weighting)?;
        let expected_reward = DVector::from_fn(n, |i, _| {
            (0..n)
                .map(|j| transition[(i, j)] * reward[(i, j)])
                .sum::<f64>()
        });
        Ok(Self {
            transition,
            reward,
            discount,
            weighting,
            expected_reward,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn weighting(&self) -> &WeightedNorm {
        &self.weighting
    }

    /// `ḡ(i) = Σ_j P(i,j) g(i,j)`
    pub fn expected_reward(&self) -> &DVector<f64> {
        &self.expected_reward
    }

    /// Same chain with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self, ChainError> {
        Self::new(
            self.transition.clone(),
            self.reward.clone(),
            discount,
            self.weighting.weights().as_slice(),
        )
    }

    /// Every `(i, j)` with `π(i)·P(i,j) > 0`, paired with that weight.
    pub fn weighted_transitions(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_states();
        let mut out = Vec::new();
        for i in 0..n {
            let w = self.weighting.weights()[i];
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                let p = self.transition[(i, j)];
                if p > 0.0 {
                    out.push((i, j, w * p));
                }
            }
        }
        out
    }

    pub(crate) fn check_len(&self, context: &'static str, len: usize) -> Result<(), ChainError> {
        if len != self.n_states() {
            return Err(ChainError::Dimension {
                context,
                expected: self.n_states(),
                actual: len,
            });
        }
        Ok(())
    }
}

/// The design matrix `Φ` of a linear architecture, states × features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    matrix: DMatrix<f64>,
    // row-major copy so `row(i)` is a contiguous slice
    rows: Vec<f64>,
}

impl FeatureMap {
    /// Validates the matrix against `weighting` with the default condition bound.
    pub fn new(matrix: DMatrix<f64>, weighting: &WeightedNorm) -> Result<Self, ChainError> {
        Self::with_condition_bound(matrix, weighting, DEFAULT_CONDITION_BOUND)
    }

    pub fn with_condition_bound(
        matrix: DMatrix<f64>,
        weighting: &WeightedNorm,
        bound: f64,
    ) -> Result<Self, ChainError> {
        let (n, k) = matrix.shape();
        if n != weighting.len() {
            return Err(ChainError::Dimension {
                context: "feature rows",
                expected: weighting.len(),
                actual: n,
            });
        }
        if k == 0 || k > n {
            return Err(ChainError::TooManyFeatures {
                features: k,
                states: n,
            });
        }
        if let Some(index) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(ChainError::NonFinite {
                what: "feature",
                index,
            });
        }
        for (col, column) in matrix.column_iter().enumerate() {
            if column.iter().all(|&v| v == 0.0) {
                return Err(ChainError::ZeroFeatureColumn(col));
            }
        }
        gram_condition_check(&weighting.gram(&matrix), bound)?;
        let rows = matrix.transpose().as_slice().to_vec();
        Ok(Self { matrix, rows })
    }

    pub fn n_states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `φ(state)`
    pub fn row(&self, state: usize) -> &[f64] {
        let k = self.n_features();
        &self.rows[state * k..(state + 1) * k]
    }

    /// `Φθ`
    pub fn values(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.matrix * theta
    }
}

/// Condition number of a symmetric positive semi-definite matrix.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn gram_condition_check(gram: &DMatrix<f64>, bound: f64) -> Result<(), ChainError> {
    let condition = spd_condition(gram);
    if condition.is_nan() || condition > bound {
        return Err(ChainError::DegenerateFeatures { condition, bound });
    }
    Ok(())
}

pub(crate) struct MatrixDisplay<'a>(pub &'a DMatrix<f64>);

impl fmt::Display for MatrixDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, row) in self.0.row_iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
        }
        write!(f, "]")
    }
}
