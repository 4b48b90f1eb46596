use nalgebra::{DMatrix, DVector};

use super::{ChainError, STOCHASTIC_TOLERANCE};

/// Finite MDP with one transition/reward matrix per action.
///
/// Terminal states are absorbing with value 0 regardless of their rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    transitions: Vec<DMatrix<f64>>,
    rewards: Vec<DMatrix<f64>>,
    terminal: Vec<bool>,
    discount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub values: DVector<f64>,
    /// `q[(state, action)]`
    pub q: DMatrix<f64>,
    pub iterations: usize,
}

impl FiniteMdp {
    pub fn new(
        transitions: Vec<DMatrix<f64>>,
        rewards: Vec<DMatrix<f64>>,
        terminal: Vec<bool>,
        discount: f64,
    ) -> Result<Self, ChainError> {
        let n = terminal.len();
        if transitions.len() != rewards.len() || transitions.is_empty() {
            return Err(ChainError::Dimension {
                context: "actions",
                expected: transitions.len(),
                actual: rewards.len(),
            });
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(ChainError::Discount(discount));
        }
        for (p, g) in transitions.iter().zip(&rewards) {
            if p.shape() != (n, n) || g.shape() != (n, n) {
                return Err(ChainError::Dimension {
                    context: "action matrix",
                    expected: n,
                    actual: p.nrows(),
                });
            }
            for row in 0..n {
                let sum: f64 = p.row(row).iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                    return Err(ChainError::RowSum { row, sum });
                }
            }
        }
        Ok(Self {
            transitions,
            rewards,
            terminal,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.terminal.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    fn backup(&self, values: &DVector<f64>, state: usize, action: usize) -> f64 {
        let p = &self.transitions[action];
        let g = &self.rewards[action];
        (0..self.n_states())
            .map(|j| p[(state, j)] * (g[(state, j)] + self.discount * values[j]))
            .sum()
    }

    /// Bellman-optimality value iteration until the sup-norm change drops
    /// below `tolerance`.
    pub fn value_iteration(&self, tolerance: f64, max_iterations: usize) -> OptimalSolution {
        let n = self.n_states();
        let m = self.n_actions();
        let mut values = DVector::zeros(n);
        let mut iterations = 0;
        while iterations < max_iterations {
            iterations += 1;
            let next = DVector::from_fn(n, |s, _| {
                if self.terminal[s] {
                    0.0
                } else {
                    (0..m)
                        .map(|a| self.backup(&values, s, a))
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            });
            let change = (&next - &values).amax();
            values = next;
            if change < tolerance {
                break;
            }
        }
        let q = DMatrix::from_fn(n, m, |s, a| {
            if self.terminal[s] {
                0.0
            } else {
                self.backup(&values, s, a)
            }
        });
        OptimalSolution {
            values,
            q,
            iterations,
        }
    }
}

impl OptimalSolution {
    /// Actions whose Q-value is within `tolerance` of the best at `state`.
    pub fn optimal_actions(&self, state: usize, tolerance: f64) -> Vec<usize> {
        let row = self.q.row(state);
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter()
            .enumerate()
            .filter(|(_, &q)| q >= best - tolerance)
            .map(|(a, _)| a)
            .collect()
    }
}
