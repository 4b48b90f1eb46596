use rand::Rng;

use crate::agents::dot;
use crate::chain::FeatureMap;

/// A scalar function of an input and a parameter vector, with its gradient
/// in the parameters.
pub trait DifferentiableApproximator {
    type Input: Copy + std::fmt::Debug;

    fn params_dim(&self) -> usize;

    fn value(&self, input: Self::Input, params: &[f64]) -> f64;

    /// Writes `∂value/∂params` into `out` (length `params_dim`).
    fn gradient(&self, input: Self::Input, params: &[f64], out: &mut [f64]);
}

/// `J(i, p) = φ(i)ᵀp`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearApproximator {
    features: FeatureMap,
}

impl LinearApproximator {
    pub fn new(features: FeatureMap) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }
}

impl DifferentiableApproximator for LinearApproximator {
    type Input = usize;

    fn params_dim(&self) -> usize {
        self.features.n_features()
    }

    fn value(&self, state: usize, params: &[f64]) -> f64 {
        dot(self.features.row(state), params)
    }

    fn gradient(&self, state: usize, _params: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.features.row(state));
    }
}

/// `J(i, p) = Σ_k φ_k(i) p_k²`. Nonlinear in `p`; used to exercise the chain
/// rule in the cooperative update.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticApproximator {
    features: FeatureMap,
}

impl QuadraticApproximator {
    pub fn new(features: FeatureMap) -> Self {
        Self { features }
    }
}

impl DifferentiableApproximator for QuadraticApproximator {
    type Input = usize;

    fn params_dim(&self) -> usize {
        self.features.n_features()
    }

    fn value(&self, state: usize, params: &[f64]) -> f64 {
        self.features
            .row(state)
            .iter()
            .zip(params)
            .map(|(f, p)| f * p * p)
            .sum()
    }

    fn gradient(&self, state: usize, params: &[f64], out: &mut [f64]) {
        for ((o, f), p) in out.iter_mut().zip(self.features.row(state)).zip(params) {
            *o = 2.0 * f * p;
        }
    }
}

/// One parameter per (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TabularQ {
    pub n_states: usize,
    pub n_actions: usize,
}

impl TabularQ {
    fn index(&self, (state, action): (usize, usize)) -> usize {
        state * self.n_actions + action
    }
}

impl DifferentiableApproximator for TabularQ {
    type Input = (usize, usize);

    fn params_dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn value(&self, input: (usize, usize), params: &[f64]) -> f64 {
        params[self.index(input)]
    }

    fn gradient(&self, input: (usize, usize), _params: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[self.index(input)] = 1.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMismatch {
    pub input: String,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `gradient` with central finite differences of `value` at
/// `trials` random parameter vectors per input, drawn from `[-2, 2]`.
pub fn gradient_self_test<A, R>(
    approximator: &A,
    inputs: &[A::Input],
    trials: usize,
    rng: &mut R,
    relative_tolerance: f64,
) -> Result<(), GradientMismatch>
where
    A: DifferentiableApproximator,
    R: Rng,
{
    let dim = approximator.params_dim();
    let mut grad = vec![0.0; dim];
    for &input in inputs {
        for _ in 0..trials {
            let params: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            approximator.gradient(input, &params, &mut grad);
            let mut probe = params.clone();
            for k in 0..dim {
                let h = 1e-6 * params[k].abs().max(1.0);
                probe[k] = params[k] + h;
                let up = approximator.value(input, &probe);
                probe[k] = params[k] - h;
                let down = approximator.value(input, &probe);
                probe[k] = params[k];
                let numeric = (up - down) / (2.0 * h);
                let scale = grad[k].abs().max(numeric.abs()).max(1.0);
                if (grad[k] - numeric).abs() > relative_tolerance * scale {
                    return Err(GradientMismatch {
                        input: format!("{input:?}"),
                        component: k,
                        analytic: grad[k],
                        numeric,
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::WeightedNorm;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Broken;

    impl DifferentiableApproximator for Broken {
        type Input = usize;
        fn params_dim(&self) -> usize {
            1
        }
        fn value(&self, _: usize, p: &[f64]) -> f64 {
            p[0] * p[0]
        }
        fn gradient(&self, _: usize, p: &[f64], out: &mut [f64]) {
            out[0] = p[0];
        }
    }

    fn features() -> FeatureMap {
        let w = WeightedNorm::new(&[0.25; 4]).unwrap();
        FeatureMap::new(
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.3, -1.2, -0.7, 0.4, 2.0, 1.0]),
            &w,
        )
        .unwrap()
    }

    #[test]
    fn shipped_approximators_pass_self_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states = [0, 1, 2, 3];
        gradient_self_test(
            &LinearApproximator::new(features()),
            &states,
            20,
            &mut rng,
            1e-5,
        )
        .unwrap();
        gradient_self_test(
            &QuadraticApproximator::new(features()),
            &states,
            20,
            &mut rng,
            1e-5,
        )
        .unwrap();
        let tab = TabularQ {
            n_states: 3,
            n_actions: 2,
        };
        let inputs: Vec<_> = (0..3).flat_map(|s| (0..2).map(move |a| (s, a))).collect();
        gradient_self_test(&tab, &inputs, 5, &mut rng, 1e-5).unwrap();
    }

    #[test]
    fn self_test_catches_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = gradient_self_test(&Broken, &[0], 10, &mut rng, 1e-5).unwrap_err();
        assert_eq!(err.component, 0);
    }
}
