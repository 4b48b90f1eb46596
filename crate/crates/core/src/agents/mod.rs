//! Online linear policy evaluators.
//!
//! Every algorithm shares one contract: construct an [`Evaluator`] from a
//! feature map, a discount and an [`Algorithm`] with its step sizes, then feed
//! it [`Transition`]s one at a time. Given the same initial state and the same
//! stream, the parameter sequence is bit-identical.
//!
//! All updates use the discounted TD error `d = g + α φ(j)ᵀθ' − φ(i)ᵀθ`,
//! where `θ'` is the target vector `x` for the coordinate-descent family and
//! `θ` otherwise.

mod coordinate;
mod drift;
mod trajectory;

pub use coordinate::{
    coordinate_descent_td0, expected_batch, CoordinateDescentRun, InnerLoop, OuterIterate,
    WeightedTransition,
};
pub use drift::{expected_update, ExpectedUpdate};
pub use trajectory::{mspbe_trajectory, MetricsRecord, ProbeSchedule, Trajectory};

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use thiserror::Error;

use crate::chain::FeatureMap;

/// Parameter norm above which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Default cap on each inner loop of the coordinate-descent evaluator.
pub const DEFAULT_INNER_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("diverged at step {step}: parameters non-finite or norm above {DIVERGENCE_NORM:e}")]
    Diverged { step: u64 },
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("state index {state} out of range for {n_states} states")]
    StateIndex { state: usize, n_states: usize },
    #[error("non-finite reward at step {step}")]
    NonFiniteReward { step: u64 },
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("{0} has no closed-form expected update")]
    NoDrift(AlgorithmTag),
}

/// One sampled state transition `(i, j)` with reward `g(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from_state: usize,
    pub to_state: usize,
    pub reward: f64,
    pub step_index: u64,
    /// First transition of an episode; TD(λ) traces may reset here.
    pub episode_start: bool,
}

impl Transition {
    pub fn new(from_state: usize, to_state: usize, reward: f64) -> Self {
        Self {
            from_state,
            to_state,
            reward,
            step_index: 0,
            episode_start: false,
        }
    }

    pub fn at(mut self, step_index: u64) -> Self {
        self.step_index = step_index;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizeSchedule {
    Constant {
        rate: f64,
    },
    /// `base / (offset + t)`
    Harmonic {
        base: f64,
        offset: f64,
    },
}

impl StepSizeSchedule {
    pub fn constant(rate: f64) -> Result<Self, AgentError> {
        positive("step size", rate)?;
        Ok(Self::Constant { rate })
    }

    pub fn harmonic(base: f64, offset: f64) -> Result<Self, AgentError> {
        positive("harmonic base", base)?;
        positive("harmonic offset", offset)?;
        Ok(Self::Harmonic { base, offset })
    }

    pub fn rate(&self, t: u64) -> f64 {
        match *self {
            Self::Constant { rate } => rate,
            Self::Harmonic { base, offset } => base / (offset + t as f64),
        }
    }

    fn validate(&self) -> Result<(), AgentError> {
        match *self {
            Self::Constant { rate } => positive("step size", rate),
            Self::Harmonic { base, offset } => {
                positive("harmonic base", base)?;
                positive("harmonic offset", offset)
            }
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), AgentError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(AgentError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmTag {
    Td0,
    TdLambda,
    ResidualGradient,
    Gtd2,
    AlternatingCd,
    CoordinateDescent,
}

impl AlgorithmTag {
    pub const ALL: [AlgorithmTag; 6] = [
        Self::Td0,
        Self::TdLambda,
        Self::ResidualGradient,
        Self::Gtd2,
        Self::AlternatingCd,
        Self::CoordinateDescent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Td0 => "td0",
            Self::TdLambda => "td_lambda",
            Self::ResidualGradient => "residual_gradient",
            Self::Gtd2 => "gtd2",
            Self::AlternatingCd => "alternating_cd",
            Self::CoordinateDescent => "coordinate_descent",
        }
    }

    /// Whether the algorithm carries a second learned vector.
    pub fn uses_auxiliary_rate(self) -> bool {
        matches!(
            self,
            Self::Gtd2 | Self::AlternatingCd | Self::CoordinateDescent
        )
    }
}

impl fmt::Display for AlgorithmTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|tag| tag.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|t| t.as_str()).collect();
                format!(
                    "unknown algorithm `{s}` (expected one of {})",
                    known.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceReset {
    EpisodeStart,
    Never,
}

/// Algorithm choice together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    Td0 {
        rate: StepSizeSchedule,
    },
    TdLambda {
        rate: StepSizeSchedule,
        lambda: f64,
        reset: TraceReset,
    },
    ResidualGradient {
        rate: StepSizeSchedule,
    },
    /// `rate` moves θ, `correction_rate` moves w.
    Gtd2 {
        rate: StepSizeSchedule,
        correction_rate: StepSizeSchedule,
    },
    /// `value_rate` (β) moves r, `target_rate` (γ) moves x.
    AlternatingCd {
        value_rate: StepSizeSchedule,
        target_rate: StepSizeSchedule,
    },
    CoordinateDescent {
        value_rate: StepSizeSchedule,
        target_rate: StepSizeSchedule,
        tolerance: f64,
        inner_cap: usize,
    },
}

impl Algorithm {
    pub fn tag(&self) -> AlgorithmTag {
        match self {
            Self::Td0 { .. } => AlgorithmTag::Td0,
            Self::TdLambda { .. } => AlgorithmTag::TdLambda,
            Self::ResidualGradient { .. } => AlgorithmTag::ResidualGradient,
            Self::Gtd2 { .. } => AlgorithmTag::Gtd2,
            Self::AlternatingCd { .. } => AlgorithmTag::AlternatingCd,
            Self::CoordinateDescent { .. } => AlgorithmTag::CoordinateDescent,
        }
    }

    fn validate(&self) -> Result<(), AgentError> {
        match self {
            Self::Td0 { rate } | Self::ResidualGradient { rate } => rate.validate(),
            Self::TdLambda { rate, lambda, .. } => {
                rate.validate()?;
                if !(0.0..1.0).contains(lambda) {
                    return Err(AgentError::InvalidParameter {
                        name: "lambda",
                        reason: format!("must lie in [0, 1), got {lambda}"),
                    });
                }
                Ok(())
            }
            Self::Gtd2 {
                rate,
                correction_rate,
            } => {
                rate.validate()?;
                correction_rate.validate()
            }
            Self::AlternatingCd {
                value_rate,
                target_rate,
            } => {
                value_rate.validate()?;
                target_rate.validate()
            }
            Self::CoordinateDescent {
                value_rate,
                target_rate,
                tolerance,
                inner_cap,
            } => {
                value_rate.validate()?;
                target_rate.validate()?;
                positive("inner tolerance", *tolerance)?;
                if *inner_cap == 0 {
                    return Err(AgentError::InvalidParameter {
                        name: "inner cap",
                        reason: "must be at least 1".into(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Learnable state of an evaluator.
///
/// `primary` is θ (or r for the coordinate-descent family). `auxiliary` is
/// x for coordinate descent, w for GTD2, the eligibility trace z for TD(λ),
/// and unused zeros otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorState {
    pub tag: AlgorithmTag,
    pub primary: DVector<f64>,
    pub auxiliary: DVector<f64>,
    pub steps: u64,
    pub inner_cap_hits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    features: FeatureMap,
    discount: f64,
    algorithm: Algorithm,
    state: EvaluatorState,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Evaluator {
    /// `auxiliary` defaults to a copy of `primary` for the coordinate-descent
    /// family and to zeros otherwise.
    pub fn new(
        features: FeatureMap,
        discount: f64,
        algorithm: Algorithm,
        primary: DVector<f64>,
        auxiliary: Option<DVector<f64>>,
    ) -> Result<Self, AgentError> {
        algorithm.validate()?;
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(AgentError::InvalidParameter {
                name: "discount",
                reason: format!("must lie in (0, 1], got {discount}"),
            });
        }
        let k = features.n_features();
        if primary.len() != k {
            return Err(AgentError::Dimension {
                what: "initial parameters",
                expected: k,
                actual: primary.len(),
            });
        }
        let tag = algorithm.tag();
        let auxiliary = match auxiliary {
            Some(aux) => aux,
            None if matches!(
                tag,
                AlgorithmTag::AlternatingCd | AlgorithmTag::CoordinateDescent
            ) =>
            {
                primary.clone()
            }
            None => DVector::zeros(k),
        };
        if auxiliary.len() != k {
            return Err(AgentError::Dimension {
                what: "initial auxiliary parameters",
                expected: k,
                actual: auxiliary.len(),
            });
        }
        if primary
            .iter()
            .chain(auxiliary.iter())
            .any(|v| !v.is_finite())
        {
            return Err(AgentError::InvalidParameter {
                name: "initial parameters",
                reason: "must be finite".into(),
            });
        }
        Ok(Self {
            features,
            discount,
            algorithm,
            state: EvaluatorState {
                tag,
                primary,
                auxiliary,
                steps: 0,
                inner_cap_hits: 0,
            },
        })
    }

    pub fn state(&self) -> &EvaluatorState {
        &self.state
    }

    pub fn algorithm(&self) -> &Algorithm {
        &self.algorithm
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// The vector whose value `Φv` is this evaluator's current estimate.
    ///
    /// For the coordinate-descent family this is the target vector `x`.
    pub fn estimate(&self) -> &DVector<f64> {
        match self.state.tag {
            AlgorithmTag::AlternatingCd | AlgorithmTag::CoordinateDescent => &self.state.auxiliary,
            _ => &self.state.primary,
        }
    }

    /// `α φ(j)ᵀ target − φ(i)ᵀ current + g`
    fn td_error(&self, t: &Transition, current: &[f64], target: &[f64]) -> f64 {
        let phi_i = self.features.row(t.from_state);
        let phi_j = self.features.row(t.to_state);
        t.reward + self.discount * dot(phi_j, target) - dot(phi_i, current)
    }

    fn check_transition(&self, t: &Transition) -> Result<(), AgentError> {
        let n_states = self.features.n_states();
        for state in [t.from_state, t.to_state] {
            if state >= n_states {
                return Err(AgentError::StateIndex { state, n_states });
            }
        }
        if !t.reward.is_finite() {
            return Err(AgentError::NonFiniteReward {
                step: self.state.steps,
            });
        }
        Ok(())
    }

    /// Applies one transition. Returns the sampled TD error.
    pub fn step(&mut self, t: &Transition) -> Result<f64, AgentError> {
        self.check_transition(t)?;
        let step = self.state.steps;
        let td_error = match self.algorithm.clone() {
            Algorithm::Td0 { rate } => self.td0_step(t, rate.rate(step)),
            Algorithm::TdLambda {
                rate,
                lambda,
                reset,
            } => self.td_lambda_step(t, rate.rate(step), lambda, reset),
            Algorithm::ResidualGradient { rate } => self.residual_gradient_step(t, rate.rate(step)),
            Algorithm::Gtd2 {
                rate,
                correction_rate,
            } => self.gtd2_step(t, rate.rate(step), correction_rate.rate(step)),
            Algorithm::AlternatingCd {
                value_rate,
                target_rate,
            } => self.alternating_cd_step(t, value_rate.rate(step), target_rate.rate(step)),
            Algorithm::CoordinateDescent {
                value_rate,
                target_rate,
                tolerance,
                inner_cap,
            } => {
                let inner = InnerLoop {
                    value_rate: value_rate.rate(step),
                    target_rate: target_rate.rate(step),
                    tolerance,
                    cap: inner_cap,
                };
                self.coordinate_descent_step(t, &inner)
            }
        };
        self.state.steps += 1;
        self.check_divergence()?;
        Ok(td_error)
    }

    fn check_divergence(&self) -> Result<(), AgentError> {
        let bad = |v: &DVector<f64>| v.iter().any(|x| !x.is_finite()) || v.norm() > DIVERGENCE_NORM;
        if bad(&self.state.primary) || bad(&self.state.auxiliary) {
            return Err(AgentError::Diverged {
                step: self.state.steps,
            });
        }
        Ok(())
    }

    fn td0_step(&mut self, t: &Transition, rate: f64) -> f64 {
        let theta = self.state.primary.as_slice();
        let d = self.td_error(t, theta, theta);
        let scale = rate * d;
        let phi_i = self.features.row(t.from_state);
        for (p, f) in self.state.primary.iter_mut().zip(phi_i) {
            *p += scale * f;
        }
        d
    }

    fn td_lambda_step(&mut self, t: &Transition, rate: f64, lambda: f64, reset: TraceReset) -> f64 {
        let decay = self.discount * lambda;
        let phi_i = self.features.row(t.from_state);
        let fresh = reset == TraceReset::EpisodeStart && t.episode_start;
        for (z, f) in self.state.auxiliary.iter_mut().zip(phi_i) {
            *z = if fresh { 0.0 } else { decay * *z } + f;
        }
        let theta = self.state.primary.as_slice();
        let d = self.td_error(t, theta, theta);
        let scale = rate * d;
        for (p, z) in self
            .state
            .primary
            .iter_mut()
            .zip(self.state.auxiliary.iter())
        {
            *p += scale * z;
        }
        d
    }

    fn residual_gradient_step(&mut self, t: &Transition, rate: f64) -> f64 {
        let theta = self.state.primary.as_slice();
        let d = self.td_error(t, theta, theta);
        let scale = rate * d;
        let phi_i = self.features.row(t.from_state);
        let phi_j = self.features.row(t.to_state);
        // descends ½d²: ∂d/∂θ = αφ(j) − φ(i)
        for ((p, fi), fj) in self.state.primary.iter_mut().zip(phi_i).zip(phi_j) {
            *p += scale * (fi - self.discount * fj);
        }
        d
    }

    fn gtd2_step(&mut self, t: &Transition, rate: f64, correction_rate: f64) -> f64 {
        let theta = self.state.primary.as_slice();
        let d = self.td_error(t, theta, theta);
        let phi_i = self.features.row(t.from_state);
        let phi_j = self.features.row(t.to_state);
        let projected = dot(phi_i, self.state.auxiliary.as_slice());
        let w_scale = correction_rate * (d - projected);
        for (w, f) in self.state.auxiliary.iter_mut().zip(phi_i) {
            *w += w_scale * f;
        }
        // θ moves along the pre-update correction w
        let theta_scale = rate * projected;
        for ((p, fi), fj) in self.state.primary.iter_mut().zip(phi_i).zip(phi_j) {
            *p += theta_scale * (fi - self.discount * fj);
        }
        d
    }

    fn alternating_cd_step(&mut self, t: &Transition, value_rate: f64, target_rate: f64) -> f64 {
        let d = self.td_error(
            t,
            self.state.primary.as_slice(),
            self.state.auxiliary.as_slice(),
        );
        let phi_i = self.features.row(t.from_state);
        let r_scale = value_rate * d;
        for (r, f) in self.state.primary.iter_mut().zip(phi_i) {
            *r += r_scale * f;
        }
        // x descends ½(φ(i)ᵀr_{k+1} − φ(i)ᵀx)² using the updated r
        let gap =
            dot(phi_i, self.state.primary.as_slice()) - dot(phi_i, self.state.auxiliary.as_slice());
        let x_scale = target_rate * gap;
        for (x, f) in self.state.auxiliary.iter_mut().zip(phi_i) {
            *x += x_scale * f;
        }
        d
    }

    fn coordinate_descent_step(&mut self, t: &Transition, inner: &InnerLoop) -> f64 {
        let d = self.td_error(
            t,
            self.state.primary.as_slice(),
            self.state.auxiliary.as_slice(),
        );
        let batch = [WeightedTransition {
            transition: *t,
            weight: 1.0,
        }];
        let outcome = coordinate::outer_step(
            &self.features,
            self.discount,
            &batch,
            inner,
            &mut self.state.primary,
            &mut self.state.auxiliary,
        );
        if outcome.cap_hit {
            self.state.inner_cap_hits += 1;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::WeightedNorm;
    use nalgebra::DMatrix;

    fn three_state_features() -> FeatureMap {
        let w = WeightedNorm::new(&[0.0, 0.8, 0.2]).unwrap();
        FeatureMap::new(DMatrix::from_column_slice(3, 1, &[0.01, -1.0, 1.0]), &w).unwrap()
    }

    fn two_features() -> FeatureMap {
        let w = WeightedNorm::new(&[0.3, 0.3, 0.4]).unwrap();
        FeatureMap::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, -1.1]),
            &w,
        )
        .unwrap()
    }

    fn constant(rate: f64) -> StepSizeSchedule {
        StepSizeSchedule::constant(rate).unwrap()
    }

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn schedules() {
        assert_eq!(constant(0.1).rate(1000), 0.1);
        let h = StepSizeSchedule::harmonic(2.0, 4.0).unwrap();
        assert_eq!(h.rate(0), 0.5);
        assert_eq!(h.rate(4), 0.25);
        assert!(StepSizeSchedule::constant(-0.1).is_err());
        assert!(StepSizeSchedule::harmonic(1.0, 0.0).is_err());
    }

    #[test]
    fn tag_round_trip_and_rejection() {
        for tag in AlgorithmTag::ALL {
            assert_eq!(tag.as_str().parse::<AlgorithmTag>().unwrap(), tag);
        }
        assert!("td2"
            .parse::<AlgorithmTag>()
            .unwrap_err()
            .contains("unknown algorithm"));
    }

    #[test]
    fn td0_single_step_by_hand() {
        let mut e = Evaluator::new(
            three_state_features(),
            0.9,
            Algorithm::Td0 {
                rate: constant(0.1),
            },
            scalar(2.0),
            None,
        )
        .unwrap();
        // from B: d = 1 + 0.9·(−1)·2 − (−1)·2 = 1.2, θ += 0.1·1.2·(−1)
        let d = e.step(&Transition::new(1, 1, 1.0)).unwrap();
        assert!((d - 1.2).abs() < 1e-15);
        assert!((e.state().primary[0] - 1.88).abs() < 1e-15);
        assert_eq!(e.state().steps, 1);
    }

    #[test]
    fn zero_reward_stays_at_zero() {
        for algorithm in [
            Algorithm::Td0 {
                rate: constant(0.5),
            },
            Algorithm::ResidualGradient {
                rate: constant(0.5),
            },
            Algorithm::Gtd2 {
                rate: constant(0.5),
                correction_rate: constant(0.5),
            },
            Algorithm::AlternatingCd {
                value_rate: constant(0.5),
                target_rate: constant(0.5),
            },
            Algorithm::CoordinateDescent {
                value_rate: constant(0.5),
                target_rate: constant(0.5),
                tolerance: 1e-10,
                inner_cap: 100,
            },
        ] {
            let mut e =
                Evaluator::new(two_features(), 0.9, algorithm, DVector::zeros(2), None).unwrap();
            for (i, j) in [(0, 1), (1, 2), (2, 0), (2, 2)] {
                e.step(&Transition::new(i, j, 0.0)).unwrap();
            }
            assert_eq!(e.state().primary, DVector::zeros(2));
            assert_eq!(e.state().auxiliary, DVector::zeros(2));
        }
    }

    #[test]
    fn trace_unrolls_by_hand() {
        let fm = two_features();
        let (alpha, lambda) = (0.9, 0.6);
        let mut e = Evaluator::new(
            fm.clone(),
            alpha,
            Algorithm::TdLambda {
                rate: constant(0.01),
                lambda,
                reset: TraceReset::EpisodeStart,
            },
            DVector::zeros(2),
            None,
        )
        .unwrap();
        e.step(&Transition::new(0, 1, 1.0)).unwrap();
        assert_eq!(e.state().auxiliary.as_slice(), fm.row(0));
        e.step(&Transition::new(1, 2, 0.0)).unwrap();
        let z = e.state().auxiliary.clone();
        for k in 0..2 {
            let want = alpha * lambda * fm.row(0)[k] + fm.row(1)[k];
            assert!((z[k] - want).abs() < 1e-15);
        }
        let mut restart = Transition::new(2, 0, 0.0);
        restart.episode_start = true;
        e.step(&restart).unwrap();
        assert_eq!(e.state().auxiliary.as_slice(), fm.row(2));
    }

    #[test]
    fn td_lambda_zero_equals_td0() {
        let stream: Vec<_> = [
            (0, 1, 1.0),
            (1, 2, -0.5),
            (2, 2, 2.0),
            (2, 0, 0.3),
            (0, 0, 1.0),
        ]
        .iter()
        .cycle()
        .take(200)
        .map(|&(i, j, g)| Transition::new(i, j, g))
        .collect();
        let init = DVector::from_column_slice(&[0.4, -0.2]);
        let mut td0 = Evaluator::new(
            two_features(),
            0.9,
            Algorithm::Td0 {
                rate: constant(0.05),
            },
            init.clone(),
            None,
        )
        .unwrap();
        let mut tdl = Evaluator::new(
            two_features(),
            0.9,
            Algorithm::TdLambda {
                rate: constant(0.05),
                lambda: 0.0,
                reset: TraceReset::Never,
            },
            init,
            None,
        )
        .unwrap();
        for t in &stream {
            td0.step(t).unwrap();
            tdl.step(t).unwrap();
            assert_eq!(td0.state().primary, tdl.state().primary);
        }
    }

    #[test]
    fn gtd2_zero_correction_leaves_theta() {
        let mut e = Evaluator::new(
            two_features(),
            0.9,
            Algorithm::Gtd2 {
                rate: constant(1.0),
                correction_rate: constant(0.1),
            },
            DVector::from_column_slice(&[1.0, 2.0]),
            None,
        )
        .unwrap();
        e.step(&Transition::new(0, 2, 1.0)).unwrap();
        assert_eq!(e.state().primary.as_slice(), &[1.0, 2.0]);
        assert_ne!(e.state().auxiliary, DVector::zeros(2));
    }

    #[test]
    fn alternating_cd_update_order() {
        let fm = three_state_features();
        let mut e = Evaluator::new(
            fm,
            0.9,
            Algorithm::AlternatingCd {
                value_rate: constant(0.1),
                target_rate: constant(0.5),
            },
            scalar(5.0),
            Some(scalar(1.0)),
        )
        .unwrap();
        // from C (φ = 1): d = 1 + 0.9·1 − 5 = −3.1; r = 5 − 0.31 = 4.69
        // x = 1 + 0.5·(4.69 − 1) = 2.845
        e.step(&Transition::new(2, 2, 1.0)).unwrap();
        assert!((e.state().primary[0] - 4.69).abs() < 1e-14);
        assert!((e.state().auxiliary[0] - 2.845).abs() < 1e-14);
        assert_eq!(e.estimate()[0], e.state().auxiliary[0]);
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(Evaluator::new(
            three_state_features(),
            0.9,
            Algorithm::Td0 {
                rate: constant(0.1)
            },
            DVector::zeros(2),
            None
        )
        .is_err());
        assert!(Evaluator::new(
            three_state_features(),
            1.5,
            Algorithm::Td0 {
                rate: constant(0.1)
            },
            scalar(0.0),
            None
        )
        .is_err());
        assert!(Evaluator::new(
            three_state_features(),
            0.9,
            Algorithm::TdLambda {
                rate: constant(0.1),
                lambda: 1.0,
                reset: TraceReset::Never
            },
            scalar(0.0),
            None
        )
        .is_err());
        let mut e = Evaluator::new(
            three_state_features(),
            0.9,
            Algorithm::Td0 {
                rate: constant(0.1),
            },
            scalar(0.0),
            None,
        )
        .unwrap();
        assert!(matches!(
            e.step(&Transition::new(3, 0, 0.0)),
            Err(AgentError::StateIndex { state: 3, .. })
        ));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        // θ → 2θ style blow-up: φ = [1, 2], 0 → 1, weighting only on state 0
        let w = WeightedNorm::new(&[1.0, 0.0]).unwrap();
        let fm = FeatureMap::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]), &w).unwrap();
        let mut e = Evaluator::new(
            fm,
            0.99,
            Algorithm::Td0 {
                rate: constant(0.5),
            },
            scalar(1.0),
            None,
        )
        .unwrap();
        let t = Transition::new(0, 1, 0.0);
        let err = loop {
            if let Err(err) = e.step(&t) {
                break err;
            }
        };
        let AgentError::Diverged { step } = err else {
            panic!("unexpected {err:?}");
        };
        assert!(step > 10 && step < 1000, "{step}");
    }
}
