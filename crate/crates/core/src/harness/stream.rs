use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, Sampling, Scenario};
use crate::agents::Transition;
use crate::chain::MarkovRewardProcess;

/// Generator recorded in every artifact: ChaCha with 8 rounds, seeded through
/// `seed_from_u64`.
pub const RNG_NAME: &str = "chacha8";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for run `index` of a multi-run comparison:
/// `splitmix64(parent + γ·(index + 1))` with γ the 64-bit golden ratio.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Infinite seeded stream of transitions from a chain scenario.
#[derive(Debug, Clone)]
pub struct TransitionStream {
    rng: ChaCha8Rng,
    mrp: MarkovRewardProcess,
    rows: Vec<WeightedIndex<f64>>,
    source: WeightedIndex<f64>,
    absorbing: Vec<bool>,
    sampling: Sampling,
    episode_cap: u64,
    current: Option<usize>,
    episode_steps: u64,
    step: u64,
}

impl TransitionStream {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, HarnessError> {
        let problem = scenario.problem().ok_or_else(|| {
            HarnessError::invalid(
                "scenario",
                format!("{} has no transition stream", scenario.name()),
            )
        })?;
        let mrp = problem.mrp().clone();
        let n = mrp.n_states();
        let rows = (0..n)
            .map(|i| {
                WeightedIndex::new(mrp.transition().row(i).iter().copied())
                    .map_err(|e| HarnessError::invalid(format!("transition.{i}"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let spec = scenario.spec();
        let source_weights = match spec.sampling {
            Sampling::Iid => mrp.weighting().weights().as_slice().to_vec(),
            Sampling::Trajectory => scenario.restart_weights().expect("chain scenario"),
        };
        let source = WeightedIndex::new(&source_weights)
            .map_err(|e| HarnessError::invalid("weighting", e.to_string()))?;
        let absorbing = (0..n).map(|i| mrp.transition()[(i, i)] == 1.0).collect();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            mrp,
            rows,
            source,
            absorbing,
            sampling: spec.sampling,
            episode_cap: spec.episode_cap,
            current: None,
            episode_steps: 0,
            step: 0,
        })
    }
}

impl Iterator for TransitionStream {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        let (from, episode_start) = match (self.sampling, self.current) {
            (Sampling::Iid, _) => (self.source.sample(&mut self.rng), self.step == 0),
            (Sampling::Trajectory, Some(i)) => (i, false),
            (Sampling::Trajectory, None) => {
                self.episode_steps = 0;
                (self.source.sample(&mut self.rng), true)
            }
        };
        let to = self.rows[from].sample(&mut self.rng);
        let mut t = Transition::new(from, to, self.mrp.reward()[(from, to)]).at(self.step);
        t.episode_start = episode_start;
        self.step += 1;
        if self.sampling == Sampling::Trajectory {
            self.episode_steps += 1;
            let done = self.absorbing[from] || self.episode_steps >= self.episode_cap;
            self.current = (!done).then_some(to);
        }
        Some(t)
    }
}

/// The first `n` transitions of the stream for `seed`.
pub fn transition_stream(
    scenario: &Scenario,
    seed: u64,
    n: usize,
) -> Result<Vec<Transition>, HarnessError> {
    Ok(TransitionStream::new(scenario, seed)?.take(n).collect())
}
