use rand::Rng;

use super::{check_finite, CoopError, DifferentiableApproximator, GridAction, GridWorld, SgdRates};

/// A Q-factor approximator over (state, action) pairs with `n_actions`
/// actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct QFactorModel<A> {
    approximator: A,
    n_actions: usize,
}

impl<A> QFactorModel<A>
where
    A: DifferentiableApproximator<Input = (usize, usize)>,
{
    pub fn new(approximator: A, n_actions: usize) -> Result<Self, CoopError> {
        if n_actions == 0 {
            return Err(CoopError::Config("at least one action required".into()));
        }
        Ok(Self {
            approximator,
            n_actions,
        })
    }

    pub fn approximator(&self) -> &A {
        &self.approximator
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params_dim(&self) -> usize {
        self.approximator.params_dim()
    }

    pub fn q(&self, state: usize, action: usize, params: &[f64]) -> f64 {
        self.approximator.value((state, action), params)
    }

    pub fn q_values(&self, state: usize, params: &[f64]) -> Vec<f64> {
        (0..self.n_actions)
            .map(|a| self.q(state, a, params))
            .collect()
    }

    fn check_action(&self, action: usize) -> Result<(), CoopError> {
        if action >= self.n_actions {
            return Err(CoopError::Action {
                action,
                n_actions: self.n_actions,
            });
        }
        Ok(())
    }
}

/// Lowest-index argmax of the Q-values at `state`.
pub fn greedy_action<A>(model: &QFactorModel<A>, params: &[f64], state: usize) -> usize
where
    A: DifferentiableApproximator<Input = (usize, usize)>,
{
    let mut best = 0;
    let mut best_q = model.q(state, 0, params);
    for a in 1..model.n_actions() {
        let q = model.q(state, a, params);
        if q > best_q {
            best = a;
            best_q = q;
        }
    }
    best
}

/// Greedy with probability `1 − ε`, otherwise uniform over all actions (the
/// greedy one included). Always consumes exactly one uniform draw, plus one
/// more when exploring.
pub fn epsilon_greedy_action<A, R>(
    model: &QFactorModel<A>,
    params: &[f64],
    state: usize,
    epsilon: f64,
    rng: &mut R,
) -> usize
where
    A: DifferentiableApproximator<Input = (usize, usize)>,
    R: Rng,
{
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..model.n_actions())
    } else {
        greedy_action(model, params, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QTransition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// No bootstrap from `next_state` when set.
    pub terminal: bool,
    pub step_index: u64,
}

/// How the target parameters follow the value parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetUpdate {
    /// One gradient step on `(Q(i,u; r') − Q(i,u; x))²`.
    Gradient,
    /// `x ← r'`. With a tabular model this is plain Q-learning.
    Copy,
}

impl TargetUpdate {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gradient => "gradient",
            Self::Copy => "copy",
        }
    }
}

/// One cooperative Q step. Returns the TD error of the value step.
pub fn coop_q_step<A>(
    value_params: &mut [f64],
    target_params: &mut [f64],
    transition: &QTransition,
    model: &QFactorModel<A>,
    discount: f64,
    rates: SgdRates,
    target_update: TargetUpdate,
) -> Result<f64, CoopError>
where
    A: DifferentiableApproximator<Input = (usize, usize)>,
{
    model.check_action(transition.action)?;
    let dim = model.params_dim();
    for len in [value_params.len(), target_params.len()] {
        if len != dim {
            return Err(CoopError::Dimension {
                expected: dim,
                actual: len,
            });
        }
    }
    let pair = (transition.state, transition.action);
    let approx = model.approximator();

    // the bootstrap term depends on x only, so it is constant for the r-step
    let bootstrap = if transition.terminal {
        0.0
    } else {
        let a = greedy_action(model, target_params, transition.next_state);
        model.q(transition.next_state, a, target_params)
    };
    let d = transition.reward + discount * bootstrap - approx.value(pair, value_params);
    let mut grad = vec![0.0; dim];
    approx.gradient(pair, value_params, &mut grad);
    let r_scale = rates.value_rate * d;
    for (r, g) in value_params.iter_mut().zip(&grad) {
        *r += r_scale * g;
    }

    match target_update {
        TargetUpdate::Copy => target_params.copy_from_slice(value_params),
        TargetUpdate::Gradient => {
            let gap = approx.value(pair, value_params) - approx.value(pair, target_params);
            approx.gradient(pair, target_params, &mut grad);
            let x_scale = rates.target_rate * gap;
            for (x, g) in target_params.iter_mut().zip(&grad) {
                *x += x_scale * g;
            }
        }
    }

    check_finite(&[value_params, target_params], transition.step_index)?;
    Ok(d)
}

/// ε decays linearly from `start` to `end` over `decay_steps` steps, then
/// stays at `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationPolicy {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl ExplorationPolicy {
    pub fn new(start: f64, end: f64, decay_steps: u64) -> Result<Self, CoopError> {
        for (name, v) in [("epsilon_start", start), ("epsilon_end", end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoopError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            start,
            end,
            decay_steps,
        })
    }

    pub fn constant(epsilon: f64) -> Result<Self, CoopError> {
        Self::new(epsilon, epsilon, 0)
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartRule {
    /// Uniform over non-terminal cells.
    Random,
    Cell(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    /// Total environment steps across all episodes.
    pub steps: u64,
    pub episode_cap: u64,
    pub rates: SgdRates,
    pub target_update: TargetUpdate,
    pub exploration: ExplorationPolicy,
    pub start: StartRule,
}

impl ControlConfig {
    pub fn validate(&self, grid: &GridWorld) -> Result<(), CoopError> {
        if self.steps == 0 || self.episode_cap == 0 {
            return Err(CoopError::Config(
                "steps and episode_cap must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("value_rate", self.rates.value_rate),
            ("target_rate", self.rates.target_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoopError::Config(format!("{name} = {v} must be positive")));
            }
        }
        if let StartRule::Cell(c) = self.start {
            if c >= grid.n_cells() || grid.is_terminal(c) {
                return Err(CoopError::Config(format!(
                    "start cell {c} is not a non-terminal cell"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub start_cell: usize,
    pub steps: u64,
    /// Undiscounted sum of rewards.
    pub total_reward: f64,
    /// ε at the episode's last step.
    pub epsilon: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlLog {
    pub episodes: Vec<EpisodeRecord>,
    pub value_params: Vec<f64>,
    pub target_params: Vec<f64>,
    /// Greedy action per cell from the value parameters; `None` on terminals.
    pub policy: Vec<Option<usize>>,
    pub steps: u64,
}

/// Trains `model` on `grid` from zero parameters.
pub fn run_control<A, R>(
    grid: &GridWorld,
    model: &QFactorModel<A>,
    config: &ControlConfig,
    rng: &mut R,
) -> Result<ControlLog, CoopError>
where
    A: DifferentiableApproximator<Input = (usize, usize)>,
    R: Rng,
{
    config.validate(grid)?;
    if model.n_actions() != grid.n_actions() {
        return Err(CoopError::Config(format!(
            "model has {} actions, grid has {}",
            model.n_actions(),
            grid.n_actions()
        )));
    }
    let starts = grid.non_terminal_cells();
    let mut r = vec![0.0; model.params_dim()];
    let mut x = r.clone();
    let mut episodes = Vec::new();
    let mut step: u64 = 0;

    while step < config.steps {
        let start_cell = match config.start {
            StartRule::Random => starts[rng.gen_range(0..starts.len())],
            StartRule::Cell(c) => c,
        };
        let mut cell = start_cell;
        let mut record = EpisodeRecord {
            episode: episodes.len(),
            start_cell,
            steps: 0,
            total_reward: 0.0,
            epsilon: config.exploration.epsilon(step),
            terminated: false,
        };
        while record.steps < config.episode_cap && step < config.steps {
            let epsilon = config.exploration.epsilon(step);
            let action = epsilon_greedy_action(model, &r, cell, epsilon, rng);
            let grid_action = GridAction::from_index(action).expect("grid action index");
            let (next, reward) = grid.step(cell, grid_action);
            let transition = QTransition {
                state: cell,
                action,
                reward,
                next_state: next,
                terminal: grid.is_terminal(next),
                step_index: step,
            };
            coop_q_step(
                &mut r,
                &mut x,
                &transition,
                model,
                grid.discount(),
                config.rates,
                config.target_update,
            )?;
            step += 1;
            record.steps += 1;
            record.total_reward += reward;
            record.epsilon = epsilon;
            cell = next;
            if transition.terminal {
                record.terminated = true;
                break;
            }
        }
        episodes.push(record);
    }

    let policy = (0..grid.n_cells())
        .map(|c| (!grid.is_terminal(c)).then(|| greedy_action(model, &r, c)))
        .collect();
    Ok(ControlLog {
        episodes,
        value_params: r,
        target_params: x,
        policy,
        steps: step,
    })
}

/// Number of moves the greedy policy takes from `start` to a terminal, or
/// `None` if it has not arrived after `max_steps`.
pub fn greedy_rollout<A>(
    grid: &GridWorld,
    model: &QFactorModel<A>,
    params: &[f64],
    start: usize,
    max_steps: usize,
) -> Option<usize>
where
    A: DifferentiableApproximator<Input = (usize, usize)>,
{
    let mut cell = start;
    for taken in 0..=max_steps {
        if grid.is_terminal(cell) {
            return Some(taken);
        }
        let action = GridAction::from_index(greedy_action(model, params, cell))?;
        cell = grid.step(cell, action).0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coop::TabularQ;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tabular(states: usize, actions: usize) -> QFactorModel<TabularQ> {
        QFactorModel::new(
            TabularQ {
                n_states: states,
                n_actions: actions,
            },
            actions,
        )
        .unwrap()
    }

    fn rates(v: f64, t: f64) -> SgdRates {
        SgdRates {
            value_rate: v,
            target_rate: t,
        }
    }

    fn qt(
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        terminal: bool,
    ) -> QTransition {
        QTransition {
            state,
            action,
            reward,
            next_state,
            terminal,
            step_index: 0,
        }
    }

    #[test]
    fn copy_target_is_q_learning() {
        // 2 states × 2 actions, hand-unrolled Q-learning with β = 0.5, α = 0.9
        let model = tabular(2, 2);
        let mut r = vec![0.0; 4];
        let mut x = vec![0.0; 4];
        let trace = [
            qt(0, 1, 1.0, 1, false),
            qt(1, 0, 2.0, 0, false),
            qt(0, 1, 1.0, 1, false),
        ];
        let mut q = [0.0f64; 4];
        for t in &trace {
            coop_q_step(
                &mut r,
                &mut x,
                t,
                &model,
                0.9,
                rates(0.5, 0.5),
                TargetUpdate::Copy,
            )
            .unwrap();
            let next = q[2 * t.next_state].max(q[2 * t.next_state + 1]);
            let k = 2 * t.state + t.action;
            q[k] += 0.5 * (t.reward + 0.9 * next - q[k]);
            assert_eq!(r, q.to_vec());
            assert_eq!(x, q.to_vec());
        }
        // Q(0,1) = 0.5; Q(1,0) = 0.5·(2 + 0.45) = 1.225; Q(0,1) = 0.5 + 0.5·(1 + 0.9·1.225 − 0.5)
        assert!((q[1] - 1.30125).abs() < 1e-15);
        assert!((q[2] - 1.225).abs() < 1e-15);
    }

    #[test]
    fn gradient_target_chases_value() {
        let model = tabular(1, 1);
        let mut r = vec![0.0];
        let mut x = vec![0.0];
        coop_q_step(
            &mut r,
            &mut x,
            &qt(0, 0, 1.0, 0, false),
            &model,
            0.5,
            rates(0.5, 0.2),
            TargetUpdate::Gradient,
        )
        .unwrap();
        assert_eq!(r, vec![0.5]);
        assert!((x[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_state_self_loop_converges_to_geometric_sum() {
        let model = tabular(1, 1);
        let mut r = vec![0.0];
        let mut x = vec![0.0];
        for k in 0..2000 {
            let mut t = qt(0, 0, 1.0, 0, false);
            t.step_index = k;
            coop_q_step(
                &mut r,
                &mut x,
                &t,
                &model,
                0.5,
                rates(0.5, 0.5),
                TargetUpdate::Gradient,
            )
            .unwrap();
        }
        assert!((r[0] - 2.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn optimal_q_is_fixed_on_greedy_path() {
        let grid = GridWorld::four_by_four(0.9);
        let sol = grid.to_mdp().unwrap().value_iteration(1e-13, 10_000);
        let model = tabular(16, 4);
        let q_star: Vec<f64> = (0..16)
            .flat_map(|s| (0..4).map(move |a| (s, a)))
            .map(|(s, a)| sol.q[(s, a)])
            .collect();
        let mut r = q_star.clone();
        let mut x = q_star.clone();
        let mut cell = 0;
        while !grid.is_terminal(cell) {
            let a = greedy_action(&model, &r, cell);
            let (next, g) = grid.step(cell, GridAction::from_index(a).unwrap());
            let d = coop_q_step(
                &mut r,
                &mut x,
                &qt(cell, a, g, next, grid.is_terminal(next)),
                &model,
                0.9,
                rates(0.5, 0.5),
                TargetUpdate::Gradient,
            )
            .unwrap();
            assert!(d.abs() < 1e-10);
            cell = next;
        }
        for k in 0..64 {
            assert!((r[k] - q_star[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn bad_action_rejected() {
        let model = tabular(1, 2);
        let err = coop_q_step(
            &mut [0.0; 2],
            &mut [0.0; 2],
            &qt(0, 2, 0.0, 0, false),
            &model,
            0.9,
            rates(0.1, 0.1),
            TargetUpdate::Copy,
        )
        .unwrap_err();
        assert_eq!(
            err,
            CoopError::Action {
                action: 2,
                n_actions: 2
            }
        );
    }

    #[test]
    fn epsilon_zero_is_greedy_and_ties_go_low() {
        let model = tabular(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(
                epsilon_greedy_action(&model, &[0.0, 3.0, 3.0], 0, 0.0, &mut rng),
                1
            );
        }
        let two = tabular(1, 2);
        for _ in 0..100 {
            assert_eq!(
                epsilon_greedy_action(&two, &[1.0, 1.0], 0, 0.0, &mut rng),
                0
            );
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let model = tabular(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[epsilon_greedy_action(&model, &[5.0, 0.0, 0.0, 0.0], 0, 1.0, &mut rng)] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!(
                (c as f64 - n as f64 * 0.25).abs() < 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn greedy_mass_matches_formula() {
        let model = tabular(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (n, eps) = (100_000, 0.3);
        let hits = (0..n)
            .filter(|_| epsilon_greedy_action(&model, &[0.0, 0.0, 1.0, 0.0], 0, eps, &mut rng) == 2)
            .count();
        let p = 1.0 - eps + eps / 4.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits as f64 - n as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn exploration_decays_linearly() {
        let e = ExplorationPolicy::new(1.0, 0.1, 100).unwrap();
        assert_eq!(e.epsilon(0), 1.0);
        assert!((e.epsilon(50) - 0.55).abs() < 1e-15);
        assert_eq!(e.epsilon(100), 0.1);
        assert_eq!(e.epsilon(10_000), 0.1);
        assert!(ExplorationPolicy::new(1.5, 0.1, 10).is_err());
    }

    fn config(steps: u64) -> ControlConfig {
        ControlConfig {
            steps,
            episode_cap: 200,
            rates: rates(0.5, 0.5),
            target_update: TargetUpdate::Gradient,
            exploration: ExplorationPolicy::new(1.0, 0.1, steps / 2).unwrap(),
            start: StartRule::Random,
        }
    }

    #[test]
    fn one_decision_grid_learns_within_100_episodes() {
        let grid = GridWorld::new(2, 1, &[1], -1.0, 0.9).unwrap();
        let model = tabular(2, 4);
        // every episode from cell 0 lasts at least one step
        let mut cfg = config(100);
        cfg.exploration = ExplorationPolicy::constant(0.1).unwrap();
        let log = run_control(&grid, &model, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(log.episodes.len() <= 100);
        assert_eq!(log.policy, vec![Some(GridAction::Right as usize), None]);
    }

    #[test]
    fn four_by_four_matches_value_iteration() {
        let grid = GridWorld::four_by_four(0.9);
        let sol = grid.to_mdp().unwrap().value_iteration(1e-13, 10_000);
        let model = tabular(16, 4);
        let log = run_control(
            &grid,
            &model,
            &config(50_000),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for c in grid.non_terminal_cells() {
            let a = log.policy[c].unwrap();
            assert!(sol.optimal_actions(c, 1e-9).contains(&a), "cell {c}");
        }
        for c in grid.non_terminal_cells() {
            let d = grid.distances()[c].unwrap();
            assert_eq!(
                greedy_rollout(&grid, &model, &log.value_params, c, 100),
                Some(d)
            );
        }
    }

    #[test]
    fn logs_deterministic_per_seed() {
        let grid = GridWorld::four_by_four(0.9);
        let model = tabular(16, 4);
        let a = run_control(
            &grid,
            &model,
            &config(3000),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = run_control(
            &grid,
            &model,
            &config(3000),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps, 3000);
        assert_eq!(a.episodes.iter().map(|e| e.steps).sum::<u64>(), 3000);
    }
}
