use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kv::{join_floats, parse_list, KvReader};
use super::{HarnessError, KvDocument, Origin};
use crate::chain::{
    ChainError, EvaluationProblem, FeatureMap, MarkovRewardProcess, WeightedNorm,
    DEFAULT_CONDITION_BOUND,
};
use crate::coop::GridWorld;

pub const THREE_STATE: &str = "paper-3state";
pub const GRIDWORLD_4X4: &str = "gridworld-4x4";

const DEFAULT_DISCOUNT: f64 = 0.9;
const DEFAULT_EPSILON_FEATURE: f64 = 0.01;
const DEFAULT_EPISODE_CAP: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `i ~ π`, `j ~ P(i, ·)` independently at every step.
    Iid,
    /// Follow `P` from a restart state, restarting after an absorbing
    /// self-loop or at the episode cap.
    Trajectory,
}

impl Sampling {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::Trajectory => "trajectory",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    /// Three states A, B, C: A moves to B or C with probability ½ each, B and
    /// C are absorbing with reward 1; `Φ = [ε, −1, 1]`, `π = [0, 0.8, 0.2]`.
    ThreeState {
        epsilon: f64,
    },
    RandomChain {
        n: usize,
        k: usize,
        seed: u64,
    },
    Custom {
        transition: DMatrix<f64>,
        reward: DMatrix<f64>,
        weighting: Vec<f64>,
        features: DMatrix<f64>,
    },
    Grid {
        width: usize,
        height: usize,
        terminals: Vec<usize>,
        move_reward: f64,
    },
}

/// Declarative scenario description, as read from and written to config
/// text.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub source: ScenarioSource,
    pub discount: f64,
    pub sampling: Sampling,
    /// Restart distribution for trajectory sampling; the weighting if unset.
    pub restart: Option<Vec<f64>>,
    pub episode_cap: u64,
    pub condition_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioModel {
    Chain(EvaluationProblem),
    Grid(GridWorld),
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    spec: ScenarioSpec,
    model: ScenarioModel,
}

impl ScenarioSpec {
    fn with_source(source: ScenarioSource) -> Self {
        Self {
            source,
            discount: DEFAULT_DISCOUNT,
            sampling: Sampling::Iid,
            restart: None,
            episode_cap: DEFAULT_EPISODE_CAP,
            condition_bound: DEFAULT_CONDITION_BOUND,
        }
    }

    pub fn three_state_chain(epsilon: f64, discount: f64) -> Self {
        Self {
            discount,
            ..Self::with_source(ScenarioSource::ThreeState { epsilon })
        }
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.source, ScenarioSource::Grid { .. })
    }

    pub fn name(&self) -> String {
        match &self.source {
            ScenarioSource::ThreeState { .. } => THREE_STATE.into(),
            ScenarioSource::RandomChain { n, k, seed } => format!("random-chain({n},{k},{seed})"),
            ScenarioSource::Custom { .. } => "custom".into(),
            ScenarioSource::Grid { .. } if *self == builtin_grid(self.discount) => {
                GRIDWORLD_4X4.into()
            }
            ScenarioSource::Grid { .. } => "gridworld".into(),
        }
    }

    pub fn build(&self) -> Result<Scenario, HarnessError> {
        let model = match &self.source {
            ScenarioSource::Grid {
                width,
                height,
                terminals,
                move_reward,
            } => ScenarioModel::Grid(
                GridWorld::new(*width, *height, terminals, *move_reward, self.discount)
                    .map_err(|e| HarnessError::invalid("grid", e.to_string()))?,
            ),
            ScenarioSource::ThreeState { epsilon } => {
                if !epsilon.is_finite() || *epsilon == 0.0 {
                    return Err(HarnessError::invalid(
                        "epsilon_feature",
                        format!("must be finite and nonzero, got {epsilon}"),
                    ));
                }
                let p =
                    DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
                let g =
                    DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
                let phi = DMatrix::from_column_slice(3, 1, &[*epsilon, -1.0, 1.0]);
                ScenarioModel::Chain(self.chain(p, g, &[0.0, 0.8, 0.2], phi)?)
            }
            ScenarioSource::RandomChain { n, k, seed } => ScenarioModel::Chain(random_chain(
                *n,
                *k,
                *seed,
                self.discount,
                self.condition_bound,
            )?),
            ScenarioSource::Custom {
                transition,
                reward,
                weighting,
                features,
            } => ScenarioModel::Chain(self.chain(
                transition.clone(),
                reward.clone(),
                weighting,
                features.clone(),
            )?),
        };
        if let (ScenarioModel::Chain(problem), Some(restart)) = (&model, &self.restart) {
            check_restart(restart, problem.mrp().n_states())?;
        }
        if self.episode_cap == 0 {
            return Err(HarnessError::invalid("episode_cap", "must be at least 1"));
        }
        Ok(Scenario {
            spec: self.clone(),
            model,
        })
    }

    fn chain(
        &self,
        p: DMatrix<f64>,
        g: DMatrix<f64>,
        weighting: &[f64],
        phi: DMatrix<f64>,
    ) -> Result<EvaluationProblem, HarnessError> {
        let mrp = MarkovRewardProcess::new(p, g, self.discount, weighting).map_err(chain_error)?;
        let features = FeatureMap::with_condition_bound(phi, mrp.weighting(), self.condition_bound)
            .map_err(chain_error)?;
        EvaluationProblem::new(mrp, features).map_err(chain_error)
    }

    /// Reads a scenario-only document, rejecting any other key, and checks
    /// that it builds.
    pub fn from_document(doc: &KvDocument) -> Result<Self, HarnessError> {
        let read = || {
            let mut r = KvReader::new(doc);
            super::config::check_metadata(&mut r)?;
            let spec = Self::read(&mut r)?;
            r.finish()?;
            spec.build()?;
            Ok(spec)
        };
        read().map_err(|e| doc.relocate(e))
    }

    pub(crate) fn read(r: &mut KvReader<'_>) -> Result<Self, HarnessError> {
        let name = r.get_or::<String>("scenario", "custom".into())?;
        let name_entry = r.document().get("scenario").cloned();
        let source = match name.as_str() {
            THREE_STATE => ScenarioSource::ThreeState {
                epsilon: r.get_or("epsilon_feature", DEFAULT_EPSILON_FEATURE)?,
            },
            GRIDWORLD_4X4 => builtin_grid(DEFAULT_DISCOUNT).source,
            "gridworld" => read_grid(r)?,
            "custom" => read_custom(r)?,
            other => match parse_random_chain(other) {
                Some((n, k, seed)) => ScenarioSource::RandomChain { n, k, seed },
                None => {
                    let message = format!(
                        "unknown scenario `{other}` (expected {THREE_STATE}, {GRIDWORLD_4X4}, gridworld, random-chain(n,k,seed) or custom)"
                    );
                    return Err(match name_entry {
                        Some(e) => KvReader::error(&e, message),
                        None => HarnessError::invalid("scenario", message),
                    });
                }
            },
        };
        let mut spec = Self::with_source(source);
        spec.discount = r.get_or("discount", DEFAULT_DISCOUNT)?;
        spec.condition_bound = r.get_or("condition_bound", DEFAULT_CONDITION_BOUND)?;
        if !spec.is_grid() {
            spec.sampling = match r.get_or::<String>("sampling", "iid".into())?.as_str() {
                "iid" => Sampling::Iid,
                "trajectory" => Sampling::Trajectory,
                other => {
                    let e = r.document().get("sampling").expect("sampling was read");
                    return Err(KvReader::error(
                        e,
                        format!("unknown sampling `{other}` (expected iid or trajectory)"),
                    ));
                }
            };
            spec.restart = r.list("restart")?;
            spec.episode_cap = r.get_or("episode_cap", DEFAULT_EPISODE_CAP)?;
        }
        Ok(spec)
    }

    pub(crate) fn write(&self, doc: &mut KvDocument) {
        let mut set = |k: &str, v: String| doc.set(k, v, Origin::Document);
        set("scenario", self.name());
        match &self.source {
            ScenarioSource::ThreeState { epsilon } => set("epsilon_feature", epsilon.to_string()),
            ScenarioSource::RandomChain { .. } => {}
            ScenarioSource::Custom {
                transition,
                reward,
                weighting,
                features,
            } => {
                let n = transition.nrows();
                set("states", n.to_string());
                for i in 0..n {
                    for j in 0..n {
                        if transition[(i, j)] != 0.0 {
                            set(
                                &format!("transition.{i}.{j}"),
                                transition[(i, j)].to_string(),
                            );
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        if reward[(i, j)] != 0.0 {
                            set(&format!("reward.{i}.{j}"), reward[(i, j)].to_string());
                        }
                    }
                }
                set("weighting", join_floats(weighting));
                for i in 0..n {
                    let row: Vec<f64> = features.row(i).iter().copied().collect();
                    set(&format!("features.{i}"), join_floats(&row));
                }
            }
            ScenarioSource::Grid {
                width,
                height,
                terminals,
                move_reward,
            } => {
                if self.name() == "gridworld" {
                    set("grid.width", width.to_string());
                    set("grid.height", height.to_string());
                    let t: Vec<String> = terminals.iter().map(|t| t.to_string()).collect();
                    set("grid.terminals", t.join(", "));
                    set("grid.move_reward", move_reward.to_string());
                }
            }
        }
        set("discount", self.discount.to_string());
        set("condition_bound", self.condition_bound.to_string());
        if !self.is_grid() {
            set("sampling", self.sampling.as_str().into());
            if let Some(restart) = &self.restart {
                set("restart", join_floats(restart));
            }
            set("episode_cap", self.episode_cap.to_string());
        }
    }
}

fn builtin_grid(discount: f64) -> ScenarioSpec {
    ScenarioSpec {
        discount,
        ..ScenarioSpec::with_source(ScenarioSource::Grid {
            width: 4,
            height: 4,
            terminals: vec![15],
            move_reward: -1.0,
        })
    }
}

fn check_restart(restart: &[f64], n: usize) -> Result<(), HarnessError> {
    if restart.len() != n {
        return Err(HarnessError::invalid(
            "restart",
            format!("expected {n} entries, got {}", restart.len()),
        ));
    }
    if restart.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || restart.iter().sum::<f64>() <= 0.0 {
        return Err(HarnessError::invalid(
            "restart",
            "entries must be nonnegative with a positive sum",
        ));
    }
    Ok(())
}

/// Key path for a chain constructor failure.
fn chain_error(err: ChainError) -> HarnessError {
    let key = match &err {
        ChainError::RowSum { row, .. } => format!("transition.{row}"),
        ChainError::Probability { row, col, .. } => format!("transition.{row}.{col}"),
        ChainError::NonFinite { what: "reward", .. } => "reward".into(),
        ChainError::NonFinite {
            what: "feature", ..
        } => "features".into(),
        ChainError::NegativeWeight { .. } | ChainError::WeightSum { .. } => "weighting".into(),
        ChainError::NonFinite { .. } => "weighting".into(),
        ChainError::Discount(_) => "discount".into(),
        ChainError::ZeroFeatureColumn(_)
        | ChainError::TooManyFeatures { .. }
        | ChainError::DegenerateFeatures { .. } => "features".into(),
        ChainError::Dimension { context, .. } => match *context {
            "weighting" => "weighting".into(),
            "feature rows" => "features".into(),
            "reward matrix" => "reward".into(),
            _ => "transition".into(),
        },
        ChainError::NoFixedPoint { .. } => "features".into(),
        ChainError::Undiscounted => "discount".into(),
        ChainError::Lambda(_) => "lambda".into(),
    };
    HarnessError::invalid(key, err.to_string())
}

fn parse_random_chain(name: &str) -> Option<(usize, usize, u64)> {
    let args = name.strip_prefix("random-chain(")?.strip_suffix(')')?;
    let parts: Vec<&str> = args.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [n, k, seed] => Some((n.parse().ok()?, k.parse().ok()?, seed.parse().ok()?)),
        _ => None,
    }
}

fn index_pair(key: &str, prefix: &str) -> Option<(usize, usize)> {
    let rest = key.strip_prefix(prefix)?;
    let (i, j) = rest.split_once('.')?;
    Some((i.parse().ok()?, j.parse().ok()?))
}

fn read_matrix(r: &mut KvReader<'_>, prefix: &str, n: usize) -> Result<DMatrix<f64>, HarnessError> {
    let mut m = DMatrix::zeros(n, n);
    for e in r.prefixed(prefix) {
        let (i, j) = index_pair(&e.key, prefix)
            .filter(|&(i, j)| i < n && j < n)
            .ok_or_else(|| {
                KvReader::error(e, format!("expected {prefix}<i>.<j> with i, j < {n}"))
            })?;
        m[(i, j)] = e
            .value
            .parse()
            .map_err(|err| KvReader::error(e, format!("cannot parse `{}`: {err}", e.value)))?;
    }
    Ok(m)
}

fn read_custom(r: &mut KvReader<'_>) -> Result<ScenarioSource, HarnessError> {
    let n: usize = r.require("states")?;
    if n == 0 {
        let e = r.document().get("states").expect("states was read");
        return Err(KvReader::error(e, "must be at least 1"));
    }
    let transition = read_matrix(r, "transition.", n)?;
    let reward = read_matrix(r, "reward.", n)?;
    let weighting = r
        .list("weighting")?
        .ok_or_else(|| HarnessError::Missing("weighting".into()))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    for e in r.prefixed("features.") {
        let i = e.key["features.".len()..]
            .parse::<usize>()
            .ok()
            .filter(|&i| i < n)
            .ok_or_else(|| KvReader::error(e, format!("expected features.<i> with i < {n}")))?;
        rows[i] = Some(parse_list(e)?);
    }
    let k = match rows.iter().flatten().next() {
        Some(row) => row.len(),
        None => return Err(HarnessError::Missing("features.0".into())),
    };
    let mut features = DMatrix::zeros(n, k);
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_ref()
            .ok_or_else(|| HarnessError::Missing(format!("features.{i}")))?;
        if row.len() != k {
            return Err(HarnessError::invalid(
                format!("features.{i}"),
                format!("expected {k} values like features.0, got {}", row.len()),
            ));
        }
        for (c, v) in row.iter().enumerate() {
            features[(i, c)] = *v;
        }
    }
    Ok(ScenarioSource::Custom {
        transition,
        reward,
        weighting,
        features,
    })
}

fn read_grid(r: &mut KvReader<'_>) -> Result<ScenarioSource, HarnessError> {
    let terminals = match r.raw("grid.terminals") {
        None => vec![15],
        Some(e) => e
            .value
            .split(',')
            .map(|t| {
                t.trim().parse::<usize>().map_err(|err| {
                    KvReader::error(e, format!("cannot parse cell `{}`: {err}", t.trim()))
                })
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(ScenarioSource::Grid {
        width: r.get_or("grid.width", 4)?,
        height: r.get_or("grid.height", 4)?,
        terminals,
        move_reward: r.get_or("grid.move_reward", -1.0)?,
    })
}

impl Scenario {
    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn model(&self) -> &ScenarioModel {
        &self.model
    }

    pub fn name(&self) -> String {
        self.spec.name()
    }

    pub fn problem(&self) -> Option<&EvaluationProblem> {
        match &self.model {
            ScenarioModel::Chain(p) => Some(p),
            ScenarioModel::Grid(_) => None,
        }
    }

    pub fn grid(&self) -> Option<&GridWorld> {
        match &self.model {
            ScenarioModel::Grid(g) => Some(g),
            ScenarioModel::Chain(_) => None,
        }
    }

    /// The restart distribution used by trajectory sampling.
    pub fn restart_weights(&self) -> Option<Vec<f64>> {
        let problem = self.problem()?;
        Some(match &self.spec.restart {
            Some(r) => r.clone(),
            None => problem.mrp().weighting().weights().as_slice().to_vec(),
        })
    }
}

/// `paper-3state`, `gridworld-4x4` or `random-chain(n,k,seed)` with default
/// settings (α = 0.9, ε = 0.01).
pub fn builtin_scenario(name: &str) -> Result<Scenario, HarnessError> {
    let source = match name {
        THREE_STATE => ScenarioSource::ThreeState {
            epsilon: DEFAULT_EPSILON_FEATURE,
        },
        GRIDWORLD_4X4 => builtin_grid(DEFAULT_DISCOUNT).source,
        other => {
            let (n, k, seed) = parse_random_chain(other).ok_or_else(|| {
                HarnessError::invalid("scenario", format!("unknown builtin scenario `{other}`"))
            })?;
            ScenarioSource::RandomChain { n, k, seed }
        }
    };
    ScenarioSpec::with_source(source).build()
}

/// Solves `πᵀP = πᵀ`, `Σπ = 1`. `None` if the chain has no unique stationary
/// distribution.
pub fn stationary_distribution(transition: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = transition.nrows();
    let mut system = transition.transpose() - DMatrix::identity(n, n);
    let mut rhs = nalgebra::DVector::zeros(n);
    for c in 0..n {
        system[(n - 1, c)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let pi = system.lu().solve(&rhs)?;
    pi.iter()
        .all(|v| v.is_finite() && *v > -1e-12)
        .then(|| pi.iter().map(|v| v.max(0.0)).collect())
}

/// A dense random chain with `n` states and `k` features: transition rows
/// and rewards drawn uniformly, weighting the stationary distribution,
/// features uniform in `[−1, 1]` (redrawn until well conditioned).
pub fn random_chain(
    n: usize,
    k: usize,
    seed: u64,
    discount: f64,
    condition_bound: f64,
) -> Result<EvaluationProblem, HarnessError> {
    if n == 0 || k == 0 || k > n {
        return Err(HarnessError::invalid(
            "scenario",
            format!("random-chain needs 1 ≤ k ≤ n, got n = {n}, k = {k}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = DMatrix::from_fn(n, n, |_, _| 0.05 + rng.gen::<f64>());
    for i in 0..n {
        let sum: f64 = p.row(i).iter().sum();
        p.row_mut(i).iter_mut().for_each(|v| *v /= sum);
    }
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let pi = stationary_distribution(&p).expect("dense positive chain is ergodic");
    let total: f64 = pi.iter().sum();
    let pi: Vec<f64> = pi.iter().map(|v| v / total).collect();
    let mrp = MarkovRewardProcess::new(p, g, discount, &pi).map_err(chain_error)?;
    let weighting: &WeightedNorm = mrp.weighting();
    for _ in 0..100 {
        let phi = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
        if let Ok(features) =
            FeatureMap::with_condition_bound(phi, weighting, condition_bound.min(1e8))
        {
            return EvaluationProblem::new(mrp, features).map_err(chain_error);
        }
    }
    Err(HarnessError::invalid(
        "scenario",
        "could not draw well-conditioned random features",
    ))
}
