use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::check_metadata;
use super::kv::KvReader;
use super::{format_float, HarnessError, KvDocument, Origin, ScenarioSpec};
use crate::coop::{
    run_control, ControlConfig, ControlLog, ExplorationPolicy, GridWorld, QFactorModel, SgdRates,
    StartRule, TabularQ, TargetUpdate,
};

/// Tabular cooperative Q-learning on a gridworld scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlExperiment {
    pub scenario: ScenarioSpec,
    pub control: ControlConfig,
    pub seed: u64,
}

impl ControlExperiment {
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut doc = KvDocument::parse(text)?;
        for o in overrides {
            doc.apply_override(o)?;
        }
        Self::from_document(&doc)
    }

    pub fn from_document(doc: &KvDocument) -> Result<Self, HarnessError> {
        Self::read(doc).map_err(|e| doc.relocate(e))
    }

    fn read(doc: &KvDocument) -> Result<Self, HarnessError> {
        let mut r = KvReader::new(doc);
        check_metadata(&mut r)?;
        let scenario = ScenarioSpec::read(&mut r)?;
        if !scenario.is_grid() {
            return Err(HarnessError::invalid(
                "scenario",
                format!(
                    "{} is not a gridworld; control needs gridworld-4x4 or gridworld",
                    scenario.name()
                ),
            ));
        }
        if let Some(e) = r.raw("control.model") {
            if e.value != "tabular" {
                return Err(KvReader::error(
                    e,
                    format!("unknown model `{}` (only tabular)", e.value),
                ));
            }
        }
        let value_rate = r.positive("control.value_rate")?.unwrap_or(0.5);
        let target_rate = r.positive("control.target_rate")?.unwrap_or(0.5);
        let target_update = match r
            .get_or::<String>("control.target_update", "gradient".into())?
            .as_str()
        {
            "gradient" => TargetUpdate::Gradient,
            "copy" => TargetUpdate::Copy,
            other => {
                let e = doc.get("control.target_update").expect("key was read");
                return Err(KvReader::error(
                    e,
                    format!("unknown target update `{other}` (expected gradient or copy)"),
                ));
            }
        };
        let epsilon_start = r.get_or("control.epsilon_start", 1.0)?;
        let epsilon_end = r.get_or("control.epsilon_end", 0.1)?;
        let decay = r.get_or("control.epsilon_decay_steps", 25_000u64)?;
        let exploration = ExplorationPolicy::new(epsilon_start, epsilon_end, decay)
            .map_err(|e| HarnessError::invalid("control.epsilon_start", e.to_string()))?;
        let start = match r
            .get_or::<String>("control.start", "random".into())?
            .as_str()
        {
            "random" => StartRule::Random,
            cell => StartRule::Cell(cell.parse().map_err(|_| {
                let e = doc.get("control.start").expect("key was read");
                KvReader::error(
                    e,
                    format!("expected `random` or a cell index, got `{cell}`"),
                )
            })?),
        };
        let control = ControlConfig {
            steps: r.get_or("control.steps", 50_000)?,
            episode_cap: r.get_or("control.episode_cap", 200)?,
            rates: SgdRates {
                value_rate,
                target_rate,
            },
            target_update,
            exploration,
            start,
        };
        let seed = r.get_or("seed", 0)?;
        r.finish()?;
        let config = Self {
            scenario,
            control,
            seed,
        };
        let grid = config.grid()?;
        config
            .control
            .validate(&grid)
            .map_err(|e| HarnessError::invalid("control", e.to_string()))?;
        Ok(config)
    }

    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::default();
        self.scenario.write(&mut doc);
        let c = &self.control;
        let start = match c.start {
            StartRule::Random => "random".to_string(),
            StartRule::Cell(cell) => cell.to_string(),
        };
        let entries = [
            ("control.model", "tabular".to_string()),
            ("control.steps", c.steps.to_string()),
            ("control.episode_cap", c.episode_cap.to_string()),
            ("control.value_rate", c.rates.value_rate.to_string()),
            ("control.target_rate", c.rates.target_rate.to_string()),
            (
                "control.target_update",
                c.target_update.as_str().to_string(),
            ),
            ("control.epsilon_start", c.exploration.start.to_string()),
            ("control.epsilon_end", c.exploration.end.to_string()),
            (
                "control.epsilon_decay_steps",
                c.exploration.decay_steps.to_string(),
            ),
            ("control.start", start),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in entries {
            doc.set(k, v, Origin::Document);
        }
        doc
    }

    pub fn grid(&self) -> Result<GridWorld, HarnessError> {
        let scenario = self.scenario.build()?;
        Ok(scenario.grid().expect("checked gridworld scenario").clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlArtifact {
    pub config: ControlExperiment,
    pub grid: GridWorld,
    pub log: ControlLog,
}

impl ControlArtifact {
    /// `episode,start_cell,steps,return,epsilon,terminated`
    pub fn episodes_csv(&self) -> String {
        let mut out = String::from("episode,start_cell,steps,return,epsilon,terminated\n");
        for e in &self.log.episodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.episode,
                e.start_cell,
                e.steps,
                format_float(e.total_reward),
                format_float(e.epsilon),
                e.terminated
            );
        }
        out
    }

    pub fn policy_text(&self) -> String {
        self.grid.render_policy(&self.log.policy)
    }

    /// Config block, `---`, episode CSV.
    pub fn render(&self) -> String {
        let mut out = self.config.to_document().to_text();
        let _ = writeln!(out, "rng = {}", super::RNG_NAME);
        out.push_str("---\n");
        out.push_str(&self.episodes_csv());
        out
    }
}

pub fn run_control_experiment(config: &ControlExperiment) -> Result<ControlArtifact, HarnessError> {
    let grid = config.grid()?;
    let model = QFactorModel::new(
        TabularQ {
            n_states: grid.n_cells(),
            n_actions: grid.n_actions(),
        },
        grid.n_actions(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let log = run_control(&grid, &model, &config.control, &mut rng)?;
    Ok(ControlArtifact {
        config: config.clone(),
        grid,
        log,
    })
}
