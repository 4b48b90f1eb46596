//! Scenarios, seeded transition streams, experiment configs and run
//! artifacts.
//!
//! Every config is flat `key = value` text. A config is parsed into a typed
//! form, fully validated (the scenario is built and the evaluator is
//! constructed), and can be written back out as a resolved document from
//! which the same run is reproduced bit for bit.

mod config;
mod control;
mod format;
mod kv;
mod run;
mod scenario;
mod stream;

pub use config::{ExperimentConfig, RateSpec};
pub use control::{run_control_experiment, ControlArtifact, ControlExperiment};
pub use format::format_float;
pub use kv::{KvDocument, KvEntry};
pub use run::{
    compare, run, steps_to_threshold, sweep, sweep_csv, Comparison, RunArtifact, RunStatus,
    SweepConfig, SweepGrid, SweepRow,
};
pub use scenario::{
    builtin_scenario, random_chain, stationary_distribution, Sampling, Scenario, ScenarioModel,
    ScenarioSource, ScenarioSpec, GRIDWORLD_4X4, THREE_STATE,
};
pub use stream::{derive_seed, transition_stream, TransitionStream, RNG_NAME};

use std::fmt;

use thiserror::Error;

use crate::agents::AgentError;
use crate::chain::ChainError;
use crate::coop::CoopError;

/// Where a config value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line {
        line: usize,
        column: usize,
    },
    Override,
    /// Not tied to a single entry (defaults and whole-document checks).
    Document,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Line { line, column } => write!(f, "line {line}, column {column}"),
            Self::Override => f.write_str("--set"),
            Self::Document => f.write_str("config"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { key: String, origin: Origin },
    #[error("{origin}: {key}: {message}")]
    Invalid {
        key: String,
        origin: Origin,
        message: String,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("compare: {0}")]
    Compare(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Coop(#[from] CoopError),
}

impl HarnessError {
    pub(crate) fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            key: key.into(),
            origin: Origin::Document,
            message: message.into(),
        }
    }

    /// The key path this error names, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::UnknownKey { key, .. } | Self::Invalid { key, .. } | Self::Missing(key) => {
                Some(key)
            }
            _ => None,
        }
    }
}
