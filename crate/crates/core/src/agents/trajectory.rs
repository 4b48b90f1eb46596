use std::time::Instant;

use super::{AgentError, Evaluator, Transition};
use crate::chain::{ChainError, EvaluationProblem};

/// One probe of a running evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub primary: Vec<f64>,
    pub auxiliary: Vec<f64>,
    pub msbe: f64,
    pub mspbe: f64,
    /// TD error of the most recent step, 0 before the first.
    pub td_error: f64,
    pub wall_us: u64,
}

/// When to probe: after every `every`-th step, optionally also before the
/// first step and after the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeSchedule {
    pub every: u64,
    pub initial: bool,
    pub last: bool,
}

impl ProbeSchedule {
    pub fn every(every: u64) -> Self {
        Self {
            every: every.max(1),
            initial: false,
            last: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<MetricsRecord>,
    /// Set when a step failed; records stop at the last good probe.
    pub error: Option<AgentError>,
}

/// Drives `evaluator` over `transitions`, recording exact MSBE/MSPBE of its
/// estimate at each probe point. Probing reads the state only.
pub fn mspbe_trajectory<I>(
    evaluator: &mut Evaluator,
    problem: &EvaluationProblem,
    transitions: I,
    probes: ProbeSchedule,
    clock: Option<Instant>,
) -> Trajectory
where
    I: IntoIterator<Item = Transition>,
{
    let mut records = Vec::new();
    let error = drive(evaluator, problem, transitions, probes, clock, &mut records).err();
    Trajectory { records, error }
}

fn drive<I>(
    evaluator: &mut Evaluator,
    problem: &EvaluationProblem,
    transitions: I,
    probes: ProbeSchedule,
    clock: Option<Instant>,
    records: &mut Vec<MetricsRecord>,
) -> Result<(), AgentError>
where
    I: IntoIterator<Item = Transition>,
{
    let probe = |evaluator: &Evaluator, td_error: f64| -> Result<MetricsRecord, AgentError> {
        let lift = |e: ChainError| AgentError::InvalidParameter {
            name: "probe",
            reason: e.to_string(),
        };
        let estimate = evaluator.estimate();
        let state = evaluator.state();
        Ok(MetricsRecord {
            step: state.steps,
            primary: state.primary.as_slice().to_vec(),
            auxiliary: state.auxiliary.as_slice().to_vec(),
            msbe: problem.msbe(estimate).map_err(lift)?,
            mspbe: problem.mspbe(estimate).map_err(lift)?,
            td_error,
            wall_us: clock.map_or(0, |c| c.elapsed().as_micros() as u64),
        })
    };

    if probes.initial {
        records.push(probe(evaluator, 0.0)?);
    }
    let mut last_td = 0.0;
    for t in transitions {
        last_td = evaluator.step(&t)?;
        if evaluator.state().steps.is_multiple_of(probes.every) {
            records.push(probe(evaluator, last_td)?);
        }
    }
    let steps = evaluator.state().steps;
    if probes.last && records.last().map(|r| r.step) != Some(steps) {
        records.push(probe(evaluator, last_td)?);
    }
    Ok(())
}
