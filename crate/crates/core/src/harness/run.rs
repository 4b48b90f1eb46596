use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;

use super::config::check_metadata;
use super::kv::KvReader;
use super::{
    format_float, ExperimentConfig, HarnessError, KvDocument, Origin, ScenarioSpec,
    TransitionStream, RNG_NAME,
};
use crate::agents::{mspbe_trajectory, AgentError, MetricsRecord, ProbeSchedule};
use crate::chain::EvaluationProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Diverged { step: u64 },
    InnerCapHit { count: u64 },
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Completed => f.write_str("completed"),
            Self::Diverged { step } => write!(f, "diverged(step={step})"),
            Self::InnerCapHit { count } => write!(f, "inner_cap_hit(count={count})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    pub records: Vec<MetricsRecord>,
    pub status: RunStatus,
}

impl RunArtifact {
    pub fn csv_header(k: usize) -> String {
        let mut cols = vec!["step".to_string()];
        cols.extend((0..k).map(|i| format!("param_{i}")));
        cols.extend((0..k).map(|i| format!("aux_{i}")));
        cols.extend(["msbe", "mspbe", "td_error", "wall_us"].map(String::from));
        cols.join(",")
    }

    pub fn csv(&self) -> String {
        let k = self.config.initial_primary.len();
        let mut out = Self::csv_header(k);
        out.push('\n');
        for r in &self.records {
            let mut cells = vec![r.step.to_string()];
            cells.extend(
                r.primary
                    .iter()
                    .chain(&r.auxiliary)
                    .map(|v| format_float(*v)),
            );
            cells.extend([r.msbe, r.mspbe, r.td_error].map(format_float));
            cells.push(r.wall_us.to_string());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Config block, `---`, metrics CSV.
    pub fn render(&self) -> String {
        let mut out = self.config.to_document().to_text();
        let _ = writeln!(out, "rng = {RNG_NAME}");
        let _ = writeln!(out, "status = {}", self.status);
        out.push_str("---\n");
        out.push_str(&self.csv());
        out
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

/// Runs `config.steps` transitions of the seeded stream, probing at step 0,
/// every `probe_every` steps and at the end. Divergence ends the run early
/// and is reported in the status.
pub fn run(config: &ExperimentConfig) -> Result<RunArtifact, HarnessError> {
    let scenario = config.build_scenario()?;
    let problem = scenario
        .problem()
        .expect("experiment configs are chain scenarios");
    let mut evaluator = config.evaluator(&scenario)?;
    let stream = TransitionStream::new(&scenario, config.seed)?.take(config.steps as usize);
    let clock = config.wall_time.then(Instant::now);
    let probes = ProbeSchedule {
        every: config.probe_every,
        initial: true,
        last: true,
    };
    let trajectory = mspbe_trajectory(&mut evaluator, problem, stream, probes, clock);
    let status = match trajectory.error {
        Some(AgentError::Diverged { step }) => RunStatus::Diverged { step },
        Some(other) => return Err(other.into()),
        None if evaluator.state().inner_cap_hits > 0 => RunStatus::InnerCapHit {
            count: evaluator.state().inner_cap_hits,
        },
        None => RunStatus::Completed,
    };
    Ok(RunArtifact {
        config: config.clone(),
        records: trajectory.records,
        status,
    })
}

/// First probe step at which the mean MSPBE of the trailing `window` probes
/// (that probe included) is at most `threshold`.
pub fn steps_to_threshold(records: &[MetricsRecord], threshold: f64, window: usize) -> Option<u64> {
    let window = window.max(1);
    if records.len() < window {
        return None;
    }
    let mut sum: f64 = records[..window].iter().map(|r| r.mspbe).sum();
    for end in window..=records.len() {
        if end > window {
            sum += records[end - 1].mspbe - records[end - 1 - window].mspbe;
        }
        if sum / window as f64 <= threshold {
            return Some(records[end - 1].step);
        }
    }
    None
}

/// `count = round((max − min)/step) + 1` points `min + i·step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl SweepGrid {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self, HarnessError> {
        if !(min.is_finite() && max.is_finite()) || max < min {
            return Err(HarnessError::invalid(
                "sweep.max",
                format!("need finite min ≤ max, got [{min}, {max}]"),
            ));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(HarnessError::invalid(
                "sweep.step",
                format!("must be positive, got {step}"),
            ));
        }
        Ok(Self { min, max, step })
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.min + i as f64 * self.step)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub msbe: f64,
    pub mspbe: f64,
}

/// Exact MSBE and MSPBE along a grid of scalar parameters.
pub fn sweep(problem: &EvaluationProblem, grid: &SweepGrid) -> Result<Vec<SweepRow>, HarnessError> {
    let k = problem.features().n_features();
    if k != 1 {
        return Err(HarnessError::invalid(
            "features",
            format!("sweeps need a single feature, scenario has {k}"),
        ));
    }
    grid.points()
        .into_iter()
        .map(|theta| {
            let v = DVector::from_element(1, theta);
            Ok(SweepRow {
                theta,
                msbe: problem.msbe(&v)?,
                mspbe: problem.mspbe(&v)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("theta,msbe,mspbe\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            format_float(r.theta),
            format_float(r.msbe),
            format_float(r.mspbe)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub scenario: ScenarioSpec,
    pub grid: SweepGrid,
}

impl SweepConfig {
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut doc = KvDocument::parse(text)?;
        for o in overrides {
            doc.apply_override(o)?;
        }
        Self::from_document(&doc)
    }

    pub fn from_document(doc: &KvDocument) -> Result<Self, HarnessError> {
        let read = || {
            let mut r = KvReader::new(doc);
            check_metadata(&mut r)?;
            let scenario = ScenarioSpec::read(&mut r)?;
            let grid = SweepGrid::new(
                r.get_or("sweep.min", -10.0)?,
                r.get_or("sweep.max", 10.0)?,
                r.get_or("sweep.step", 0.01)?,
            )?;
            r.finish()?;
            let config = Self { scenario, grid };
            config.rows()?;
            Ok(config)
        };
        read().map_err(|e| doc.relocate(e))
    }

    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::default();
        self.scenario.write(&mut doc);
        doc.set("sweep.min", self.grid.min.to_string(), Origin::Document);
        doc.set("sweep.max", self.grid.max.to_string(), Origin::Document);
        doc.set("sweep.step", self.grid.step.to_string(), Origin::Document);
        doc
    }

    pub fn rows(&self) -> Result<Vec<SweepRow>, HarnessError> {
        let scenario = self.scenario.build()?;
        let problem = scenario.problem().ok_or_else(|| {
            HarnessError::invalid(
                "scenario",
                format!("{} has no error surface", scenario.name()),
            )
        })?;
        sweep(problem, &self.grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub runs: Vec<RunArtifact>,
}

impl Comparison {
    pub fn column_names(&self) -> Vec<String> {
        self.runs
            .iter()
            .enumerate()
            .map(|(i, r)| format!("mspbe_{i}_{}", r.config.algorithm.tag()))
            .collect()
    }

    /// One row per probed step of any run; cells of runs without that step
    /// are left empty.
    pub fn csv(&self) -> String {
        let mut table: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
        for (i, run) in self.runs.iter().enumerate() {
            for rec in &run.records {
                table
                    .entry(rec.step)
                    .or_insert_with(|| vec![None; self.runs.len()])[i] = Some(rec.mspbe);
            }
        }
        let mut out = format!("step,{}\n", self.column_names().join(","));
        for (step, cells) in table {
            let cells: Vec<String> = cells
                .iter()
                .map(|c| c.map(format_float).unwrap_or_default())
                .collect();
            let _ = writeln!(out, "{step},{}", cells.join(","));
        }
        out
    }

    pub fn any_diverged(&self) -> bool {
        self.runs
            .iter()
            .any(|r| matches!(r.status, RunStatus::Diverged { .. }))
    }
}

/// Runs every config on its own stream. With `parent_seed`, run `i` uses
/// `derive_seed(parent_seed, i)`; otherwise each keeps its configured seed.
/// Runs execute on separate threads; results are in config order.
pub fn compare(
    configs: &[ExperimentConfig],
    parent_seed: Option<u64>,
) -> Result<Comparison, HarnessError> {
    if configs.len() < 2 {
        return Err(HarnessError::Compare(format!(
            "need at least 2 configs, got {}",
            configs.len()
        )));
    }
    for (i, c) in configs.iter().enumerate().skip(1) {
        if c.scenario != configs[0].scenario {
            return Err(HarnessError::Compare(format!(
                "config {i} uses scenario {} but config 0 uses {} (scenarios must match)",
                c.scenario.name(),
                configs[0].scenario.name()
            )));
        }
    }
    let configs: Vec<ExperimentConfig> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| match parent_seed {
            Some(p) => c.clone().with_seed(super::derive_seed(p, i as u64)),
            None => c.clone(),
        })
        .collect();
    let results: Vec<Result<RunArtifact, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    Ok(Comparison {
        runs: results.into_iter().collect::<Result<_, _>>()?,
    })
}
