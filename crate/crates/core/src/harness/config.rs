use nalgebra::DVector;

use super::kv::{join_floats, KvReader};
use super::{HarnessError, KvDocument, Origin, Scenario, ScenarioSpec, RNG_NAME};
use crate::agents::{
    Algorithm, AlgorithmTag, Evaluator, StepSizeSchedule, TraceReset, DEFAULT_INNER_CAP,
};

const DEFAULT_PROBE_EVERY: u64 = 100;
const DEFAULT_DELTA: f64 = 1e-8;

/// Keys written into artifacts that are accepted, and ignored, on reload.
const METADATA_KEYS: [&str; 2] = ["rng", "status"];

/// Step-size keys under a prefix: `<p>.schedule = constant` with `<p>.rate`,
/// or `<p>.schedule = harmonic` with `<p>.base` and `<p>.offset`.
pub struct RateSpec;

impl RateSpec {
    pub(crate) fn read(
        r: &mut KvReader<'_>,
        prefix: &str,
    ) -> Result<StepSizeSchedule, HarnessError> {
        let key = |k: &str| format!("{prefix}.{k}");
        let schedule = r.get_or::<String>(&key("schedule"), "constant".into())?;
        let need = |r: &mut KvReader<'_>, k: &str| -> Result<f64, HarnessError> {
            r.positive(&key(k))?
                .ok_or_else(|| HarnessError::Missing(key(k)))
        };
        match schedule.as_str() {
            "constant" => Ok(StepSizeSchedule::Constant {
                rate: need(r, "rate")?,
            }),
            "harmonic" => Ok(StepSizeSchedule::Harmonic {
                base: need(r, "base")?,
                offset: need(r, "offset")?,
            }),
            other => {
                let e = r
                    .document()
                    .get(&key("schedule"))
                    .expect("schedule was read");
                Err(KvReader::error(
                    e,
                    format!("unknown schedule `{other}` (expected constant or harmonic)"),
                ))
            }
        }
    }

    pub(crate) fn write(doc: &mut KvDocument, prefix: &str, schedule: &StepSizeSchedule) {
        let mut set = |k: &str, v: String| doc.set(&format!("{prefix}.{k}"), v, Origin::Document);
        match *schedule {
            StepSizeSchedule::Constant { rate } => {
                set("schedule", "constant".into());
                set("rate", rate.to_string());
            }
            StepSizeSchedule::Harmonic { base, offset } => {
                set("schedule", "harmonic".into());
                set("base", base.to_string());
                set("offset", offset.to_string());
            }
        }
    }
}

/// A fully resolved single-run experiment on a chain scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub algorithm: Algorithm,
    pub initial_primary: Vec<f64>,
    pub initial_auxiliary: Option<Vec<f64>>,
    pub steps: u64,
    pub probe_every: u64,
    pub seed: u64,
    /// Record wall-clock offsets; off by default so artifacts are
    /// byte-reproducible.
    pub wall_time: bool,
}

pub(crate) fn check_metadata(r: &mut KvReader<'_>) -> Result<(), HarnessError> {
    if let Some(e) = r.raw("rng") {
        if e.value != RNG_NAME {
            return Err(KvReader::error(
                e,
                format!(
                    "unsupported generator `{}` (this build uses {RNG_NAME})",
                    e.value
                ),
            ));
        }
    }
    for key in &METADATA_KEYS[1..] {
        r.raw(key);
    }
    Ok(())
}

fn read_algorithm(r: &mut KvReader<'_>) -> Result<Algorithm, HarnessError> {
    let entry = r
        .raw("algorithm")
        .ok_or_else(|| HarnessError::Missing("algorithm".into()))?;
    let tag: AlgorithmTag = entry
        .value
        .parse()
        .map_err(|e: String| KvReader::error(entry, e))?;
    let rate = RateSpec::read(r, "primary")?;
    let aux = if tag.uses_auxiliary_rate() {
        Some(RateSpec::read(r, "auxiliary")?)
    } else {
        None
    };
    Ok(match tag {
        AlgorithmTag::Td0 => Algorithm::Td0 { rate },
        AlgorithmTag::ResidualGradient => Algorithm::ResidualGradient { rate },
        AlgorithmTag::TdLambda => {
            let lambda: f64 = r.require("lambda")?;
            if !(0.0..1.0).contains(&lambda) {
                let e = r.document().get("lambda").expect("lambda was read");
                return Err(KvReader::error(
                    e,
                    format!("must lie in [0, 1), got {lambda}"),
                ));
            }
            let reset = match r
                .get_or::<String>("trace_reset", "episode_start".into())?
                .as_str()
            {
                "episode_start" => TraceReset::EpisodeStart,
                "never" => TraceReset::Never,
                other => {
                    let e = r
                        .document()
                        .get("trace_reset")
                        .expect("trace_reset was read");
                    return Err(KvReader::error(
                        e,
                        format!("unknown trace reset `{other}` (expected episode_start or never)"),
                    ));
                }
            };
            Algorithm::TdLambda {
                rate,
                lambda,
                reset,
            }
        }
        AlgorithmTag::Gtd2 => Algorithm::Gtd2 {
            rate,
            correction_rate: aux.expect("gtd2 has an auxiliary rate"),
        },
        AlgorithmTag::AlternatingCd => Algorithm::AlternatingCd {
            value_rate: rate,
            target_rate: aux.expect("alternating_cd has an auxiliary rate"),
        },
        AlgorithmTag::CoordinateDescent => {
            let tolerance = r.positive("delta")?.unwrap_or(DEFAULT_DELTA);
            let inner_cap: usize = r.get_or("inner_cap", DEFAULT_INNER_CAP)?;
            if inner_cap == 0 {
                let e = r.document().get("inner_cap").expect("inner_cap was read");
                return Err(KvReader::error(e, "must be at least 1"));
            }
            Algorithm::CoordinateDescent {
                value_rate: rate,
                target_rate: aux.expect("coordinate_descent has an auxiliary rate"),
                tolerance,
                inner_cap,
            }
        }
    })
}

fn write_algorithm(doc: &mut KvDocument, algorithm: &Algorithm) {
    doc.set("algorithm", algorithm.tag().as_str(), Origin::Document);
    match algorithm {
        Algorithm::Td0 { rate } | Algorithm::ResidualGradient { rate } => {
            RateSpec::write(doc, "primary", rate)
        }
        Algorithm::TdLambda {
            rate,
            lambda,
            reset,
        } => {
            RateSpec::write(doc, "primary", rate);
            doc.set("lambda", lambda.to_string(), Origin::Document);
            let reset = match reset {
                TraceReset::EpisodeStart => "episode_start",
                TraceReset::Never => "never",
            };
            doc.set("trace_reset", reset, Origin::Document);
        }
        Algorithm::Gtd2 {
            rate,
            correction_rate,
        } => {
            RateSpec::write(doc, "primary", rate);
            RateSpec::write(doc, "auxiliary", correction_rate);
        }
        Algorithm::AlternatingCd {
            value_rate,
            target_rate,
        } => {
            RateSpec::write(doc, "primary", value_rate);
            RateSpec::write(doc, "auxiliary", target_rate);
        }
        Algorithm::CoordinateDescent {
            value_rate,
            target_rate,
            tolerance,
            inner_cap,
        } => {
            RateSpec::write(doc, "primary", value_rate);
            RateSpec::write(doc, "auxiliary", target_rate);
            doc.set("delta", tolerance.to_string(), Origin::Document);
            doc.set("inner_cap", inner_cap.to_string(), Origin::Document);
        }
    }
}

impl ExperimentConfig {
    /// Parses `text`, applies `overrides` (`KEY=VALUE`, last wins) and
    /// validates the result.
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
        let algorithm = read_algorithm(&mut r)?;
        let initial_primary = r.list("initial.primary")?;
        let initial_auxiliary = r.list("initial.auxiliary")?;
        let steps: u64 = r.require("steps")?;
        let probe_every: u64 = r.get_or("probe_every", DEFAULT_PROBE_EVERY)?;
        let seed: u64 = r.get_or("seed", 0)?;
        let wall_time: bool = r.get_or("wall_time", false)?;
        r.finish()?;

        for (key, v) in [("steps", steps), ("probe_every", probe_every)] {
            if v == 0 {
                return Err(HarnessError::invalid(key, "must be at least 1"));
            }
        }
        let built = scenario.build()?;
        let problem = built.problem().ok_or_else(|| {
            HarnessError::invalid(
                "scenario",
                format!(
                    "{} is a control scenario; use the control command",
                    built.name()
                ),
            )
        })?;
        let k = problem.features().n_features();
        let initial_primary = initial_primary.unwrap_or_else(|| vec![0.0; k]);
        let config = Self {
            scenario,
            algorithm,
            initial_primary,
            initial_auxiliary,
            steps,
            probe_every,
            seed,
            wall_time,
        };
        config.evaluator(&built)?;
        Ok(config)
    }

    /// Canonical resolved form; parsing it back gives an equal config.
    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::default();
        self.scenario.write(&mut doc);
        write_algorithm(&mut doc, &self.algorithm);
        let mut set = |k: &str, v: String| doc.set(k, v, Origin::Document);
        set("initial.primary", join_floats(&self.initial_primary));
        if let Some(aux) = &self.initial_auxiliary {
            set("initial.auxiliary", join_floats(aux));
        }
        set("steps", self.steps.to_string());
        set("probe_every", self.probe_every.to_string());
        set("seed", self.seed.to_string());
        set("wall_time", self.wall_time.to_string());
        doc
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build_scenario(&self) -> Result<Scenario, HarnessError> {
        self.scenario.build()
    }

    /// A fresh evaluator at the configured initial parameters.
    pub fn evaluator(&self, scenario: &Scenario) -> Result<Evaluator, HarnessError> {
        let problem = scenario
            .problem()
            .ok_or_else(|| HarnessError::invalid("scenario", "not a chain scenario"))?;
        let k = problem.features().n_features();
        let check = |key: &str, v: &[f64]| {
            if v.len() != k {
                return Err(HarnessError::invalid(
                    key,
                    format!("expected {k} values (one per feature), got {}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(HarnessError::invalid(key, "values must be finite"));
            }
            Ok(())
        };
        check("initial.primary", &self.initial_primary)?;
        if let Some(aux) = &self.initial_auxiliary {
            check("initial.auxiliary", aux)?;
        }
        Evaluator::new(
            problem.features().clone(),
            problem.mrp().discount(),
            self.algorithm.clone(),
            DVector::from_column_slice(&self.initial_primary),
            self.initial_auxiliary
                .as_deref()
                .map(DVector::from_column_slice),
        )
        .map_err(|e| HarnessError::invalid("algorithm", e.to_string()))
    }
}
