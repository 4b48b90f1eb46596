use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mspbe_core::harness::{
    self, run_control_experiment, sweep_csv, ControlExperiment, ExperimentConfig, HarnessError,
    KvDocument, RunStatus, ScenarioSpec, SweepConfig,
};

use crate::output::{emit, write_atomic};
use crate::plot::PlotSpec;
use crate::{Common, Outcome};

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn single_config(c: &Common) -> Result<&Path> {
    match c.configs.as_slice() {
        [one] => Ok(one),
        [] => bail!("--config PATH is required"),
        _ => bail!("this command takes exactly one --config"),
    }
}

fn in_file(path: &Path, e: HarnessError) -> anyhow::Error {
    anyhow!("{}: {e}", path.display())
}

/// File overrides, then `--seed` as a final `seed=` override.
fn overrides(c: &Common) -> Vec<String> {
    let mut out = c.overrides.clone();
    if let Some(seed) = c.seed {
        out.push(format!("seed={seed}"));
    }
    out
}

fn note(c: &Common, message: impl AsRef<str>) {
    if !c.quiet {
        eprintln!("{}", message.as_ref());
    }
}

fn destination(c: &Common) -> String {
    c.out
        .as_ref()
        .map_or_else(|| "stdout".to_string(), |p| p.display().to_string())
}

pub fn evaluate(c: &Common) -> Result<Outcome> {
    let path = single_config(c)?;
    let config = ExperimentConfig::from_text(&read_text(path)?, &overrides(c))
        .map_err(|e| in_file(path, e))?;
    let artifact = harness::run(&config).map_err(|e| in_file(path, e))?;
    emit(c.out.as_deref(), &artifact.render())?;
    let last = artifact
        .last()
        .map_or_else(String::new, |r| format!(", final mspbe {:.6e}", r.mspbe));
    note(
        c,
        format!(
            "status {} after {} records{last} -> {}",
            artifact.status,
            artifact.records.len(),
            destination(c)
        ),
    );
    Ok(match artifact.status {
        RunStatus::Diverged { .. } => Outcome::Diverged,
        _ => Outcome::Completed,
    })
}

pub fn sweep(c: &Common) -> Result<Outcome> {
    let path = single_config(c)?;
    let config =
        SweepConfig::from_text(&read_text(path)?, &c.overrides).map_err(|e| in_file(path, e))?;
    let rows = config.rows().map_err(|e| in_file(path, e))?;
    emit(c.out.as_deref(), &sweep_csv(&rows))?;
    note(c, format!("{} rows -> {}", rows.len(), destination(c)));
    Ok(Outcome::Completed)
}

pub fn compare(c: &Common) -> Result<Outcome> {
    if c.configs.len() < 2 {
        bail!("compare needs at least two --config files");
    }
    let configs = c
        .configs
        .iter()
        .map(|p| {
            ExperimentConfig::from_text(&read_text(p)?, &c.overrides).map_err(|e| in_file(p, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let comparison = harness::compare(&configs, c.seed).map_err(|e| anyhow!("{e}"))?;
    emit(c.out.as_deref(), &comparison.csv())?;
    for ((name, run), path) in comparison
        .column_names()
        .iter()
        .zip(&comparison.runs)
        .zip(&c.configs)
    {
        note(
            c,
            format!("{name} ({}): status {}", path.display(), run.status),
        );
    }
    Ok(if comparison.any_diverged() {
        Outcome::Diverged
    } else {
        Outcome::Completed
    })
}

fn policy_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "control".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.policy.txt"))
}

pub fn control(c: &Common) -> Result<Outcome> {
    let path = single_config(c)?;
    let config = ControlExperiment::from_text(&read_text(path)?, &overrides(c))
        .map_err(|e| in_file(path, e))?;
    let artifact = run_control_experiment(&config).map_err(|e| in_file(path, e))?;
    emit(c.out.as_deref(), &artifact.episodes_csv())?;
    let policy = artifact.policy_text();
    match &c.out {
        Some(out) => write_atomic(&policy_path(out), policy.as_bytes())?,
        None => note(c, &policy),
    }

    let solution = artifact
        .grid
        .to_mdp()
        .map_err(|e| anyhow!("{e}"))?
        .value_iteration(1e-12, 100_000);
    let cells = artifact.grid.non_terminal_cells();
    let agree = cells
        .iter()
        .filter(|&&cell| {
            artifact.log.policy[cell]
                .is_some_and(|a| solution.optimal_actions(cell, 1e-9).contains(&a))
        })
        .count();
    note(
        c,
        format!(
            "{} episodes, {} steps; greedy policy optimal at {agree}/{} cells -> {}",
            artifact.log.episodes.len(),
            artifact.log.steps,
            cells.len(),
            destination(c)
        ),
    );
    Ok(Outcome::Completed)
}

pub fn plot(c: &Common) -> Result<Outcome> {
    let path = single_config(c)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let spec = PlotSpec::from_text(&read_text(path)?, &c.overrides, base)
        .map_err(|e| anyhow!("{}: {e:#}", path.display()))?;
    let svg = spec.render()?;
    emit(c.out.as_deref(), &svg)?;
    note(
        c,
        format!("plot of {} -> {}", spec.y.join(", "), destination(c)),
    );
    Ok(Outcome::Completed)
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Experiment,
    Sweep,
    Control,
    Plot,
    Scenario,
}

fn detect(doc: &KvDocument) -> Kind {
    let any_prefix = |p: &str| doc.entries().iter().any(|e| e.key.starts_with(p));
    if doc.contains("algorithm") {
        Kind::Experiment
    } else if any_prefix("sweep.") {
        Kind::Sweep
    } else if any_prefix("control.")
        || doc
            .get("scenario")
            .is_some_and(|e| e.value.starts_with("gridworld"))
    {
        Kind::Control
    } else if doc.contains("input") || doc.contains("y") {
        Kind::Plot
    } else {
        Kind::Scenario
    }
}

fn validate_one(path: &Path, c: &Common) -> Result<&'static str> {
    let text = read_text(path)?;
    if matches!(
        detect(&KvDocument::parse(&text).map_err(|e| in_file(path, e))?),
        Kind::Plot
    ) {
        let base = path.parent().unwrap_or(Path::new(""));
        PlotSpec::from_text(&text, &c.overrides, base)
            .map_err(|e| anyhow!("{}: {e:#}", path.display()))?;
        return Ok("plot spec");
    }
    let mut doc = KvDocument::parse(&text).map_err(|e| in_file(path, e))?;
    for o in &c.overrides {
        doc.apply_override(o).map_err(|e| in_file(path, e))?;
    }
    let kind = detect(&doc);
    let checked = match kind {
        Kind::Experiment => ExperimentConfig::from_document(&doc).map(|_| "experiment"),
        Kind::Sweep => SweepConfig::from_document(&doc).map(|_| "sweep"),
        Kind::Control => ControlExperiment::from_document(&doc).map(|_| "control"),
        Kind::Scenario | Kind::Plot => ScenarioSpec::from_document(&doc).map(|_| "scenario"),
    };
    checked.map_err(|e| in_file(path, e))
}

pub fn validate(c: &Common) -> Result<Outcome> {
    if c.configs.is_empty() {
        bail!("--config PATH is required");
    }
    let mut failures = 0;
    for path in &c.configs {
        match validate_one(path, c) {
            Ok(kind) => note(c, format!("ok: {} ({kind})", path.display())),
            Err(e) => {
                failures += 1;
                eprintln!("invalid: {e:#}");
            }
        }
    }
    if failures > 0 {
        bail!(
            "{failures} of {} configs failed validation",
            c.configs.len()
        );
    }
    Ok(Outcome::Completed)
}
