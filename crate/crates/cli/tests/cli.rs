use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mspbe-lab");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lab(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TD0_SHORT: &str = "scenario = paper-3state\nalgorithm = td0\nprimary.rate = 0.01\ninitial.primary = 5\nsteps = 2000\nprobe_every = 100\n";

#[test]
fn evaluate_writes_artifact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "td0.cfg", TD0_SHORT);
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for out in [&a, &b] {
        let o = lab(&[
            "evaluate",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(o.stderr.is_empty());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.contains("rng = chacha8\nstatus = completed\n---\nstep,param_0,"));
    assert_eq!(text.split("---\n").nth(1).unwrap().lines().count(), 1 + 21);
    // No temporary files left next to the outputs.
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "td0.cfg", TD0_SHORT);
    let run = |seed: &str| lab(&["evaluate", "--config", &cfg, "--seed", seed, "--quiet"]).stdout;
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
    assert!(String::from_utf8(run("3"))
        .unwrap()
        .contains("\nseed = 3\n"));
}

#[test]
fn negative_rate_names_its_key() {
    let o = lab(&[
        "evaluate",
        "--config",
        &config("td0.cfg"),
        "--set",
        "primary.rate=-0.1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("primary.rate: must be positive"),
        "{}",
        stderr(&o)
    );
    assert!(o.stdout.is_empty());
}

#[test]
fn bad_key_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.cfg",
        &format!("{TD0_SHORT}primary.rat = 0.1\n"),
    );
    let o = lab(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("line 7, column 1: unknown key `primary.rat`"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn undiscounted_chain_diverges_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("div.txt");
    let o = lab(&[
        "evaluate",
        "--config",
        &config("diverge.cfg"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.contains("status = diverged(step="));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(lab(&[]).status.code(), Some(1));
    assert_eq!(lab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lab(&["evaluate"]).status.code(), Some(1));
    assert_eq!(
        lab(&["evaluate", "--config", "/nonexistent.cfg"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lab(&["compare", "--config", &config("td0.cfg")])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(lab(&["--help"]).status.code(), Some(0));
    assert_eq!(lab(&["--version"]).status.code(), Some(0));
}

#[test]
fn sweep_row_count_is_exact() {
    let o = lab(&["sweep", "--config", &config("sweep.cfg"), "--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("theta,msbe,mspbe"));
    assert_eq!(lines.count(), 2001);

    let o = lab(&[
        "sweep",
        "--config",
        &config("sweep.cfg"),
        "--set",
        "sweep.step=0.5",
        "--quiet",
    ]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1 + 41);
}

#[test]
fn compare_aligns_four_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["compare".to_string()];
    for (i, alg) in ["td0", "residual_gradient", "gtd2", "alternating_cd"]
        .iter()
        .enumerate()
    {
        let aux = if matches!(*alg, "gtd2" | "alternating_cd") {
            "auxiliary.rate = 0.1\n"
        } else {
            ""
        };
        let text = format!(
            "scenario = paper-3state\nalgorithm = {alg}\nprimary.rate = 0.01\n{aux}initial.primary = 5\nsteps = 1000\nprobe_every = 50\nseed = {i}\n"
        );
        args.push("--config".into());
        args.push(write(dir.path(), &format!("{alg}.cfg"), &text));
    }
    args.extend(["--seed".into(), "9".into(), "--quiet".into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = lab(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("step,mspbe_0_td0,mspbe_1_residual_gradient,mspbe_2_gtd2,mspbe_3_alternating_cd")
    );
    assert_eq!(text.lines().count(), 1 + 21);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').all(|c| !c.is_empty())));
    assert_eq!(lab(&args).stdout, text.as_bytes());
}

#[test]
fn control_writes_episodes_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let o = lab(&[
        "control",
        "--config",
        &config("gridworld.cfg"),
        "--set",
        "control.steps=20000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("episode,start_cell,steps,return,epsilon,terminated\n"));
    let policy = std::fs::read_to_string(dir.path().join("grid.policy.txt")).unwrap();
    assert_eq!(policy.lines().count(), 4);
    assert!(policy.lines().last().unwrap().ends_with('T'));
    assert!(stderr(&o).contains("optimal at"));
}

#[test]
fn validate_results() {
    let dir = tempfile::tempdir().unwrap();
    let ok = lab(&[
        "validate",
        "--config",
        &write(dir.path(), "b.cfg", "scenario = paper-3state\n"),
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stderr(&ok).contains("ok:"));

    let row = "scenario = custom\nstates = 2\ntransition.0.0 = 0.5\ntransition.0.1 = 0.4\ntransition.1.1 = 1\nweighting = 0.5, 0.5\nfeatures.0 = 1\nfeatures.1 = 2\n";
    let o = lab(&["validate", "--config", &write(dir.path(), "row.cfg", row)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("transition.0"), "{}", stderr(&o));

    let dup = "scenario = custom\nstates = 3\ntransition.0.0 = 1\ntransition.1.1 = 1\ntransition.2.2 = 1\nweighting = 0.3, 0.3, 0.4\nfeatures.0 = 1, 1\nfeatures.1 = 2, 2\nfeatures.2 = -1, -1\n";
    let o = lab(&["validate", "--config", &write(dir.path(), "dup.cfg", dup)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("features") && stderr(&o).contains("condition"),
        "{}",
        stderr(&o)
    );

    for name in [
        "td0.cfg",
        "gtd2.cfg",
        "alternating_cd.cfg",
        "residual_gradient.cfg",
        "sweep.cfg",
        "gridworld.cfg",
        "diverge.cfg",
        "mspbe.plot",
    ] {
        let o = lab(&["validate", "--config", &config(name)]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn plot_is_deterministic_and_handles_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "td0.cfg", TD0_SHORT);
    let artifact = dir.path().join("run.txt");
    lab(&[
        "evaluate",
        "--config",
        &cfg,
        "--out",
        artifact.to_str().unwrap(),
        "--quiet",
    ]);
    let spec = write(
        dir.path(),
        "p.plot",
        "input = run.txt\nx = step\ny = msbe, mspbe\nlog_y = true\ntitle = a < b\n",
    );
    let a = lab(&["plot", "--config", &spec, "--quiet"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(
        lab(&["plot", "--config", &spec, "--quiet"]).stdout,
        a.stdout
    );
    let svg = String::from_utf8(a.stdout).unwrap();
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains("a &lt; b") && svg.contains(">mspbe</text>"));

    write(dir.path(), "one.csv", "step,v\n3,0.5\n");
    let spec = write(dir.path(), "one.plot", "input = one.csv\ny = v\n");
    let o = lab(&["plot", "--config", &spec, "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = String::from_utf8(o.stdout).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(!svg.contains("NaN"));

    let spec = write(dir.path(), "bad.plot", "input = one.csv\ny = w\n");
    let o = lab(&["plot", "--config", &spec]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("column `w` not found"));
}
