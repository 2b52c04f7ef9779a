use std::path::Path;
use std::process::{Command, Output};

fn mesm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mesm")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_fuselage(dir: &Path, out: &str, seed: &str, replicates: &str) {
    let o = mesm(
        dir,
        &[
            "--seed", seed, "synth", "fuselage", "--out", out, "--designs", "6", "--replicates", replicates, "--points",
            "10", "--dim", "2", "--block-size", "5", "--tau", "2,3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn fit_args<'a>(data: &'a str, block: &'a str, out: &'a str) -> Vec<String> {
    [
        "fit",
        "--designs",
        &format!("{data}/designs.csv"),
        "--observations",
        &format!("{data}/observations.csv"),
        "--points",
        &format!("{data}/points.csv"),
        "--metric",
        "circle-arc",
        "--block-size",
        block,
        "--qg",
        "0.3",
        "--diagnostic-resamples",
        "20",
        "--out",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_owned(dir: &Path, args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    mesm(dir, &refs)
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mesm(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&mesm(tmp.path(), &["--version"])), 0);
    assert_eq!(code(&mesm(tmp.path(), &["fit", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mesm(tmp.path(), &["no-such-command"])), 1);
    assert_eq!(code(&mesm(tmp.path(), &["sample", "--model", "m.json"])), 1);
    assert_eq!(code(&mesm(tmp.path(), &["--threads", "0", "simstudy", "--out", "x.csv"])), 1);
}

#[test]
fn missing_and_malformed_inputs_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mesm(tmp.path(), &["sample", "--model", "absent.json", "--at", "0", "--out", "d.csv"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    std::fs::write(tmp.path().join("designs.csv"), "design_id,x1\nd0,1.0\nd1,oops\n").unwrap();
    std::fs::write(tmp.path().join("observations.csv"), "design_id,replicate,p0\n").unwrap();
    std::fs::write(tmp.path().join("points.csv"), "point_id,x,y\np0,0,0\n").unwrap();
    let o = mesm(
        tmp.path(),
        &[
            "fit", "--designs", "designs.csv", "--observations", "observations.csv", "--points", "points.csv", "--out",
            "m.json",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!tmp.path().join("m.json").exists());
}

#[test]
fn fit_failure_after_validation_exits_two_and_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    small_fuselage(tmp.path(), "data", "1", "20");
    // Blocks of 10 leave two maxima per cell, too few for a GEV fit.
    let o = run_owned(tmp.path(), &fit_args("data", "10", "m.json"));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("gev-cells"), "{}", stderr(&o));
}

#[test]
fn fit_sample_return_level_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    small_fuselage(tmp.path(), "data", "2", "100");
    let o = run_owned(tmp.path(), &fit_args("data", "5", "model.json"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("tau = "));

    let o = mesm(tmp.path(), &["sample", "--model", "model.json", "--at", "0,0", "--n", "30", "--out", "draws.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let draws = std::fs::read_to_string(tmp.path().join("draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 31);
    assert_eq!(draws.lines().next().unwrap().split(',').count(), 11);

    let o = mesm(tmp.path(), &["sample", "--model", "model.json", "--at", "0", "--n", "30", "--out", "bad.csv"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = mesm(tmp.path(), &["return-level", "--model", "model.json", "--R", "50", "--out", "rl.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(tmp.path().join("rl.csv")).unwrap().lines().count(), 7);
}

#[test]
fn seeds_change_outputs_and_repeat_runs_match() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &str| {
        let o = mesm(tmp.path(), &["--seed", seed, "synth", "simstudy", "--out", out, "--points", "6", "--blocks", "20"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(tmp.path().join(out).join("maxima.csv")).unwrap()
    };
    let (a, b, c) = (run("1", "a"), run("1", "b"), run("2", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}
