use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stefanlab"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("stefanlab-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    d
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().unwrap();
    (
        status.code().unwrap(),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

#[test]
fn missing_config_is_a_usage_error_naming_the_file() {
    let (code, _, err) = run(bin().args(["simulate", "no/such/scenario.toml"]));
    assert_eq!(code, 2);
    assert!(err.contains("no/such/scenario.toml"), "{err}");
    assert!(err.contains("[scenario]"), "schema help missing: {err}");
}

#[test]
fn unknown_key_and_bad_flags_exit_two() {
    let dir = tmp("badkey");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    let (code, _, err) = run(bin().arg("theorem").arg(&cfg));
    assert_eq!(code, 2);
    assert!(err.contains("bogus"), "{err}");
    assert_eq!(run(bin().args(["certify", "hopf", "--delta", "abc"])).0, 2);
    assert_eq!(run(bin().args(["certify", "hopf", "--delta", "2"])).0, 2);
    assert_eq!(run(bin().arg("frobnicate")).0, 2);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn hopf_certificate_prints_kappa() {
    let dir = tmp("hopf");
    let (code, out, _) = run(bin()
        .args([
            "certify", "hopf", "--n", "2", "--K", "2", "--delta", "0.5", "--T", "0.05", "--out",
        ])
        .arg(&dir));
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("kappa = "), "{out}");
    assert!(out.contains("2 piece(s)"), "{out}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["kappa_log10"].as_f64().unwrap().is_finite());
    assert!(dir.join("certificates/00-hopf.json").is_file());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn exact_traveling_wave_is_not_strict() {
    let (code, out, _) = run(bin().args(["certify", "traveling-wave", "--samples", "500"]));
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("FAIL"));
}

#[test]
fn theorem_writes_artifacts_and_analyze_reproduces_the_report() {
    let dir = tmp("theorem");
    let (code, out, err) = run(bin()
        .arg("theorem")
        .arg(configs().join("tw.toml"))
        .arg("--out")
        .arg(&dir));
    assert_eq!(code, 0, "{out}\n{err}");
    for name in [
        "config.echo",
        "metadata.json",
        "field.csv",
        "front.csv",
        "report.json",
        "dashboard.svg",
    ] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap();
    let echo = fs::read(dir.join("config.echo")).unwrap();
    assert_eq!(
        meta["input_hash"].as_str().unwrap(),
        stefanlab::io::content_hash(&echo)
    );
    for a in meta["artifacts"].as_array().unwrap() {
        assert!(dir.join(a.as_str().unwrap()).is_file(), "{a}");
    }
    assert!(meta["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a.as_str().unwrap().starts_with("certificates/")));
    let first = fs::read_to_string(dir.join("report.json")).unwrap();

    let again = tmp("analyze");
    let (code, _, err) = run(bin()
        .arg("analyze")
        .arg(&dir)
        .arg("--out")
        .arg(&again)
        .arg("--quiet"));
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        fs::read_to_string(again.join("report.json")).unwrap(),
        first
    );
    fs::remove_dir_all(&dir).unwrap();
    fs::remove_dir_all(&again).unwrap();
}

#[test]
fn quiet_simulate_prints_nothing() {
    let dir = tmp("quiet");
    let (code, out, _) = run(bin()
        .arg("simulate")
        .arg(configs().join("tw.toml"))
        .args(["--quiet", "--resolution", "0.015625", "--out"])
        .arg(&dir));
    assert_eq!(code, 0);
    assert!(out.is_empty(), "{out}");
    let echo = fs::read_to_string(dir.join("config.echo")).unwrap();
    assert!(echo.contains("resolution = 0.015625"), "{echo}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn lemma31_config_passes_with_certificate() {
    let dir = tmp("lemma31");
    let (code, out, err) = run(bin()
        .arg("lemma31")
        .arg(configs().join("lemma31.toml"))
        .arg("--out")
        .arg(&dir));
    assert_eq!(code, 0, "{out}\n{err}");
    assert!(out.contains("lambda = 0.05"));
    assert!(dir.join("certificates/00-lemma31_w.json").is_file());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn analyze_refuses_a_non_run_directory() {
    let dir = tmp("empty");
    fs::create_dir_all(&dir).unwrap();
    let (code, _, err) = run(bin().arg("analyze").arg(&dir));
    assert_eq!(code, 2);
    assert!(err.contains("not a run directory"));
    fs::remove_dir_all(&dir).unwrap();
}
