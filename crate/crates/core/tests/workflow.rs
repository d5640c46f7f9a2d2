use std::path::PathBuf;

use stefanlab::config::ScenarioConfig;
use stefanlab::io::{load_run, save_run};
use stefanlab::pipeline::{analyze_solution, prepare_scenario};
use stefanlab::stefan::simulate;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load_and_resolve() {
    for name in ["tw.toml", "tw_fine.toml", "lemma31.toml"] {
        let cfg = ScenarioConfig::load(&configs().join(name))
            .unwrap()
            .resolved()
            .unwrap();
        let again = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg, "{name}");
        if let Ok(sc) = cfg.scenario() {
            for eta in &cfg.analysis.eta_sweep {
                assert!(*eta >= 4.0 * sc.h, "{name}: eta {eta} below 4h");
            }
        }
    }
}

#[test]
fn stored_run_reanalyzes_identically() {
    let mut cfg = ScenarioConfig::load(&configs().join("tw.toml"))
        .unwrap()
        .resolved()
        .unwrap();
    cfg.analysis.certify = false;
    let sc = prepare_scenario(cfg.scenario().unwrap(), &cfg.analysis);
    let sol = simulate(&sc).unwrap();
    let direct = analyze_solution(&sol, &cfg.analysis);

    let dir = std::env::temp_dir().join(format!("stefanlab-workflow-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    save_run(&dir, &cfg.to_toml().unwrap(), &sol).unwrap();
    let (_, echo, loaded) = load_run(&dir).unwrap();
    assert_eq!(ScenarioConfig::from_toml(&echo).unwrap(), cfg);
    let reloaded = analyze_solution(&loaded, &cfg.analysis);
    assert_eq!(
        serde_json::to_string(&direct).unwrap(),
        serde_json::to_string(&reloaded).unwrap()
    );
    assert!(direct.hypothesis_pass && direct.conclusion_pass);
    std::fs::remove_dir_all(&dir).unwrap();
}
