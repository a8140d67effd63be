use std::fs;
use std::path::Path;

use marl_pricing::demand::{default_sweep_grid, estimate_elasticity};
use marl_pricing::harness::{build_report, run_experiment, sweep_query, ExperimentSpec, RunManifest};
use marl_pricing::Error;

fn small(id: &str, seed: u64, dir: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec::desk(id, seed, dir).unwrap();
    spec.config.episodes = 2;
    spec.config.weeks_per_episode = 8;
    spec
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn unwritable_output_fails_before_any_run() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let spec = small("A", 1, &blocker.join("out"));
    assert!(matches!(run_experiment(&spec, 1), Err(Error::Io { .. })));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn runs_write_verifiable_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small("H", 40, tmp.path());
    spec.checkpoint_every = 1;
    let results = run_experiment(&spec, 2).unwrap();
    assert_eq!(results.len(), 2);
    for (i, (manifest, _)) in results.iter().enumerate() {
        assert_eq!(manifest.run_id, format!("H-run{i:02}-seed{}", 40 + i as u64));
        let dir = tmp.path().join(&manifest.run_id);
        let stored: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(&stored, manifest);
        for a in &manifest.artifacts {
            assert!(tmp.path().join(a).is_file(), "missing {a}");
        }
        assert!(manifest.verify(&spec.run_config(i)).unwrap());
        assert!(!manifest.verify(&spec.run_config(i + 5)).unwrap());
        let ckpts = manifest.artifacts.iter().filter(|a| a.ends_with(".ckpt")).count();
        assert_eq!(ckpts, 4 * spec.config.episodes);
        assert_eq!(csv_rows(&dir.join("history.csv")).len(), 2 * 8 * 4 * 5);
    }
    assert_eq!(csv_rows(&tmp.path().join("summary_returns.csv")).len(), 1);
    assert_eq!(csv_rows(&tmp.path().join("plotdata/elasticity_sweep.csv")).len(), 41);
    assert_eq!(csv_rows(&tmp.path().join("plotdata/market_share_by_week.csv")).len(), 8 * 4);
}

#[test]
fn spec_json_round_trips() {
    let spec = ExperimentSpec::preset("F", 11, "out/f").unwrap();
    let json = serde_json::to_string_pretty(&spec).unwrap();
    let back: ExperimentSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
    assert_eq!(serde_json::to_string_pretty(&back).unwrap(), json);
}

#[test]
fn report_rebuilds_tables_from_run_directories() {
    let runs = tempfile::tempdir().unwrap();
    for id in ["A", "B", "D"] {
        let mut spec = small(id, 100, &runs.path().join(id));
        spec.n_runs = 3;
        run_experiment(&spec, 3).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    assert_eq!(build_report(runs.path(), out.path()).unwrap(), 9);

    let returns = csv_rows(&out.path().join("summary_returns.csv"));
    let ids: Vec<&str> = returns.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids, ["A", "B", "D"]);
    assert!(returns.iter().all(|r| r[1] == "3"));

    let wilcoxon = csv_rows(&out.path().join("wilcoxon.csv"));
    assert_eq!(wilcoxon.len(), 1);
    assert_eq!(&wilcoxon[0][..3], ["A", "B", "3"]);
    for id in ["A", "B", "D"] {
        let ci = csv_rows(&out.path().join("plotdata").join(id).join("final_shares_ci.csv"));
        assert_eq!(ci.len(), 4);
        let shares: f64 = ci.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
        assert!((shares - 1.0).abs() < 1e-5);
    }
}

#[test]
fn report_rejects_tampered_or_missing_runs() {
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(build_report(empty.path(), out.path()), Err(Error::InsufficientData(_))));

    let runs = tempfile::tempdir().unwrap();
    let spec = small("A", 3, runs.path());
    let (manifest, _) = run_experiment(&spec, 1).unwrap().remove(0);
    let path = runs.path().join(&manifest.run_id).join("config.json");
    let mut config = spec.run_config(0);
    config.max_weekly_change = 0.2;
    fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    assert!(matches!(build_report(runs.path(), out.path()), Err(Error::Config(_))));
}

#[test]
fn sweep_recovers_configured_elasticity() {
    for eps in [-0.072, -0.5, -1.0] {
        let mut config = ExperimentSpec::desk("A", 0, "").unwrap().config;
        config.demand_params.elasticity = eps;
        let (model, base) = sweep_query(&config).unwrap();
        let est = estimate_elasticity(&model, &base, &default_sweep_grid()).unwrap();
        assert!((est - eps).abs() < 1e-6, "{eps}: {est}");
    }
}
