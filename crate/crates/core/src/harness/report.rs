//! Rebuilds summary tables, significance tests and plot data from the run
//! directories of finished experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::plotdata::emit_plotdata;
use super::stats::wilcoxon_signed_rank;
use super::summary::summarize;
use super::{RunManifest, HOMOGENEOUS_IDS, PRESET_IDS};
use crate::error::{Error, Result};
use crate::market::MarketConfig;
use crate::metrics::MetricsReport;

/// One finished run read back from disk.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub config: MarketConfig,
    pub report: MetricsReport,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn find_manifests(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<()> {
    let candidate = dir.join("manifest.json");
    if candidate.is_file() {
        out.push(candidate);
        return Ok(());
    }
    if depth == 0 {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_manifests(&e, depth - 1, out)?;
    }
    Ok(())
}

/// Loads every run below `dir` (up to three levels deep). Runs whose stored
/// config no longer matches the manifest hash are rejected.
pub fn load_runs(dir: &Path) -> Result<Vec<StoredRun>> {
    let mut manifests = Vec::new();
    find_manifests(dir, 3, &mut manifests)?;
    let mut runs = Vec::with_capacity(manifests.len());
    for path in manifests {
        let run_dir = path.parent().unwrap_or(dir).to_path_buf();
        let manifest: RunManifest = read_json(&path)?;
        let config: MarketConfig = read_json(&run_dir.join("config.json"))?;
        if !manifest.verify(&config)? {
            return Err(Error::Config(format!(
                "config hash mismatch for run {} in {}",
                manifest.run_id,
                run_dir.display()
            )));
        }
        let report: MetricsReport = read_json(&run_dir.join("metrics.json"))?;
        runs.push(StoredRun {
            dir: run_dir,
            manifest,
            config,
            report,
        });
    }
    if runs.is_empty() {
        return Err(Error::InsufficientData(format!("no runs found under {}", dir.display())));
    }
    Ok(runs)
}

fn config_order(id: &str) -> (usize, String) {
    (PRESET_IDS.iter().position(|p| *p == id).unwrap_or(PRESET_IDS.len()), id.to_string())
}

/// Runs grouped by config id in A–H order, each group sorted by seed.
pub fn group_runs(runs: Vec<StoredRun>) -> Vec<(String, Vec<StoredRun>)> {
    let mut groups: BTreeMap<(usize, String), Vec<StoredRun>> = BTreeMap::new();
    for r in runs {
        groups.entry(config_order(&r.manifest.config_id)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((_, id), mut rs)| {
            rs.sort_by_key(|r| r.manifest.seed);
            (id, rs)
        })
        .collect()
}

pub const WILCOXON_HEADER: [&str; 8] = ["config_a", "config_b", "n", "w_plus", "w_minus", "statistic", "p_value", "note"];

/// Paired tests on per-run mean returns between every pair of homogeneous
/// configs present. Mixed configs are excluded.
pub fn wilcoxon_table(groups: &[(String, Vec<StoredRun>)]) -> Vec<Vec<String>> {
    let homogeneous: Vec<&(String, Vec<StoredRun>)> = groups
        .iter()
        .filter(|(id, _)| HOMOGENEOUS_IDS.contains(&id.as_str()))
        .collect();
    let mut rows = Vec::new();
    for (i, (a_id, a_runs)) in homogeneous.iter().enumerate() {
        for (b_id, b_runs) in &homogeneous[i + 1..] {
            let a: Vec<f64> = a_runs.iter().map(|r| r.report.mean_return()).collect();
            let b: Vec<f64> = b_runs.iter().map(|r| r.report.mean_return()).collect();
            let mut row = vec![a_id.clone(), b_id.clone()];
            match wilcoxon_signed_rank(&a, &b) {
                Ok(w) => row.extend([
                    w.n.to_string(),
                    format!("{}", w.w_plus),
                    format!("{}", w.w_minus),
                    format!("{}", w.statistic),
                    format!("{:.6}", w.p_value),
                    String::new(),
                ]),
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 5));
                    row.push(e.to_string());
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// Writes summary tables, `wilcoxon.csv` and per-config plot data under
/// `out`. Returns the number of runs read.
pub fn build_report(input: &Path, out: &Path) -> Result<usize> {
    let runs = load_runs(input)?;
    let n = runs.len();
    let groups = group_runs(runs);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let by_config: Vec<(String, Vec<MetricsReport>)> = groups
        .iter()
        .map(|(id, rs)| (id.clone(), rs.iter().map(|r| r.report.clone()).collect()))
        .collect();
    summarize(&by_config).write(out)?;

    let path = out.join("wilcoxon.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    w.write_record(WILCOXON_HEADER)?;
    for row in wilcoxon_table(&groups) {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for ((id, rs), (_, reports)) in groups.iter().zip(&by_config) {
        emit_plotdata(reports, &rs[0].config, &out.join("plotdata").join(id))?;
    }
    Ok(n)
}
