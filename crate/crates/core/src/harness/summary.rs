//! Cross-run tables: mean agent return, adaptability and market dynamics.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{AgentMetrics, MetricsReport};

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `100·(value − baseline)/baseline`.
pub fn percent_delta(value: f64, baseline: f64) -> Option<f64> {
    if baseline != 0.0 {
        Some(100.0 * (value - baseline) / baseline)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTables {
    pub returns: Vec<Vec<String>>,
    pub adaptability: Vec<Vec<String>>,
    pub dynamics: Vec<Vec<String>>,
}

pub const RETURNS_HEADER: [&str; 5] = ["config", "runs", "mean_return", "std_return", "delta_vs_A_pct"];
pub const ADAPTABILITY_HEADER: [&str; 10] = [
    "config",
    "agent_kind",
    "adjustment_magnitude",
    "adjustment_magnitude_std",
    "adjustment_frequency",
    "adjustment_frequency_std",
    "price_stability",
    "price_stability_std",
    "price_volatility",
    "price_volatility_std",
];
pub const DYNAMICS_HEADER: [&str; 13] = [
    "config",
    "jain_index",
    "jain_index_std",
    "market_volatility_pp",
    "market_volatility_pp_std",
    "welfare_fairness",
    "welfare_fairness_std",
    "price_convergence",
    "price_convergence_std",
    "nash_proximity",
    "nash_proximity_std",
    "social_welfare",
    "social_welfare_std",
];

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Builds the summary tables from `(config_id, reports)` groups. Return
/// deltas are relative to config `A` when present.
pub fn summarize(groups: &[(String, Vec<MetricsReport>)]) -> SummaryTables {
    let mean_return = |reports: &[MetricsReport]| mean_std(&reports.iter().map(|r| r.mean_return()).collect::<Vec<_>>());
    let baseline = groups.iter().find(|(id, _)| id == "A").map(|(_, r)| mean_return(r).0);

    let mut returns = Vec::new();
    let mut adaptability = Vec::new();
    let mut dynamics = Vec::new();
    for (id, reports) in groups {
        let (m, s) = mean_return(reports);
        returns.push(vec![
            id.clone(),
            reports.len().to_string(),
            fmt(m),
            fmt(s),
            baseline
                .and_then(|b| percent_delta(m, b))
                .map_or_else(String::new, |d| format!("{d:+.1}")),
        ]);

        let mut kinds: Vec<String> = reports
            .iter()
            .flat_map(|r| r.agents.iter().map(|a| a.kind.clone()))
            .collect();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            let per_run = |f: fn(&AgentMetrics) -> f64| {
                mean_std(&reports.iter().filter_map(|r| r.mean_by_kind(&kind, f)).collect::<Vec<_>>())
            };
            let mut row = vec![id.clone(), kind.clone()];
            for f in [
                (|a: &AgentMetrics| a.adjustment_magnitude) as fn(&AgentMetrics) -> f64,
                |a| a.adjustment_frequency,
                |a| a.price_stability,
                |a| a.price_volatility.mean_abs_change,
            ] {
                let (m, s) = per_run(f);
                row.push(fmt(m));
                row.push(fmt(s));
            }
            adaptability.push(row);
        }

        let mut row = vec![id.clone()];
        for f in [
            (|r: &MetricsReport| r.jain_index) as fn(&MetricsReport) -> f64,
            |r| r.market_share_volatility_pp.unwrap_or(0.0),
            |r| r.welfare_fairness,
            |r| r.price_convergence,
            |r| r.nash_proximity,
            |r| r.social_welfare,
        ] {
            let (m, s) = mean_std(&reports.iter().map(f).collect::<Vec<_>>());
            row.push(fmt(m));
            row.push(fmt(s));
        }
        dynamics.push(row);
    }
    SummaryTables {
        returns,
        adaptability,
        dynamics,
    }
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl SummaryTables {
    /// Writes `summary_returns.csv`, `summary_adaptability.csv` and
    /// `summary_dynamics.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_table(&dir.join("summary_returns.csv"), &RETURNS_HEADER, &self.returns)?;
        write_table(&dir.join("summary_adaptability.csv"), &ADAPTABILITY_HEADER, &self.adaptability)?;
        write_table(&dir.join("summary_dynamics.csv"), &DYNAMICS_HEADER, &self.dynamics)
    }
}
