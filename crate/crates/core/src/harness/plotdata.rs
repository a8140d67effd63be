//! Tabular data behind the market-share and demand-curve figures.

use std::path::Path;

use super::summary::mean_std;
use crate::demand::{default_sweep_grid, price_sweep, DemandQuery, ReferenceDemandModel};
use crate::error::{Error, Result};
use crate::market::MarketConfig;
use crate::metrics::MetricsReport;

/// Normal-approximation 95% half-width `1.96·s/√n` with sample std `s`.
pub fn ci95_half_width(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    1.96 * mean_std(values).1 / (values.len() as f64).sqrt()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `market_share_by_week.csv`, `final_shares_ci.csv` and
/// `elasticity_sweep.csv` into `dir`.
pub fn emit_plotdata(reports: &[MetricsReport], config: &MarketConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let agents: Vec<String> = reports
        .first()
        .map(|r| r.market_share_series.keys().cloned().collect())
        .unwrap_or_default();

    let mut w = writer(&dir.join("market_share_by_week.csv"))?;
    w.write_record(["week", "agent_id", "mean_share", "std_share"])?;
    let weeks = reports.iter().map(|r| r.weeks_per_episode).min().unwrap_or(0);
    for t in 0..weeks {
        for a in &agents {
            let v: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.market_share_series.get(a).and_then(|s| s.get(t)).copied())
                .collect();
            let (m, s) = mean_std(&v);
            w.write_record([t.to_string(), a.clone(), format!("{m:.6}"), format!("{s:.6}")])?;
        }
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let mut w = writer(&dir.join("final_shares_ci.csv"))?;
    w.write_record(["agent_id", "runs", "mean_share", "ci95_half_width", "ci_flag"])?;
    for a in &agents {
        let shares: Vec<f64> = reports
            .iter()
            .filter_map(|r| {
                let total: f64 = r.agents.iter().map(|x| x.final_episode_revenue).sum();
                let own = r.agents.iter().find(|x| &x.agent_id == a)?.final_episode_revenue;
                Some(if total > 0.0 { own / total } else { 1.0 / r.agents.len() as f64 })
            })
            .collect();
        let (m, _) = mean_std(&shares);
        let flag = if shares.len() < 2 { "single_run" } else { "" };
        w.write_record([
            a.clone(),
            shares.len().to_string(),
            format!("{m:.6}"),
            format!("{:.6}", ci95_half_width(&shares)),
            flag.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let (model, base) = sweep_query(config)?;
    write_sweep(&model, &base, &dir.join("elasticity_sweep.csv"))
}

/// Noise-free model and neutral query for the first product of `config`.
pub fn sweep_query(config: &MarketConfig) -> Result<(ReferenceDemandModel, DemandQuery)> {
    let spec = config
        .portfolio()?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("empty portfolio".into()))?;
    let model = ReferenceDemandModel::new(config.demand_params.noiseless());
    let reference = spec.baseline_demand * config.demand_params.cluster_multiplier(spec.cluster_id)?;
    Ok((model, DemandQuery::neutral(&spec, reference)))
}

/// Writes the 41-point price/demand curve for `base`.
pub fn write_sweep(model: &ReferenceDemandModel, base: &DemandQuery, path: &Path) -> Result<()> {
    let points = price_sweep(model, base, &default_sweep_grid())?;
    let mut w = writer(path)?;
    w.write_record(["price_scale", "price", "demand"])?;
    for p in points {
        w.write_record([
            format!("{:.6}", p.scale),
            format!("{:.6}", p.price),
            format!("{:.6}", p.demand),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_half_width_formula() {
        let h = ci95_half_width(&[0.2, 0.3, 0.2, 0.3]);
        let s = (0.01f64 / 3.0).sqrt();
        assert!((h - 1.96 * s / 2.0).abs() < 1e-12);
        assert_eq!(ci95_half_width(&[0.4]), 0.0);
    }
}
