use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use marl_pricing::demand::calibrate::calibrate_fit;
use marl_pricing::demand::{aggregate_weekly, clean_transactions, estimate_elasticity, load_transactions, DemandParams};
use marl_pricing::harness::{
    build_report, default_emit, run_experiment, sweep_query, wilcoxon_signed_rank, write_sweep, ExperimentSpec,
};
use marl_pricing::{Error, MarketConfig};

#[derive(Parser)]
#[command(name = "marl-pricing", version, about = "Multi-agent dynamic-pricing market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded simulations of a preset or a config file.
    Simulate {
        /// Experiment spec or market config JSON.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Preset config id A–H (desk scale unless --full-scale).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        full_scale: bool,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        weeks: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Save network checkpoints every N episodes.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit demand parameters to a transactions CSV.
    Calibrate {
        #[arg(long)]
        csv: PathBuf,
        /// JSON object mapping StockCode to cluster id.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the price/demand sweep and print the estimated elasticity.
    Elasticity {
        /// Demand parameters JSON (defaults when omitted).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summaries, significance tests and plot data for finished runs.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact Wilcoxon signed-rank test on two paired samples.
    Wilcoxon {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = read_text(path)?;
    if let Ok(spec) = serde_json::from_str::<ExperimentSpec>(&text) {
        return Ok(spec);
    }
    let config: MarketConfig = serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("{} is neither an experiment spec nor a market config", path.display()))?;
    Ok(ExperimentSpec {
        config_id: "custom".into(),
        config,
        n_runs: 1,
        output_dir: PathBuf::new(),
        emit: default_emit(),
        checkpoint_every: 0,
    })
}

/// Reads one numeric column, skipping a non-numeric header.
fn read_sample(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(Error::from)?;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let Some(field) = record.get(0) else { continue };
        match field.trim().parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::Domain(format!("{}: line {} is not a number: `{field}`", path.display(), i + 1)).into())
            }
        }
    }
    Ok(values)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            preset,
            full_scale,
            runs,
            episodes,
            weeks,
            seed,
            jobs,
            checkpoint_every,
            out,
        } => {
            let mut spec = match (config, preset) {
                (Some(path), _) => load_spec(&path)?,
                (None, Some(id)) if full_scale => ExperimentSpec::preset(&id, 0, "")?,
                (None, Some(id)) => ExperimentSpec::desk(&id, 0, "")?,
                (None, None) => unreachable!("clap requires --config or --preset"),
            };
            spec.output_dir = out;
            if let Some(n) = runs {
                spec.n_runs = n;
            }
            if let Some(e) = episodes {
                spec.config.episodes = e;
            }
            if let Some(w) = weeks {
                spec.config.weeks_per_episode = w;
            }
            if let Some(s) = seed {
                spec.config.seed = s;
            }
            if let Some(k) = checkpoint_every {
                spec.checkpoint_every = k;
            }
            info!(
                "config {}: {} runs x {} episodes x {} weeks",
                spec.config_id, spec.n_runs, spec.config.episodes, spec.config.weeks_per_episode
            );
            for (manifest, report) in run_experiment(&spec, jobs)? {
                println!(
                    "{}\tseed {}\tmean_return {:.2}\tjain {:.4}",
                    manifest.run_id,
                    manifest.seed,
                    report.mean_return(),
                    report.jain_index
                );
            }
        }
        Command::Calibrate { csv, clusters, out } => {
            let table = load_transactions(&csv)?;
            if !table.errors.is_empty() {
                log::warn!("{} malformed rows skipped", table.errors.len());
            }
            let cleaned = clean_transactions(table);
            for (reason, n) in &cleaned.removed {
                info!("removed {n} rows: {}", reason.as_str());
            }
            let clusters: BTreeMap<String, i64> = match clusters {
                Some(p) => serde_json::from_str(&read_text(&p)?).map_err(Error::from)?,
                None => BTreeMap::new(),
            };
            let fit = calibrate_fit(&aggregate_weekly(&cleaned.table), &clusters)?;
            fs::write(&out, serde_json::to_string_pretty(&fit.params)?).map_err(|e| Error::io(&out, e))?;
            println!(
                "elasticity {:.4}\tholiday_uplift {:.4}\trows {}\tresidual_std {:.4}",
                fit.params.elasticity, fit.params.holiday_uplift, fit.rows_used, fit.residual_std
            );
        }
        Command::Elasticity { params, out } => {
            let params: DemandParams = match params {
                Some(p) => serde_json::from_str(&read_text(&p)?).map_err(Error::from)?,
                None => DemandParams::default(),
            };
            let mut config = MarketConfig::new(Vec::new());
            config.clusters = params.cluster_base.keys().copied().collect();
            config.products_per_agent = config.clusters.len();
            config.demand_params = params;
            let (model, base) = sweep_query(&config)?;
            write_sweep(&model, &base, &out)?;
            let eps = estimate_elasticity(&model, &base, &marl_pricing::demand::default_sweep_grid())?;
            println!("elasticity {eps:.5}");
        }
        Command::Report { input, out } => {
            let n = build_report(&input, &out)?;
            println!("{n} runs summarized into {}", out.display());
        }
        Command::Wilcoxon { a, b } => {
            let r = wilcoxon_signed_rank(&read_sample(&a)?, &read_sample(&b)?)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
