//! Experiment runner for the A–H configuration matrix: seeding, isolated
//! run directories, manifests, statistics and report emission.

pub mod plotdata;
pub mod report;
pub mod stats;
pub mod summary;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::maddpg::MaddpgParams;
use crate::agents::madqn::DqnParams;
use crate::agents::qmix::QmixParams;
use crate::agents::rule::RuleStrategy;
use crate::agents::{build_controllers, Controller};
use crate::demand::ReferenceDemandModel;
use crate::env::{run_episode, write_history_header, write_history_rows, SimulationState, WeeklyRecord};
use crate::error::{Error, Result};
use crate::market::{AgentKind, MarketConfig, RosterEntry};
use crate::metrics::MetricsReport;

pub use plotdata::{emit_plotdata, sweep_query, write_sweep};
pub use report::build_report;
pub use stats::{wilcoxon_signed_rank, WilcoxonResult};
pub use summary::{summarize, SummaryTables};

/// Preset identifiers of the configuration matrix.
pub const PRESET_IDS: [&str; 8] = ["A", "B", "C", "D", "E", "F", "G", "H"];

/// Configs with a single agent type, eligible for paired significance tests.
pub const HOMOGENEOUS_IDS: [&str; 4] = ["A", "B", "C", "F"];

fn madqn() -> AgentKind {
    AgentKind::Madqn {
        params: DqnParams::default(),
    }
}
fn maddpg() -> AgentKind {
    AgentKind::Maddpg {
        params: MaddpgParams::default(),
    }
}
fn qmix() -> AgentKind {
    AgentKind::Qmix {
        params: QmixParams::default(),
    }
}
fn rule(s: RuleStrategy) -> AgentKind {
    AgentKind::Rule { strategy: s }
}

/// Agent kinds of a preset, in roster order.
pub fn preset_kinds(config_id: &str) -> Result<Vec<AgentKind>> {
    let [cm, ha, dr, se] = RuleStrategy::diverse_set();
    Ok(match config_id {
        "A" => vec![rule(cm), rule(ha), rule(dr), rule(se)],
        "B" => vec![maddpg(), maddpg(), maddpg(), maddpg()],
        "C" => vec![madqn(), madqn(), madqn(), madqn()],
        "D" => vec![maddpg(), maddpg(), madqn(), madqn()],
        "E" => vec![madqn(), rule(ha), rule(dr), rule(se)],
        "F" => vec![qmix(), qmix(), qmix(), qmix()],
        "G" => vec![maddpg(), rule(ha), rule(dr), rule(se)],
        "H" => vec![maddpg(), maddpg(), qmix(), qmix()],
        other => return Err(Error::Config(format!("unknown config_id `{other}`"))),
    })
}

/// Full-scale market configuration of a preset.
pub fn preset_config(config_id: &str, seed: u64) -> Result<MarketConfig> {
    let roster = preset_kinds(config_id)?
        .into_iter()
        .enumerate()
        .map(|(i, kind)| RosterEntry::new(format!("agent_{}", i + 1), kind))
        .collect();
    let mut cfg = MarketConfig::new(roster);
    cfg.seed = seed;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    HistoryCsv,
    MetricsJson,
    SummaryCsv,
    Plotdata,
}

fn default_runs() -> usize {
    8
}
/// Every artifact kind.
pub fn default_emit() -> BTreeSet<Emit> {
    [Emit::HistoryCsv, Emit::MetricsJson, Emit::SummaryCsv, Emit::Plotdata]
        .into_iter()
        .collect()
}
fn default_custom() -> String {
    "custom".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default = "default_custom")]
    pub config_id: String,
    pub config: MarketConfig,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: BTreeSet<Emit>,
    /// Write network checkpoints every this many episodes (0 = never).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl ExperimentSpec {
    /// Paper-scale preset: 30 episodes × 104 weeks × 8 runs.
    pub fn preset(config_id: &str, seed: u64, output_dir: impl Into<PathBuf>) -> Result<Self> {
        Ok(Self {
            config_id: config_id.to_string(),
            config: preset_config(config_id, seed)?,
            n_runs: default_runs(),
            output_dir: output_dir.into(),
            emit: default_emit(),
            checkpoint_every: 0,
        })
    }

    /// Desk-scale preset: 3 episodes × 20 weeks × 2 runs.
    pub fn desk(config_id: &str, seed: u64, output_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut spec = Self::preset(config_id, seed, output_dir)?;
        spec.config.episodes = 3;
        spec.config.weeks_per_episode = 20;
        spec.n_runs = 2;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_id != "custom" && !PRESET_IDS.contains(&self.config_id.as_str()) {
            return Err(Error::Config(format!("unknown config_id `{}`", self.config_id)));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        self.config.validate()
    }

    /// Config of run `index`: seed = base seed + index.
    pub fn run_config(&self, index: usize) -> MarketConfig {
        let mut cfg = self.config.clone();
        cfg.seed = self.config.seed.wrapping_add(index as u64);
        cfg
    }

    pub fn run_id(&self, index: usize) -> String {
        format!("{}-run{:02}-seed{}", self.config_id, index, self.run_config(index).seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Paths relative to the experiment output directory.
    pub artifacts: Vec<String>,
    pub software_version: String,
}

impl RunManifest {
    /// Recomputes the hash of a stored config and compares.
    pub fn verify(&self, config: &MarketConfig) -> Result<bool> {
        Ok(config.config_hash()? == self.config_hash)
    }
}

/// In-memory result of one simulated run.
pub struct RunOutput {
    pub episodes: Vec<Vec<WeeklyRecord>>,
    pub report: MetricsReport,
    pub controllers: Vec<Box<dyn Controller>>,
}

/// Simulates every episode of one run with the reference demand model.
/// `on_episode` is called after each episode (for checkpointing).
pub fn simulate_run(
    config: &MarketConfig,
    mut on_episode: impl FnMut(usize, &[Box<dyn Controller>]) -> Result<()>,
) -> Result<RunOutput> {
    let oracle = Box::new(ReferenceDemandModel::new(config.demand_params.clone()));
    let mut state = SimulationState::new(config.clone(), oracle)?;
    let mut controllers = build_controllers(config)?;
    let mut episodes = Vec::with_capacity(config.episodes);
    for e in 0..config.episodes {
        episodes.push(run_episode(&mut state, &mut controllers, e)?);
        on_episode(e, &controllers)?;
    }
    let report = MetricsReport::compute(config, &episodes)?;
    Ok(RunOutput {
        episodes,
        report,
        controllers,
    })
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Fails early when `dir` cannot be created or written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn execute_run(spec: &ExperimentSpec, index: usize) -> Result<(RunManifest, MetricsReport)> {
    let started = now_ms();
    let config = spec.run_config(index);
    let run_id = spec.run_id(index);
    let run_dir = spec.output_dir.join(&run_id);
    let mut artifacts = Vec::new();
    let rel = |name: &str| format!("{run_id}/{name}");

    write_file(&run_dir.join("config.json"), serde_json::to_string_pretty(&config)?.as_bytes())?;
    artifacts.push(rel("config.json"));

    let every = spec.checkpoint_every;
    let mut checkpoints = Vec::new();
    let output = simulate_run(&config, |episode, controllers| {
        if every == 0 || (episode + 1) % every != 0 {
            return Ok(());
        }
        for c in controllers {
            let mut per_agent: std::collections::BTreeMap<String, Vec<(String, _)>> = Default::default();
            for (agent, name, snap) in c.snapshots() {
                per_agent.entry(agent).or_default().push((name, snap));
            }
            for (agent, nets) in per_agent {
                let name = format!("{agent}/ep{}.ckpt", episode + 1);
                let nets: std::collections::BTreeMap<_, _> = nets.into_iter().collect();
                write_file(&run_dir.join(&name), serde_json::to_string(&nets)?.as_bytes())?;
                checkpoints.push(rel(&name));
            }
        }
        Ok(())
    })?;
    artifacts.extend(checkpoints);

    if spec.emit.contains(&Emit::HistoryCsv) {
        let mut w = csv::Writer::from_writer(Vec::new());
        write_history_header(&mut w)?;
        for (e, records) in output.episodes.iter().enumerate() {
            write_history_rows(&mut w, e, records)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Training(e.to_string()))?;
        write_file(&run_dir.join("history.csv"), &bytes)?;
        artifacts.push(rel("history.csv"));
    }
    if spec.emit.contains(&Emit::MetricsJson) {
        write_file(&run_dir.join("metrics.json"), output.report.to_json()?.as_bytes())?;
        artifacts.push(rel("metrics.json"));
    }
    let manifest = RunManifest {
        run_id,
        config_id: spec.config_id.clone(),
        seed: config.seed,
        config_hash: config.config_hash()?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        artifacts,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_file(&run_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    info!("finished {}", manifest.run_id);
    Ok((manifest, output.report))
}

/// Runs `n_runs` seeded runs, up to `jobs` concurrently, writing each into
/// its own `run_id` directory. Results are in run-index order.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<(RunManifest, MetricsReport)>> {
    spec.validate()?;
    ensure_writable(&spec.output_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(RunManifest, MetricsReport)>> =
        pool.install(|| (0..spec.n_runs).into_par_iter().map(|i| execute_run(spec, i)).collect());
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let reports: Vec<MetricsReport> = results.iter().map(|(_, r)| r.clone()).collect();
    if spec.emit.contains(&Emit::SummaryCsv) {
        let tables = summarize(&[(spec.config_id.clone(), reports.clone())]);
        tables.write(&spec.output_dir)?;
    }
    if spec.emit.contains(&Emit::Plotdata) {
        emit_plotdata(&reports, &spec.config, &spec.output_dir.join("plotdata"))?;
    }
    Ok(results)
}
