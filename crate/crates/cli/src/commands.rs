use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use horizon_gcn::checkpoint::Checkpoint;
use horizon_gcn::dataset::{classify_melt_rate, split_by_melt_rate, DatasetSplit, NormStats, Partition, Trajectory};
use horizon_gcn::horizon::HorizonSet;
use horizon_gcn::metrics::RmseReport;
use horizon_gcn::rollout::{execute_rollout, plan_rollout, Emulator, Forecast, ScanMode};
use horizon_gcn::synthetic::generate_dataset;
use horizon_gcn::train::{train, TrainConfig, TrainOutcome};
use horizon_gcn::MeshGraph;
use log::info;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, ExperimentConfig};

pub const MESH_FILE: &str = "mesh.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const STATS_FILE: &str = "stats.txt";
pub const HISTORY_FILE: &str = "history.txt";

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_mesh(path: &Path) -> CliResult<Arc<MeshGraph>> {
    let bytes = read_file(path)?;
    Ok(Arc::new(MeshGraph::read_from(&mut bytes.as_slice())?))
}

pub fn load_trajectory(path: &Path, mesh: &Arc<MeshGraph>) -> CliResult<Trajectory> {
    let bytes = read_file(path)?;
    Ok(Trajectory::read_from(&mut bytes.as_slice(), Arc::clone(mesh))?)
}

pub fn load_stats(path: &Path) -> CliResult<NormStats> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(NormStats::from_text(&text)?)
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = read_file(path)?;
    Ok(Checkpoint::read_from(&mut bytes.as_slice())?)
}

/// Writes the mesh, one file per melt-rate scenario and a manifest of
/// SHA-256 hashes into `out`. Returns the manifest text.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> CliResult<String> {
    let (mesh, trajectories) = generate_dataset(&cfg.synthetic(0.0))?;
    let mut manifest = String::new();
    let mesh_bytes = mesh.to_bytes();
    write_file(&out.join(MESH_FILE), &mesh_bytes)?;
    let _ = writeln!(manifest, "{}  {MESH_FILE}", sha256_hex(&mesh_bytes));
    for traj in &trajectories {
        let name = format!("{}.traj", traj.scenario_id());
        let bytes = traj.to_bytes();
        write_file(&out.join(&name), &bytes)?;
        let _ = writeln!(manifest, "{}  {name}", sha256_hex(&bytes));
    }
    write_file(&out.join(MANIFEST_FILE), &manifest)?;
    info!(
        "wrote {} scenarios on a {}-node mesh to {}",
        trajectories.len(),
        mesh.node_count(),
        out.display()
    );
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub mesh: Arc<MeshGraph>,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn split(&self) -> CliResult<DatasetSplit> {
        Ok(split_by_melt_rate(self.trajectories.clone())?)
    }
}

/// Loads every file listed in `dir`'s manifest, checking hashes.
pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = std::fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    let mut mesh = None;
    let mut trajectories = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let Some((hash, name)) = line.split_once("  ") else {
            return Err(horizon_gcn::Error::InvalidData(format!("manifest line {} malformed", lineno + 1)).into());
        };
        let path = dir.join(name);
        let bytes = read_file(&path)?;
        if sha256_hex(&bytes) != hash {
            return Err(horizon_gcn::Error::InvalidData(format!("{} does not match its manifest hash", path.display())).into());
        }
        if name == MESH_FILE {
            mesh = Some(Arc::new(MeshGraph::read_from(&mut bytes.as_slice())?));
        } else {
            let mesh = mesh.as_ref().ok_or_else(|| {
                horizon_gcn::Error::InvalidData("manifest lists trajectories before the mesh".into())
            })?;
            trajectories.push(Trajectory::read_from(&mut bytes.as_slice(), Arc::clone(mesh))?);
        }
    }
    let mesh = mesh.ok_or_else(|| horizon_gcn::Error::InvalidData("manifest names no mesh".into()))?;
    Ok(Dataset { mesh, trajectories })
}

/// Everything a finished training run produces.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub stats: NormStats,
    pub outcome: TrainOutcome,
}

pub fn train_model(split: &DatasetSplit, config: &TrainConfig) -> CliResult<TrainedModel> {
    let stats = NormStats::compute(&split.train)?;
    let outcome = train(&split.train, &split.validation, &stats, config)?;
    let checkpoint = Checkpoint::new(
        outcome.model_config,
        config.seed,
        config.t_scale,
        config.horizons.clone(),
        &stats,
        outcome.best.clone(),
    )?;
    Ok(TrainedModel {
        checkpoint,
        stats,
        outcome,
    })
}

/// Trains on `data` and writes checkpoint, statistics and history to `out`.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, out: &Path) -> CliResult<TrainedModel> {
    let dataset = load_dataset(data)?;
    let trained = train_model(&dataset.split()?, &cfg.train_config()?)?;
    write_file(&out.join(CHECKPOINT_FILE), trained.checkpoint.to_bytes())?;
    write_file(&out.join(STATS_FILE), trained.stats.to_text())?;
    write_file(&out.join(HISTORY_FILE), trained.outcome.history_text())?;
    info!(
        "best epoch {} of {}; checkpoint in {}",
        trained.outcome.best_epoch,
        trained.outcome.history.len(),
        out.display()
    );
    Ok(trained)
}

/// Forecasts every trajectory with one plan.
pub fn forecast_all(
    checkpoint: &Checkpoint,
    stats: &NormStats,
    trajectories: &[Trajectory],
    plan_horizons: &HorizonSet,
    t0: usize,
    t1: usize,
    scan: ScanMode,
) -> CliResult<(horizon_gcn::rollout::RolloutPlan, Vec<Forecast>)> {
    checkpoint.check_stats(stats)?;
    let plan = plan_rollout(t0, t1, plan_horizons, scan)?;
    let emulator = Emulator {
        params: &checkpoint.params,
        config: &checkpoint.config,
        stats,
        horizons: &checkpoint.horizons,
        t_scale: checkpoint.t_scale,
    };
    let forecasts = trajectories
        .par_iter()
        .map(|traj| execute_rollout(&emulator, traj, &plan))
        .collect::<horizon_gcn::Result<Vec<_>>>()?;
    Ok((plan, forecasts))
}

#[derive(Debug, Clone)]
pub struct RolloutRequest {
    pub checkpoint: PathBuf,
    pub stats: PathBuf,
    pub mesh: PathBuf,
    pub trajectories: Vec<PathBuf>,
    pub t0: usize,
    pub t1: usize,
    /// Plan with these horizons instead of the trained set.
    pub horizons: Option<HorizonSet>,
    pub scan: ScanMode,
    pub out: PathBuf,
}

/// Writes `<id>.forecast.traj` and `<id>.plan.txt` per input trajectory.
/// Returns the forecast paths.
pub fn cmd_rollout(req: &RolloutRequest) -> CliResult<Vec<PathBuf>> {
    if req.t1 <= req.t0 || req.t0 == 0 {
        return Err(CliError::Usage(format!("need 1 <= t0 < t1, got t0={} t1={}", req.t0, req.t1)));
    }
    if req.trajectories.is_empty() {
        return Err(CliError::Usage("no trajectories to roll out".into()));
    }
    let checkpoint = load_checkpoint(&req.checkpoint)?;
    let stats = load_stats(&req.stats)?;
    let mesh = load_mesh(&req.mesh)?;
    let trajectories = req
        .trajectories
        .iter()
        .map(|p| load_trajectory(p, &mesh))
        .collect::<CliResult<Vec<_>>>()?;
    let horizons = req.horizons.clone().unwrap_or_else(|| checkpoint.horizons.clone());
    let (plan, forecasts) = forecast_all(&checkpoint, &stats, &trajectories, &horizons, req.t0, req.t1, req.scan)?;
    let mut written = Vec::with_capacity(forecasts.len());
    for (traj, forecast) in trajectories.iter().zip(&forecasts) {
        let id = traj.scenario_id();
        let out_traj = forecast.to_trajectory(traj, format!("{id}-forecast"))?;
        let path = req.out.join(format!("{id}.forecast.traj"));
        write_file(&path, out_traj.to_bytes())?;
        write_file(&req.out.join(format!("{id}.plan.txt")), plan.audit_text())?;
        written.push(path);
    }
    info!(
        "{} forecasts, {} steps each, max depth {}",
        written.len(),
        plan.steps().len(),
        plan.max_depth()
    );
    Ok(written)
}

/// Paths of the test-split scenarios in a dataset directory.
pub fn test_trajectory_paths(data: &Path) -> CliResult<Vec<PathBuf>> {
    let dataset = load_dataset(data)?;
    let mut paths = Vec::new();
    for t in &dataset.trajectories {
        if classify_melt_rate(t.melt_rate())? == Partition::Test {
            paths.push(data.join(format!("{}.traj", t.scenario_id())));
        }
    }
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub mesh: PathBuf,
    /// `(forecast, truth)` trajectory files.
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub t0: usize,
    pub t1: usize,
    pub out: PathBuf,
    pub series: Option<PathBuf>,
}

pub fn cmd_eval(req: &EvalRequest) -> CliResult<RmseReport> {
    if req.pairs.is_empty() {
        return Err(CliError::Usage("no forecast/truth pairs given".into()));
    }
    if req.t1 <= req.t0 {
        return Err(CliError::Usage(format!("need t0 < t1, got t0={} t1={}", req.t0, req.t1)));
    }
    let mesh = load_mesh(&req.mesh)?;
    let loaded = req
        .pairs
        .iter()
        .map(|(p, t)| Ok((load_trajectory(p, &mesh)?, load_trajectory(t, &mesh)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let runs: Vec<(&Trajectory, &Trajectory)> = loaded.iter().map(|(p, t)| (p, t)).collect();
    let report = RmseReport::from_trajectories(&runs, req.t0, req.t1)?;
    write_file(&req.out, report.to_text())?;
    if let Some(series) = &req.series {
        write_file(series, report.series_text())?;
    }
    Ok(report)
}
