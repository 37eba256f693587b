//! Horizon-set ablation: one training run per set, each rolled out over the
//! test split and scored by pooled window RMSE.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use horizon_gcn::dataset::DatasetSplit;
use horizon_gcn::horizon::HorizonSet;
use horizon_gcn::metrics::{window_frames, RmseReport, WindowPair, REFERENCE_ONE_FIFTEEN, REFERENCE_ONE_STEP};
use log::{info, warn};

use crate::commands::{forecast_all, load_dataset, train_model, write_file, CHECKPOINT_FILE};
use crate::{CliError, CliResult, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationTable {
    /// Growing horizon sets.
    Sets,
    /// `{1, h2}` for each second horizon.
    SecondHorizon,
}

impl AblationTable {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sets => "horizon_sets",
            Self::SecondHorizon => "second_horizon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub horizons: HorizonSet,
    /// `Σ (T − h)` for one trajectory.
    pub pairs_per_trajectory: usize,
    pub train_seconds: f64,
    pub rmse: Option<[f64; 3]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub table: AblationTable,
    pub t0: usize,
    pub t1: usize,
    pub epochs: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Tab-separated table with `#` comment lines.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# {} window t0={} t1={} epochs={}\n",
            self.table.name(),
            self.t0,
            self.t1,
            self.epochs
        );
        if self.table == AblationTable::Sets {
            let r = REFERENCE_ONE_STEP;
            let _ = writeln!(out, "# reference_full_scale {{1}} {} {} {}", r[0], r[1], r[2]);
            let r = REFERENCE_ONE_FIFTEEN;
            let _ = writeln!(out, "# reference_full_scale {{1,15}} {} {} {}", r[0], r[1], r[2]);
        }
        out.push_str("horizons\tpairs_per_trajectory\ttrain_seconds\trmse_vx\trmse_vy\trmse_thickness\tstatus\n");
        for row in &self.rows {
            let _ = write!(out, "{}\t{}\t{:.3}\t", row.horizons, row.pairs_per_trajectory, row.train_seconds);
            match (&row.rmse, &row.error) {
                (Some(r), _) => {
                    let _ = writeln!(out, "{:e}\t{:e}\t{:e}\tok", r[0], r[1], r[2]);
                }
                (None, e) => {
                    let msg = e.as_deref().unwrap_or("unknown").replace(['\t', '\n'], " ");
                    let _ = writeln!(out, "nan\tnan\tnan\tfailed: {msg}");
                }
            }
        }
        out
    }
}

/// Horizon sets for `table` from the config.
pub fn table_sets(cfg: &ExperimentConfig, table: AblationTable) -> CliResult<Vec<HorizonSet>> {
    let raw: Vec<Vec<usize>> = match table {
        AblationTable::Sets => cfg.ablation_sets.clone(),
        AblationTable::SecondHorizon => cfg.ablation_h2.iter().map(|&h| vec![1, h]).collect(),
    };
    if raw.is_empty() {
        return Err(CliError::Usage(format!("ablation list for {} is empty", table.name())));
    }
    raw.into_iter()
        .map(|s| {
            if !s.contains(&1) {
                return Err(CliError::Usage(format!("ablation set {s:?} lacks horizon 1")));
            }
            HorizonSet::new(s).map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn run_one(cfg: &ExperimentConfig, split: &DatasetSplit, horizons: &HorizonSet, out: Option<&Path>) -> CliResult<(f64, [f64; 3])> {
    let mut train_cfg = cfg.train_config()?;
    train_cfg.horizons = horizons.clone();
    let start = Instant::now();
    let trained = train_model(split, &train_cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = out {
        let label: Vec<String> = horizons.iter().map(|h| h.to_string()).collect();
        write_file(&dir.join(format!("h{}", label.join("_"))).join(CHECKPOINT_FILE), trained.checkpoint.to_bytes())?;
    }
    let (_, forecasts) = forecast_all(
        &trained.checkpoint,
        &trained.stats,
        &split.test,
        horizons,
        cfg.t0,
        cfg.t1,
        cfg.scan()?,
    )?;
    let truths = split
        .test
        .iter()
        .map(|t| window_frames(t, cfg.t0, cfg.t1))
        .collect::<horizon_gcn::Result<Vec<_>>>()?;
    let pairs: Vec<WindowPair<'_>> = forecasts
        .iter()
        .zip(&truths)
        .map(|(f, t)| WindowPair { pred: &f.states, truth: t })
        .collect();
    let report = RmseReport::compute(&pairs, cfg.t0, cfg.t1)?;
    Ok((seconds, report.window))
}

/// Trains and scores every set of `table` in order. A failing set is
/// recorded in its row and the harness moves on.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    table: AblationTable,
    checkpoint_dir: Option<&Path>,
) -> CliResult<AblationReport> {
    let sets = table_sets(cfg, table)?;
    let steps = split
        .train
        .first()
        .map(|t| t.steps())
        .ok_or_else(|| CliError::Usage("training split is empty".into()))?;
    let mut rows = Vec::with_capacity(sets.len());
    for horizons in sets {
        info!("ablation {}: training {horizons}", table.name());
        let pairs_per_trajectory = horizons.pair_count(steps);
        let row = match run_one(cfg, split, &horizons, checkpoint_dir) {
            Ok((train_seconds, rmse)) => AblationRow {
                horizons,
                pairs_per_trajectory,
                train_seconds,
                rmse: Some(rmse),
                error: None,
            },
            Err(e) => {
                warn!("ablation run {horizons} failed: {e}");
                AblationRow {
                    horizons,
                    pairs_per_trajectory,
                    train_seconds: f64::NAN,
                    rmse: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    Ok(AblationReport {
        table,
        t0: cfg.t0,
        t1: cfg.t1,
        epochs: cfg.epochs,
        rows,
    })
}

/// Runs the requested tables on the dataset in `cfg.data_dir` and writes
/// `<report_dir>/ablation_<table>.tsv` for each.
pub fn cmd_ablate_horizons(cfg: &ExperimentConfig, tables: &[AblationTable]) -> CliResult<Vec<AblationReport>> {
    if tables.is_empty() {
        return Err(CliError::Usage("no ablation table selected".into()));
    }
    for &t in tables {
        table_sets(cfg, t)?;
    }
    let split = load_dataset(&cfg.data_dir)?.split()?;
    let mut reports = Vec::new();
    for &table in tables {
        let ckpt_dir = cfg.checkpoint_dir.join("ablation").join(table.name());
        let report = run_ablation(cfg, &split, table, Some(&ckpt_dir))?;
        write_file(
            &cfg.report_dir.join(format!("ablation_{}.tsv", table.name())),
            report.to_tsv(),
        )?;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tables_have_expected_rows() {
        let cfg = ExperimentConfig::default();
        let sets = table_sets(&cfg, AblationTable::Sets).unwrap();
        assert_eq!(sets.len(), 5);
        assert_eq!(sets[4].as_slice(), &[1, 3, 6, 15, 30]);
        let h2 = table_sets(&cfg, AblationTable::SecondHorizon).unwrap();
        assert_eq!(h2.len(), 11);
        assert!(h2.iter().all(|s| s.len() == 2 && s.contains(1)));
    }

    #[test]
    fn empty_lists_are_errors() {
        let cfg = ExperimentConfig {
            ablation_sets: vec![],
            ablation_h2: vec![],
            ..ExperimentConfig::default()
        };
        assert!(table_sets(&cfg, AblationTable::Sets).is_err());
        assert!(table_sets(&cfg, AblationTable::SecondHorizon).is_err());
        assert!(cmd_ablate_horizons(&ExperimentConfig::default(), &[]).is_err());
    }

    #[test]
    fn failed_rows_render() {
        let report = AblationReport {
            table: AblationTable::Sets,
            t0: 60,
            t1: 240,
            epochs: 1,
            rows: vec![AblationRow {
                horizons: HorizonSet::new([1]).unwrap(),
                pairs_per_trajectory: 239,
                train_seconds: f64::NAN,
                rmse: None,
                error: Some("boom\tbad".into()),
            }],
        };
        let tsv = report.to_tsv();
        assert!(tsv.lines().last().unwrap().ends_with("failed: boom bad"));
    }
}
