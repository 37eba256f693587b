use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use horizon_gcn::horizon::HorizonSet;
use horizon_gcn::rollout::ScanMode;
use horizon_gcn_cli::ablation::{cmd_ablate_horizons, AblationTable};
use horizon_gcn_cli::commands::{
    cmd_eval, cmd_generate, cmd_rollout, cmd_train, test_trajectory_paths, EvalRequest, RolloutRequest,
    CHECKPOINT_FILE, MESH_FILE, STATS_FILE,
};
use horizon_gcn_cli::{CliError, CliResult, ExperimentConfig};

/// Horizon-conditioned graph emulator: generate data, train, forecast, score.
#[derive(Debug, Parser)]
#[command(name = "horizon-gcn", version)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic melt-rate ensemble.
    Generate {
        /// Output directory [default: config data_dir].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one emulator on the training split.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated horizon set, e.g. 1,15.
        #[arg(long)]
        horizons: Option<HorizonSet>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Forecast months t0+1..=t1 from observed month t0.
    Rollout(RolloutArgs),
    /// Score forecasts against truth.
    Eval(EvalArgs),
    /// Train one model per horizon set and tabulate RMSE and cost.
    AblateHorizons {
        #[arg(long, value_enum, default_value_t = TableChoice::All)]
        table: TableChoice,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Repeatable [default: the test split of data_dir].
    #[arg(long = "trajectory")]
    trajectories: Vec<PathBuf>,
    #[arg(long)]
    t0: Option<usize>,
    #[arg(long)]
    t1: Option<usize>,
    /// Plan with a subset of the trained horizons.
    #[arg(long)]
    horizons: Option<HorizonSet>,
    /// Freeze the known set per horizon pass instead of chaining fills.
    #[arg(long)]
    frozen_scan: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Forecast trajectory; repeat alongside --truth.
    #[arg(long = "pred")]
    preds: Vec<PathBuf>,
    #[arg(long = "truth")]
    truths: Vec<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    t0: Option<usize>,
    #[arg(long)]
    t1: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the bare per-month series here.
    #[arg(long)]
    series: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TableChoice {
    #[value(name = "1")]
    Sets,
    #[value(name = "2")]
    SecondHorizon,
    All,
}

fn forecast_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.report_dir.join("forecasts")
}

fn rollout(cfg: &ExperimentConfig, args: RolloutArgs) -> CliResult<()> {
    let (t0, t1) = (args.t0.unwrap_or(cfg.t0), args.t1.unwrap_or(cfg.t1));
    if t0 == 0 || t1 <= t0 {
        return Err(CliError::Usage(format!("need 1 <= t0 < t1, got t0={t0} t1={t1}")));
    }
    let trajectories = if args.trajectories.is_empty() {
        test_trajectory_paths(&cfg.data_dir)?
    } else {
        args.trajectories
    };
    let req = RolloutRequest {
        checkpoint: args.checkpoint.unwrap_or_else(|| cfg.checkpoint_dir.join(CHECKPOINT_FILE)),
        stats: args.stats.unwrap_or_else(|| cfg.checkpoint_dir.join(STATS_FILE)),
        mesh: args.mesh.unwrap_or_else(|| cfg.data_dir.join(MESH_FILE)),
        trajectories,
        t0,
        t1,
        horizons: args.horizons,
        scan: if args.frozen_scan { ScanMode::Frozen } else { cfg.scan()? },
        out: args.out.unwrap_or_else(|| forecast_dir(cfg)),
    };
    for path in cmd_rollout(&req)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn eval(cfg: &ExperimentConfig, args: EvalArgs) -> CliResult<()> {
    if args.preds.len() != args.truths.len() {
        return Err(CliError::Usage(format!(
            "{} --pred but {} --truth arguments",
            args.preds.len(),
            args.truths.len()
        )));
    }
    let pairs = if args.preds.is_empty() {
        // Default: every forecast in the forecast directory against its
        // source scenario in the data directory.
        let mut pairs = Vec::new();
        for truth in test_trajectory_paths(&cfg.data_dir)? {
            let stem = truth.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            pairs.push((forecast_dir(cfg).join(format!("{stem}.forecast.traj")), truth));
        }
        pairs
    } else {
        args.preds.into_iter().zip(args.truths).collect()
    };
    let req = EvalRequest {
        mesh: args.mesh.unwrap_or_else(|| cfg.data_dir.join(MESH_FILE)),
        pairs,
        t0: args.t0.unwrap_or(cfg.t0),
        t1: args.t1.unwrap_or(cfg.t1),
        out: args.out.unwrap_or_else(|| cfg.report_dir.join("rmse.txt")),
        series: args.series,
    };
    let report = cmd_eval(&req)?;
    let w = report.window;
    let m = report.mean_of_months();
    println!("window rmse vx={:.6e} vy={:.6e} thickness={:.6e}", w[0], w[1], w[2]);
    println!("mean of months vx={:.6e} vy={:.6e} thickness={:.6e}", m[0], m[1], m[2]);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate { out } => {
            let out = out.unwrap_or_else(|| cfg.data_dir.clone());
            print!("{}", cmd_generate(&cfg, &out)?);
        }
        Command::Train {
            data,
            out,
            horizons,
            epochs,
        } => {
            if let Some(h) = horizons {
                cfg.horizons = h.as_slice().to_vec();
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let data = data.unwrap_or_else(|| cfg.data_dir.clone());
            let out = out.unwrap_or_else(|| cfg.checkpoint_dir.clone());
            let trained = cmd_train(&cfg, &data, &out)?;
            let best = &trained.outcome.history[trained.outcome.best_epoch];
            println!(
                "best epoch {} val_loss {:.6e} pairs/epoch {}",
                trained.outcome.best_epoch, best.val_loss, trained.outcome.pairs_per_epoch
            );
        }
        Command::Rollout(args) => rollout(&cfg, args)?,
        Command::Eval(args) => eval(&cfg, args)?,
        Command::AblateHorizons { table, epochs } => {
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let tables: &[AblationTable] = match table {
                TableChoice::Sets => &[AblationTable::Sets],
                TableChoice::SecondHorizon => &[AblationTable::SecondHorizon],
                TableChoice::All => &[AblationTable::Sets, AblationTable::SecondHorizon],
            };
            for report in cmd_ablate_horizons(&cfg, tables)? {
                print!("{}", report.to_tsv());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
