//! Joint multi-horizon optimization.
//!
//! Every epoch shuffles the full pair list (all horizons mixed), processes
//! it in batches with gradient accumulation, and steps Adam with a cosine
//! annealed learning rate. The parameters with the lowest validation loss
//! are kept.

use std::f64::consts::PI;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{assemble_input, enumerate_dataset_pairs, residual_target, NormStats, SamplePair, Trajectory};
use crate::error::{Error, Result};
use crate::horizon::HorizonSet;
use crate::model::{init_params, record_forward, ModelConfig, ModelParams, ParamVars, DEFAULT_HIDDEN, PROGNOSTIC_CHANNELS};
use crate::numeric::{Activation, DenseMatrix, Tape, Var};

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDecayMode {
    /// Multiplicative shrinkage `p ← p (1 − lr·wd)` outside the moments.
    #[default]
    Decoupled,
    /// `wd · p` added to the gradient before the moment updates.
    CoupledL2,
}

impl std::str::FromStr for WeightDecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(Self::Decoupled),
            "coupled" | "l2" => Ok(Self::CoupledL2),
            other => Err(Error::InvalidArgument(format!("unknown weight decay mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay_mode: WeightDecayMode::Decoupled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub horizons: HorizonSet,
    pub epochs: usize,
    pub lr0: f64,
    pub adam: AdamConfig,
    pub lambda_v: f64,
    pub lambda_h: f64,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    /// Seeds parameter initialization and shuffling.
    pub seed: u64,
    pub hidden: usize,
    pub activation: Activation,
    pub velocity_input: crate::model::VelocityInput,
    /// Denominator of the normalized time feature.
    pub t_scale: f64,
}

impl TrainConfig {
    pub fn new(horizons: HorizonSet) -> Self {
        Self {
            horizons,
            epochs: 500,
            lr0: 1e-3,
            adam: AdamConfig::default(),
            lambda_v: 1.0,
            lambda_h: 1.0,
            batch_size: 8,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            activation: Activation::Relu,
            velocity_input: crate::model::VelocityInput::Components,
            t_scale: 240.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !self.horizons.contains(1) {
            return bad("horizon set must contain 1");
        }
        if self.lambda_v < 0.0 || self.lambda_h < 0.0 || self.lambda_v + self.lambda_h == 0.0 {
            return bad("loss weights must be non-negative and not both zero");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if !(self.lr0 > 0.0) || self.adam.weight_decay < 0.0 {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        if !(self.t_scale > 0.0) {
            return bad("time scale must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, context_width: usize) -> ModelConfig {
        ModelConfig {
            context_width,
            hidden: self.hidden,
            activation: self.activation,
            velocity_input: self.velocity_input,
        }
    }
}

/// `λ_v · mean((V̂ − V)²) + λ_H · mean((Ĥ − H)²)` over `N × 3` states.
pub fn loss(pred: &DenseMatrix, target: &DenseMatrix, lambda_v: f64, lambda_h: f64) -> Result<f64> {
    if pred.shape() != target.shape() || pred.cols() != PROGNOSTIC_CHANNELS {
        return Err(Error::dims(
            "loss",
            format!("matching Nx{PROGNOSTIC_CHANNELS}"),
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.rows() as f64;
    let (mut sv, mut sh) = (0.0, 0.0);
    for r in 0..pred.rows() {
        let (p, t) = (pred.row(r), target.row(r));
        sv += (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
        sh += (p[2] - t[2]).powi(2);
    }
    Ok(lambda_v * sv / (2.0 * n) + lambda_h * sh / n)
}

/// Records [`loss`] on a tape from the predicted increments and the true
/// normalized residual (`X̂ − X = ΔX̂ − ΔX`).
pub fn record_loss(
    tape: &mut Tape<'_>,
    delta_velocity: Var,
    delta_thickness: Var,
    residual: &DenseMatrix,
    lambda_v: f64,
    lambda_h: f64,
) -> Result<Var> {
    let tv = tape.constant(residual.slice_cols(0, 2)?);
    let th = tape.constant(residual.slice_cols(2, 3)?);
    let ev = tape.sub(delta_velocity, tv)?;
    let eh = tape.sub(delta_thickness, th)?;
    let mv = tape.square_mean(ev);
    let mh = tape.square_mean(eh);
    let wv = tape.scale(mv, lambda_v);
    let wh = tape.scale(mh, lambda_h);
    tape.add(wv, wh)
}

/// Adam first/second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&DenseMatrix]) -> Self {
        let zeros: Vec<DenseMatrix> = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr`.
pub fn adam_step(
    params: &mut [&mut DenseMatrix],
    grads: &[DenseMatrix],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dims("adam_step", params.len(), grads.len()));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
            return Err(Error::dims("adam_step", format!("{:?}", p.shape()), format!("{:?}", g.shape())));
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let pd = p.data_mut();
        if cfg.decay_mode == WeightDecayMode::Decoupled && cfg.weight_decay != 0.0 {
            let shrink = 1.0 - lr * cfg.weight_decay;
            for x in pd.iter_mut() {
                *x *= shrink;
            }
        }
        for k in 0..pd.len() {
            let mut gk = g.data()[k];
            if cfg.decay_mode == WeightDecayMode::CoupledL2 {
                gk += cfg.weight_decay * pd[k];
            }
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            pd[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `lr0 · ½ (1 + cos(π · epoch / epochs))`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64) -> f64 {
    lr0 * 0.5 * (1.0 + (PI * epoch as f64 / epochs as f64).cos())
}

/// Shared evaluation context for loss and gradient computations.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub model: &'a ModelConfig,
    pub stats: &'a NormStats,
    pub horizons: &'a HorizonSet,
    pub t_scale: f64,
    pub lambda_v: f64,
    pub lambda_h: f64,
}

fn record_pair<'g>(
    tape: &mut Tape<'g>,
    vars: &ParamVars,
    ctx: &LossContext<'_>,
    traj: &'g Trajectory,
    pair: SamplePair,
) -> Result<Var> {
    let input = assemble_input(traj, pair.t, pair.h, ctx.stats, ctx.horizons, ctx.t_scale)?;
    let residual = residual_target(traj, pair.t, pair.h, ctx.stats)?;
    let (dv, dh) = record_forward(tape, vars, ctx.model, &input)?;
    record_loss(tape, dv, dh, &residual, ctx.lambda_v, ctx.lambda_h)
}

/// Loss of one pair and its gradient in [`ModelParams::matrices`] order.
pub fn pair_loss_and_grad(
    params: &ModelParams,
    ctx: &LossContext<'_>,
    trajectories: &[Trajectory],
    pair: SamplePair,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let traj = &trajectories[pair.trajectory];
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let loss = record_pair(&mut tape, &vars, ctx, traj, pair)?;
    let value = tape.value(loss).get(0, 0);
    Ok((value, tape.backward(loss)?.into_vec()))
}

/// Loss of one pair without gradients.
pub fn pair_loss(params: &ModelParams, ctx: &LossContext<'_>, trajectories: &[Trajectory], pair: SamplePair) -> Result<f64> {
    let traj = &trajectories[pair.trajectory];
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let loss = record_pair(&mut tape, &vars, ctx, traj, pair)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Mean loss and mean gradient over a batch. Per-pair work may run in
/// parallel; results are reduced in batch order.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    ctx: &LossContext<'_>,
    trajectories: &[Trajectory],
    batch: &[SamplePair],
) -> Result<(Vec<f64>, Vec<DenseMatrix>)> {
    let results: Vec<Result<(f64, Vec<DenseMatrix>)>> = batch
        .par_iter()
        .map(|&pair| pair_loss_and_grad(params, ctx, trajectories, pair))
        .collect();
    let mut losses = Vec::with_capacity(batch.len());
    let mut total: Option<Vec<DenseMatrix>> = None;
    for r in results {
        let (l, g) = r?;
        losses.push(l);
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (a, gi) in acc.iter_mut().zip(&g) {
                    a.add_assign(gi)?;
                }
            }
        }
    }
    let mut total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let inv = 1.0 / batch.len() as f64;
    for g in &mut total {
        g.scale_in_place(inv);
    }
    Ok((losses, total))
}

/// Mean loss over `pairs` with fixed parameters.
pub fn evaluate_loss(
    params: &ModelParams,
    ctx: &LossContext<'_>,
    trajectories: &[Trajectory],
    pairs: &[SamplePair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to evaluate".into()));
    }
    let losses: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&p| pair_loss(params, ctx, trajectories, p))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub model_config: ModelConfig,
    pub history: Vec<EpochRecord>,
    /// Training pairs per epoch.
    pub pairs_per_epoch: usize,
}

impl TrainOutcome {
    /// Text log: one `epoch lr train_loss val_loss` line per epoch.
    pub fn history_text(&self) -> String {
        let mut out = String::from("# epoch lr train_loss val_loss\n");
        for r in &self.history {
            out.push_str(&format!("{} {:e} {:e} {:e}\n", r.epoch, r.lr, r.train_loss, r.val_loss));
        }
        out
    }
}

/// Trains one shared-parameter emulator over every horizon in
/// `config.horizons`.
pub fn train(
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    stats: &NormStats,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut pairs = enumerate_dataset_pairs(train_set, &config.horizons)?;
    let val_pairs = enumerate_dataset_pairs(val_set, &config.horizons)?;
    if pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::InvalidArgument("training and validation pair sets must be non-empty".into()));
    }
    let model = config.model_config(stats.context_width());
    let ctx = LossContext {
        model: &model,
        stats,
        horizons: &config.horizons,
        t_scale: config.t_scale,
        lambda_v: config.lambda_v,
        lambda_h: config.lambda_h,
    };
    let mut params = init_params(config.seed, &model);
    let mut adam = AdamState::new(&params.matrices());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);
    info!(
        "training {} horizons={} pairs={} val_pairs={} params={}",
        config.epochs,
        config.horizons,
        pairs.len(),
        val_pairs.len(),
        params.parameter_count()
    );

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr0);
        pairs.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in pairs.chunks(config.batch_size).enumerate() {
            let (losses, grads) = batch_loss_and_grad(&params, &ctx, train_set, batch)?;
            if let Some(k) = losses.iter().position(|l| !l.is_finite()) {
                let p = batch[k];
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {b}, pair (trajectory {}, t={}, h={})",
                    p.trajectory, p.t, p.h
                )));
            }
            loss_sum += losses.iter().sum::<f64>();
            adam_step(&mut params.matrices_mut(), &grads, &mut adam, lr, &config.adam)?;
        }
        let train_loss = loss_sum / pairs.len() as f64;
        let val_loss = evaluate_loss(&params, &ctx, val_set, &val_pairs)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            best_epoch = epoch;
        }
        debug!("epoch {epoch} lr {lr:.3e} train {train_loss:.6e} val {val_loss:.6e}");
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    info!("best validation loss {best_val:.6e} at epoch {best_epoch}");
    Ok(TrainOutcome {
        best,
        best_epoch,
        model_config: model,
        history,
        pairs_per_epoch: pairs.len(),
    })
}
