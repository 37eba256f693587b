//! Forecast error in physical units: per-month RMSE and window RMSE pooled
//! over nodes, months and trajectories.

use std::fmt::Write as _;

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::model::PROGNOSTIC_CHANNELS;
use crate::numeric::DenseMatrix;

/// Channel order of every `[f64; 3]` below.
pub const RMSE_CHANNELS: [&str; 3] = ["vx", "vy", "thickness"];

/// Window RMSE `(V_x, V_y, H)` reported for the one-step autoregressive
/// baseline on the full-scale glacier dataset, months 61..=240.
pub const REFERENCE_ONE_STEP: [f64; 3] = [108.77, 207.05, 30.91];
/// Same protocol, horizon set `{1, 15}`.
pub const REFERENCE_ONE_FIFTEEN: [f64; 3] = [43.83, 70.85, 13.22];

/// One trajectory's forecast and truth over a window: one `N × ≥3` frame
/// per month, prognostic channels first.
#[derive(Debug, Clone, Copy)]
pub struct WindowPair<'a> {
    pub pred: &'a [DenseMatrix],
    pub truth: &'a [DenseMatrix],
}

fn check_pair(pair: &WindowPair<'_>) -> Result<usize> {
    if pair.pred.len() != pair.truth.len() {
        return Err(Error::dims("window months", pair.truth.len(), pair.pred.len()));
    }
    let n = pair.truth.first().map_or(0, DenseMatrix::rows);
    for (p, t) in pair.pred.iter().zip(pair.truth) {
        if p.rows() != n || t.rows() != n || p.cols() < PROGNOSTIC_CHANNELS || t.cols() < PROGNOSTIC_CHANNELS {
            return Err(Error::dims(
                "window frame",
                format!("{n}x>=3"),
                format!("{:?} vs {:?}", p.shape(), t.shape()),
            ));
        }
    }
    Ok(n)
}

/// Per-channel sum of squared errors over the nodes of one month.
fn month_sse(pred: &DenseMatrix, truth: &DenseMatrix) -> [f64; 3] {
    let mut sse = [0.0; 3];
    for r in 0..truth.rows() {
        let (p, t) = (pred.row(r), truth.row(r));
        for c in 0..PROGNOSTIC_CHANNELS {
            sse[c] += (p[c] - t[c]).powi(2);
        }
    }
    sse
}

fn root_mean(sse: [f64; 3], count: usize) -> [f64; 3] {
    sse.map(|s| (s / count as f64).sqrt())
}

/// `√(mean over nodes of squared error)` for each month and channel.
pub fn rmse_per_month(pair: WindowPair<'_>) -> Result<Vec<[f64; 3]>> {
    let n = check_pair(&pair)?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    Ok(pair
        .pred
        .iter()
        .zip(pair.truth)
        .map(|(p, t)| root_mean(month_sse(p, t), n))
        .collect())
}

/// Per-month RMSE pooled across trajectories, weighted by node count. All
/// windows must have the same length.
pub fn pooled_rmse_per_month(pairs: &[WindowPair<'_>]) -> Result<Vec<[f64; 3]>> {
    let first = pairs.first().ok_or_else(|| Error::InvalidArgument("no trajectories to pool".into()))?;
    let months = first.truth.len();
    let mut sse = vec![[0.0; 3]; months];
    let mut nodes = 0;
    for pair in pairs {
        let n = check_pair(pair)?;
        if pair.truth.len() != months {
            return Err(Error::dims("pooled window months", months, pair.truth.len()));
        }
        nodes += n;
        for (m, (p, t)) in pair.pred.iter().zip(pair.truth).enumerate() {
            let s = month_sse(p, t);
            for c in 0..3 {
                sse[m][c] += s[c];
            }
        }
    }
    if nodes == 0 || months == 0 {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    Ok(sse.into_iter().map(|s| root_mean(s, nodes)).collect())
}

/// Squared errors summed over every node, month and trajectory, divided by
/// the total node-month count, square-rooted.
pub fn pooled_rmse(pairs: &[WindowPair<'_>]) -> Result<[f64; 3]> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to pool".into()));
    }
    let mut sse = [0.0; 3];
    let mut count = 0;
    for pair in pairs {
        let n = check_pair(pair)?;
        count += n * pair.truth.len();
        for (p, t) in pair.pred.iter().zip(pair.truth) {
            let s = month_sse(p, t);
            for c in 0..3 {
                sse[c] += s[c];
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    Ok(root_mean(sse, count))
}

/// Prognostic frames of months `t0 + 1 ..= t1`.
pub fn window_frames(traj: &Trajectory, t0: usize, t1: usize) -> Result<Vec<DenseMatrix>> {
    if t1 <= t0 || t1 > traj.steps() {
        return Err(Error::InvalidArgument(format!(
            "window ({t0}, {t1}] invalid for '{}' with {} months",
            traj.scenario_id(),
            traj.steps()
        )));
    }
    (t0 + 1..=t1).map(|t| traj.prognostic(t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub t0: usize,
    pub t1: usize,
    /// Months `t0 + 1 ..= t1`.
    pub per_month: Vec<[f64; 3]>,
    /// Pooled over nodes, months and trajectories.
    pub window: [f64; 3],
}

impl RmseReport {
    pub fn compute(pairs: &[WindowPair<'_>], t0: usize, t1: usize) -> Result<Self> {
        let per_month = pooled_rmse_per_month(pairs)?;
        if per_month.len() != t1.saturating_sub(t0) {
            return Err(Error::dims("report window", t1.saturating_sub(t0), per_month.len()));
        }
        Ok(Self {
            t0,
            t1,
            per_month,
            window: pooled_rmse(pairs)?,
        })
    }

    /// Compares forecast and truth trajectories over `(t0, t1]`.
    pub fn from_trajectories(runs: &[(&Trajectory, &Trajectory)], t0: usize, t1: usize) -> Result<Self> {
        let frames = runs
            .iter()
            .map(|(pred, truth)| Ok((window_frames(pred, t0, t1)?, window_frames(truth, t0, t1)?)))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<WindowPair<'_>> = frames
            .iter()
            .map(|(p, t)| WindowPair { pred: p, truth: t })
            .collect();
        Self::compute(&pairs, t0, t1)
    }

    /// Plain mean of the per-month RMSE curve (differs from `window` unless
    /// the errors are constant in time).
    pub fn mean_of_months(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for m in &self.per_month {
            for c in 0..3 {
                acc[c] += m[c];
            }
        }
        acc.map(|a| a / self.per_month.len() as f64)
    }

    /// Month table followed by a window footer.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# month rmse_vx rmse_vy rmse_thickness\n");
        out.push_str(&self.series_text());
        let w = self.window;
        let m = self.mean_of_months();
        let _ = writeln!(
            out,
            "# window t0={} t1={} rmse_vx={:e} rmse_vy={:e} rmse_thickness={:e}",
            self.t0, self.t1, w[0], w[1], w[2]
        );
        let _ = writeln!(
            out,
            "# mean_of_months rmse_vx={:e} rmse_vy={:e} rmse_thickness={:e}",
            m[0], m[1], m[2]
        );
        out
    }

    /// `month vx vy thickness` rows only, for plotting.
    pub fn series_text(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.per_month.iter().enumerate() {
            let _ = writeln!(out, "{} {:e} {:e} {:e}", self.t0 + 1 + i, r[0], r[1], r[2]);
        }
        out
    }
}
