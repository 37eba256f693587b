//! Greedy descending-horizon rollout: planning and execution.
//!
//! Months `1..=t0` are observed. For each horizon from largest to smallest
//! the planner scans anchors `t_in = 1, 2, ...` and emits a step whenever
//! `t_in` is known and `t_out = t_in + h` lies in `(t0, t1]` and is still
//! unfilled. A filled target is never revisited.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::dataset::{normalized_context, NormStats, Trajectory};
use crate::error::{Error, Result};
use crate::horizon::HorizonSet;
use crate::model::{forward, reconstruct, ModelConfig, ModelInput, ModelParams};
use crate::numeric::DenseMatrix;

/// Whether targets filled during a horizon's scan may anchor later steps of
/// that same scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    /// Fills are usable immediately, so one horizon can chain across the
    /// whole window.
    #[default]
    Chained,
    /// Each pass only anchors on states known when the pass began. The unit
    /// horizon always chains so that every target is reached.
    Frozen,
}

impl FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chained" => Ok(Self::Chained),
            "frozen" => Ok(Self::Frozen),
            other => Err(Error::InvalidArgument(format!("unknown scan mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RolloutStep {
    pub t_in: usize,
    pub h: usize,
    pub t_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolloutPlan {
    t0: usize,
    t1: usize,
    steps: Vec<RolloutStep>,
    /// Indexed by month; entry 0 unused, observed months are 0.
    depth: Vec<usize>,
}

impl RolloutPlan {
    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn steps(&self) -> &[RolloutStep] {
        &self.steps
    }

    /// Chained model applications needed to reach month `t`.
    pub fn depth(&self, t: usize) -> usize {
        self.depth[t]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Re-derives every plan invariant from the step list.
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidData(format!("rollout plan: {m}")));
        let mut known = vec![false; self.t1 + 1];
        let mut depth = vec![0usize; self.t1 + 1];
        known[1..=self.t0].iter_mut().for_each(|k| *k = true);
        for (i, s) in self.steps.iter().enumerate() {
            if s.t_in + s.h != s.t_out || s.h == 0 {
                return fail(format!("step {i} is inconsistent: {s:?}"));
            }
            if s.t_out <= self.t0 || s.t_out > self.t1 {
                return fail(format!("step {i} targets month {} outside the window", s.t_out));
            }
            if !known[s.t_in] {
                return fail(format!("step {i} anchors on unknown month {}", s.t_in));
            }
            if known[s.t_out] {
                return fail(format!("month {} filled twice", s.t_out));
            }
            known[s.t_out] = true;
            depth[s.t_out] = depth[s.t_in] + 1;
        }
        if let Some(t) = (1..=self.t1).find(|&t| !known[t]) {
            return fail(format!("month {t} never filled"));
        }
        if depth != self.depth {
            return fail("depth table disagrees with the step list".into());
        }
        Ok(())
    }

    /// Audit text: a header, then one `t_in h t_out depth` line per step.
    pub fn audit_text(&self) -> String {
        let mut out = format!(
            "# t0={} t1={} steps={} max_depth={}\n# t_in h t_out depth\n",
            self.t0,
            self.t1,
            self.steps.len(),
            self.max_depth()
        );
        for s in &self.steps {
            let _ = writeln!(out, "{} {} {} {}", s.t_in, s.h, s.t_out, self.depth[s.t_out]);
        }
        out
    }
}

/// Plans a forecast of months `t0 + 1 ..= t1` from observed months `1..=t0`.
pub fn plan_rollout(t0: usize, t1: usize, horizons: &HorizonSet, mode: ScanMode) -> Result<RolloutPlan> {
    if !horizons.contains(1) {
        return Err(Error::InvalidArgument(format!("horizon set {horizons} lacks 1")));
    }
    if t0 < 1 {
        return Err(Error::InvalidArgument("t0 must be at least 1".into()));
    }
    if t1 <= t0 {
        return Err(Error::InvalidArgument(format!("t1={t1} must exceed t0={t0}")));
    }
    let mut known = vec![false; t1 + 1];
    let mut depth = vec![0usize; t1 + 1];
    known[1..=t0].iter_mut().for_each(|k| *k = true);
    let mut steps = Vec::with_capacity(t1 - t0);
    for h in horizons.iter().rev() {
        if h > t1 - 1 {
            continue;
        }
        let frozen = (mode == ScanMode::Frozen && h != 1).then(|| known.clone());
        for t_in in 1..=t1 - h {
            let t_out = t_in + h;
            let anchor_known = frozen.as_ref().map_or(known[t_in], |f| f[t_in]);
            if anchor_known && t_out > t0 && !known[t_out] {
                known[t_out] = true;
                depth[t_out] = depth[t_in] + 1;
                steps.push(RolloutStep { t_in, h, t_out });
            }
        }
    }
    Ok(RolloutPlan { t0, t1, steps, depth })
}

/// Predicted prognostic states in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub t0: usize,
    pub t1: usize,
    /// Months `t0 + 1 ..= t1`, each `N × 3`.
    pub states: Vec<DenseMatrix>,
}

impl Forecast {
    /// State at month `t ∈ (t0, t1]`.
    pub fn state(&self, t: usize) -> &DenseMatrix {
        &self.states[t - self.t0 - 1]
    }

    /// Full-length trajectory: observed months `1..=t0` from `truth`, then
    /// the forecast.
    pub fn to_trajectory(&self, truth: &Trajectory, scenario_id: impl Into<String>) -> Result<Trajectory> {
        let mut frames = Vec::with_capacity(self.t1);
        for t in 1..=self.t0 {
            frames.push(truth.prognostic(t)?);
        }
        frames.extend(self.states.iter().cloned());
        truth.with_prognostic_frames(scenario_id, &frames)
    }
}

/// Everything `execute_rollout` needs besides the plan and trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Emulator<'a> {
    pub params: &'a ModelParams,
    pub config: &'a ModelConfig,
    pub stats: &'a NormStats,
    /// Horizon set the model was trained with; fixes `h_norm`.
    pub horizons: &'a HorizonSet,
    pub t_scale: f64,
}

/// Runs `plan` on `traj`. Anchors come from observed states for months
/// `≤ t0` and from earlier predictions otherwise; context is always the
/// true context at the anchor month.
pub fn execute_rollout(emulator: &Emulator<'_>, traj: &Trajectory, plan: &RolloutPlan) -> Result<Forecast> {
    if plan.t1 > traj.steps() {
        return Err(Error::InvalidArgument(format!(
            "plan reaches month {} but '{}' has {} months",
            plan.t1,
            traj.scenario_id(),
            traj.steps()
        )));
    }
    let stats = emulator.stats;
    // normalized and physical state per month, filled as the plan proceeds
    let mut normalized: Vec<Option<DenseMatrix>> = vec![None; plan.t1 + 1];
    let mut physical: Vec<Option<DenseMatrix>> = vec![None; plan.t1 + 1];
    for step in &plan.steps {
        if !emulator.horizons.contains(step.h) {
            return Err(Error::InvalidArgument(format!(
                "plan uses horizon {} outside the trained set {}",
                step.h, emulator.horizons
            )));
        }
        if step.t_in <= plan.t0 && normalized[step.t_in].is_none() {
            normalized[step.t_in] = Some(stats.normalize_prognostic(&traj.prognostic(step.t_in)?));
        }
        let anchor = normalized[step.t_in]
            .clone()
            .ok_or_else(|| Error::InvalidData(format!("anchor month {} unavailable at {step:?}", step.t_in)))?;
        let input = ModelInput::new(
            traj.mesh(),
            anchor.clone(),
            normalized_context(traj, step.t_in, stats)?,
            step.t_in as f64 / emulator.t_scale,
            emulator.horizons.encode(step.h),
        )?;
        let delta = forward(emulator.params, emulator.config, &input)?;
        let next = reconstruct(&anchor, &delta)?;
        if !next.is_finite() {
            return Err(Error::Numerical(format!("non-finite forecast at month {}", step.t_out)));
        }
        physical[step.t_out] = Some(stats.denormalize_prognostic(&next));
        normalized[step.t_out] = Some(next);
    }
    let states = (plan.t0 + 1..=plan.t1)
        .map(|t| physical[t].take().ok_or_else(|| Error::InvalidData(format!("month {t} never forecast"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forecast {
        t0: plan.t0,
        t1: plan.t1,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(v: &[usize]) -> HorizonSet {
        HorizonSet::new(v.iter().copied()).unwrap()
    }

    #[test]
    fn unit_chain() {
        let plan = plan_rollout(2, 4, &hs(&[1]), ScanMode::Chained).unwrap();
        let got: Vec<_> = plan.steps().iter().map(|s| (s.t_in, s.h, s.t_out)).collect();
        assert_eq!(got, vec![(2, 1, 3), (3, 1, 4)]);
        assert_eq!(plan.max_depth(), 2);
        plan.check().unwrap();
    }

    #[test]
    fn default_window_uses_only_the_long_jump() {
        let plan = plan_rollout(60, 240, &hs(&[1, 15]), ScanMode::Chained).unwrap();
        assert_eq!(plan.steps().len(), 180);
        assert!(plan.steps().iter().all(|s| s.h == 15));
        assert_eq!(plan.max_depth(), 12);
        assert_eq!(plan.steps()[0], RolloutStep { t_in: 46, h: 15, t_out: 61 });
        plan.check().unwrap();
    }

    #[test]
    fn four_horizon_window() {
        let plan = plan_rollout(60, 240, &hs(&[1, 6, 15, 30]), ScanMode::Chained).unwrap();
        plan.check().unwrap();
        assert_eq!(plan.steps().len(), 180);
        assert!(plan.max_depth() <= 6);
    }

    #[test]
    fn frozen_scan_cannot_chain_long_jumps() {
        let plan = plan_rollout(60, 240, &hs(&[1, 15]), ScanMode::Frozen).unwrap();
        plan.check().unwrap();
        let long = plan.steps().iter().filter(|s| s.h == 15).count();
        assert_eq!(long, 15);
        assert!(plan.max_depth() > 12);
    }

    #[test]
    fn argument_errors() {
        assert!(plan_rollout(5, 5, &hs(&[1]), ScanMode::Chained).is_err());
        assert!(plan_rollout(0, 5, &hs(&[1]), ScanMode::Chained).is_err());
        assert!(plan_rollout(1, 5, &hs(&[2, 3]), ScanMode::Chained).is_err());
    }

    #[test]
    fn oversized_horizon_is_skipped() {
        let plan = plan_rollout(1, 3, &hs(&[1, 50]), ScanMode::Chained).unwrap();
        plan.check().unwrap();
        assert_eq!(plan.steps().len(), 2);
    }

    #[test]
    fn check_rejects_tampering() {
        let mut plan = plan_rollout(2, 4, &hs(&[1]), ScanMode::Chained).unwrap();
        plan.steps.swap(0, 1);
        assert!(plan.check().is_err());
    }

    #[test]
    fn audit_lines() {
        let plan = plan_rollout(2, 4, &hs(&[1]), ScanMode::Chained).unwrap();
        let text = plan.audit_text();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, vec!["2 1 3 1", "3 1 4 2"]);
    }
}
