//! Trajectory storage, normalization, splits and training-pair assembly.
//!
//! Time indices are 1-based throughout: a trajectory of `T` months holds
//! states `X_1 ..= X_T`.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use sha2::{Digest, Sha256};

use crate::binio;
use crate::error::{Error, Result};
use crate::graph::MeshGraph;
use crate::horizon::HorizonSet;
use crate::model::{ModelInput, PROGNOSTIC_CHANNELS};
use crate::numeric::DenseMatrix;

/// Channel indices of the standard state layout.
pub mod channel {
    pub const VX: usize = 0;
    pub const VY: usize = 1;
    pub const THICKNESS: usize = 2;
    pub const SURFACE: usize = 3;
    pub const BASE: usize = 4;
    pub const FLOATING: usize = 5;
    pub const SPEED: usize = 6;
}

/// Names of the standard state channels, in storage order.
pub const STATE_CHANNELS: [&str; 7] = ["vx", "vy", "thickness", "surface", "base", "floating_ratio", "speed"];
/// Names of the standard static node features.
pub const STATIC_FEATURES: [&str; 2] = ["melt_rate", "smb"];

const TRAJ_MAGIC: &[u8; 8] = b"HZGNTRAJ";
const TRAJ_VERSION: u32 = 1;
const KIND: &str = "trajectory";

/// One scenario's time series of node states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    mesh: Arc<MeshGraph>,
    scenario_id: String,
    melt_rate: f64,
    channel_names: Vec<String>,
    static_names: Vec<String>,
    static_features: DenseMatrix,
    steps: usize,
    states: Vec<f64>,
}

impl Trajectory {
    /// `states` is laid out `(t, n, c)` row-major with `t` from 1 to `steps`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: Arc<MeshGraph>,
        scenario_id: impl Into<String>,
        melt_rate: f64,
        channel_names: Vec<String>,
        static_names: Vec<String>,
        static_features: DenseMatrix,
        steps: usize,
        states: Vec<f64>,
    ) -> Result<Self> {
        let n = mesh.node_count();
        let c = channel_names.len();
        if c < PROGNOSTIC_CHANNELS {
            return Err(Error::InvalidData(format!("need at least 3 channels, got {c}")));
        }
        for (i, expected) in STATE_CHANNELS.iter().take(PROGNOSTIC_CHANNELS).enumerate() {
            if channel_names[i] != *expected {
                return Err(Error::InvalidData(format!(
                    "channel {i} must be '{expected}', got '{}'",
                    channel_names[i]
                )));
            }
        }
        if static_features.rows() != n || static_features.cols() != static_names.len() {
            return Err(Error::dims(
                "Trajectory static features",
                format!("{n}x{}", static_names.len()),
                format!("{}x{}", static_features.rows(), static_features.cols()),
            ));
        }
        if steps == 0 {
            return Err(Error::InvalidData("trajectory has no time steps".into()));
        }
        if states.len() != steps * n * c {
            return Err(Error::dims("Trajectory states", steps * n * c, states.len()));
        }
        if !melt_rate.is_finite() {
            return Err(Error::InvalidData("non-finite melt rate".into()));
        }
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            let t = pos / (n * c) + 1;
            return Err(Error::InvalidData(format!("non-finite state at month {t}")));
        }
        let traj = Self {
            mesh,
            scenario_id: scenario_id.into(),
            melt_rate,
            channel_names,
            static_names,
            static_features,
            steps,
            states,
        };
        traj.check_diagnostics()?;
        Ok(traj)
    }

    fn check_diagnostics(&self) -> Result<()> {
        let idx = |name: &str| self.channel_names.iter().position(|c| c == name);
        if let Some(f) = idx("floating_ratio") {
            for t in 1..=self.steps {
                for n in 0..self.nodes() {
                    let v = self.value(t, n, f);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidData(format!(
                            "floating ratio {v} outside [0, 1] at month {t}, node {n}"
                        )));
                    }
                }
            }
        }
        if let Some(s) = idx("speed") {
            for t in 1..=self.steps {
                for n in 0..self.nodes() {
                    let (vx, vy) = (self.value(t, n, channel::VX), self.value(t, n, channel::VY));
                    let speed = self.value(t, n, s);
                    let expect = vx.hypot(vy);
                    if (speed - expect).abs() > 1e-9 * expect.max(1.0) {
                        return Err(Error::InvalidData(format!(
                            "speed channel {speed} disagrees with components ({expect}) at month {t}, node {n}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> &MeshGraph {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<MeshGraph> {
        &self.mesh
    }

    pub fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    pub fn melt_rate(&self) -> f64 {
        self.melt_rate
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.mesh.node_count()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn static_names(&self) -> &[String] {
        &self.static_names
    }

    pub fn static_features(&self) -> &DenseMatrix {
        &self.static_features
    }

    fn check_month(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::InvalidArgument(format!("month {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, t: usize, node: usize, c: usize) -> f64 {
        let (n, cs) = (self.nodes(), self.channels());
        self.states[((t - 1) * n + node) * cs + c]
    }

    /// All channels at month `t` as an `N × C` slice.
    pub fn frame(&self, t: usize) -> Result<&[f64]> {
        self.check_month(t)?;
        let len = self.nodes() * self.channels();
        Ok(&self.states[(t - 1) * len..t * len])
    }

    /// Physical `(V_x, V_y, H)` at month `t`.
    pub fn prognostic(&self, t: usize) -> Result<DenseMatrix> {
        let frame = self.frame(t)?;
        let c = self.channels();
        let data = frame
            .chunks_exact(c)
            .flat_map(|row| row[..PROGNOSTIC_CHANNELS].iter().copied())
            .collect();
        Ok(DenseMatrix::from_vec_unchecked(self.nodes(), PROGNOSTIC_CHANNELS, data))
    }

    /// Raw `(t, n, c)` state buffer.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Serializes the trajectory container.
    ///
    /// Layout (little-endian): 8-byte magic `HZGNTRAJ`, `u32` version (1),
    /// `u32` reserved (0); scenario id (`u32` length + UTF-8); `f64` melt
    /// rate; `u64` T, `u64` N, `u64` C; C channel names; `u64` S and S
    /// static feature names; N×S `f64` static features; 32-byte SHA-256 of
    /// the mesh container; T×N×C `f64` states in `(t, n, c)` order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, TRAJ_MAGIC, TRAJ_VERSION)?;
        binio::write_str(w, &self.scenario_id)?;
        binio::write_f64(w, self.melt_rate)?;
        binio::write_u64(w, self.steps as u64)?;
        binio::write_u64(w, self.nodes() as u64)?;
        binio::write_u64(w, self.channels() as u64)?;
        for name in &self.channel_names {
            binio::write_str(w, name)?;
        }
        binio::write_u64(w, self.static_names.len() as u64)?;
        for name in &self.static_names {
            binio::write_str(w, name)?;
        }
        binio::write_f64s(w, self.static_features.data())?;
        w.write_all(&self.mesh.content_hash())?;
        binio::write_f64s(w, &self.states)?;
        Ok(())
    }

    /// Reads a trajectory and checks that it was written against `mesh`.
    pub fn read_from<R: Read>(r: &mut R, mesh: Arc<MeshGraph>) -> Result<Self> {
        binio::read_header(r, KIND, TRAJ_MAGIC, TRAJ_VERSION)?;
        let scenario_id = binio::read_str(r, KIND)?;
        let melt_rate = binio::read_f64(r, KIND)?;
        let steps = binio::read_len(r, KIND, 1 << 24)?;
        let n = binio::read_len(r, KIND, u32::MAX as u64)?;
        let c = binio::read_len(r, KIND, 1 << 12)?;
        if n != mesh.node_count() {
            return Err(Error::format(
                KIND,
                format!("trajectory has {n} nodes, mesh has {}", mesh.node_count()),
            ));
        }
        let channel_names = (0..c).map(|_| binio::read_str(r, KIND)).collect::<Result<Vec<_>>>()?;
        let s = binio::read_len(r, KIND, 1 << 12)?;
        let static_names = (0..s).map(|_| binio::read_str(r, KIND)).collect::<Result<Vec<_>>>()?;
        let static_data = binio::read_f64s(r, KIND, n * s)?;
        let hash: [u8; 32] = binio::read_bytes(r, KIND)?;
        if hash != mesh.content_hash() {
            return Err(Error::format(KIND, "mesh hash does not match the supplied mesh"));
        }
        let states = binio::read_f64s(r, KIND, steps * n * c)?;
        binio::expect_end(r, KIND)?;
        let static_features = if s == 0 {
            DenseMatrix::zeros(n, 0)
        } else {
            DenseMatrix::new(n, s, static_data)?
        };
        Self::new(mesh, scenario_id, melt_rate, channel_names, static_names, static_features, steps, states)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, mesh: Arc<MeshGraph>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice(), mesh)
    }

    /// Builds a 3-channel trajectory that keeps this scenario's metadata and
    /// static features but replaces the states with `prognostic` frames for
    /// months `1..=frames.len()`.
    pub fn with_prognostic_frames(&self, scenario_id: impl Into<String>, frames: &[DenseMatrix]) -> Result<Self> {
        let n = self.nodes();
        let mut states = Vec::with_capacity(frames.len() * n * PROGNOSTIC_CHANNELS);
        for f in frames {
            if f.shape() != (n, PROGNOSTIC_CHANNELS) {
                return Err(Error::dims("prognostic frame", format!("{n}x3"), format!("{:?}", f.shape())));
            }
            states.extend_from_slice(f.data());
        }
        Self::new(
            self.mesh.clone(),
            scenario_id,
            self.melt_rate,
            STATE_CHANNELS[..PROGNOSTIC_CHANNELS].iter().map(|s| s.to_string()).collect(),
            self.static_names.clone(),
            self.static_features.clone(),
            frames.len(),
            states,
        )
    }
}

/// Mean and standard deviation of one feature channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// The channel was constant; `std` was replaced by 1.
    pub degenerate: bool,
}

impl ChannelStats {
    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    fn from_values(name: &str, values: impl Iterator<Item = f64> + Clone) -> Self {
        let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
        let mean = sum / count as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        let std = var.sqrt();
        let degenerate = !(std > 1e-12 * mean.abs().max(1.0));
        if degenerate {
            warn!("channel '{name}' is constant over the training split; using std = 1");
        }
        Self {
            name: name.to_string(),
            mean,
            std: if degenerate { 1.0 } else { std },
            degenerate,
        }
    }
}

/// Per-channel z-score statistics over the training split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormStats {
    pub state: Vec<ChannelStats>,
    pub statics: Vec<ChannelStats>,
}

const STATS_HEADER: &str = "# horizon-gcn normalization statistics v1";

impl NormStats {
    /// Pools every node, month and trajectory. All trajectories must share
    /// one channel layout.
    pub fn compute(train: &[Trajectory]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot compute statistics of an empty split".into()))?;
        if let Some(bad) = train
            .iter()
            .find(|t| t.channel_names != first.channel_names || t.static_names != first.static_names)
        {
            return Err(Error::InvalidData(format!(
                "scenario '{}' has a different channel layout",
                bad.scenario_id
            )));
        }
        let c = first.channels();
        let state = (0..c)
            .map(|ch| {
                let values = train
                    .iter()
                    .flat_map(move |t| t.states.iter().skip(ch).step_by(c).copied());
                ChannelStats::from_values(&first.channel_names[ch], values)
            })
            .collect();
        let statics = (0..first.static_names.len())
            .map(|s| {
                let values = train
                    .iter()
                    .flat_map(move |t| (0..t.nodes()).map(move |n| t.static_features.get(n, s)));
                ChannelStats::from_values(&first.static_names[s], values)
            })
            .collect();
        Ok(Self { state, statics })
    }

    /// Context columns a trajectory with this layout produces.
    pub fn context_width(&self) -> usize {
        self.statics.len() + self.state.len().saturating_sub(PROGNOSTIC_CHANNELS)
    }

    pub fn normalize_prognostic(&self, physical: &DenseMatrix) -> DenseMatrix {
        let mut out = physical.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.state[c].normalize(*v);
            }
        }
        out
    }

    pub fn denormalize_prognostic(&self, normalized: &DenseMatrix) -> DenseMatrix {
        let mut out = normalized.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.state[c].denormalize(*v);
            }
        }
        out
    }

    fn check_layout(&self, traj: &Trajectory) -> Result<()> {
        let same_state = traj.channel_names.iter().eq(self.state.iter().map(|s| &s.name));
        let same_static = traj.static_names.iter().eq(self.statics.iter().map(|s| &s.name));
        if !(same_state && same_static) {
            return Err(Error::InvalidData(format!(
                "scenario '{}' does not match the normalization channel layout",
                traj.scenario_id
            )));
        }
        Ok(())
    }

    /// Self-describing text record: one `group name mean std degenerate`
    /// line per channel.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{STATS_HEADER}").unwrap();
        writeln!(out, "# group name mean std degenerate").unwrap();
        for (group, list) in [("state", &self.state), ("static", &self.statics)] {
            for s in list.iter() {
                writeln!(out, "{group} {} {:e} {:e} {}", s.name, s.mean, s.std, u8::from(s.degenerate)).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("normalization statistics", msg);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(STATS_HEADER) {
            return Err(bad("missing header line".into()));
        }
        let mut stats = Self {
            state: Vec::new(),
            statics: Vec::new(),
        };
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [group, name, mean, std, degenerate] = fields[..] else {
                return Err(bad(format!("line {}: expected 5 fields", lineno + 2)));
            };
            let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {}: bad number '{s}'", lineno + 2)));
            let entry = ChannelStats {
                name: name.to_string(),
                mean: parse(mean)?,
                std: parse(std)?,
                degenerate: degenerate == "1",
            };
            if !(entry.std > 0.0) || !entry.mean.is_finite() {
                return Err(bad(format!("line {}: invalid statistics", lineno + 2)));
            }
            match group {
                "state" => stats.state.push(entry),
                "static" => stats.statics.push(entry),
                other => return Err(bad(format!("line {}: unknown group '{other}'", lineno + 2))),
            }
        }
        if stats.state.len() < PROGNOSTIC_CHANNELS {
            return Err(bad("fewer than three state channels".into()));
        }
        Ok(stats)
    }

    /// SHA-256 of [`NormStats::to_text`].
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// One supervised `(anchor, horizon)` combination of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SamplePair {
    pub trajectory: usize,
    /// 1-based anchor month.
    pub t: usize,
    pub h: usize,
}

/// All `(t, h)` with `h ∈ H` and `1 ≤ t ≤ T − h`, ordered by `h` then `t`.
/// Horizons that do not fit contribute nothing.
pub fn enumerate_pairs(trajectory: usize, steps: usize, horizons: &HorizonSet) -> Result<Vec<SamplePair>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("trajectory length {steps} < 2")));
    }
    let mut pairs = Vec::with_capacity(horizons.pair_count(steps));
    for h in horizons.iter() {
        for t in 1..=steps.saturating_sub(h) {
            pairs.push(SamplePair { trajectory, t, h });
        }
    }
    Ok(pairs)
}

/// Pairs for every trajectory, concatenated in trajectory order.
pub fn enumerate_dataset_pairs(trajectories: &[Trajectory], horizons: &HorizonSet) -> Result<Vec<SamplePair>> {
    let mut all = Vec::new();
    for (i, traj) in trajectories.iter().enumerate() {
        all.extend(enumerate_pairs(i, traj.steps(), horizons)?);
    }
    Ok(all)
}

/// Data partition a scenario belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

pub const VALIDATION_MELT_RATES: [u32; 4] = [0, 20, 40, 60];
pub const TEST_MELT_RATES: [u32; 4] = [10, 30, 50, 70];

/// Scenario grid melt rates: 0, 2, …, 70 m a⁻¹.
pub fn scenario_melt_rates() -> Vec<f64> {
    (0..=35).map(|i| 2.0 * i as f64).collect()
}

/// Partition by melt rate. Rates outside `{0, 2, …, 70}` are rejected.
pub fn classify_melt_rate(rate: f64) -> Result<Partition> {
    let rounded = rate.round();
    if (rate - rounded).abs() > 1e-9 || !(0.0..=70.0).contains(&rounded) || !(rounded as u32).is_multiple_of(2) {
        return Err(Error::InvalidData(format!("melt rate {rate} is not on the 0..=70 step-2 grid")));
    }
    let r = rounded as u32;
    Ok(if VALIDATION_MELT_RATES.contains(&r) {
        Partition::Validation
    } else if TEST_MELT_RATES.contains(&r) {
        Partition::Test
    } else {
        Partition::Train
    })
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

pub fn split_by_melt_rate(trajectories: Vec<Trajectory>) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    for traj in trajectories {
        match classify_melt_rate(traj.melt_rate())? {
            Partition::Train => split.train.push(traj),
            Partition::Validation => split.validation.push(traj),
            Partition::Test => split.test.push(traj),
        }
    }
    Ok(split)
}

/// Normalized prognostic state at month `t`.
pub fn normalized_state(traj: &Trajectory, t: usize, stats: &NormStats) -> Result<DenseMatrix> {
    stats.check_layout(traj)?;
    Ok(stats.normalize_prognostic(&traj.prognostic(t)?))
}

/// Normalized context at month `t`: static features, then every
/// non-prognostic state channel.
pub fn normalized_context(traj: &Trajectory, t: usize, stats: &NormStats) -> Result<DenseMatrix> {
    stats.check_layout(traj)?;
    let frame = traj.frame(t)?;
    let (n, c, s) = (traj.nodes(), traj.channels(), traj.static_names.len());
    let width = s + c - PROGNOSTIC_CHANNELS;
    if width == 0 {
        return Err(Error::InvalidData("trajectory carries no context features".into()));
    }
    let mut data = Vec::with_capacity(n * width);
    for node in 0..n {
        for (k, st) in stats.statics.iter().enumerate() {
            data.push(st.normalize(traj.static_features.get(node, k)));
        }
        let row = &frame[node * c..(node + 1) * c];
        for (st, &v) in stats.state[PROGNOSTIC_CHANNELS..].iter().zip(&row[PROGNOSTIC_CHANNELS..]) {
            data.push(st.normalize(v));
        }
    }
    Ok(DenseMatrix::from_vec_unchecked(n, width, data))
}

fn check_pair(traj: &Trajectory, t: usize, h: usize) -> Result<()> {
    if h == 0 || t == 0 || t + h > traj.steps() {
        return Err(Error::InvalidArgument(format!(
            "pair (t={t}, h={h}) invalid for a {}-month trajectory",
            traj.steps()
        )));
    }
    Ok(())
}

/// Model input for anchor `t` and horizon `h`. `t_scale` is the time
/// normalization denominator (`t_norm = t / t_scale`).
pub fn assemble_input<'a>(
    traj: &'a Trajectory,
    t: usize,
    h: usize,
    stats: &NormStats,
    horizons: &HorizonSet,
    t_scale: f64,
) -> Result<ModelInput<'a>> {
    check_pair(traj, t, h)?;
    if !horizons.contains(h) {
        return Err(Error::InvalidArgument(format!("horizon {h} not in {horizons}")));
    }
    ModelInput::new(
        traj.mesh(),
        normalized_state(traj, t, stats)?,
        normalized_context(traj, t, stats)?,
        t as f64 / t_scale,
        horizons.encode(h),
    )
}

/// Normalized increment `(X_{t+h} − X_t) / σ` on the prognostic channels.
pub fn residual_target(traj: &Trajectory, t: usize, h: usize, stats: &NormStats) -> Result<DenseMatrix> {
    check_pair(traj, t, h)?;
    stats.check_layout(traj)?;
    let (a, b) = (traj.prognostic(t)?, traj.prognostic(t + h)?);
    let mut out = b.sub(&a)?;
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v /= stats.state[c].std;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(n: usize) -> Arc<MeshGraph> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Arc::new(MeshGraph::build(n, &edges, (0..n).map(|i| [i as f64, 0.0]).collect()).unwrap())
    }

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    /// 3 nodes, 4 months, 4 channels (vx, vy, thickness, surface).
    fn toy(melt: f64, f: impl Fn(usize, usize, usize) -> f64) -> Trajectory {
        let (n, c, steps) = (3, 4, 4);
        let mut states = Vec::new();
        for t in 1..=steps {
            for node in 0..n {
                for ch in 0..c {
                    states.push(f(t, node, ch));
                }
            }
        }
        Trajectory::new(
            mesh(n),
            format!("toy-{melt}"),
            melt,
            names(&["vx", "vy", "thickness", "surface"]),
            names(&["melt_rate"]),
            DenseMatrix::filled(n, 1, melt),
            steps,
            states,
        )
        .unwrap()
    }

    fn ramp(t: usize, n: usize, c: usize) -> f64 {
        (t * t) as f64 * 0.5 + n as f64 * 1.3 - c as f64 * 0.7
    }

    #[test]
    fn pair_counts() {
        let h1 = HorizonSet::new([1]).unwrap();
        assert_eq!(enumerate_pairs(0, 240, &h1).unwrap().len(), 239);
        let h3 = HorizonSet::new([1, 15, 30]).unwrap();
        assert_eq!(enumerate_pairs(0, 240, &h3).unwrap().len(), 674);
        assert_eq!(
            enumerate_pairs(7, 2, &h1).unwrap(),
            vec![SamplePair { trajectory: 7, t: 1, h: 1 }]
        );
        let big = HorizonSet::new([1, 5]).unwrap();
        assert_eq!(enumerate_pairs(0, 4, &big).unwrap().len(), 3);
        assert!(enumerate_pairs(0, 1, &h1).is_err());
    }

    #[test]
    fn pair_order_is_horizon_then_anchor() {
        let hs = HorizonSet::new([2, 1]).unwrap();
        let pairs = enumerate_pairs(0, 4, &hs).unwrap();
        let th: Vec<_> = pairs.iter().map(|p| (p.h, p.t)).collect();
        assert_eq!(th, vec![(1, 1), (1, 2), (1, 3), (2, 1), (2, 2)]);
    }

    #[test]
    fn melt_rate_partitions() {
        assert_eq!(classify_melt_rate(30.0).unwrap(), Partition::Test);
        assert_eq!(classify_melt_rate(2.0).unwrap(), Partition::Train);
        assert_eq!(classify_melt_rate(40.0).unwrap(), Partition::Validation);
        assert!(classify_melt_rate(3.0).is_err());
        assert!(classify_melt_rate(72.0).is_err());
        assert!(classify_melt_rate(-2.0).is_err());
        let counts = scenario_melt_rates().iter().fold([0; 3], |mut acc, &r| {
            acc[classify_melt_rate(r).unwrap() as usize] += 1;
            acc
        });
        assert_eq!(counts, [28, 4, 4]);
    }

    #[test]
    fn stats_zero_mean_and_round_trip() {
        let a = toy(2.0, ramp);
        let stats = NormStats::compute(std::slice::from_ref(&a)).unwrap();
        // a channel equal to its mean normalizes to 0
        let s = &stats.state[1];
        assert_eq!(s.normalize(s.mean), 0.0);
        let x = a.prognostic(3).unwrap();
        let back = stats.denormalize_prognostic(&stats.normalize_prognostic(&x));
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn constant_channel_is_flagged() {
        let a = toy(4.0, |t, n, c| if c == 3 { 5.0 } else { ramp(t, n, c) });
        let stats = NormStats::compute(&[a]).unwrap();
        assert!(stats.state[3].degenerate);
        assert_eq!(stats.state[3].std, 1.0);
        // melt rate is constant within a single scenario too
        assert!(stats.statics[0].degenerate);
    }

    #[test]
    fn stats_text_round_trip() {
        let stats = NormStats::compute(&[toy(2.0, ramp), toy(6.0, |t, n, c| ramp(t, n, c) * 1.7)]).unwrap();
        let text = stats.to_text();
        assert_eq!(NormStats::from_text(&text).unwrap(), stats);
        assert!(NormStats::from_text("junk").is_err());
    }

    #[test]
    fn assemble_encodes_time_and_horizon() {
        let a = toy(2.0, ramp);
        let stats = NormStats::compute(&[a.clone(), toy(8.0, ramp)]).unwrap();
        let hs = HorizonSet::new([1, 2]).unwrap();
        let input = assemble_input(&a, 2, 2, &stats, &hs, 4.0).unwrap();
        assert_eq!(input.h_norm, 1.0);
        assert_eq!(input.t_norm, 0.5);
        assert_eq!(input.context.cols(), 2);
        assert!(assemble_input(&a, 3, 2, &stats, &hs, 4.0).is_err());
        assert!(assemble_input(&a, 1, 3, &stats, &hs, 4.0).is_err());
    }

    #[test]
    fn residual_of_steady_trajectory_is_zero() {
        let a = toy(2.0, |_, n, c| (n + c) as f64);
        let b = toy(8.0, |_, n, c| (2 * n + c) as f64);
        let stats = NormStats::compute(&[a.clone(), b]).unwrap();
        let r = residual_target(&a, 1, 3, &stats).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert!(residual_target(&a, 1, 0, &stats).is_err());
    }

    #[test]
    fn residual_telescopes() {
        let a = toy(2.0, ramp);
        let stats = NormStats::compute(&[a.clone(), toy(8.0, |t, n, c| ramp(t, n, c) + 1.0)]).unwrap();
        let two = residual_target(&a, 1, 2, &stats).unwrap();
        let sum = residual_target(&a, 1, 1, &stats)
            .unwrap()
            .add(&residual_target(&a, 2, 1, &stats).unwrap())
            .unwrap();
        assert!(two.max_abs_diff(&sum) < 1e-12);
    }

    #[test]
    fn speed_channel_is_validated() {
        let n = 2;
        let m = mesh(n);
        let row = |vx: f64, vy: f64, speed: f64| vec![vx, vy, 1.0, 0.0, 0.0, 0.0, speed];
        let good: Vec<f64> = [row(3.0, 4.0, 5.0), row(0.0, 1.0, 1.0)].concat();
        let build = |states: Vec<f64>| {
            Trajectory::new(
                m.clone(),
                "s",
                0.0,
                names(&STATE_CHANNELS),
                vec![],
                DenseMatrix::zeros(n, 0),
                1,
                states,
            )
        };
        assert!(build(good).is_ok());
        let bad: Vec<f64> = [row(3.0, 4.0, 5.1), row(0.0, 1.0, 1.0)].concat();
        assert!(matches!(build(bad), Err(Error::InvalidData(_))));
    }

    #[test]
    fn container_round_trip() {
        let a = toy(12.0, ramp);
        let bytes = a.to_bytes();
        let back = Trajectory::read_from(&mut bytes.as_slice(), a.mesh_arc().clone()).unwrap();
        assert_eq!(back, a);
        let other = mesh(3);
        let wrong = Arc::new(MeshGraph::build(3, &[(0, 2)], other.positions().to_vec()).unwrap());
        assert!(Trajectory::read_from(&mut bytes.as_slice(), wrong).is_err());
    }
}
