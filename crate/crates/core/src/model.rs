//! Horizon-conditioned residual graph-convolution emulator.
//!
//! Node features are the normalized prognostic state, the context channels,
//! and two broadcast scalars (normalized anchor time and horizon encoding).
//! Five graph-convolution layers `H ← σ(Â H W)` share parameters across all
//! horizons; the last layer is linear. Two affine heads map the final
//! embeddings to velocity and thickness increments, which are added back
//! onto the anchor state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::graph::MeshGraph;
use crate::numeric::{Activation, DenseMatrix, Tape, Var};

pub const GCN_LAYERS: usize = 5;
/// `V_x`, `V_y`, `H`.
pub const PROGNOSTIC_CHANNELS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 128;

/// Which velocity information enters the node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VelocityInput {
    /// `V_x` and `V_y` from the prognostic state (plus any magnitude channel
    /// carried in the context).
    #[default]
    Components,
    /// Drop the components; only the context magnitude channel remains.
    MagnitudeOnly,
}

impl VelocityInput {
    pub fn code(self) -> u64 {
        match self {
            VelocityInput::Components => 0,
            VelocityInput::MagnitudeOnly => 1,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(VelocityInput::Components),
            1 => Some(VelocityInput::MagnitudeOnly),
            _ => None,
        }
    }

    fn state_columns(self) -> usize {
        match self {
            VelocityInput::Components => PROGNOSTIC_CHANNELS,
            VelocityInput::MagnitudeOnly => 1,
        }
    }
}

impl std::str::FromStr for VelocityInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "components" => Ok(VelocityInput::Components),
            "magnitude-only" | "magnitude_only" => Ok(VelocityInput::MagnitudeOnly),
            other => Err(Error::InvalidArgument(format!("unknown velocity input '{other}'"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Context feature columns per node (static plus diagnostic channels).
    pub context_width: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub velocity_input: VelocityInput,
}

impl ModelConfig {
    pub fn new(context_width: usize, hidden: usize) -> Self {
        Self {
            context_width,
            hidden,
            activation: Activation::Relu,
            velocity_input: VelocityInput::Components,
        }
    }

    /// Width of the assembled feature matrix.
    pub fn input_width(&self) -> usize {
        self.velocity_input.state_columns() + self.context_width + 2
    }
}

/// An affine map `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

/// The single shared parameter set used for every horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gcn_weights: Vec<DenseMatrix>,
    pub velocity_head: Linear,
    pub thickness_head: Linear,
}

/// Number of matrices in [`ModelParams::matrices`].
pub const PARAM_MATRICES: usize = GCN_LAYERS + 4;

impl ModelParams {
    /// Canonical ordering: GCN weights, velocity weight, velocity bias,
    /// thickness weight, thickness bias.
    pub fn matrices(&self) -> Vec<&DenseMatrix> {
        let mut out: Vec<&DenseMatrix> = self.gcn_weights.iter().collect();
        out.extend([
            &self.velocity_head.weight,
            &self.velocity_head.bias,
            &self.thickness_head.weight,
            &self.thickness_head.bias,
        ]);
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = self.gcn_weights.iter_mut().collect();
        out.extend([
            &mut self.velocity_head.weight,
            &mut self.velocity_head.bias,
            &mut self.thickness_head.weight,
            &mut self.thickness_head.bias,
        ]);
        out
    }

    pub fn to_matrices(&self) -> Vec<DenseMatrix> {
        self.matrices().into_iter().cloned().collect()
    }

    pub fn from_matrices(mut ms: Vec<DenseMatrix>) -> Result<Self> {
        if ms.len() != PARAM_MATRICES {
            return Err(Error::dims("ModelParams::from_matrices", PARAM_MATRICES, ms.len()));
        }
        let tail = ms.split_off(GCN_LAYERS);
        let [vw, vb, tw, tb]: [DenseMatrix; 4] = tail.try_into().expect("four head matrices");
        let params = Self {
            gcn_weights: ms,
            velocity_head: Linear { weight: vw, bias: vb },
            thickness_head: Linear { weight: tw, bias: tb },
        };
        params.validate()?;
        Ok(params)
    }

    pub fn input_width(&self) -> usize {
        self.gcn_weights[0].rows()
    }

    pub fn hidden(&self) -> usize {
        self.gcn_weights[0].cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum()
    }

    /// Checks the layer chain `[D_in×D_h, D_h×D_h ×4, D_h×2 + 1×2, D_h×1 + 1×1]`.
    pub fn validate(&self) -> Result<()> {
        if self.gcn_weights.len() != GCN_LAYERS {
            return Err(Error::dims("ModelParams", GCN_LAYERS, self.gcn_weights.len()));
        }
        let d_h = self.hidden();
        for (l, w) in self.gcn_weights.iter().enumerate() {
            let expect_rows = if l == 0 { w.rows() } else { d_h };
            if w.rows() != expect_rows || w.cols() != d_h {
                return Err(Error::dims(
                    "ModelParams gcn layer",
                    format!("{expect_rows}x{d_h}"),
                    format!("{}x{}", w.rows(), w.cols()),
                ));
            }
        }
        let heads = [
            (&self.velocity_head, 2usize, "velocity head"),
            (&self.thickness_head, 1usize, "thickness head"),
        ];
        for (head, out, name) in heads {
            if head.weight.shape() != (d_h, out) || head.bias.shape() != (1, out) {
                return Err(Error::dims(
                    "ModelParams",
                    format!("{name} {d_h}x{out} + 1x{out}"),
                    format!("{:?} + {:?}", head.weight.shape(), head.bias.shape()),
                ));
            }
        }
        if !self.matrices().iter().all(|m| m.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Zeroes both heads, which turns the emulator into a persistence
    /// forecast.
    pub fn zero_heads(&mut self) {
        for head in [&mut self.velocity_head, &mut self.thickness_head] {
            head.weight.scale_in_place(0.0);
            head.bias.scale_in_place(0.0);
        }
    }
}

/// Glorot-uniform initialization; head biases start at zero.
pub fn init_params(seed: u64, config: &ModelConfig) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let bound = glorot_bound(rows, cols);
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
        DenseMatrix::from_vec_unchecked(rows, cols, data)
    };
    let d_h = config.hidden;
    let mut gcn_weights = Vec::with_capacity(GCN_LAYERS);
    gcn_weights.push(glorot(config.input_width(), d_h));
    for _ in 1..GCN_LAYERS {
        gcn_weights.push(glorot(d_h, d_h));
    }
    let velocity_head = Linear {
        weight: glorot(d_h, 2),
        bias: DenseMatrix::zeros(1, 2),
    };
    let thickness_head = Linear {
        weight: glorot(d_h, 1),
        bias: DenseMatrix::zeros(1, 1),
    };
    ModelParams {
        gcn_weights,
        velocity_head,
        thickness_head,
    }
}

/// `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Everything one emulator application sees.
#[derive(Debug, Clone)]
pub struct ModelInput<'a> {
    pub graph: &'a MeshGraph,
    /// Normalized `(V_x, V_y, H)` at the anchor time, `N × 3`.
    pub state: DenseMatrix,
    /// Normalized context features, `N × K`.
    pub context: DenseMatrix,
    pub t_norm: f64,
    pub h_norm: f64,
}

impl<'a> ModelInput<'a> {
    pub fn new(
        graph: &'a MeshGraph,
        state: DenseMatrix,
        context: DenseMatrix,
        t_norm: f64,
        h_norm: f64,
    ) -> Result<Self> {
        let n = graph.node_count();
        if state.shape() != (n, PROGNOSTIC_CHANNELS) {
            return Err(Error::dims(
                "ModelInput state",
                format!("{n}x{PROGNOSTIC_CHANNELS}"),
                format!("{}x{}", state.rows(), state.cols()),
            ));
        }
        if context.rows() != n {
            return Err(Error::dims("ModelInput context", n, context.rows()));
        }
        if !(0.0..=1.0).contains(&t_norm) {
            return Err(Error::InvalidArgument(format!("t_norm {t_norm} outside [0, 1]")));
        }
        if !(h_norm > 0.0 && h_norm <= 1.0) {
            return Err(Error::InvalidArgument(format!("h_norm {h_norm} outside (0, 1]")));
        }
        Ok(Self {
            graph,
            state,
            context,
            t_norm,
            h_norm,
        })
    }

    /// Per-node feature matrix `[state | context | t_norm | h_norm]`.
    pub fn features(&self, velocity_input: VelocityInput) -> Result<DenseMatrix> {
        let n = self.graph.node_count();
        let t_col = DenseMatrix::filled(n, 1, self.t_norm);
        let h_col = DenseMatrix::filled(n, 1, self.h_norm);
        match velocity_input {
            VelocityInput::Components => DenseMatrix::hconcat(&[&self.state, &self.context, &t_col, &h_col]),
            VelocityInput::MagnitudeOnly => {
                let thickness = self.state.slice_cols(2, 3)?;
                DenseMatrix::hconcat(&[&thickness, &self.context, &t_col, &h_col])
            }
        }
    }
}

/// Predicted increments in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub delta_velocity: DenseMatrix,
    pub delta_thickness: DenseMatrix,
}

/// Parameter handles on a tape, in [`ModelParams::matrices`] order.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    pub fn register(tape: &mut Tape<'_>, params: &ModelParams) -> Self {
        Self(params.matrices().into_iter().map(|m| tape.param(m.clone())).collect())
    }

    fn gcn(&self, l: usize) -> Var {
        self.0[l]
    }
}

/// Records the forward pass; returns `(delta_velocity, delta_thickness)`.
pub fn record_forward<'g>(
    tape: &mut Tape<'g>,
    vars: &ParamVars,
    config: &ModelConfig,
    input: &ModelInput<'g>,
) -> Result<(Var, Var)> {
    let features = input.features(config.velocity_input)?;
    let w0 = tape.value(vars.gcn(0));
    if features.cols() != w0.rows() {
        return Err(Error::dims("forward feature width", w0.rows(), features.cols()));
    }
    let adjacency = input.graph.norm_adjacency();
    let mut h = tape.constant(features);
    for l in 0..GCN_LAYERS {
        // Â H W is associative. Propagate on the narrower side, except that
        // a constant input is cheaper to propagate first (no backward spmm).
        let w = tape.value(vars.gcn(l));
        let z = if w.cols() < w.rows() && tape.requires_grad(h) {
            let hw = tape.matmul(h, vars.gcn(l))?;
            tape.spmm(adjacency, hw)?
        } else {
            let propagated = tape.spmm(adjacency, h)?;
            tape.matmul(propagated, vars.gcn(l))?
        };
        h = if l + 1 < GCN_LAYERS {
            tape.activate(config.activation, z)
        } else {
            z
        };
    }
    let v = tape.matmul(h, vars.0[GCN_LAYERS])?;
    let dv = tape.add_bias(v, vars.0[GCN_LAYERS + 1])?;
    let t = tape.matmul(h, vars.0[GCN_LAYERS + 2])?;
    let dt = tape.add_bias(t, vars.0[GCN_LAYERS + 3])?;
    Ok((dv, dt))
}

/// Evaluates the emulator on one input.
pub fn forward(params: &ModelParams, config: &ModelConfig, input: &ModelInput<'_>) -> Result<ModelOutput> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let (dv, dt) = record_forward(&mut tape, &vars, config, input)?;
    Ok(ModelOutput {
        delta_velocity: tape.value(dv).clone(),
        delta_thickness: tape.value(dt).clone(),
    })
}

/// `X̂_{t+h} = X_t + ΔX̂`: velocity columns from the velocity head,
/// thickness column from the thickness head.
pub fn reconstruct(anchor_state: &DenseMatrix, delta: &ModelOutput) -> Result<DenseMatrix> {
    let n = anchor_state.rows();
    if anchor_state.cols() != PROGNOSTIC_CHANNELS
        || delta.delta_velocity.shape() != (n, 2)
        || delta.delta_thickness.shape() != (n, 1)
    {
        return Err(Error::dims(
            "reconstruct",
            format!("{n}x3 anchor with {n}x2 and {n}x1 deltas"),
            format!(
                "{:?} anchor with {:?} and {:?}",
                anchor_state.shape(),
                delta.delta_velocity.shape(),
                delta.delta_thickness.shape()
            ),
        ));
    }
    let mut out = anchor_state.clone();
    for r in 0..n {
        let row = out.row_mut(r);
        row[0] += delta.delta_velocity.get(r, 0);
        row[1] += delta.delta_velocity.get(r, 1);
        row[2] += delta.delta_thickness.get(r, 0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> MeshGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        MeshGraph::build(n, &edges, (0..n).map(|i| [i as f64, 0.0]).collect()).unwrap()
    }

    fn input(graph: &MeshGraph, k: usize, seed: f64) -> ModelInput<'_> {
        let n = graph.node_count();
        let state = DenseMatrix::new(n, 3, (0..n * 3).map(|i| ((i as f64 + seed) * 0.37).sin()).collect()).unwrap();
        let context = DenseMatrix::new(n, k, (0..n * k).map(|i| ((i as f64 - seed) * 0.11).cos()).collect()).unwrap();
        ModelInput::new(graph, state, context, 0.25, 0.5).unwrap()
    }

    #[test]
    fn zero_heads_give_zero_delta() {
        let g = path_graph(6);
        let cfg = ModelConfig::new(4, 8);
        let mut p = init_params(3, &cfg);
        p.zero_heads();
        let x = input(&g, 4, 0.0);
        let out = forward(&p, &cfg, &x).unwrap();
        assert!(out.delta_velocity.data().iter().all(|&v| v == 0.0));
        assert!(out.delta_thickness.data().iter().all(|&v| v == 0.0));
        assert_eq!(reconstruct(&x.state, &out).unwrap(), x.state);
    }

    #[test]
    fn isolated_node_identity_weights() {
        let g = MeshGraph::build(1, &[], vec![[0.0, 0.0]]).unwrap();
        let cfg = ModelConfig::new(1, 6);
        let mut p = init_params(0, &cfg);
        for (l, w) in p.gcn_weights.iter_mut().enumerate() {
            let d_in = if l == 0 { cfg.input_width() } else { cfg.hidden };
            *w = DenseMatrix::zeros(d_in, cfg.hidden);
            for i in 0..d_in.min(cfg.hidden) {
                w.set(i, i, 1.0);
            }
        }
        p.zero_heads();
        let out = forward(&p, &cfg, &input(&g, 1, 1.0)).unwrap();
        assert_eq!(out.delta_velocity, DenseMatrix::zeros(1, 2));
        assert_eq!(out.delta_thickness, DenseMatrix::zeros(1, 1));
    }

    #[test]
    fn reconstruct_adds_columns() {
        let anchor = DenseMatrix::from_rows(&[&[1.0, 1.0, 1.0]]);
        let delta = ModelOutput {
            delta_velocity: DenseMatrix::from_rows(&[&[0.5, -0.5]]),
            delta_thickness: DenseMatrix::from_rows(&[&[2.0]]),
        };
        assert_eq!(reconstruct(&anchor, &delta).unwrap().data(), &[1.5, 0.5, 3.0]);
        assert!(reconstruct(&DenseMatrix::zeros(2, 3), &delta).is_err());
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let g = path_graph(10);
        let cfg = ModelConfig::new(3, 16);
        let p = init_params(11, &cfg);
        let x = input(&g, 3, 2.0);
        assert_eq!(forward(&p, &cfg, &x).unwrap(), forward(&p, &cfg, &x).unwrap());
    }

    #[test]
    fn feature_width_mismatch_is_an_error() {
        let g = path_graph(4);
        let p = init_params(0, &ModelConfig::new(5, 8));
        let res = forward(&p, &ModelConfig::new(2, 8), &input(&g, 2, 0.0));
        assert!(matches!(res, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::new(6, 32);
        let a = init_params(0, &cfg);
        assert_eq!(a, init_params(0, &cfg));
        assert_ne!(a, init_params(1, &cfg));
        for (l, w) in a.gcn_weights.iter().enumerate() {
            let bound = glorot_bound(w.rows(), w.cols());
            assert!(w.data().iter().all(|v| v.abs() <= bound), "layer {l}");
        }
        let vb = glorot_bound(32, 2);
        assert!(a.velocity_head.weight.data().iter().all(|v| v.abs() <= vb));
        assert_eq!(a.velocity_head.bias, DenseMatrix::zeros(1, 2));
        assert_eq!(a.thickness_head.bias, DenseMatrix::zeros(1, 1));
        assert_eq!(a.gcn_weights[0].shape(), (cfg.input_width(), 32));
    }

    #[test]
    fn magnitude_only_drops_velocity_components() {
        let g = path_graph(3);
        let x = input(&g, 2, 0.0);
        let f = x.features(VelocityInput::MagnitudeOnly).unwrap();
        assert_eq!(f.cols(), 1 + 2 + 2);
        assert_eq!(f.get(1, 0), x.state.get(1, 2));
        let cfg = ModelConfig {
            velocity_input: VelocityInput::MagnitudeOnly,
            ..ModelConfig::new(2, 4)
        };
        assert_eq!(cfg.input_width(), 5);
    }

    #[test]
    fn input_validation() {
        let g = path_graph(3);
        let ok = input(&g, 2, 0.0);
        assert!(ModelInput::new(&g, ok.state.clone(), ok.context.clone(), 0.5, 0.0).is_err());
        assert!(ModelInput::new(&g, ok.state.clone(), ok.context.clone(), 1.5, 1.0).is_err());
        assert!(ModelInput::new(&g, DenseMatrix::zeros(3, 2), ok.context.clone(), 0.5, 1.0).is_err());
    }

    #[test]
    fn params_round_trip_through_matrices() {
        let p = init_params(4, &ModelConfig::new(2, 5));
        assert_eq!(ModelParams::from_matrices(p.to_matrices()).unwrap(), p);
        let mut ms = p.to_matrices();
        ms[2] = DenseMatrix::zeros(4, 5);
        assert!(ModelParams::from_matrices(ms).is_err());
    }
}
