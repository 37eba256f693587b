//! Toy glacier generator: seeded meshes and monthly thickness/velocity
//! trajectories driven by a basal melt rate.
//!
//! Dynamics, per month, on node thickness `H` (m):
//!
//! ```text
//! H ← max(0, H + κ (P H − H) − μ · m · f(H) + smb / 12 + noise · ξ)
//! ```
//!
//! `P = D̃⁻¹(A + I)` is the row-normalized neighborhood average (a flat
//! field is a fixed point), `m` the melt rate in m/a, `ξ ~ N(0, 1)`.
//! The bed deepens linearly seaward, `b(x) = −80 − 3.2x` (m, `x` in km).
//! The floating ratio is `f = σ((H_f − H) / 10)` with flotation thickness
//! `H_f = −b ρ_w / ρ_i`. Surface is a blend of the floating and grounded
//! surfaces weighted by `f`, base is surface minus thickness, and velocity
//! is `−g` times the least-squares graph gradient of the surface.
//!
//! The thickness map is order preserving for `κ < 1` and decreasing in
//! `m`, so with a shared physics seed a larger melt rate never yields a
//! thicker state.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{scenario_melt_rates, Trajectory, STATE_CHANNELS, STATIC_FEATURES};
use crate::error::{Error, Result};
use crate::graph::MeshGraph;
use crate::numeric::DenseMatrix;

const RHO_ICE: f64 = 917.0;
const RHO_WATER: f64 = 1028.0;
/// Thickness scale (m) of the floating-ratio sigmoid.
const FLOAT_WIDTH: f64 = 10.0;
const BED_OFFSET: f64 = -80.0;
const BED_SLOPE: f64 = -3.2;
const INITIAL_THICKNESS: f64 = 350.0;
const INITIAL_SLOPE: f64 = -2.5;
const BUMPS: usize = 6;
const BUMP_AMPLITUDE: f64 = 30.0;
const BUMP_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub node_count: usize,
    /// Domain size `(x, y)` in km.
    pub extent_km: [f64; 2],
    /// Neighbors per node before symmetrization.
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            node_count: 300,
            extent_km: [100.0, 60.0],
            neighbors: 6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub mesh: MeshSpec,
    /// m/a.
    pub melt_rate: f64,
    /// Months.
    pub steps: usize,
    /// Diffusivity of the smoothing term.
    pub kappa: f64,
    /// Velocity gain `g`.
    pub velocity_gain: f64,
    /// Melt sensitivity `μ`.
    pub melt_sensitivity: f64,
    /// Standard deviation of the monthly thickness noise (m).
    pub noise: f64,
    /// Multiplier on the surface mass balance.
    pub accumulation: f64,
    /// Uniform initial thickness instead of the sloped, bumpy default.
    pub flat_initial: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            mesh: MeshSpec::default(),
            melt_rate: 0.0,
            steps: 240,
            kappa: 0.1,
            velocity_gain: 1.0,
            melt_sensitivity: 0.002,
            noise: 1e-3,
            accumulation: 1.0,
            flat_initial: None,
            seed: 11,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.mesh.node_count < 2 {
            return bad(format!("mesh needs at least 2 nodes, got {}", self.mesh.node_count));
        }
        if self.mesh.neighbors == 0 {
            return bad("neighbor count must be positive".into());
        }
        if !self.mesh.extent_km.iter().all(|e| e.is_finite() && *e > 0.0) {
            return bad(format!("bad domain extent {:?}", self.mesh.extent_km));
        }
        if self.steps < 2 {
            return bad(format!("need at least 2 months, got {}", self.steps));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa {} outside (0, 1); explicit update unstable", self.kappa));
        }
        for (name, v) in [
            ("melt rate", self.melt_rate),
            ("velocity gain", self.velocity_gain),
            ("melt sensitivity", self.melt_sensitivity),
            ("noise", self.noise),
            ("accumulation", self.accumulation),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(h) = self.flat_initial {
            if !h.is_finite() || h < 0.0 {
                return bad(format!("flat initial thickness {h} invalid"));
            }
        }
        Ok(())
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Uniform random nodes joined to their `k` nearest neighbors, then
/// connected by shortest inter-component links if needed.
pub fn generate_mesh(spec: &MeshSpec) -> Result<MeshGraph> {
    let n = spec.node_count;
    if n < 2 {
        return Err(Error::InvalidArgument("mesh needs at least 2 nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let positions: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.gen::<f64>() * spec.extent_km[0], rng.gen::<f64>() * spec.extent_km[1]])
        .collect();

    let k = spec.neighbors.min(n - 1);
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist2(positions[i], positions[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(others.iter().take(k).map(|&(_, j)| (i.min(j), i.max(j))));
    }

    let mut parent: Vec<usize> = (0..n).collect();
    let mut components = n;
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    if components > 1 {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((dist2(positions[i], positions[j]), i, j));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for (_, i, j) in pairs {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
                edges.push((i, j));
                components -= 1;
                if components == 1 {
                    break;
                }
            }
        }
    }
    MeshGraph::build(n, &edges, positions)
}

/// Bed elevation (m) at `x` km.
pub fn bed_elevation(x: f64) -> f64 {
    BED_OFFSET + BED_SLOPE * x
}

/// Surface mass balance (m/a) at a position; wetter toward the inland edge.
pub fn surface_mass_balance(p: [f64; 2], extent: [f64; 2]) -> f64 {
    let u = p[0] / extent[0];
    let v = p[1] / extent[1];
    0.3 + 0.4 * (1.0 - u) + 0.1 * (2.0 * std::f64::consts::PI * v).sin()
}

/// Per-node least-squares gradient operator: for node `i`, the 2×2 inverse
/// normal matrix of its neighbor offsets.
struct GradientOperator {
    inverse: Vec<[f64; 4]>,
}

impl GradientOperator {
    fn new(mesh: &MeshGraph) -> Self {
        let pos = mesh.positions();
        let inverse = (0..mesh.node_count())
            .map(|i| {
                let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
                for j in mesh.neighbors(i) {
                    let dx = pos[j][0] - pos[i][0];
                    let dy = pos[j][1] - pos[i][1];
                    a += dx * dx;
                    b += dx * dy;
                    d += dy * dy;
                }
                let ridge = 1e-9 * (a + d).max(1e-12);
                let (a, d) = (a + ridge, d + ridge);
                let det = a * d - b * b;
                [d / det, -b / det, -b / det, a / det]
            })
            .collect();
        Self { inverse }
    }

    fn gradient(&self, mesh: &MeshGraph, field: &[f64], i: usize) -> [f64; 2] {
        let pos = mesh.positions();
        let (mut rx, mut ry) = (0.0, 0.0);
        for j in mesh.neighbors(i) {
            let df = field[j] - field[i];
            rx += (pos[j][0] - pos[i][0]) * df;
            ry += (pos[j][1] - pos[i][1]) * df;
        }
        let m = &self.inverse[i];
        [m[0] * rx + m[1] * ry, m[2] * rx + m[3] * ry]
    }
}

fn initial_thickness(mesh: &MeshGraph, config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if let Some(h) = config.flat_initial {
        return vec![h; mesh.node_count()];
    }
    let extent = config.mesh.extent_km;
    let bumps: Vec<([f64; 2], f64)> = (0..BUMPS)
        .map(|_| {
            let c = [rng.gen::<f64>() * extent[0], rng.gen::<f64>() * extent[1]];
            (c, BUMP_AMPLITUDE * (2.0 * rng.gen::<f64>() - 1.0))
        })
        .collect();
    mesh.positions()
        .iter()
        .map(|&p| {
            let base = INITIAL_THICKNESS + INITIAL_SLOPE * p[0];
            let bump: f64 = bumps
                .iter()
                .map(|&(c, a)| a * (-dist2(p, c) / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp())
                .sum();
            (base + bump).max(0.0)
        })
        .collect()
}

fn floating_ratio(thickness: f64, bed: f64) -> f64 {
    let flotation = -bed * RHO_WATER / RHO_ICE;
    1.0 / (1.0 + (-(flotation - thickness) / FLOAT_WIDTH).exp())
}

/// Simulates `config.steps` months on `mesh`.
pub fn generate_trajectory(mesh: Arc<MeshGraph>, config: &SyntheticConfig) -> Result<Trajectory> {
    config.validate()?;
    let n = mesh.node_count();
    let c = STATE_CHANNELS.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extent = config.mesh.extent_km;
    let pos = mesh.positions().to_vec();
    let bed: Vec<f64> = pos.iter().map(|p| bed_elevation(p[0])).collect();
    let smb: Vec<f64> = pos.iter().map(|&p| surface_mass_balance(p, extent)).collect();
    let grad = GradientOperator::new(&mesh);

    let mut thickness = initial_thickness(&mesh, config, &mut rng);
    let mut states = Vec::with_capacity(config.steps * n * c);
    let mut surface = vec![0.0; n];
    let mut floating = vec![0.0; n];
    let mut next = vec![0.0; n];

    for month in 1..=config.steps {
        for i in 0..n {
            let f = floating_ratio(thickness[i], bed[i]);
            floating[i] = f;
            let afloat = thickness[i] * (1.0 - RHO_ICE / RHO_WATER);
            surface[i] = f * afloat + (1.0 - f) * (bed[i] + thickness[i]);
        }
        for i in 0..n {
            let g = grad.gradient(&mesh, &surface, i);
            let vx = -config.velocity_gain * g[0];
            let vy = -config.velocity_gain * g[1];
            let row = [
                vx,
                vy,
                thickness[i],
                surface[i],
                surface[i] - thickness[i],
                floating[i],
                vx.hypot(vy),
            ];
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite {} at month {month}, node {i}",
                    STATE_CHANNELS[k]
                )));
            }
            states.extend_from_slice(&row);
        }
        if month == config.steps {
            break;
        }
        for i in 0..n {
            let mut sum = thickness[i];
            let mut count = 1.0;
            for j in mesh.neighbors(i) {
                sum += thickness[j];
                count += 1.0;
            }
            let avg = sum / count;
            let xi: f64 = StandardNormal.sample(&mut rng);
            let dh = config.kappa * (avg - thickness[i]) - config.melt_sensitivity * config.melt_rate * floating[i]
                + config.accumulation * smb[i] / 12.0
                + config.noise * xi;
            next[i] = (thickness[i] + dh).max(0.0);
        }
        std::mem::swap(&mut thickness, &mut next);
    }

    let statics = DenseMatrix::new(
        n,
        STATIC_FEATURES.len(),
        smb.iter().flat_map(|&s| [config.melt_rate, s]).collect(),
    )?;
    Trajectory::new(
        mesh,
        scenario_id(config.melt_rate),
        config.melt_rate,
        STATE_CHANNELS.iter().map(|s| s.to_string()).collect(),
        STATIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        statics,
        config.steps,
        states,
    )
}

/// `melt_00`, `melt_02`, ... for integral rates; otherwise the rate verbatim.
pub fn scenario_id(melt_rate: f64) -> String {
    if melt_rate.fract() == 0.0 && (0.0..100.0).contains(&melt_rate) {
        format!("melt_{:02}", melt_rate as u32)
    } else {
        format!("melt_{melt_rate}")
    }
}

/// Mesh plus one trajectory per melt rate on the 0..=70 step-2 grid, all
/// sharing `config`'s physics seed.
pub fn generate_dataset(config: &SyntheticConfig) -> Result<(Arc<MeshGraph>, Vec<Trajectory>)> {
    config.validate()?;
    let mesh = Arc::new(generate_mesh(&config.mesh)?);
    let trajectories = scenario_melt_rates()
        .into_par_iter()
        .map(|rate| {
            let cfg = SyntheticConfig {
                melt_rate: rate,
                ..config.clone()
            };
            generate_trajectory(Arc::clone(&mesh), &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mesh, trajectories))
}
