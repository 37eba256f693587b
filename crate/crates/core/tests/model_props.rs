#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use horizon_gcn::dataset::{NormStats, Trajectory};
use horizon_gcn::model::{forward, init_params, record_forward, ModelConfig, ModelInput, ModelParams, ParamVars};
use horizon_gcn::numeric::{finite_diff_check, Activation};
use horizon_gcn::rollout::{execute_rollout, plan_rollout, Emulator, ScanMode};
use horizon_gcn::train::record_loss;
use horizon_gcn::{DenseMatrix, HorizonSet, MeshGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Ring plus random chords, so every instance is connected and irregular.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> MeshGraph {
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..n / 2 {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    MeshGraph::build(n, &edges, vec![[0.0, 0.0]; n]).unwrap()
}

fn model_input<'g>(rng: &mut ChaCha8Rng, graph: &'g MeshGraph, k: usize) -> ModelInput<'g> {
    let n = graph.node_count();
    ModelInput::new(
        graph,
        random_matrix(rng, n, 3),
        random_matrix(rng, n, k),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.1..1.0),
    )
    .unwrap()
}

fn gradcheck_instances(activation: Activation, epsilon: f64, tolerance: f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, 10);
        let k = 4;
        let config = ModelConfig {
            activation,
            ..ModelConfig::new(k, 6)
        };
        let mut params = init_params(seed, &config);
        // nonzero head biases so every parameter block is exercised
        for m in params.matrices_mut().into_iter().skip(5) {
            for v in m.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
        let input = model_input(&mut rng, &graph, k);
        let residual = random_matrix(&mut rng, 10, 3);
        let report = finite_diff_check(
            |tape, vars| {
                let pv = ParamVars(vars.to_vec());
                let (dv, dh) = record_forward(tape, &pv, &config, &input)?;
                record_loss(tape, dv, dh, &residual, 1.0, 0.7)
            },
            &params.to_matrices(),
            epsilon,
            tolerance,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed} {activation:?}: {report:?}");
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    (worst, checked)
}

#[test]
fn full_model_gradients_relu() {
    let (worst, checked) = gradcheck_instances(Activation::Relu, 1e-4, 1e-4);
    assert!(worst < 1e-4 && checked > 20 * 200, "{worst} over {checked}");
}

#[test]
fn full_model_gradients_linear() {
    let (worst, _) = gradcheck_instances(Activation::Identity, 1e-3, 1e-6);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn disconnected_components_do_not_interact() {
    // two 6-node paths: 0..6 and 6..12
    let edges: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).chain((6..11).map(|i| (i, i + 1))).collect();
    let graph = MeshGraph::build(12, &edges, vec![[0.0, 0.0]; 12]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ModelConfig::new(2, 8);
    let params = init_params(5, &config);
    let base = model_input(&mut rng, &graph, 2);
    let mut changed = base.clone();
    for r in 0..6 {
        for v in changed.state.row_mut(r) {
            *v += 3.0;
        }
        for v in changed.context.row_mut(r) {
            *v -= 2.0;
        }
    }
    let a = forward(&params, &config, &base).unwrap();
    let b = forward(&params, &config, &changed).unwrap();
    for r in 6..12 {
        assert_eq!(a.delta_velocity.row(r), b.delta_velocity.row(r));
        assert_eq!(a.delta_thickness.row(r), b.delta_thickness.row(r));
    }
    assert_ne!(a.delta_velocity.row(0), b.delta_velocity.row(0));
}

#[test]
fn horizon_feature_is_live() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let graph = random_graph(&mut rng, 15);
    let config = ModelConfig::new(3, 16);
    let params = init_params(1, &config);
    let hs = HorizonSet::new([1, 15]).unwrap();
    let mut short = model_input(&mut rng, &graph, 3);
    short.h_norm = hs.encode(hs.min());
    let mut long = short.clone();
    long.h_norm = hs.encode(hs.max());
    assert_ne!(
        forward(&params, &config, &short).unwrap(),
        forward(&params, &config, &long).unwrap()
    );
}

/// Trajectory of `steps` months on a 5-node path with a context channel.
fn small_trajectory(seed: u64, steps: usize) -> Trajectory {
    let n = 5;
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    let mesh = Arc::new(MeshGraph::build(n, &edges, vec![[0.0, 0.0]; n]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..steps * n)
        .flat_map(|_| {
            [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(100.0..400.0),
                rng.gen_range(0.0..50.0),
            ]
        })
        .collect();
    let names = |l: &[&str]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Trajectory::new(
        mesh,
        "persist",
        4.0,
        names(&["vx", "vy", "thickness", "surface"]),
        names(&["melt_rate"]),
        DenseMatrix::filled(n, 1, 4.0),
        steps,
        states,
    )
    .unwrap()
}

fn zero_head_params(k: usize) -> (ModelConfig, ModelParams) {
    let config = ModelConfig::new(k, 8);
    let mut params = init_params(2, &config);
    params.zero_heads();
    (config, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_heads_forecast_the_anchor(
        t0 in 1usize..30,
        span in 1usize..30,
        extra in prop::collection::btree_set(2usize..20, 0..4),
        frozen in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let hs = HorizonSet::new(std::iter::once(1).chain(extra)).unwrap();
        let t1 = t0 + span;
        let traj = small_trajectory(seed, t1);
        let stats = NormStats::compute(std::slice::from_ref(&traj)).unwrap();
        let (config, params) = zero_head_params(stats.context_width());
        let emulator = Emulator { params: &params, config: &config, stats: &stats, horizons: &hs, t_scale: t1 as f64 };
        let mode = if frozen { ScanMode::Frozen } else { ScanMode::Chained };
        let plan = plan_rollout(t0, t1, &hs, mode).unwrap();
        let forecast = execute_rollout(&emulator, &traj, &plan).unwrap();
        // follow each target back to the observed month it descends from
        let mut root: Vec<usize> = (0..=t1).collect();
        for s in plan.steps() {
            root[s.t_out] = root[s.t_in];
        }
        for t in t0 + 1..=t1 {
            prop_assert!(root[t] <= t0);
            let truth = traj.prognostic(root[t]).unwrap();
            prop_assert!(forecast.state(t).max_abs_diff(&truth) <= 1e-9);
        }
    }
}
