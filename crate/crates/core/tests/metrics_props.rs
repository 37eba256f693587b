#![allow(clippy::needless_range_loop)]

use horizon_gcn::metrics::{pooled_rmse, pooled_rmse_per_month, rmse_per_month, WindowPair};
use horizon_gcn::DenseMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Run = (Vec<DenseMatrix>, Vec<DenseMatrix>);

/// Trajectories with their own node counts over a shared window length.
fn runs(seed: u64, count: usize, months: usize) -> Vec<Run> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..40);
            let mut frame = |scale: f64| {
                DenseMatrix::new(n, 3, (0..n * 3).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
            };
            let pred: Vec<_> = (0..months).map(|_| frame(100.0)).collect();
            let truth: Vec<_> = (0..months).map(|_| frame(100.0)).collect();
            (pred, truth)
        })
        .collect()
}

fn pairs(runs: &[Run]) -> Vec<WindowPair<'_>> {
    runs.iter().map(|(p, t)| WindowPair { pred: p, truth: t }).collect()
}

/// One flat pass over every (trajectory, month, node) squared error.
fn flat_oracle(runs: &[Run]) -> [f64; 3] {
    let mut sse = [0.0; 3];
    let mut count = 0usize;
    for (pred, truth) in runs {
        for (p, t) in pred.iter().zip(truth) {
            for r in 0..p.rows() {
                for c in 0..3 {
                    sse[c] += (p.get(r, c) - t.get(r, c)).powi(2);
                }
                count += 1;
            }
        }
    }
    sse.map(|s| (s / count as f64).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pooled_matches_flat_oracle(seed in any::<u64>(), count in 1usize..6, months in 1usize..12) {
        let data = runs(seed, count, months);
        let got = pooled_rmse(&pairs(&data)).unwrap();
        let want = flat_oracle(&data);
        for c in 0..3 {
            prop_assert!((got[c] - want[c]).abs() <= 1e-12 * want[c].max(1.0), "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn pooled_ignores_trajectory_order(seed in any::<u64>(), count in 2usize..6, months in 1usize..8) {
        let data = runs(seed, count, months);
        let mut reversed = data.clone();
        reversed.reverse();
        let a = pooled_rmse(&pairs(&data)).unwrap();
        let b = pooled_rmse(&pairs(&reversed)).unwrap();
        for c in 0..3 {
            prop_assert!((a[c] - b[c]).abs() <= 1e-12 * a[c].max(1.0));
        }
        let ma = pooled_rmse_per_month(&pairs(&data)).unwrap();
        let mb = pooled_rmse_per_month(&pairs(&reversed)).unwrap();
        for (x, y) in ma.iter().zip(&mb) {
            for c in 0..3 {
                prop_assert!((x[c] - y[c]).abs() <= 1e-12 * x[c].max(1.0));
            }
        }
    }

    #[test]
    fn one_month_window_is_that_months_rmse(seed in any::<u64>()) {
        let data = runs(seed, 1, 1);
        let pooled = pooled_rmse(&pairs(&data)).unwrap();
        let month = rmse_per_month(pairs(&data)[0]).unwrap()[0];
        for c in 0..3 {
            prop_assert!((pooled[c] - month[c]).abs() <= 1e-12 * month[c].max(1.0));
        }
    }
}
