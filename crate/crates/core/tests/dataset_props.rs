use horizon_gcn::dataset::{
    classify_melt_rate, enumerate_dataset_pairs, enumerate_pairs, residual_target, split_by_melt_rate, NormStats,
    Partition,
};
use horizon_gcn::synthetic::{generate_dataset, MeshSpec, SyntheticConfig};
use horizon_gcn::HorizonSet;
use proptest::prelude::*;

fn small_config() -> SyntheticConfig {
    SyntheticConfig {
        mesh: MeshSpec {
            node_count: 60,
            ..MeshSpec::default()
        },
        steps: 40,
        ..SyntheticConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pair_count_is_closed_form(steps in 2usize..400, hs in prop::collection::btree_set(1usize..500, 1..6)) {
        let hs = HorizonSet::new(hs).unwrap();
        let pairs = enumerate_pairs(0, steps, &hs).unwrap();
        let closed: usize = hs.iter().map(|h| steps.saturating_sub(h)).sum();
        prop_assert_eq!(pairs.len(), closed);
        prop_assert_eq!(hs.pair_count(steps), closed);
        for p in &pairs {
            prop_assert!(hs.contains(p.h) && p.t >= 1 && p.t + p.h <= steps);
        }
        let mut unique = pairs.iter().map(|p| (p.t, p.h)).collect::<Vec<_>>();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(unique.len(), pairs.len());
    }
}

#[test]
fn full_scale_pair_count() {
    let hs = HorizonSet::new([1, 15, 30]).unwrap();
    assert_eq!(enumerate_pairs(0, 240, &hs).unwrap().len(), 674);
}

#[test]
fn splits_telescoping_and_leakage() {
    let (_, trajectories) = generate_dataset(&small_config()).unwrap();
    assert_eq!(trajectories.len(), 36);
    let all_ids: Vec<String> = trajectories.iter().map(|t| t.scenario_id().to_string()).collect();

    let split = split_by_melt_rate(trajectories.clone()).unwrap();
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (28, 4, 4));
    let mut seen: Vec<String> = split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .map(|t| t.scenario_id().to_string())
        .collect();
    seen.sort();
    let mut expected = all_ids.clone();
    expected.sort();
    assert_eq!(seen, expected, "splits must partition the scenarios");
    for (part, group) in [
        (Partition::Train, &split.train),
        (Partition::Validation, &split.validation),
        (Partition::Test, &split.test),
    ] {
        assert!(group.iter().all(|t| classify_melt_rate(t.melt_rate()).unwrap() == part));
    }

    let hs = HorizonSet::new([1, 15]).unwrap();
    assert_eq!(enumerate_dataset_pairs(&split.train, &hs).unwrap().len(), 28 * (39 + 25));

    // Training statistics must not see held-out scenarios.
    let train_stats = NormStats::compute(&split.train).unwrap();
    let mut with_test = split.train.clone();
    with_test.extend(split.test.iter().cloned());
    let leaky = NormStats::compute(&with_test).unwrap();
    assert_ne!(train_stats, leaky);
    assert_ne!(train_stats.content_hash(), leaky.content_hash());

    // Residuals over consecutive spans add up to the residual of the union.
    let traj = &split.train[5];
    for (t, a, b) in [(1, 1, 1), (3, 5, 10), (10, 15, 15), (1, 1, 38)] {
        let left = residual_target(traj, t, a, &train_stats).unwrap();
        let right = residual_target(traj, t + a, b, &train_stats).unwrap();
        let whole = residual_target(traj, t, a + b, &train_stats).unwrap();
        let sum = left.add(&right).unwrap();
        assert!(sum.max_abs_diff(&whole) <= 1e-12, "({t},{a},{b})");
    }
}

#[test]
fn generation_is_seed_deterministic() {
    let cfg = small_config();
    let (m1, a) = generate_dataset(&cfg).unwrap();
    let (m2, b) = generate_dataset(&cfg).unwrap();
    assert_eq!(m1.content_hash(), m2.content_hash());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.to_bytes(), y.to_bytes());
    }
    let other = SyntheticConfig { seed: 12, ..cfg };
    let (_, c) = generate_dataset(&other).unwrap();
    assert_ne!(a[3].to_bytes(), c[3].to_bytes());
    assert!(a.iter().all(|t| (1..=t.steps()).all(|s| (0..t.nodes()).all(|n| t.value(s, n, 2) >= 0.0))));
}
