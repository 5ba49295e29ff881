use asv_core::attribution::{verify_theorems, TheoremPair, DEFAULT_SLACK_FRACTION};
use asv_core::coalition::{CoalitionStore, ModelConfig, Workbench, DATASET_TARGET};
use asv_core::data::{generate_synthetic, split, FeatureGrouping, SplitSpec, SyntheticKind, SyntheticSpec};
use asv_core::variance::all_pairs;
use asv_core::{BoostParams, GroupSchedule, Splits};

fn pm25(n: usize) -> Splits {
    let d = generate_synthetic(&SyntheticSpec { kind: SyntheticKind::Pm25Like, n, seed: 4 }).unwrap();
    split(&d, &SplitSpec::standard(4)).unwrap()
}

/// Cyclic gam schedule and singleton models stopped after a few rounds.
fn suboptimal_singletons() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.gam.group_schedule = GroupSchedule::Cyclic;
    c.gam.num_rounds = 300;
    c.gam.learning_rate = 0.2;
    c.singleton_override = Some(BoostParams { num_rounds: 4, ..c.gam });
    c
}

fn pairs(k: usize) -> Vec<TheoremPair> {
    all_pairs(k)
        .into_iter()
        .map(|(a, b)| TheoremPair { a: vec![a], b: vec![b], independent: false })
        .collect()
}

#[test]
fn component_reuse_removes_anomalies() {
    let s = pm25(20_000);
    let g = FeatureGrouping::singletons(&s.train);
    let store = CoalitionStore::in_memory();
    let config = suboptimal_singletons();
    let wb = Workbench { splits: &s, grouping: &g, store: &store, config: &config, target_id: DATASET_TARGET };
    let before = verify_theorems(&wb, &pairs(4), DEFAULT_SLACK_FRACTION).unwrap();
    assert!(before.anomalies > 0, "expected anomalies with sub-optimal singletons");

    let reuse = ModelConfig { component_reuse: true, ..config.clone() };
    let wb = Workbench { config: &reuse, ..wb };
    let after = verify_theorems(&wb, &pairs(4), DEFAULT_SLACK_FRACTION).unwrap();
    assert_eq!(after.anomalies, 0);
    assert!(after.theorem2_pass);
}

#[test]
fn independent_drivers_are_additive_under_restriction() {
    // humidity and wind are generated independently.
    let s = pm25(40_000);
    let g = FeatureGrouping::singletons(&s.train);
    let store = CoalitionStore::in_memory();
    let config = ModelConfig::default();
    let wb = Workbench { splits: &s, grouping: &g, store: &store, config: &config, target_id: DATASET_TARGET };
    let mut ps = pairs(4);
    for p in &mut ps {
        p.independent = p.a == [0] && p.b == [2];
    }
    let v = verify_theorems(&wb, &ps, DEFAULT_SLACK_FRACTION).unwrap();
    let t1 = v.checks.iter().find(|c| c.theorem1_residual.is_some()).unwrap();
    assert!(t1.theorem1_residual.unwrap() <= 0.03 * v.sigma2_t, "{t1:?}");
    assert!(v.theorem1_pass);
    // Theorem 2 on every evaluated pair.
    assert!(v.theorem2_pass, "{:?}", v.checks);
}

#[test]
fn overlapping_pair_is_rejected() {
    let s = pm25(500);
    let g = FeatureGrouping::singletons(&s.train);
    let store = CoalitionStore::in_memory();
    let config = ModelConfig::default();
    let wb = Workbench { splits: &s, grouping: &g, store: &store, config: &config, target_id: DATASET_TARGET };
    let bad = [TheoremPair { a: vec![0, 1], b: vec![1], independent: false }];
    assert!(verify_theorems(&wb, &bad, DEFAULT_SLACK_FRACTION).is_err());
}
