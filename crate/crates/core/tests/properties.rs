use std::collections::BTreeSet;

use asv_core::attribution::{asv_local, shap_local, AttributionPlan, CoalitionValues, ValueFunctionKind};
use asv_core::boost::{fit, fit_with_diagnostics};
use asv_core::data::{split, Dataset, FeatureGrouping, Group, SplitSpec};
use asv_core::ordering::{count_with_limit, distinct_prefixes, enumerate_orderings, CausalDag};
use asv_core::variance::{InteractionMatrix, MatrixUnit};
use asv_core::{BoostParams, GroupSchedule, ModelMode, TreeEnsemble};
use proptest::prelude::*;

/// Edges over `n` nodes: a random upper triangle under a random labelling.
fn edges_for(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let m = pairs.len();
    (
        proptest::collection::vec(any::<bool>(), m),
        Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
    )
        .prop_map(move |(keep, label)| {
            pairs
                .iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(&(a, b), _)| (label[a], label[b]))
                .collect()
        })
}

fn dag_strategy(max: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max).prop_flat_map(|n| (Just(n), edges_for(n)))
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("g{i}")).collect()
}

fn brute_count(n: usize, edges: &[(usize, usize)]) -> u128 {
    fn rec(n: usize, edges: &[(usize, usize)], placed: &mut Vec<usize>) -> u128 {
        if placed.len() == n {
            return 1;
        }
        let mut total = 0;
        for v in 0..n {
            if !placed.contains(&v) {
                placed.push(v);
                // Prune prefixes that already place a descendant before an ancestor.
                let ok = edges.iter().all(|&(a, b)| {
                    let pa = placed.iter().position(|&x| x == a);
                    let pb = placed.iter().position(|&x| x == b);
                    !matches!((pa, pb), (None, Some(_))) && !matches!((pa, pb), (Some(i), Some(j)) if i > j)
                });
                if ok {
                    total += rec(n, edges, placed);
                }
                placed.pop();
            }
        }
        total
    }
    rec(n, edges, &mut Vec::new())
}

fn value_table(k: usize, rows: usize, seed: u64) -> CoalitionValues {
    use rand::Rng;
    let mut rng = asv_core::data::seeded_rng(seed);
    let targets = (0..rows).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut t = CoalitionValues::new("p", targets, rng.random_range(-1.0..1.0));
    for mask in 1..1usize << k {
        let ids = (0..k).filter(|g| mask & (1 << g) != 0).collect();
        t.insert(ids, (0..rows).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orderings_are_admissible_and_counted((n, edges) in dag_strategy(7), seed in any::<u64>()) {
        let dag = CausalDag::new(names(n), edges.clone()).unwrap();
        let counts = count_with_limit(&dag, 20).unwrap();
        prop_assert_eq!(counts.orderings, brute_count(n, &edges));
        let set = enumerate_orderings(&dag, 6000, seed);
        prop_assert!(set.exact);
        prop_assert_eq!(set.len() as u128, counts.orderings);
        prop_assert_eq!(distinct_prefixes(&set.orderings).len(), counts.prefixes);
        let unique: BTreeSet<_> = set.orderings.iter().collect();
        prop_assert_eq!(unique.len(), set.len());
        for o in &set.orderings {
            prop_assert!(dag.admits(o));
        }
        prop_assert!((set.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sampled_orderings_are_admissible((n, edges) in dag_strategy(7), seed in any::<u64>(), cap in 1usize..5) {
        let dag = CausalDag::new(names(n), edges).unwrap();
        let set = enumerate_orderings(&dag, cap, seed);
        if set.exact {
            prop_assert!(set.len() <= cap);
        } else {
            prop_assert_eq!(set.len(), cap);
        }
        for o in &set.orderings {
            prop_assert!(dag.admits(o));
        }
        prop_assert!((set.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(set.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn efficiency_and_shap_degeneration((k, edges) in dag_strategy(4), seed in any::<u64>()) {
        let t = value_table(k, 3, seed);
        let free = enumerate_orderings(&CausalDag::unordered(names(k)), 1000, 0);
        for kind in [ValueFunctionKind::V, ValueFunctionKind::W] {
            let full: Vec<usize> = (0..k).collect();
            for row in 0..3 {
                let s = shap_local(row, k, kind, &t).unwrap();
                let a = asv_local(row, &free, kind, &t).unwrap();
                let target = t.value(kind, &full, row).unwrap();
                prop_assert!((s.total() - target).abs() <= 1e-9);
                prop_assert!((a.total() - target).abs() <= 1e-9);
                for (x, y) in s.phi.iter().zip(&a.phi) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }
        // Any DAG: the plan matches the per-ordering reference.
        let dag = CausalDag::new(names(k), edges).unwrap();
        let set = enumerate_orderings(&dag, 1000, seed);
        let plan = AttributionPlan::asv(&set).attribute(&t, ValueFunctionKind::W).unwrap();
        for row in 0..3 {
            let a = asv_local(row, &set, ValueFunctionKind::W, &t).unwrap();
            prop_assert!((a.total() - plan[row].total()).abs() <= 1e-9);
            for (x, y) in a.phi.iter().zip(&plan[row].phi) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn null_player_gets_nothing(k in 2usize..5, seed in any::<u64>()) {
        // Group k-1 never changes the value: v(S ∪ {k-1}) = v(S).
        let mut t = value_table(k, 2, seed);
        let null = k - 1;
        for mask in 0..1usize << null {
            let ids: Vec<usize> = (0..null).filter(|g| mask & (1 << g) != 0).collect();
            let p = t.predictions(&ids).unwrap().to_vec();
            let mut with = ids.clone();
            with.push(null);
            t.insert(with, p).unwrap();
        }
        for row in 0..2 {
            let s = shap_local(row, k, ValueFunctionKind::W, &t).unwrap();
            prop_assert!(s.phi[null].abs() <= 1e-12);
        }
    }

    #[test]
    fn percent_matrix_is_exact(values in proptest::collection::vec(-1e3f64..1e3, 3), sigma2 in 1e-3f64..1e4) {
        let mut m = InteractionMatrix::new(MatrixUnit::Raw, ModelMode::Gam, names(3));
        m.set(0, 1, values[0]);
        m.set(0, 2, values[1]);
        m.set(1, 2, values[2]);
        let p = m.to_percent(sigma2);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(p.values[i][j], p.values[j][i]);
                if i != j {
                    prop_assert_eq!(p.values[i][j], 100.0 * m.values[i][j] / sigma2);
                }
            }
        }
    }
}

fn random_dataset(rows: usize, features: usize, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = asv_core::data::seeded_rng(seed);
    let cols: Vec<Vec<f64>> = (0..features)
        .map(|_| (0..rows).map(|_| (rng.random_range(-2.0f64..2.0) * 4.0).round() / 4.0).collect())
        .collect();
    let target = (0..rows)
        .map(|r| cols[0][r] * cols[1 % features][r] + cols[features - 1][r].sin() + rng.random_range(-0.1..0.1))
        .collect();
    Dataset::new(names(features), cols, "t", target).unwrap()
}

fn small_params(schedule: GroupSchedule) -> BoostParams {
    BoostParams {
        num_rounds: 15,
        learning_rate: 0.3,
        max_depth: 3,
        min_samples_leaf: 3,
        early_stopping_rounds: 0,
        group_schedule: schedule,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_deterministic_partition(rows in 3usize..400, seed in any::<u64>()) {
        let d = random_dataset(rows, 2, 1);
        let spec = SplitSpec::standard(seed);
        let a = split(&d, &spec).unwrap();
        let b = split(&d, &spec).unwrap();
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        let (tr, va, te) = spec.sizes(rows);
        prop_assert_eq!((a.train.row_count(), a.val.row_count(), a.test.row_count()), (tr, va, te));
        let mut all: Vec<f64> = [&a.train, &a.val, &a.test].iter().flat_map(|s| s.target().to_vec()).collect();
        let mut orig = d.target().to_vec();
        all.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn gam_is_pure_additive_and_monotone(seed in any::<u64>(), features in 2usize..5, cyclic in any::<bool>()) {
        let d = random_dataset(200, features, seed);
        let s = split(&d, &SplitSpec::standard(seed)).unwrap();
        let groups = (0..features)
            .map(|f| Group { name: format!("grp{f}"), features: vec![f] })
            .collect();
        let grouping = FeatureGrouping::new(groups).unwrap();
        let schedule = if cyclic { GroupSchedule::Cyclic } else { GroupSchedule::Greedy };
        let (e, diag) = fit_with_diagnostics(&s.train, &s.val, ModelMode::Gam, Some(&grouping), &small_params(schedule)).unwrap();
        prop_assert!(e.is_gam_pure());
        for w in diag.train_mse.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        let full = e.predict(&s.test).unwrap();
        let mut sum = vec![e.base_score; s.test.row_count()];
        for g in 0..features {
            for (x, c) in sum.iter_mut().zip(e.extract_group_component(g).unwrap().predict(&s.test).unwrap()) {
                *x += c;
            }
        }
        for (a, b) in full.iter().zip(&sum) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        let again = fit(&s.train, &s.val, ModelMode::Gam, Some(&grouping), &small_params(schedule)).unwrap();
        prop_assert_eq!(&again, &e);
        let back = TreeEnsemble::from_json(&e.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, e);
    }
}
