use std::sync::OnceLock;

use asv_core::attribution::{
    asv_global_report, attribution_stderr, mean_attribution, self_explanation_target, AttributionPlan,
    ReportOptions, ValueFunctionKind,
};
use asv_core::boost::fit;
use asv_core::coalition::{CoalitionStore, Estimator, ModelConfig, Workbench, DATASET_TARGET, MODEL_OUTPUT_TARGET};
use asv_core::data::{
    analytic_oracle, generate_synthetic, split, Dataset, FeatureGrouping, OracleQuantity, SplitSpec, Splits,
    SyntheticKind, SyntheticSpec,
};
use asv_core::variance::{
    component_covariance, conditional_variance, fill_ledger, lemma1_gap, mean_squared_error, population_variance,
};
use asv_core::{CausalDag, CoalitionKey, ModelMode};

const EPS_MODEL: f64 = 0.02;

struct Fixture {
    splits: Splits,
    grouping: FeatureGrouping,
    store: CoalitionStore,
    config: ModelConfig,
}

impl Fixture {
    fn new(kind: SyntheticKind, n: usize) -> Self {
        let d = generate_synthetic(&SyntheticSpec { kind, n, seed: 17 }).unwrap();
        let splits = split(&d, &SplitSpec::standard(17)).unwrap();
        let grouping = FeatureGrouping::singletons(&splits.train);
        Self { splits, grouping, store: CoalitionStore::in_memory(), config: ModelConfig::default() }
    }

    fn wb(&self) -> Workbench<'_> {
        Workbench {
            splits: &self.splits,
            grouping: &self.grouping,
            store: &self.store,
            config: &self.config,
            target_id: DATASET_TARGET,
        }
    }

    fn key(&self, ids: &[usize], mode: ModelMode) -> CoalitionKey {
        self.wb().key(ids.to_vec(), mode)
    }

    fn cv(&self, ids: &[usize], mode: ModelMode) -> f64 {
        let wb = self.wb();
        let est = Estimator::Trained(wb.train(&self.key(ids, mode)).unwrap());
        conditional_variance(&est, &self.splits.test).unwrap()
    }
}

fn example2() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| Fixture::new(SyntheticKind::Nonlinearity, 100_000))
}

fn oracle(kind: SyntheticKind, q: OracleQuantity) -> f64 {
    analytic_oracle(kind, q).unwrap()
}

fn close(value: f64, expected: f64, rel: f64) -> bool {
    (value - expected).abs() <= rel * expected.abs()
}

#[test]
fn example2_coalition_estimators() {
    let f = example2();
    let sigma2 = population_variance(f.splits.test.target());
    for mode in [ModelMode::Unrestricted, ModelMode::Gam] {
        let h = f.wb().train(&f.key(&[0], mode)).unwrap();
        assert!(close(h.val_mse, 96.0, 0.15), "{mode} val {:.3}", h.val_mse);
        assert!(close(f.cv(&[0], mode), 96.0, 0.10));
    }
    let pair = f.wb().train(&f.key(&[0, 1], ModelMode::Unrestricted)).unwrap();
    assert!(pair.val_mse <= 0.1 * sigma2, "{}", pair.val_mse);
    // The gam residual is the interaction term 8·X1·X2.
    let gam = f.cv(&[0, 1], ModelMode::Gam);
    assert!(close(gam, oracle(SyntheticKind::Nonlinearity, OracleQuantity::PhiI).abs(), 0.15), "{gam}");
}

#[test]
fn example2_variance_quantities() {
    let f = example2();
    let keys: Vec<CoalitionKey> = [ModelMode::Unrestricted, ModelMode::Gam]
        .into_iter()
        .flat_map(|m| [f.key(&[0], m), f.key(&[1], m), f.key(&[0, 1], m)])
        .collect();
    let ledger = fill_ledger(&f.wb(), "e2", &keys).unwrap();
    let s2 = ledger.sigma2_t();
    let (a, b) = (f.key(&[0], ModelMode::Unrestricted), f.key(&[1], ModelMode::Unrestricted));
    assert!(close(ledger.variance_reduction(&a).unwrap(), 32.0, 0.10));
    assert!(close(ledger.interaction_w(&a, &b).unwrap(), 64.0, 0.15));
    let (ra, rb) = (f.key(&[0], ModelMode::Gam), f.key(&[1], ModelMode::Gam));
    assert!(ledger.interaction_w(&ra, &rb).unwrap().abs() <= 0.05 * s2);
    let phi_i = ledger.complex_interaction_phi_i(&f.key(&[0, 1], ModelMode::Gam)).unwrap();
    assert!(close(phi_i, -64.0, 0.15), "{phi_i}");
    // R² range and the coverage properties.
    for (k, _) in ledger.entries() {
        let r2 = ledger.variance_reduction(k).unwrap() / s2;
        assert!((-EPS_MODEL..=1.0).contains(&r2), "{k}: {r2}");
    }
    for mode in [ModelMode::Unrestricted, ModelMode::Gam] {
        let big = ledger.conditional_variance(&f.key(&[0, 1], mode)).unwrap();
        for single in [&[0usize][..], &[1]] {
            assert!(big <= ledger.conditional_variance(&f.key(single, mode)).unwrap() + EPS_MODEL * s2);
        }
    }
    for ids in [&[0usize][..], &[1], &[0, 1]] {
        let u = ledger.conditional_variance(&f.key(ids, ModelMode::Unrestricted)).unwrap();
        let r = ledger.conditional_variance(&f.key(ids, ModelMode::Gam)).unwrap();
        assert!(r >= u - EPS_MODEL * s2);
    }
}

#[test]
fn example2_component_shape_and_lemma() {
    let f = example2();
    let h = f.wb().train(&f.key(&[0, 1], ModelMode::Gam)).unwrap();
    assert!(h.is_confined(&f.grouping));
    let test = &f.splits.test;
    let mse = mean_squared_error(&h.ensemble.predict(test).unwrap(), test.target()).unwrap();
    assert!(close(mse, 64.0, 0.15), "{mse}");
    let sigma2 = population_variance(test.target());
    for ids in [&[0usize][..], &[0, 1]] {
        for mode in [ModelMode::Unrestricted, ModelMode::Gam] {
            let p = f.wb().train(&f.key(ids, mode)).unwrap().ensemble.predict(test).unwrap();
            assert!(lemma1_gap(&p, test.target()).unwrap() <= 0.05 * sigma2);
        }
    }
}

#[test]
fn example2_shap_splits_total_reduction_evenly() {
    let f = example2();
    let wb = f.wb();
    let free = CausalDag::unordered(vec!["X1".into(), "X2".into()]);
    let run = asv_global_report(&wb, &free, ModelMode::Unrestricted, &ReportOptions::default()).unwrap();
    let shap = AttributionPlan::shap(2).unwrap().attribute(&run.values, ValueFunctionKind::W).unwrap();
    let m = mean_attribution(&shap);
    let total = run.report.phi_0 - run.report.residual_variance;
    for p in &m.phi {
        assert!(close(*p, -64.0, 0.15), "{p}");
        assert!(close(*p, -total / 2.0, 0.05));
    }
    // v-contributions average to zero.
    let v = AttributionPlan::shap(2).unwrap().attribute(&run.values, ValueFunctionKind::V).unwrap();
    let mv = mean_attribution(&v);
    for (p, se) in mv.phi.iter().zip(attribution_stderr(&v)) {
        assert!(p.abs() <= 3.0 * se, "{p} vs {se}");
    }
}

#[test]
fn example2_self_explanation_matches_target_report() {
    let f = example2();
    let full = f.wb().train(&f.key(&[0, 1], ModelMode::Unrestricted)).unwrap();
    let se = self_explanation_target(&full.ensemble, &f.splits).unwrap();
    let store = CoalitionStore::in_memory();
    let wb = Workbench { splits: &se, grouping: &f.grouping, store: &store, config: &f.config, target_id: MODEL_OUTPUT_TARGET };
    let dag = CausalDag::chain(vec!["X1".into(), "X2".into()]);
    let own = asv_global_report(&f.wb(), &dag, ModelMode::Unrestricted, &ReportOptions::default()).unwrap().report;
    let expl = asv_global_report(&wb, &dag, ModelMode::Unrestricted, &ReportOptions::default()).unwrap().report;
    assert_eq!(expl.target_id, MODEL_OUTPUT_TARGET);
    let tol = 2.0 * EPS_MODEL * own.phi_0;
    assert!((own.phi_0 - expl.phi_0).abs() <= tol);
    for (a, b) in own.values().iter().zip(expl.values()) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }
}

#[test]
fn identity_model_self_explanation() {
    let d = generate_synthetic(&SyntheticSpec { kind: SyntheticKind::NonAdditive, n: 20_000, seed: 2 }).unwrap();
    let x1 = d.column(0).to_vec();
    let d = d.with_target("x1", x1).unwrap();
    let s = split(&d, &SplitSpec::standard(2)).unwrap();
    let config = ModelConfig::default();
    let model = fit(&s.train, &s.val, ModelMode::Unrestricted, None, &config.unrestricted).unwrap();
    let se = self_explanation_target(&model, &s).unwrap();
    let g = FeatureGrouping::singletons(&se.train);
    let store = CoalitionStore::in_memory();
    let wb = Workbench { splits: &se, grouping: &g, store: &store, config: &config, target_id: MODEL_OUTPUT_TARGET };
    let key = wb.key(vec![0], ModelMode::Unrestricted);
    let ledger = fill_ledger(&wb, "id", std::slice::from_ref(&key)).unwrap();
    let out_var = population_variance(se.test.target());
    assert!((ledger.variance_reduction(&key).unwrap() - out_var).abs() <= EPS_MODEL * out_var);
}

#[test]
fn example3_marginals_are_zero() {
    let f = Fixture::new(SyntheticKind::NonAdditive, 30_000);
    for mode in [ModelMode::Unrestricted, ModelMode::Gam] {
        let p = f.wb().train(&f.key(&[0], mode)).unwrap().ensemble.predict(&f.splits.test).unwrap();
        let rms = (p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64).sqrt();
        assert!(rms <= 0.05, "{mode}: {rms}");
    }
    let s2 = population_variance(f.splits.test.target());
    let phi_i = f.cv(&[0, 1], ModelMode::Unrestricted) - f.cv(&[0, 1], ModelMode::Gam);
    assert!(close(phi_i.abs(), s2, 0.15));
}

#[test]
fn example4_unrestricted_singleton_power() {
    let f = Fixture::new(SyntheticKind::RankDeficiency, 30_000);
    let keys = [f.key(&[0], ModelMode::Unrestricted), f.key(&[1], ModelMode::Unrestricted), f.key(&[0, 1], ModelMode::Unrestricted)];
    let ledger = fill_ledger(&f.wb(), "e4", &keys).unwrap();
    let s2 = ledger.sigma2_t();
    let expect = oracle(SyntheticKind::RankDeficiency, OracleQuantity::LX1);
    let l1 = ledger.variance_reduction(&keys[0]).unwrap() / s2;
    assert!((l1 - expect).abs() <= EPS_MODEL, "{l1} vs {expect}");
    let w = ledger.interaction_w(&keys[0], &keys[1]).unwrap() / s2;
    assert!((w - (1.0 - 2.0 * expect)).abs() <= 0.02, "{w}");
}

#[test]
fn independent_components_have_no_covariance() {
    let d = generate_synthetic(&SyntheticSpec { kind: SyntheticKind::Pm25Like, n: 30_000, seed: 8 }).unwrap();
    // humidity and wind only.
    let cols = vec![d.column(0).to_vec(), d.column(2).to_vec()];
    let d = Dataset::new(vec!["humidity".into(), "wind".into()], cols, "PM", d.target().to_vec()).unwrap();
    let s = split(&d, &SplitSpec::standard(8)).unwrap();
    let g = FeatureGrouping::singletons(&s.train);
    let config = ModelConfig::default();
    let e = fit(&s.train, &s.val, ModelMode::Gam, Some(&g), &config.gam).unwrap();
    let cov = component_covariance(&e, &["humidity"], &["wind"], &s.test).unwrap();
    let a = e.extract_group_component(0).unwrap().predict(&s.test).unwrap();
    let b = e.extract_group_component(1).unwrap().predict(&s.test).unwrap();
    let (ma, mb) = (a.iter().sum::<f64>() / a.len() as f64, b.iter().sum::<f64>() / b.len() as f64);
    let prods: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let stderr = (population_variance(&prods) / prods.len() as f64).sqrt();
    assert!(cov.abs() <= 3.0 * stderr, "{cov} vs {stderr}");
    let u = fit(&s.train, &s.val, ModelMode::Unrestricted, None, &config.unrestricted).unwrap();
    assert!(component_covariance(&u, &["humidity"], &["wind"], &s.test).is_err());
}

#[test]
fn noise_feature_is_a_null_player() {
    use rand::Rng;
    let d = generate_synthetic(&SyntheticSpec { kind: SyntheticKind::Nonlinearity, n: 30_000, seed: 9 }).unwrap();
    let mut rng = asv_core::data::seeded_rng(99);
    let mut cols = d.columns().to_vec();
    cols.push((0..d.row_count()).map(|_| rng.random_range(-1.0..1.0)).collect());
    let d = Dataset::new(vec!["X1".into(), "X2".into(), "noise".into()], cols, "T", d.target().to_vec()).unwrap();
    let s = split(&d, &SplitSpec::standard(9)).unwrap();
    let g = FeatureGrouping::singletons(&s.train);
    let store = CoalitionStore::in_memory();
    let config = ModelConfig::default();
    let wb = Workbench { splits: &s, grouping: &g, store: &store, config: &config, target_id: DATASET_TARGET };
    let names: Vec<String> = vec!["X1".into(), "X2".into(), "noise".into()];
    for dag in [CausalDag::chain(names.clone()), CausalDag::unordered(names.clone())] {
        let run = asv_global_report(&wb, &dag, ModelMode::Unrestricted, &ReportOptions::default()).unwrap();
        let mut plans = vec![run.plan.clone()];
        if dag.edges().is_empty() {
            plans.push(AttributionPlan::shap(3).unwrap());
        }
        for plan in plans {
            let locals = plan.attribute(&run.values, ValueFunctionKind::W).unwrap();
            let m = mean_attribution(&locals);
            let se = attribution_stderr(&locals);
            assert!(m.phi[2].abs() <= 3.0 * se[2], "{} vs {}", m.phi[2], se[2]);
        }
    }
}
