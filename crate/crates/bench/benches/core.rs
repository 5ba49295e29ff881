use std::hint::black_box;

use asv_bench::synthetic_splits;
use asv_core::attribution::{asv_global_report, ReportOptions};
use asv_core::boost::fit;
use asv_core::data::SyntheticKind;
use asv_core::ordering::{count_with_limit, enumerate_orderings, telco_shaped_dag, DEFAULT_COUNT_LIMIT};
use asv_core::{BoostParams, CausalDag, CoalitionStore, FeatureGrouping, ModelConfig, ModelMode, Workbench};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn tree_fitting(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    for n in [5_000usize, 20_000] {
        let s = synthetic_splits(SyntheticKind::Pm25Like, n);
        let grouping = FeatureGrouping::singletons(&s.train);
        for mode in [ModelMode::Unrestricted, ModelMode::Gam] {
            let params = BoostParams {
                num_rounds: 50,
                early_stopping_rounds: 0,
                ..BoostParams::for_mode(mode)
            };
            g.bench_with_input(BenchmarkId::new(mode.as_str(), n), &n, |b, _| {
                b.iter(|| fit(&s.train, &s.val, mode, Some(&grouping), &params).unwrap())
            });
        }
    }
    g.finish();
}

fn ordering_counts(c: &mut Criterion) {
    let dag = telco_shaped_dag();
    c.bench_function("count_telco", |b| {
        b.iter(|| count_with_limit(black_box(&dag), DEFAULT_COUNT_LIMIT).unwrap())
    });
    let free = CausalDag::unordered((0..10).map(|i| format!("x{i}")).collect());
    c.bench_function("count_unordered_10", |b| {
        b.iter(|| count_with_limit(black_box(&free), DEFAULT_COUNT_LIMIT).unwrap())
    });
    c.bench_function("enumerate_telco", |b| b.iter(|| enumerate_orderings(black_box(&dag), 2000, 0)));
}

fn attribution_from_cache(c: &mut Criterion) {
    let s = synthetic_splits(SyntheticKind::Pm25Like, 10_000);
    let grouping = FeatureGrouping::singletons(&s.train);
    let mut config = ModelConfig::default();
    for p in [&mut config.unrestricted, &mut config.gam] {
        p.num_rounds = 30;
    }
    let store = CoalitionStore::in_memory();
    let wb = Workbench {
        splits: &s,
        grouping: &grouping,
        store: &store,
        config: &config,
        target_id: "dataset",
    };
    let dag = CausalDag::unordered(grouping.names().iter().map(|n| n.to_string()).collect());
    let opts = ReportOptions::default();
    asv_global_report(&wb, &dag, ModelMode::Gam, &opts).unwrap();
    c.bench_function("report_cached_gam_4_groups", |b| {
        b.iter(|| asv_global_report(&wb, &dag, ModelMode::Gam, &opts).unwrap())
    });
}

criterion_group!(benches, tree_fitting, ordering_counts, attribution_from_cache);
criterion_main!(benches);
