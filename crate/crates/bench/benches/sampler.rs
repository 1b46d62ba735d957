use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hdpbnc::context_tree::build_tree;
use hdpbnc::model::train;
use hdpbnc::sampler::{assign_tying, sweep, tree_rng};
use hdpbnc::stirling::StirlingLookup;
use hdpbnc::structure::learn_kdb;
use hdpbnc::{PipelineConfig, StirlingCache, Tying};
use hdpbnc_bench::synthetic;

fn stirling(c: &mut Criterion) {
    c.bench_function("stirling table 2000", |b| b.iter(|| StirlingCache::new(2000)));
}

fn gibbs_sweep(c: &mut Criterion) {
    let data = synthetic(8, 2000, 1);
    let structure = learn_kdb(&data, 3).unwrap();
    let child = structure.order[3];
    let mut tree = build_tree(&data, child, &structure.parents[child]).unwrap();
    assign_tying(&mut tree, Tying::Level, 1.0);
    tree.root_alpha = 2.0;
    tree.init_parameters().unwrap();
    let cache = StirlingCache::new(2048);
    c.bench_function(&format!("sweep kdb:3 tree ({} nodes)", tree.len()), |b| {
        let mut rng = tree_rng(0, child);
        b.iter_batched_ref(
            || tree.clone(),
            |t| sweep(t, 10, &mut StirlingLookup::new(&cache), &mut rng),
            BatchSize::SmallInput,
        )
    });
}

fn training(c: &mut Criterion) {
    let data = synthetic(8, 2000, 2);
    let mut group = c.benchmark_group("train 2000 rows");
    group.sample_size(10);
    for spec in ["kdb:3/m", "kdb:3/hdp"] {
        let mut config = PipelineConfig::parse(spec).unwrap();
        config.sampler.iterations = 200;
        group.bench_function(spec, |b| b.iter(|| train(&data, &config).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, stirling, gibbs_sweep, training);
criterion_main!(benches);
