use allocsim::confidence::update_counters;
use allocsim::harness::{generate_instance, GeneratorConfig};
use allocsim::lp::{argmax_penalized, solve_hindsight_opt, DenseSimplex, FeasibleRegion};
use allocsim::mdp::sample_episode;
use allocsim::{run, ConfidenceSet, Policy, RadiusParams, VisitCounters};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn planning_lp(c: &mut Criterion) {
    let cfg = GeneratorConfig { episodes: 1, ..Default::default() };
    let (kernel, fs) = generate_instance(&cfg, 0).unwrap();
    let shape = kernel.shape();
    let params = RadiusParams { delta: 0.1, episodes: 5000, log_argument: Default::default() };
    let mut counters = VisitCounters::new(shape);
    let mut table = shape.zeros_stage();
    table.fill(1.0 / shape.actions as f64);
    let uniform = Policy::new(table).unwrap();
    for seed in 0..5000 {
        update_counters(&mut counters, &sample_episode(&kernel, &uniform, &fs[0], seed).unwrap());
    }
    let fresh = ConfidenceSet::build(&VisitCounters::new(shape), params).unwrap();
    let learned = ConfidenceSet::build(&counters, params).unwrap();
    let solver = DenseSimplex::default();

    let mut group = c.benchmark_group("argmax_penalized");
    group.bench_function("exact_kernel", |b| {
        b.iter(|| argmax_penalized(FeasibleRegion::Exact(&kernel), black_box(&fs[0]), 0.3, &solver).unwrap())
    });
    for (name, set) in [("fresh_box", &fresh), ("learned_box", &learned)] {
        group.bench_function(name, |b| {
            let region = FeasibleRegion::Confidence { set, init: kernel.init() };
            b.iter(|| argmax_penalized(region, black_box(&fs[0]), 0.3, &solver).unwrap())
        });
    }
    group.finish();
}

fn hindsight(c: &mut Criterion) {
    let cfg = GeneratorConfig { episodes: 800, ..Default::default() };
    let (kernel, fs) = generate_instance(&cfg, 1).unwrap();
    c.bench_function("hindsight_opt_t800", |b| b.iter(|| solve_hindsight_opt(&kernel, black_box(&fs), 0.5).unwrap()));
}

fn full_run(c: &mut Criterion) {
    let cfg = GeneratorConfig { episodes: 200, ..Default::default() };
    let (kernel, fs) = generate_instance(&cfg, 2).unwrap();
    let mut group = c.benchmark_group("allocator");
    group.sample_size(10);
    group.bench_function("run_t200", |b| b.iter(|| run(&kernel, fs.iter().cloned(), &cfg.run_config(2)).unwrap()));
    group.finish();
}

criterion_group!(benches, planning_lp, hindsight, full_run);
criterion_main!(benches);
