//! Throughput of the Monte Carlo hot paths: exact sampling, sharded
//! estimation, surface-density evaluation, stepping of the gradient
//! system, and the discrete Fejér transform.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use surfmc_core::calculus::{CylFunction, DivVariant, OperatorContext};
use surfmc_core::dynamics::{self, EnsembleState, Scheme, SdeConfig};
use surfmc_core::fejer;
use surfmc_core::measure::mc_mean;
use surfmc_core::surface::{self, LevelFunction};
use surfmc_core::{ProductLaw, ShardLayout};

fn bench_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sampling");
    let count = 100_000usize;
    for m in [1u32, 2, 3] {
        let plaw = ProductLaw::from_weight_rule(m, 16, 1.0, m as f64 + 1.0).unwrap();
        group.throughput(Throughput::Elements((count * 16) as u64));
        group.bench_with_input(BenchmarkId::new("product_law", m), &plaw, |b, plaw| {
            b.iter(|| plaw.sample(count, 7, ShardLayout::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimators");
    let plaw = ProductLaw::from_weight_rule(2, 16, 1.0, 3.0).unwrap();
    let batch = plaw.sample(200_000, 9, ShardLayout::default()).unwrap();
    let ctx = OperatorContext::new(plaw);
    group.throughput(Throughput::Elements(batch.count() as u64));
    group.bench_function("mc_mean_norm_sq", |b| {
        b.iter(|| mc_mean(&batch, |x| x.iter().map(|v| v * v).sum::<f64>()))
    });
    let phi = CylFunction::cos_linear(vec![0.3; 16], "cos");
    let z = vec![0.25; 16];
    group.bench_function("ibp_residual", |b| {
        b.iter(|| surfmc_core::calculus::ibp_residual(&ctx, &phi, &z, &batch).unwrap())
    });
    let mut lf = LevelFunction::sphere(&ctx, DivVariant::QxNorm);
    lf.assume_validated();
    let one = CylFunction::constant(16, 1.0);
    group.bench_function("q_divergence_sphere", |b| {
        b.iter(|| surface::q_divergence(&lf, &one, 1.0, &batch).unwrap())
    });
    group.finish();
}

fn bench_dynamics(c: &mut Criterion) {
    let mut group = c.benchmark_group("dynamics");
    let plaw = ProductLaw::from_weight_rule(2, 8, 1.0, 3.0).unwrap();
    let cfg = SdeConfig {
        dt: 1e-2,
        horizon: 10.0,
        scheme: Scheme::TamedExplicit,
        ensemble: 50_000,
        seed: 3,
        layout: ShardLayout::default(),
        burn_in: 0.0,
    };
    let batch = plaw.sample(cfg.ensemble, cfg.seed, cfg.layout).unwrap();
    group.throughput(Throughput::Elements((cfg.ensemble * 8 * 10) as u64));
    group.bench_function("tamed_steps", |b| {
        b.iter(|| {
            let mut state = EnsembleState::from_batch(&batch);
            dynamics::evolve(&plaw, &cfg, &mut state, 0.1).unwrap();
            state
        })
    });
    group.finish();
}

fn bench_fejer(c: &mut Criterion) {
    let mut group = c.benchmark_group("fejer");
    let t = 9.0;
    let samples = fejer::GridSamples::from_fn(1, t, 1026, |x| {
        (2.0 * std::f64::consts::PI * x[0] / t).cos()
    });
    group.bench_function("approximate_n512", |b| {
        b.iter(|| fejer::fejer_approximate(&samples, 512).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_sampling, bench_estimators, bench_dynamics, bench_fejer);
criterion_main!(benches);
