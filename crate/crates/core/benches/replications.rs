use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rffmmd::bench::{run_arl, run_threshold_comparison, TightnessConfig};
use rffmmd::{Detector, DetectorConfig, DistributionSpec, Execution, KernelSpec, ThresholdPolicy};

fn config(dim: usize, features: usize) -> DetectorConfig {
    DetectorConfig::new(
        KernelSpec::new(0.5 / dim as f64, dim).unwrap(),
        features,
        1,
        ThresholdPolicy::FixedArl { gamma_run: 200.0 },
    )
}

fn arl_replications(c: &mut Criterion) {
    let cfg = config(5, 50);
    let null = DistributionSpec::standard_normal(5);
    let mut g = c.benchmark_group("arl_replications");
    g.sample_size(10);
    for (name, exec) in [
        ("serial", Execution::Serial),
        ("parallel", Execution::Parallel),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| run_arl(&cfg, &null, 32, 1000, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn tightness_rounds(c: &mut Criterion) {
    let null = DistributionSpec::standard_normal(1);
    let cfg = TightnessConfig {
        n: 200,
        features: 200,
        rounds: 50,
        alpha: 0.01,
        master_seed: 3,
    };
    let mut g = c.benchmark_group("tightness_rounds");
    g.sample_size(10);
    for (name, exec) in [
        ("serial", Execution::Serial),
        ("parallel", Execution::Parallel),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| run_threshold_comparison(&null, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn insert_throughput(c: &mut Criterion) {
    let null = DistributionSpec::standard_normal(1);
    let mut rng = rffmmd::seed::rng(11);
    let data = null.sample_n(&mut rng, 4096);
    let mut g = c.benchmark_group("insert");
    g.throughput(Throughput::Elements(data.len() as u64));
    for r in [10, 100, 1000] {
        g.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, &r| {
            b.iter(|| {
                let mut cfg = config(1, r);
                cfg.policy = ThresholdPolicy::Constant(f64::INFINITY);
                let mut det = Detector::new(cfg).unwrap();
                for x in &data {
                    det.insert(x).unwrap();
                }
                det.work_counter()
            })
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    arl_replications,
    tightness_rounds,
    insert_throughput
);
criterion_main!(benches);
