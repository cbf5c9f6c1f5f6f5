use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mcsd_core::{mc_predict, DepthSchedule, Matrix, McConfig, NetworkSpec, Regime, ResidualNet};

fn bench_mc_predict(c: &mut Criterion) {
    let spec = NetworkSpec {
        input_dim: 2,
        hidden_dim: 32,
        num_blocks: 8,
        num_classes: 2,
        use_batchnorm: true,
    };
    let net = ResidualNet::new(spec, 0).unwrap();
    let x = Matrix::new(256, 2, (0..512).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let schedule = DepthSchedule::linear_decay(8, 0.5).unwrap();
    let mut group = c.benchmark_group("mc_predict");
    for passes in [1usize, 50, 200] {
        let cfg = McConfig::new(Regime::Mcsd, passes, 0);
        group.bench_with_input(BenchmarkId::from_parameter(passes), &cfg, |b, cfg| {
            b.iter(|| mc_predict(&net, &x, &schedule, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_mc_predict);
criterion_main!(benches);
