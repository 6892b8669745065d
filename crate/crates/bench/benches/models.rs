use criterion::{criterion_group, criterion_main, Criterion};
use srlite_bench::randn;
use srlite_core::{Generator, MswinConfig, MswinSr, SrModel, UgswinConfig};

fn mswinsr(c: &mut Criterion) {
    let model = MswinSr::<f32>::new(MswinConfig::default(), 0).unwrap();
    let x = randn(1, &[1, 32, 32, 3]);
    let mut g = c.benchmark_group("mswinsr");
    g.bench_function("forward_32px", |b| b.iter(|| model.forward(&x).unwrap()));
    g.bench_function("forward_backward_32px", |b| {
        b.iter(|| model.forward(&x).unwrap().sum().backward().unwrap())
    });
    g.finish();
}

fn ugswinsr(c: &mut Criterion) {
    let cfg = UgswinConfig { channels: 32, heads: 4, depth: 2, ..Default::default() };
    let model = Generator::<f32>::new(cfg, 0).unwrap();
    let x = randn(2, &[1, 32, 32, 3]);
    c.bench_function("ugswinsr/forward_32px", |b| b.iter(|| model.forward(&x).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = mswinsr, ugswinsr
}
criterion_main!(benches);
