use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use srlite_bench::{attention_layer, randn};
use srlite_core::attention::MsaConfig;
use srlite_core::nn::conv2d;
use srlite_core::Tensor;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64usize, 128, 256] {
        let (a, b) = (randn(1, &[n, n]), randn(2, &[n, n]));
        g.throughput(Throughput::Elements((n * n * n) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| bench.iter(|| a.matmul(&b).unwrap()));
    }
    g.finish();
}

fn conv3x3(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3");
    for ch in [16usize, 60] {
        let x = randn(3, &[1, 64, 64, ch]);
        let w = randn(4, &[3, 3, ch, ch]);
        g.bench_with_input(BenchmarkId::new("forward", ch), &ch, |bench, _| {
            bench.iter(|| conv2d(&x, &w, None, 1).unwrap())
        });
        let wp = Tensor::parameter(w.to_vec(), w.shape()).unwrap();
        g.bench_with_input(BenchmarkId::new("forward_backward", ch), &ch, |bench, _| {
            bench.iter(|| conv2d(&x, &wp, None, 1).unwrap().sum().backward().unwrap())
        });
    }
    g.finish();
}

fn window_attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("window_attention");
    for (shifted, half) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = MsaConfig { channels: 60, heads: 6, window: 8, shifted, half };
        let (ps, layer) = attention_layer(cfg);
        let x = randn(5, &[1, 64, 64, 60]);
        let name = format!("{}{}", if shifted { "sw" } else { "w" }, if half { "-half" } else { "" });
        g.bench_function(name, |bench| bench.iter(|| layer.forward(&ps, &x).unwrap()));
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, conv3x3, window_attention
}
criterion_main!(benches);
