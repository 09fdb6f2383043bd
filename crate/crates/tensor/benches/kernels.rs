use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use switchgan_tensor::kernels::{conv2d, conv2d_weight_grad};
use switchgan_tensor::{par, ConvGeom, Tensor};

fn ramp(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 31) % 17) as f64 * 0.01).collect())
}

fn conv_benchmark(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    group.sample_size(10);
    let geom = ConvGeom { stride: 2, pad: 2 };
    for &batch in &[1usize, 8] {
        let x = ramp(&[batch, 8, 64, 64]);
        let w = ramp(&[16, 8, 5, 5]);
        let y = conv2d(&x, &w, geom);
        for (label, parallel) in [("Parallel", true), ("Sequential", false)] {
            group.bench_with_input(BenchmarkId::new(format!("forward/{label}"), batch), &batch, |b, _| {
                par::set_parallel(parallel);
                b.iter(|| conv2d(&x, &w, geom));
            });
            group.bench_with_input(BenchmarkId::new(format!("weight_grad/{label}"), batch), &batch, |b, _| {
                par::set_parallel(parallel);
                b.iter(|| conv2d_weight_grad(&x, &y, 5, geom));
            });
        }
    }
    par::set_parallel(true);
    group.finish();
}

criterion_group!(benches, conv_benchmark);
criterion_main!(benches);
