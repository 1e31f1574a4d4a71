use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use trialign::ag::{Graph, Tensor};
use trialign::geometry::{farthest_point_sample, PointCloud};
use trialign::model::{embed, init_params, EncoderConfig};
use trialign::synth::{Primitive, SynthBundle, SynthSpec};
use trialign::training::{contrastive_loss, LogitScale, Reduction, TrainConfig, Trainer};

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(), None).unwrap()
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor<f32> {
    let mut data = uniform(rng, rows * dim);
    for row in data.chunks_mut(dim) {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Tensor::matrix(rows, dim, data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256, 1024] {
        let a = Tensor::matrix(n, 128, uniform(&mut rng, n * 128)).unwrap();
        let b = Tensor::matrix(128, 256, uniform(&mut rng, 128 * 256)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::<f32>::new();
                let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
                let z = g.matmul(x, y).unwrap();
                black_box(g.value(z).data()[0])
            })
        });
    }
    group.finish();
}

fn fps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pc = cloud(&mut rng, 8192);
    let mut group = c.benchmark_group("fps_from_8192");
    for m in [512, 2048] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |bench, &m| {
            bench.iter(|| farthest_point_sample(black_box(&pc), m, 0).unwrap())
        });
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = EncoderConfig::with_dim(512);
    let params = init_params(&config, 0).unwrap();
    let batch: Vec<PointCloud> = (0..8).map(|_| cloud(&mut rng, 1024)).collect();
    c.bench_function("embed_8x1024", |bench| bench.iter(|| embed(&params, &config, black_box(&batch)).unwrap()));
}

fn loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("contrastive_loss_d512");
    for b in [32, 128] {
        let fp = unit_rows(&mut rng, b, 512);
        let fx = unit_rows(&mut rng, b, 512);
        group.bench_with_input(BenchmarkId::from_parameter(b), &b, |bench, _| {
            bench.iter(|| contrastive_loss(&fp, &fx, LogitScale::from_tau(0.07), Reduction::Mean).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let spec = SynthSpec {
        categories: vec![Primitive::Sphere, Primitive::Cube, Primitive::Cone, Primitive::Torus],
        train_per_class: 8,
        test_per_class: 1,
        points: 512,
        ..SynthSpec::default()
    };
    let bundle = SynthBundle::build(&spec).unwrap();
    let data = bundle.training_data().unwrap();
    let model = EncoderConfig::with_dim(spec.embed_dim);
    let config = TrainConfig { batch_size: 16, steps: u64::MAX, point_budget: 512, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&data, &model, &config).unwrap();
    c.bench_function("train_step_b16_n512", |bench| bench.iter(|| trainer.step().unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = matmul, fps, encode, loss, train_step
}
criterion_main!(kernels);
