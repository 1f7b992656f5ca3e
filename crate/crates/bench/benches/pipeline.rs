use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use irfuse_core::config::ProjectConfig;
use irfuse_core::decomposition::{decompose_frequency, retinex_plane, DEFAULT_TAU};
use irfuse_core::metrics::report::evaluate_triple;
use irfuse_core::model::{fuse_image, plane_tensor, FusionModel};
use irfuse_core::training::synth::{smoke_pair, write_smoke_set};
use irfuse_core::training::{build_dataset, Stage1Data, Stage2Data, Trainer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plane(n: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..1.0))
}

fn decomposition(c: &mut Criterion) {
    let p = plane(128);
    c.bench_function("dct split 128x128", |b| {
        b.iter(|| decompose_frequency(black_box(p.view()), DEFAULT_TAU).unwrap())
    });
    c.bench_function("retinex 128x128", |b| {
        b.iter(|| retinex_plane(black_box(p.view()), 15.0, 1e-4))
    });
}

fn inference(c: &mut Criterion) {
    let cfg = ProjectConfig::default();
    let model = FusionModel::new(&cfg.model(), 0).unwrap();
    let (ir, vi) = smoke_pair(0, 64, 3).unwrap();
    let (irt, vit) = (plane_tensor(&ir), plane_tensor(&vi.luma()));
    c.bench_function("ddon enhance 64x64", |b| {
        let x = model.prepare(&irt, &vit).unwrap();
        b.iter(|| model.enhance(black_box(&x)).unwrap())
    });
    c.bench_function("fuse 64x64 rgb", |b| {
        b.iter(|| fuse_image(&model, black_box(&ir), black_box(&vi)).unwrap())
    });
    let fused = fuse_image(&model, &ir, &vi).unwrap();
    c.bench_function("six metrics 64x64", |b| {
        b.iter(|| evaluate_triple(&ir, &vi, black_box(&fused)).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    write_smoke_set(dir.path(), 4, 64, 7).unwrap();
    let mut cfg = ProjectConfig::default();
    cfg.train.crop_size = 64;
    cfg.train.batch_size = 4;
    let samples = build_dataset(dir.path(), &cfg.train, cfg.seed).unwrap();
    let mut g = c.benchmark_group("train step, 4 x 64x64");
    g.sample_size(10);
    let mut t = Trainer::new(&cfg).unwrap();
    let d1 = Stage1Data::build(&t.model, &samples).unwrap();
    g.bench_function("stage 1", |b| b.iter(|| t.stage1_step(&d1).unwrap()));
    let d2 = Stage2Data::build(&t.model, &samples).unwrap();
    g.bench_function("stage 2", |b| b.iter(|| t.stage2_step(&d2).unwrap()));
    g.finish();
}

criterion_group!(benches, decomposition, inference, training);
criterion_main!(benches);
