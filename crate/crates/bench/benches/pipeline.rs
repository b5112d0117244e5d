use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Matrix3xX;
use nrsfm_core::codec;
use nrsfm_core::dcmdr::{build_adjacency, dcmdr_reconstruct, grid_layout, Connectivity, DcmdrConfig};
use nrsfm_core::dsp::{build_dsp, canonicalize_states, DynamicShapePrior};
use nrsfm_core::dspr::{dspr_frame, msgd_select, DsprConfig, DsprWeights};
use nrsfm_core::rigid::rigid_factorize;
use nrsfm_core::synth::{generate_scene, RotationSchedule, SceneConfig, ShapeSource, SyntheticScene};
use nrsfm_core::CameraPose;

fn sheet(rows: usize, cols: usize, frames: usize) -> SyntheticScene {
    generate_scene(&SceneConfig { shapes: ShapeSource::Sheet { rows, cols }, frames, schedule: RotationSchedule::A, seed: 1 })
        .unwrap()
}

fn prior(scene: &SyntheticScene) -> DynamicShapePrior {
    build_dsp(&canonicalize_states(&scene.gt_shapes, &scene.gt_poses, None).unwrap(), 0.0).unwrap()
}

fn bench_dspr_frame(c: &mut Criterion) {
    let mut group = c.benchmark_group("dspr_frame");
    for side in [20, 80, 260] {
        let scene = sheet(side, side, 32);
        let dsp = prior(&scene);
        let w_f = scene.w_clean.frame(11);
        let s_prev: Matrix3xX<f64> = dsp.state(10).clone();
        let config = DsprConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(side * side), &side, |b, _| {
            b.iter(|| dspr_frame(black_box(&w_f), &dsp, &s_prev, &CameraPose::identity(), &config).unwrap())
        });
    }
    group.finish();
}

fn bench_msgd(c: &mut Criterion) {
    let scene = sheet(20, 20, 256);
    let dsp = prior(&scene);
    let w_f = scene.w_clean.frame(100);
    let s_prev = dsp.state(0).clone();
    let weights = DsprWeights::default();
    let mut group = c.benchmark_group("msgd_select");
    for seeds in [1, 20, 256] {
        group.bench_with_input(BenchmarkId::from_parameter(seeds), &seeds, |b, &seeds| {
            b.iter(|| msgd_select(black_box(&w_f), &scene.gt_poses[100], &dsp, &s_prev, &weights, seeds).unwrap())
        });
    }
    group.finish();
}

fn bench_batch(c: &mut Criterion) {
    let scene = sheet(10, 10, 20);
    let adj = build_adjacency(&grid_layout(10, 10), &Connectivity::FourNeighborhood).unwrap();
    let config = DcmdrConfig { rank: Some(4), max_iterations: 5, ..Default::default() };
    let mut group = c.benchmark_group("batch");
    group.sample_size(10);
    group.bench_function("rigid_factorize", |b| b.iter(|| rigid_factorize(black_box(&scene.w_clean)).unwrap()));
    group.bench_function("dcmdr_5_iterations", |b| {
        b.iter(|| dcmdr_reconstruct(black_box(&scene.w_clean), &config, &adj).unwrap())
    });
    group.finish();
}

fn bench_codec(c: &mut Criterion) {
    let scene = sheet(20, 20, 60);
    let dsp = prior(&scene);
    let stream = codec::compress(&scene.w_clean, &dsp, &DsprConfig::default()).unwrap();
    let bytes = stream.to_bytes();
    c.bench_function("codec/decode_and_expand", |b| {
        b.iter(|| codec::decompress(&codec::CompressedStream::from_bytes(black_box(&bytes)).unwrap()).unwrap())
    });
}

criterion_group!(benches, bench_dspr_frame, bench_msgd, bench_batch, bench_codec);
criterion_main!(benches);
