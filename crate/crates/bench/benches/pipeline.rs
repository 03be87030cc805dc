use criterion::{criterion_group, criterion_main, Criterion};
use epivsr::resample::{angular_decimate, lf_spatial_downsample};
use epivsr::synthetic::{generate, SceneSpec};
use epivsr::trainer::{build_evrn_pairs, Trainable};
use epivsr::{nvs::PasrMethod, EvrnConfig, EvrnWeights, SrModels, SrMode, SrTask};
use epivsr::{pipeline::PasrKind, resample::Patch, AngularAxis};
use std::hint::black_box;

fn evrn(c: &mut Criterion) {
    let lf = generate(&SceneSpec::new(1, 1.0, 48, 48, 9)).unwrap();
    let vol = lf.slice(AngularAxis::Tau).unwrap().swap_remove(4);
    let w = EvrnWeights::init(&EvrnConfig::desk(), 0).unwrap();
    c.bench_function("evrn desk refine 48x9x48", |b| b.iter(|| w.refine(black_box(&vol)).unwrap()));

    let patch = Patch { scene: "s".into(), y: 0, x: 0, lf: lf.crop_spatial(0, 0, 16, 16).unwrap() };
    let pairs = build_evrn_pairs(&[patch], SrMode::Ssr, 2, PasrMethod::Mean).unwrap();
    c.bench_function("evrn desk loss+grad 16x9x16", |b| b.iter(|| w.loss_and_grad(black_box(&pairs.pairs[0])).unwrap()));
}

fn super_resolve(c: &mut Criterion) {
    let hr = generate(&SceneSpec::new(2, 1.0, 48, 48, 9)).unwrap();
    let cfg = EvrnConfig { blocks: 1, channels: 8, reduction: 2, ..EvrnConfig::desk() };
    let w = EvrnWeights::init(&cfg, 0).unwrap();
    let models = SrModels { evrn: Some(&w), nvs: None, external: None };
    let low = lf_spatial_downsample(&hr, 2, true).unwrap();
    let sparse = angular_decimate(&hr).unwrap();
    let mut group = c.benchmark_group("super_resolve 48x48x9x9");
    group.sample_size(10);
    group.bench_function("ssr x2", |b| b.iter(|| epivsr::super_resolve(black_box(&low), &SrTask::ssr(2), &models).unwrap()));
    group.bench_function("asr 5x5 to 9x9", |b| {
        b.iter(|| epivsr::super_resolve(black_box(&sparse), &SrTask::asr(PasrKind::Mean), &models).unwrap())
    });
    group.finish();
}

criterion_group!(benches, evrn, super_resolve);
criterion_main!(benches);
