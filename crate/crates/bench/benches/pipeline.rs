use std::hint::black_box;

use avsi::corruption::{build_mask, GapSpec};
use avsi::dsp::{istft, magnitude, reconstruct_phase, stft};
use avsi::metrics::stoi;
use avsi::model::{AvsiModel, ModelConfig};
use avsi::nn::{Graph, Tensor};
use avsi::train::{TrainConfig, Trainer};
use avsi::StftConfig;
use avsi_bench::{utterance, waveform};
use criterion::{criterion_group, criterion_main, Criterion};

fn dsp(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let w = waveform(1);
    let spec = stft(&w, &cfg).unwrap();
    let mag = magnitude(&spec);
    c.bench_function("stft_2s", |b| b.iter(|| stft(black_box(&w), &cfg).unwrap()));
    c.bench_function("istft_2s", |b| b.iter(|| istft(black_box(&spec), &cfg).unwrap()));
    let mut g = c.benchmark_group("slow");
    g.sample_size(10);
    g.bench_function("griffin_lim_50_2s", |b| {
        b.iter(|| reconstruct_phase(black_box(&mag), &cfg, 50).unwrap())
    });
    let degraded = istft(&reconstruct_phase(&mag, &cfg, 10).unwrap(), &cfg).unwrap();
    g.bench_function("stoi_2s", |b| b.iter(|| stoi(black_box(&w), &degraded).unwrap()));
    g.finish();
}

fn network(c: &mut Criterion) {
    let item = utterance(2);
    let mut model = AvsiModel::<f32>::new(ModelConfig::toy(32), 0).unwrap();
    model.set_dropout(0.0);
    let (k, l) = item.magnitude.shape();
    let mask = build_mask(&GapSpec::new(40, 25, l).unwrap(), k, l).unwrap();

    let d = model.config().d_model;
    let n = l + item.visual.as_ref().unwrap().frames();
    let x = Tensor::<f32>::from_f64(&[n, d], &vec![0.1; n * d]).unwrap();
    c.bench_function("attention_176x64", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            g.attention(v, v, v, 2, 0.0).unwrap()
        })
    });
    c.bench_function("toy_inpaint_2s", |b| {
        b.iter(|| model.inpaint(black_box(&item.magnitude), item.visual.as_ref(), &mask).unwrap())
    });

    let batch: Vec<_> = (0..10).map(|i| (i, &item)).collect();
    let mut trainer = Trainer::new(model.clone(), TrainConfig::default()).unwrap();
    let mut g = c.benchmark_group("slow");
    g.sample_size(10);
    g.bench_function("toy_train_step_batch10", |b| b.iter(|| trainer.train_step(&batch).unwrap()));
    g.finish();
}

criterion_group!(benches, dsp, network);
criterion_main!(benches);
