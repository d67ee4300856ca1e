use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ecgdel_core::augment::augment_window;
use ecgdel_core::mask::encode_mask;
use ecgdel_core::metrics::{evaluate_record, ErrorMode};
use ecgdel_core::synth::{synth_record, SynthConfig};
use ecgdel_core::wfdb::{encode_212, parse_signal_212, RecordHeader, StorageFormat};
use ecgdel_core::{AugmentSpec, ModelConfig, UNet};
use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn decode_212(c: &mut Criterion) {
    let n = 650_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<i16> = (0..2 * n).map(|_| rng.random_range(-2048..2048)).collect();
    let bytes = encode_212(&samples);
    let header = RecordHeader {
        record_id: "bench".into(),
        n_leads: 2,
        fs: 250.0,
        n_samples: n,
        gain: vec![200.0; 2],
        baseline: vec![0.0; 2],
        storage_format: StorageFormat::Format212,
        files: vec!["bench.dat".into(); 2],
        lead_names: Vec::new(),
    };
    c.bench_function("decode_212_650k_x2", |b| {
        b.iter(|| parse_signal_212(black_box(&bytes), &header).unwrap())
    });
}

fn unet(c: &mut Criterion) {
    let model = UNet::<f32>::new(ModelConfig::default(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array3::from_shape_fn((4, 2048, 1), |_| rng.random_range(-1.0f32..1.0));
    let rec = synth_record("b", &SynthConfig::default(), &mut rng);
    let mask = encode_mask(rec.high_quality().unwrap(), 15_000, 250.0).unwrap();
    let y = mask
        .channels()
        .slice(ndarray::s![..2048, ..])
        .insert_axis(Axis(0))
        .broadcast((4, 2048, 3))
        .unwrap()
        .to_owned();
    let mut g = c.benchmark_group("unet_default_b4_l2048");
    g.sample_size(10);
    g.bench_function("forward", |b| b.iter(|| model.forward(black_box(x.view())).unwrap()));
    g.bench_function("forward_backward", |b| {
        b.iter(|| model.loss_and_gradients(x.view(), y.view()).unwrap())
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SynthConfig {
        n_samples: 250 * 900,
        high_quality_beats: None,
        ..SynthConfig::default()
    };
    let rec = synth_record("m", &cfg, &mut rng);
    let truth = rec.high_quality().unwrap().clone();
    let preds = vec![rec.low_quality(0).unwrap().clone(), rec.low_quality(1).unwrap().clone()];
    c.bench_function("evaluate_record_15min_2leads", |b| {
        b.iter(|| {
            evaluate_record("m", &truth, black_box(&preds), 250.0, None, ErrorMode::CrossLead)
                .unwrap()
        })
    });
}

fn augmentation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let window: Vec<f64> = (0..2048).map(|_| rng.random_range(-1.0..1.0)).collect();
    let specs: Vec<AugmentSpec> = AugmentSpec::default_set(6.0)
        .into_iter()
        .map(|s| s.with_probability(1.0))
        .collect();
    let onsets = [100usize, 400, 700, 1000, 1300, 1600, 1900];
    c.bench_function("augment_all_sources_2048", |b| {
        b.iter(|| augment_window(black_box(&window), &specs, 250.0, Some(&onsets), &mut rng).unwrap())
    });
}

criterion_group!(benches, decode_212, unet, metrics, augmentation);
criterion_main!(benches);
