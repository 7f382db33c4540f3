//! Parallel versus sequential execution of the two hot paths: one matcher
//! training step and batched localizer inference.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpreg::ad::Tape;
use warpreg::data::{gen_composites, generate_digits, object_pair};
use warpreg::locnet::{detect_batch, LocNetModel, PairInput};
use warpreg::matcher::{masks_tensor, MatcherConfig, MatcherModel};
use warpreg::par;

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn matcher_step(c: &mut Criterion) {
    let digits = generate_digits(200, &mut ChaCha8Rng::seed_from_u64(1));
    let samples = gen_composites(&digits, 32, 112, 0..=0, 2).unwrap();
    let cfg = MatcherConfig::default();
    let pairs: Vec<_> = samples.iter().map(|s| object_pair(s, cfg.input_size).unwrap()).collect();
    let moving = masks_tensor::<f32>(&pairs.iter().map(|p| &p.0).collect::<Vec<_>>()).unwrap();
    let fixed = masks_tensor::<f32>(&pairs.iter().map(|p| &p.1).collect::<Vec<_>>()).unwrap();
    let model = MatcherModel::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();

    let mut group = c.benchmark_group("matcher_step");
    group.sample_size(10);
    for (name, seq) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| {
                let mut tape = Tape::new();
                let f = model.forward(&mut tape, &moving, &fixed).unwrap();
                let d = tape.soft_dice(f.warped, &fixed).unwrap();
                let loss = tape.mean(d);
                tape.backward(loss).unwrap()
            });
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn locnet_inference(c: &mut Criterion) {
    let digits = generate_digits(200, &mut ChaCha8Rng::seed_from_u64(4));
    let samples = gen_composites(&digits, 16, 112, 0..=3, 5).unwrap();
    let inputs: Vec<PairInput> = samples
        .iter()
        .map(|s| PairInput::new(&s.moving, &s.moving_mask, &s.fixed).unwrap())
        .collect();
    let refs: Vec<&PairInput> = inputs.iter().collect();
    let model = LocNetModel::<f32>::new(112, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();

    let mut group = c.benchmark_group("locnet_inference");
    group.sample_size(10);
    for (name, seq) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| detect_batch(&model, &refs).unwrap());
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, matcher_step, locnet_inference);
criterion_main!(benches);
