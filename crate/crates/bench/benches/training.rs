use criterion::{criterion_group, criterion_main, Criterion};
use longreach_core::attention::AttentionKind;
use longreach_core::numcore::rng::substream;
use longreach_core::numcore::Graph;
use longreach_core::seq2seq::{encode_examples, Mode, Model, ModelConfig};
use longreach_core::tasks::{generate_splits, Variant};

/// Forward and backward pass over one batch of 64 training examples.
fn train_batch(c: &mut Criterion) {
    let splits = generate_splits(Variant::Standard, 0).unwrap();
    let (src, tgt) = encode_examples(&splits.train[..64]).unwrap();
    let mut group = c.benchmark_group("train_batch");
    group.sample_size(10);
    for kind in [AttentionKind::ScaledDot, AttentionKind::Location, AttentionKind::Mix] {
        let model = Model::<f32>::new(ModelConfig::new(kind, 0)).unwrap();
        group.bench_function(kind.name(), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let fwd = model.teacher_forced(&mut g, &src, &tgt, Mode::Train, &mut substream(0, "dropout")).unwrap();
                let loss = model.loss(&mut g, &fwd, &tgt).unwrap();
                g.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

/// Greedy decoding of 128 long5 sources.
fn decode(c: &mut Criterion) {
    let splits = generate_splits(Variant::Standard, 0).unwrap();
    let (src, tgt) = encode_examples(&splits.long[4][..128]).unwrap();
    let max_len = 2 * tgt.iter().map(Vec::len).max().unwrap() + 5;
    let model = Model::<f32>::new(ModelConfig::new(AttentionKind::Location, 0)).unwrap();
    let mut group = c.benchmark_group("decode");
    group.sample_size(10);
    group.bench_function("location_long5", |b| b.iter(|| model.greedy_decode_batch(&src, max_len, false).unwrap()));
    group.finish();
}

criterion_group!(benches, train_batch, decode);
criterion_main!(benches);
