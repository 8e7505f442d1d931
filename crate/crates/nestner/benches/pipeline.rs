//! Throughput comparison of the data-parallel frozen-model pipeline
//! (`map_slice`, rayon when the `parallel` feature is on) against the
//! always-sequential baseline (`map_slice_seq`) on identical work.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nestner::classifier::{predict_entities, ClassifierConfig, ClassifierModel};
use nestner::corpus::synthetic::{gen_synthetic_nested, GrammarConfig};
use nestner::corpus::types::Sentence;
use nestner::corpus::vocab::build_vocab;
use nestner::detector::{DetectMode, DetectorConfig, DetectorModel};
use nestner::encoder::context::ContextProvider;
use nestner::encoder::word::WordDims;
use nestner::exec::{map_slice, map_slice_seq};

fn fixture() -> (DetectorModel, ClassifierModel, Vec<Sentence>) {
    let corpus = gen_synthetic_nested(3, 100, &GrammarConfig::default());
    let vocabs = build_vocab(&corpus, 1).unwrap();
    let dims = WordDims {
        d_w: 24,
        d_pos: 8,
        d_c: 8,
        d_cl: 8,
        use_pos: true,
    };
    let det_config = DetectorConfig {
        r: 6,
        word_dims: dims,
        d_wl: 20,
        d_sl: 20,
        gamma_init: 1.0,
        dropout: 0.1,
        ctx_layers: 0,
        ctx_width: 0,
    };
    let cls_config = ClassifierConfig {
        word_dims: dims,
        d_wl: 20,
        d_el: 20,
        d_ml: 20,
        d_h: 24,
        d_sl: 20,
        gamma_init: 1.0,
        dropout: 0.1,
        ctx_layers: 0,
        ctx_width: 0,
        use_context: true,
        use_attention: true,
        delta: 5.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let detector = DetectorModel::init(vocabs.clone(), det_config, None, &mut rng).unwrap();
    let classifier = ClassifierModel::init(vocabs, cls_config, &mut rng).unwrap();
    (detector, classifier, corpus)
}

fn bench_detect(c: &mut Criterion) {
    let (detector, _, corpus) = fixture();
    let provider = ContextProvider::None;
    let mut group = c.benchmark_group("detect_corpus");
    group.sample_size(10);
    group.bench_function("data_parallel", |b| {
        b.iter(|| {
            black_box(map_slice(&corpus, |s| {
                detector.detect(s, &provider, DetectMode::Nested).unwrap()
            }))
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            black_box(map_slice_seq(&corpus, |s| {
                detector.detect(s, &provider, DetectMode::Nested).unwrap()
            }))
        })
    });
    group.finish();
}

fn bench_end_to_end(c: &mut Criterion) {
    let (detector, classifier, corpus) = fixture();
    let provider = ContextProvider::None;
    let mut group = c.benchmark_group("predict_corpus");
    group.sample_size(10);
    group.bench_function("data_parallel", |b| {
        b.iter(|| {
            black_box(map_slice(&corpus, |s| {
                predict_entities(&detector, &classifier, s, &provider, DetectMode::Nested)
                    .unwrap()
            }))
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            black_box(map_slice_seq(&corpus, |s| {
                predict_entities(&detector, &classifier, s, &provider, DetectMode::Nested)
                    .unwrap()
            }))
        })
    });
    group.finish();
}

fn bench_features(c: &mut Criterion) {
    let (detector, _, corpus) = fixture();
    let provider = ContextProvider::None;
    let mut group = c.benchmark_group("sentence_features");
    group.sample_size(10);
    group.bench_function("data_parallel", |b| {
        b.iter(|| {
            black_box(map_slice(&corpus, |s| {
                detector.sentence_features(s, &provider).unwrap()
            }))
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            black_box(map_slice_seq(&corpus, |s| {
                detector.sentence_features(s, &provider).unwrap()
            }))
        })
    });
    group.finish();
}

criterion_group!(benches, bench_detect, bench_end_to_end, bench_features);
criterion_main!(benches);
