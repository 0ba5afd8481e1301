//! Compares the rayon-parallel trial path against the sequential fallback on
//! the workloads the harness actually runs: batch watermarked generation
//! plus detection, and batch spoof testing.
//!
//! Run with `cargo bench`; the parallel arm is present only with the
//! `parallel` feature (default).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use spooflab::core::{RngStream, TokenSeq, WatermarkKey};
use spooflab::lm::{synthetic_corpus, train_markov, MarkovLM, SyntheticSpec};
use spooflab::parallel;
use spooflab::spooftest::{
    build_frequency_table, ngram_score, standard_test, FrequencyKind, FrequencyTable, Sidedness,
};
use spooflab::watermark::{
    color_trace_with, detect_from_trace, generate_watermarked_with, DedupMode, FrozenColorer,
    RedGreenParams,
};

struct Workload {
    lm: MarkovLM,
    colorer: FrozenColorer,
    params: RedGreenParams,
    table: FrequencyTable,
    prompts: Vec<TokenSeq>,
}

fn workload() -> Workload {
    let corpus = synthetic_corpus(&SyntheticSpec {
        vocab_size: 256,
        n_docs: 400,
        doc_len: 200,
        order: 2,
        max_branching: 24,
        zipf: 1.1,
        seed: 7,
    });
    let lm = train_markov(&corpus, 3, 0.05).unwrap();
    let params = RedGreenParams::new(2, 0.25, 2.0, WatermarkKey(0xBE11C0DE), corpus.vocab.len());
    let colorer = FrozenColorer::new(params);
    let table = build_frequency_table(
        &corpus.documents,
        corpus.vocab.len(),
        FrequencyKind::UnorderedNgram { h: 2 },
    )
    .unwrap();
    let prompts = corpus.documents[..64]
        .iter()
        .map(|d| TokenSeq::from_tokens(d[..8].to_vec()))
        .collect();
    Workload {
        lm,
        colorer,
        params,
        table,
        prompts,
    }
}

/// One trial: generate a watermarked text, detect it, and run the spoofing
/// test with the n-gram score.
fn trial(w: &Workload, i: usize) -> f64 {
    let mut rng = RngStream::new(0xB33F, i as u64);
    let prompt = &w.prompts[i % w.prompts.len()];
    let text = generate_watermarked_with(&w.colorer, &w.lm, prompt, 400, &mut rng).unwrap();
    let trace = color_trace_with(&w.colorer, &text, DedupMode::Context).unwrap();
    let det = detect_from_trace(&w.params, &trace).unwrap();
    let score = ngram_score(&w.table, &text, 2).unwrap();
    match standard_test(&trace, &score, Sidedness::TwoSided) {
        Ok(rep) => det.z + rep.z,
        Err(_) => det.z,
    }
}

fn bench_trial_batches(c: &mut Criterion) {
    let w = workload();
    let mut group = c.benchmark_group("trial_batch");
    group.sample_size(10);
    for &batch in &[16usize, 64] {
        group.bench_with_input(BenchmarkId::new("sequential", batch), &batch, |b, &n| {
            b.iter(|| black_box(parallel::map_indexed_seq(n, |i| trial(&w, i))))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", batch), &batch, |b, &n| {
            b.iter(|| black_box(parallel::map_indexed_par(n, |i| trial(&w, i))))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_trial_batches);
criterion_main!(benches);
