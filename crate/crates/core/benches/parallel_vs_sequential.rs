use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use parcer_core::budget::{simulate_batch, TraceStep};
use parcer_core::contract::baseline;
use parcer_core::exec::ExecMode;
use parcer_core::fallback::{chunk_context, embed_chunks, HashEmbedder};
use parcer_core::hygiene::{weighted_scores, Scorecard};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn scoring(c: &mut Criterion) {
    let spec = &baseline().scoring;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cards: Vec<Scorecard> = (0..20_000)
        .map(|_| {
            let mut card = Scorecard::default();
            for cr in &spec.criteria {
                card.scores.insert(cr.id.clone(), rng.gen_range(0.0..=5.0));
            }
            card
        })
        .collect();
    let mut g = c.benchmark_group("weighted_scores");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, m| {
            b.iter(|| weighted_scores(*m, black_box(&cards), spec))
        });
    }
    g.finish();
}

fn embedding(c: &mut Criterion) {
    let text: String = (0..4_000).map(|i| format!("sentence {i} about latency and token budgets. ")).collect();
    let chunks = chunk_context(&text, 1_000);
    let embedder = HashEmbedder::new(7);
    let mut g = c.benchmark_group("embed_chunks");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, m| {
            b.iter(|| embed_chunks(*m, &embedder, black_box(&chunks), None).unwrap())
        });
    }
    g.finish();
}

fn budget_traces(c: &mut Criterion) {
    let spec = &baseline().budget;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let traces: Vec<Vec<TraceStep>> = (0..64)
        .map(|_| {
            (0..2_000)
                .map(|_| TraceStep { mus: rng.gen_range(0.0..=100.0), cost_usd: 0.0, wall_ms: 0.0 })
                .collect()
        })
        .collect();
    let mut g = c.benchmark_group("simulate_batch");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, m| {
            b.iter(|| simulate_batch(*m, spec, 6, black_box(&traces)))
        });
    }
    g.finish();
}

criterion_group!(benches, scoring, embedding, budget_traces);
criterion_main!(benches);
