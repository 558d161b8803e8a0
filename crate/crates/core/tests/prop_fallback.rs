mod common;

use common::oracles::{cosine, mmr_bruteforce};
use parcer_core::backend::{ModelRequest, Transcript, TranscriptBackend};
use parcer_core::contract::{baseline, FallbackAction, FallbackSpec, Level};
use parcer_core::fallback::{
    chunk_context, cosine_sim, mmr_select, mmr_select_matrix, run_cascade, CascadeEnv, ContextBundle, EmbeddingCache,
    HashEmbedder, StageOptions,
};
use parcer_core::phase::Phase;
use proptest::prelude::*;
use serde_json::json;

fn template() -> ModelRequest {
    ModelRequest {
        phase: Phase::Execution,
        instructions: String::new(),
        context: String::new(),
        previous_response_id: None,
        reasoning_effort: Level::Medium,
        verbosity: Level::Low,
        temperature: 0.0,
        seed: None,
        tool_allowance: 0,
        max_output_tokens: None,
        use_web: false,
    }
}

fn replies(confidences: &[f64]) -> TranscriptBackend {
    let lines: Vec<String> = confidences
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({"match": {"phase": "3_execution"}, "response": {
                "response_id": format!("s{i}"), "text": format!("summary {i}"), "response_tokens": 5,
                "response_cost": 0.0, "response_time_ms": 1, "structured": {"confidence": c}}})
            .to_string()
        })
        .collect();
    TranscriptBackend::new(Transcript::parse(&lines.join("\n")).unwrap())
}

/// Symmetric similarity matrices on a 0.1 grid, so ties are common.
fn grid_instance() -> impl Strategy<Value = (Vec<String>, Vec<f64>, Vec<Vec<f64>>, usize, f64)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            Just(n).prop_map(|n| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(0u8..=10, n),
            prop::collection::vec(0u8..=10, n * n),
            1usize..=6,
            prop::sample::select(vec![0.0, 0.3, 0.5, 0.7, 1.0]),
        )
            .prop_map(move |(ids, rel, raw, k, lambda)| {
                let rel: Vec<f64> = rel.iter().map(|r| f64::from(*r) / 10.0).collect();
                let mut sim = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        let v = f64::from(raw[i.min(j) * n + i.max(j)]) / 10.0;
                        sim[i][j] = if i == j { 1.0 } else { v };
                    }
                }
                (ids, rel, sim, k, lambda)
            })
    })
}

fn vectors() -> impl Strategy<Value = Vec<(String, Vec<f64>)>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..=6).prop_map(|vs| {
        vs.into_iter()
            .enumerate()
            .map(|(i, mut v)| {
                if v.iter().all(|x| *x == 0.0) {
                    v[0] = 1.0;
                }
                (format!("c{i}"), v)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn chunks_tile_the_input(text in any::<String>(), size in 1usize..64) {
        let chunks = chunk_context(&text, size);
        let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
        prop_assert_eq!(&joined, &text);
        let total = text.chars().count();
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.index, i);
            prop_assert_eq!(c.char_span.1 - c.char_span.0, c.text.chars().count());
            prop_assert!(c.text.chars().count() <= size);
        }
        prop_assert_eq!(chunks.len(), total.div_ceil(size));
    }

    #[test]
    fn mmr_matches_bruteforce((ids, rel, sim, k, lambda) in grid_instance(), min_sim in prop::sample::select(vec![0.0, 0.3, 0.6])) {
        let got = mmr_select_matrix(&ids, &rel, &|i, j| sim[i][j], k, lambda, min_sim);
        let want = mmr_bruteforce(&ids, &rel, &sim, k, lambda, min_sim);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn mmr_ignores_input_order(cands in vectors(), seed in any::<u64>(), k in 1usize..=6) {
        let query = [0.5, -0.25, 1.0, 0.125];
        let base = mmr_select(&query, &cands, k, 0.3, -1.0).unwrap();
        let mut shuffled = cands.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        prop_assert_eq!(mmr_select(&query, &shuffled, k, 0.3, -1.0).unwrap(), base);
    }

    #[test]
    fn cosine_agrees_with_reference(a in prop::collection::vec(-1.0f64..1.0, 1..8), shift in -1.0f64..1.0) {
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
        let got = cosine_sim(&a, &b).unwrap();
        prop_assert!((got - cosine(&a, &b).clamp(-1.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn cascade_attempts_a_prefix_of_the_order(
        order in Just(vec!["summary", "rag", "rag_then_summary", "partial", "bogus"]).prop_shuffle()
            .prop_flat_map(|v| (0usize..=5).prop_map(move |n| v[..n].to_vec())),
        confidences in prop::collection::vec(0.0f64..1.0, 0..12),
    ) {
        let mut spec: FallbackSpec = baseline().fallback.clone();
        spec.action_order = order.iter().map(|s| FallbackAction::parse(s)).collect();
        spec.map_chunk_chars = 40;
        let backend = replies(&confidences);
        let embedder = HashEmbedder::new(3);
        let env = CascadeEnv {
            backend: &backend,
            template: template(),
            embedder: Some(&embedder),
            cache: None,
            query: "latency budget",
            stats_probe: None,
            opts: StageOptions::default(),
        };
        let text = "The latency budget is two seconds. The token budget is 2000. Caching helps latency.";
        let out = run_cascade(&ContextBundle::new(text), &spec, &env);
        let attempted: Vec<&str> = out.stages.iter().map(|s| s.action.as_str()).collect();
        prop_assert!(attempted.len() <= order.len());
        prop_assert_eq!(&attempted[..], &order[..attempted.len()]);
        if let Some(p) = attempted.iter().position(|a| *a == "partial") {
            prop_assert_eq!(p, attempted.len() - 1);
        }
    }
}

#[test]
fn warm_cache_gives_the_same_selection() {
    let mut spec: FallbackSpec = baseline().fallback.clone();
    spec.action_order = vec![FallbackAction::Rag];
    spec.map_chunk_chars = 30;
    spec.stop_when_confidence = 0.0;
    spec.min_top1_sim = -1.0;
    spec.min_avg_topk_sim = -1.0;
    spec.rag_min_sim = -1.0;
    let text = "alpha beta gamma. latency is high. budget tokens limited. cache hit ratio low. alpha again here.";
    let embedder = HashEmbedder::new(11);
    let backend = replies(&[]);
    let dir = tempfile::tempdir().unwrap();
    let cache = EmbeddingCache::new(dir.path());
    let run = |cache: Option<&EmbeddingCache>| {
        let env = CascadeEnv {
            backend: &backend,
            template: template(),
            embedder: Some(&embedder),
            cache,
            query: "alpha latency",
            stats_probe: None,
            opts: StageOptions::default(),
        };
        run_cascade(&ContextBundle::new(text), &spec, &env)
    };
    let uncached = run(None);
    let cold = run(Some(&cache));
    assert!(!cache.read_meta().is_empty());
    let warm = run(Some(&cache));
    assert_eq!(cold.resulting_context, uncached.resulting_context);
    assert_eq!(warm.resulting_context, cold.resulting_context);
    assert_eq!(warm.stages, cold.stages);
}

#[test]
fn worked_mmr_example() {
    let ids: Vec<String> = ["c1", "c2", "c3"].iter().map(|s| s.to_string()).collect();
    let rel = [0.9, 0.85, 0.4];
    let sim = [[1.0, 0.95, 0.1], [0.95, 1.0, 0.5], [0.1, 0.5, 1.0]];
    let picked = mmr_select_matrix(&ids, &rel, &|i, j| sim[i][j], 2, 0.3, 0.30);
    assert_eq!(picked, [0, 2]);
    let sim_v: Vec<Vec<f64>> = sim.iter().map(|r| r.to_vec()).collect();
    assert_eq!(mmr_bruteforce(&ids, &rel, &sim_v, 2, 0.3, 0.30), [0, 2]);
}
