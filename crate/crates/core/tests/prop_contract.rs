use parcer_core::contract::{
    apply_profile, baseline, desugar_mini, parse_contract, serialize_contract, validate, ContractDoc, BASELINE_SOURCE,
};
use parcer_core::diag::has_errors;
use proptest::prelude::*;

const MINI_SOURCE: &str = include_str!("../fixtures/parcer_mini_v0_1.yaml");

/// Seven positive weights over the baseline criteria, normalized to 1.
fn weight_vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 7).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    })
}

fn with_weights(w: &[f64]) -> ContractDoc {
    let mut doc = baseline().clone();
    let ids: Vec<String> = doc.scoring.criteria.iter().map(|c| c.id.clone()).collect();
    for (id, w) in ids.iter().zip(w) {
        doc.scoring.weights.insert(id.clone(), *w);
    }
    doc
}

fn mini_source(
    effort: &str,
    verbosity: &str,
    calls: u32,
    confidence: f64,
    use_web: bool,
    max_tokens: u32,
    thorough: bool,
) -> String {
    let mode = if thorough { "thorough" } else { "quick" };
    MINI_SOURCE
        .replace(
            "quick: {reasoning_effort: low, verbosity: low, tool_call_budget: {max_calls: 2}, stop_when_confidence: 0.8}",
            &format!(
                "quick: {{reasoning_effort: {effort}, verbosity: {verbosity}, tool_call_budget: {{max_calls: {calls}}}, stop_when_confidence: {confidence}}}"
            ),
        )
        .replace(
            "preferences: {mode: quick, use_web: false, max_tokens: 1200}",
            &format!("preferences: {{mode: {mode}, use_web: {use_web}, max_tokens: {max_tokens}}}"),
        )
}

#[test]
fn fixtures_round_trip() {
    let doc = parse_contract(BASELINE_SOURCE).unwrap().doc;
    let again = parse_contract(&serialize_contract(&doc)).unwrap().doc;
    assert_eq!(again, doc);
    for p in ["research", "coding", "education"] {
        let resolved = apply_profile(&doc, p).unwrap();
        assert!(validate(&resolved).is_empty(), "{p}: {:?}", validate(&resolved));
    }
    let mini = desugar_mini(MINI_SOURCE).unwrap();
    assert!(validate(&mini).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn profiles_keep_weight_sum(w in weight_vector()) {
        let doc = with_weights(&w);
        prop_assert!(validate(&doc).is_empty(), "{:?}", validate(&doc));
        for p in ["research", "coding", "education"] {
            let resolved = apply_profile(&doc, p).unwrap();
            prop_assert!((resolved.scoring.weight_sum() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn serialize_then_parse_is_identity(
        w in weight_vector(), heat in 20.0f64..60.0, cool in 0.0f64..19.0, alpha in 0.05f64..=1.0, rounds in 0u32..6,
    ) {
        let mut doc = with_weights(&w);
        doc.budget.mus_heat = heat;
        doc.budget.mus_cool = cool;
        doc.budget.ema_alpha = alpha;
        doc.connectors.max_rounds = rounds;
        let text = serialize_contract(&doc);
        let back = parse_contract(&text).unwrap().doc;
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn validate_is_deterministic(w in prop::collection::vec(-0.5f64..1.5, 7), heat in -10.0f64..120.0) {
        let mut doc = with_weights(&w);
        doc.budget.mus_heat = heat;
        let a = validate(&doc);
        let b = validate(&doc.clone());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn desugared_mini_always_validates(
        effort in prop::sample::select(vec!["low", "medium", "high"]),
        verbosity in prop::sample::select(vec!["low", "medium", "high"]),
        calls in 1u32..12,
        confidence in 0.5f64..=1.0,
        use_web: bool,
        max_tokens in 1u32..20_000,
        thorough: bool,
    ) {
        let src = mini_source(effort, verbosity, calls, confidence, use_web, max_tokens, thorough);
        let doc = desugar_mini(&src).unwrap();
        let diags = validate(&doc);
        prop_assert!(!has_errors(&diags), "{:?}", diags);
    }
}
