use std::collections::BTreeMap;

use parcer_core::contract::{baseline, Criterion, CriterionLogic, Gate, ScoringSpec};
use parcer_core::hygiene::{
    apply_gates, build_scorecard, decide_verdict, noise_index, score_inverse, weighted_score, Evaluation, GateStatus,
    Scorecard, Verdict,
};
use proptest::prelude::*;

/// Weights as published for the baseline contract.
const PUBLISHED: [(&str, f64); 7] = [
    ("fitness", 0.25),
    ("faithfulness", 0.20),
    ("completeness", 0.15),
    ("clarity", 0.10),
    ("efficiency", 0.10),
    ("safety", 0.10),
    ("traceability", 0.10),
];

const DIRECT: [&str; 6] = ["fitness", "faithfulness", "completeness", "clarity", "safety", "traceability"];

fn direct_scores() -> impl Strategy<Value = BTreeMap<String, f64>> {
    prop::collection::vec(0.0f64..=5.0, 6).prop_map(|v| DIRECT.iter().map(|k| k.to_string()).zip(v).collect())
}

/// Independent oracle: 100 · Σ wᵢ·sᵢ/5 with efficiency = 5·(1 − min(u, 1)).
fn oracle(direct: &BTreeMap<String, f64>, utilization: f64) -> f64 {
    PUBLISHED
        .iter()
        .map(|(id, w)| {
            let s = if *id == "efficiency" { 5.0 * (1.0 - utilization.min(1.0)) } else { direct[*id] };
            w * s / 5.0 * 100.0
        })
        .sum()
}

fn random_spec() -> impl Strategy<Value = (ScoringSpec, Scorecard)> {
    prop::collection::vec((0.01f64..1.0, 0.0f64..=5.0), 1..10).prop_map(|raw| {
        let total: f64 = raw.iter().map(|(w, _)| w).sum();
        let mut spec = ScoringSpec::default();
        let mut card = Scorecard::default();
        for (i, (w, s)) in raw.iter().enumerate() {
            let id = format!("c{i}");
            spec.criteria.push(Criterion { id: id.clone(), logic: CriterionLogic::Direct });
            spec.weights.insert(id.clone(), w / total);
            card.scores.insert(id, *s);
        }
        (spec, card)
    })
}

proptest! {
    #[test]
    fn weighted_matches_published_oracle(direct in direct_scores(), u in 0.0f64..2.0) {
        let spec = baseline().scoring.clone();
        let card = build_scorecard(&spec, &direct, u, "e1").unwrap();
        let got = weighted_score(&card, &spec).unwrap();
        prop_assert!((got - oracle(&direct, u)).abs() <= 1e-9, "{} vs {}", got, oracle(&direct, u));
    }

    #[test]
    fn weighted_matches_summation_on_random_specs((spec, card) in random_spec()) {
        let want: f64 = spec.criteria.iter().map(|c| 100.0 * spec.weights[&c.id] * card.scores[&c.id] / 5.0).sum();
        let got = weighted_score(&card, &spec).unwrap();
        prop_assert!((got - want).abs() <= 1e-9);
        prop_assert!((0.0..=100.0).contains(&got));
    }

    #[test]
    fn raising_a_direct_score_never_lowers_weighted(
        direct in direct_scores(), u in 0.0f64..1.5, which in 0usize..6, bump in 0.0f64..5.0,
    ) {
        let spec = baseline().scoring.clone();
        let before = weighted_score(&build_scorecard(&spec, &direct, u, "e").unwrap(), &spec).unwrap();
        let mut raised = direct.clone();
        let k = DIRECT[which].to_string();
        raised.insert(k.clone(), (direct[&k] + bump).min(5.0));
        let after = weighted_score(&build_scorecard(&spec, &raised, u, "e").unwrap(), &spec).unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn utilization_never_raises_efficiency(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (score_inverse(lo).unwrap(), score_inverse(hi).unwrap());
        prop_assert!(s_hi <= s_lo);
        prop_assert!((0.0..=5.0).contains(&s_lo) && (0.0..=5.0).contains(&s_hi));
    }

    #[test]
    fn accept_implies_gates_and_quality(
        direct in direct_scores(), u in 0.0f64..1.5, rounds in 0u32..5, max_rounds in 0u32..4, min_q in 0.0f64..1.0,
        mins in prop::collection::vec(0u8..=5, 3),
    ) {
        let spec = baseline().scoring.clone();
        let card = build_scorecard(&spec, &direct, u, "e").unwrap();
        let gates: Vec<Gate> = ["faithfulness", "fitness", "safety"]
            .iter()
            .zip(&mins)
            .map(|(id, m)| Gate { id: id.to_string(), min_score: *m })
            .collect();
        let status = apply_gates(&card, &gates).unwrap();
        let weighted = weighted_score(&card, &spec).unwrap();
        let verdict = decide_verdict(&status, weighted, rounds, max_rounds, min_q);
        if verdict == Verdict::Accept {
            prop_assert!(status.values().all(|s| *s == GateStatus::Pass));
            prop_assert!(weighted >= 100.0 * min_q);
        }
        if status.get("safety") == Some(&GateStatus::Fail) {
            prop_assert_eq!(verdict, Verdict::Reject);
        }
        for g in &gates {
            let pass = card.scores[&g.id] >= f64::from(g.min_score);
            prop_assert_eq!(status[&g.id] == GateStatus::Pass, pass);
        }
    }

    #[test]
    fn noise_index_is_symmetric(a in direct_scores(), b in direct_scores(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let spec = baseline().scoring.clone();
        let eval = |d: &BTreeMap<String, f64>, u: f64| {
            let card = build_scorecard(&spec, d, u, "e").unwrap();
            let weighted = weighted_score(&card, &spec).unwrap();
            Evaluation { card, weighted }
        };
        let (ea, eb) = (eval(&a, u), eval(&b, v));
        let ab = noise_index(&ea, &eb).unwrap();
        let ba = noise_index(&eb, &ea).unwrap();
        prop_assert_eq!(ab.noise_index, ba.noise_index);
        prop_assert_eq!(ab.per_criterion, ba.per_criterion);
        prop_assert_eq!(noise_index(&ea, &ea).unwrap().noise_index, 0.0);
        prop_assert!((0.0..=1.0).contains(&ab.noise_index));
    }
}
