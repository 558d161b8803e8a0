use super::types::*;
use super::validate::WEIGHT_SUM_TOLERANCE;
use super::ContractError;

/// Resolves `profile_id` against `doc`, returning a new document.
///
/// Swaps rename a criterion everywhere it appears. Added criteria take their
/// weight out of the existing ones by uniform rescaling, so relative
/// priorities survive. Extra gates on criteria that are not scored yet bring
/// the criterion in with weight 0 (gate-only).
pub fn apply_profile(doc: &ContractDoc, profile_id: &str) -> Result<ContractDoc, ContractError> {
    let id: ProfileId = profile_id
        .parse()
        .map_err(|_| ContractError::UnknownProfile(profile_id.to_string()))?;
    if let Some(prev) = doc.resolved_profile {
        return Err(ContractError::ProfileAlreadyApplied(prev));
    }
    let profile = doc
        .profiles
        .get(&id)
        .ok_or_else(|| ContractError::UnknownProfile(profile_id.to_string()))?;
    let invalid = |message: String| ContractError::ProfileInvalid { profile: id, message };

    let mut out = doc.clone();
    let scoring = &mut out.scoring;

    for (from, to) in &profile.criterion_swaps {
        let crit = scoring
            .criteria
            .iter_mut()
            .find(|c| &c.id == from)
            .ok_or_else(|| invalid(format!("swap references unknown criterion \"{from}\"")))?;
        crit.id = to.clone();
        if let Some(w) = scoring.weights.remove(from) {
            scoring.weights.insert(to.clone(), w);
        }
        for g in scoring.gates.iter_mut().filter(|g| &g.id == from) {
            g.id = to.clone();
        }
    }

    let added: f64 = profile.added_criteria.iter().map(|(_, w)| w).sum();
    if !profile.added_criteria.is_empty() {
        if !(added > 0.0 && added < 1.0) {
            return Err(invalid(format!("added weight {added} outside (0, 1)")));
        }
        let scale = 1.0 - added;
        for w in scoring.weights.values_mut() {
            *w *= scale;
        }
        for (cid, w) in &profile.added_criteria {
            if scoring.criterion(cid).is_some() {
                return Err(invalid(format!(
                    "added criterion \"{cid}\" collides with an existing criterion"
                )));
            }
            scoring.criteria.push(Criterion {
                id: cid.clone(),
                logic: CriterionLogic::Direct,
            });
            scoring.weights.insert(cid.clone(), *w);
        }
    }

    for gate in &profile.extra_gates {
        if scoring.criterion(&gate.id).is_none() {
            scoring.criteria.push(Criterion {
                id: gate.id.clone(),
                logic: CriterionLogic::Direct,
            });
            scoring.weights.insert(gate.id.clone(), 0.0);
        }
        match scoring.gates.iter_mut().find(|g| g.id == gate.id) {
            Some(existing) => existing.min_score = existing.min_score.max(gate.min_score),
            None => scoring.gates.push(gate.clone()),
        }
    }

    let sum = scoring.weight_sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(invalid(format!("weights sum {sum} ≠ 1.0")));
    }
    out.switches.use_web_search = profile.use_web;
    out.resolved_profile = Some(id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{baseline, validate};
    use approx::assert_abs_diff_eq;

    #[test]
    fn education_rescales() {
        let doc = apply_profile(baseline(), "education").unwrap();
        let w = &doc.scoring.weights;
        let expected = [
            ("fitness", 0.225),
            ("faithfulness", 0.18),
            ("completeness", 0.135),
            ("clarity", 0.09),
            ("efficiency", 0.09),
            ("safety", 0.09),
            ("traceability", 0.09),
            ("a11y", 0.10),
        ];
        assert_eq!(w.len(), expected.len());
        for (k, v) in expected {
            assert_abs_diff_eq!(w[k], v, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(doc.scoring.weight_sum(), 1.0, epsilon = 1e-9);
        assert!(validate(&doc).is_empty(), "{:?}", validate(&doc));
    }

    #[test]
    fn coding_swaps_and_adds_gate_only_criterion() {
        let doc = apply_profile(baseline(), "coding").unwrap();
        let sc = &doc.scoring;
        assert!(sc.criterion("dx_maintainability").is_some());
        assert!(sc.criterion("traceability").is_none());
        assert_eq!(sc.weights["dx_maintainability"], 0.10);
        assert_eq!(sc.weights["tests_or_sanity"], 0.0);
        for (k, v) in &baseline().scoring.weights {
            if k != "traceability" {
                assert_eq!(sc.weights[k], *v);
            }
        }
        assert!(sc.gates.iter().any(|g| g.id == "tests_or_sanity" && g.min_score == 3));
        assert!(!doc.switches.use_web_search);
        assert!(validate(&doc).is_empty(), "{:?}", validate(&doc));
    }

    #[test]
    fn research_adds_traceability_gate() {
        let doc = apply_profile(baseline(), "research").unwrap();
        assert_eq!(doc.scoring.weights, baseline().scoring.weights);
        assert!(doc
            .scoring
            .gates
            .iter()
            .any(|g| g.id == "traceability" && g.min_score == 3));
        assert_eq!(doc.scoring.gates.len(), 4);
    }

    #[test]
    fn unknown_and_repeated_profiles() {
        assert!(matches!(
            apply_profile(baseline(), "legal"),
            Err(ContractError::UnknownProfile(_))
        ));
        let once = apply_profile(baseline(), "research").unwrap();
        assert!(matches!(
            apply_profile(&once, "coding"),
            Err(ContractError::ProfileAlreadyApplied(ProfileId::Research))
        ));
    }
}
