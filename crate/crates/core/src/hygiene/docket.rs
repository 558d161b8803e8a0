//! Evidence docket, assumptions register and derivation links.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::HygieneError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub evidence_id: String,
    pub source: String,
    #[serde(default)]
    pub retrieved_at: String,
    pub excerpt: String,
    #[serde(default)]
    pub relevance_note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impact {
    Low,
    #[serde(alias = "medium")]
    Med,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption {
    pub assumption_id: String,
    pub statement: String,
    #[serde(alias = "impact_low_med_high")]
    pub impact: Impact,
    #[serde(default)]
    pub mitigation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationLink {
    pub objective_item: String,
    pub supporting_evidence_ids: Vec<String>,
}

/// Checks id uniqueness and non-empty excerpts.
pub fn check_docket(docket: &[EvidenceItem]) -> Result<(), HygieneError> {
    let mut seen = BTreeSet::new();
    for e in docket {
        if !seen.insert(e.evidence_id.as_str()) {
            return Err(HygieneError::DuplicateId(e.evidence_id.clone()));
        }
        if e.excerpt.trim().is_empty() {
            return Err(HygieneError::EmptyExcerpt(e.evidence_id.clone()));
        }
    }
    Ok(())
}

pub fn check_register(register: &[Assumption]) -> Result<(), HygieneError> {
    let mut seen = BTreeSet::new();
    for a in register {
        if !seen.insert(a.assumption_id.as_str()) {
            return Err(HygieneError::DuplicateId(a.assumption_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionMapping {
    pub assertion: String,
    /// Empty means MISSING.
    pub evidence_ids: Vec<String>,
}

impl AssertionMapping {
    pub fn is_missing(&self) -> bool {
        self.evidence_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub mappings: Vec<AssertionMapping>,
    pub missing: Vec<String>,
    pub alignment_ratio: f64,
    /// Date/unit/name consistency verdict as reported by the backend.
    pub consistency: Option<String>,
}

pub const MISSING: &str = "MISSING";

pub fn check_evidence_alignment(
    docket: &[EvidenceItem],
    derivation: &[DerivationLink],
    key_assertions: &[String],
    consistency: Option<&str>,
) -> Result<AlignmentReport, HygieneError> {
    let ids: BTreeSet<&str> = docket.iter().map(|e| e.evidence_id.as_str()).collect();
    let mut by_item: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for link in derivation {
        for id in &link.supporting_evidence_ids {
            if !ids.contains(id.as_str()) {
                return Err(HygieneError::DanglingEvidence(id.clone()));
            }
        }
        by_item
            .entry(link.objective_item.as_str())
            .or_default()
            .extend(link.supporting_evidence_ids.iter().cloned());
    }
    let mappings: Vec<AssertionMapping> = key_assertions
        .iter()
        .map(|a| AssertionMapping {
            assertion: a.clone(),
            evidence_ids: by_item.get(a.as_str()).cloned().unwrap_or_default(),
        })
        .collect();
    let missing: Vec<String> = mappings.iter().filter(|m| m.is_missing()).map(|m| m.assertion.clone()).collect();
    let alignment_ratio = if mappings.is_empty() {
        1.0
    } else {
        (mappings.len() - missing.len()) as f64 / mappings.len() as f64
    };
    Ok(AlignmentReport {
        mappings,
        missing,
        alignment_ratio,
        consistency: consistency.map(str::to_string),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str) -> EvidenceItem {
        EvidenceItem {
            evidence_id: id.into(),
            source: "https://example.org".into(),
            retrieved_at: "2025-01-01".into(),
            excerpt: "x".into(),
            relevance_note: String::new(),
        }
    }

    fn link(item: &str, ids: &[&str]) -> DerivationLink {
        DerivationLink {
            objective_item: item.into(),
            supporting_evidence_ids: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn ratios() {
        let docket = [ev("E1"), ev("E2")];
        let asserts: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let full = [link("a", &["E1"]), link("b", &["E2"]), link("c", &["E1"]), link("d", &["E1", "E2"])];
        let r = check_evidence_alignment(&docket, &full, &asserts, None).unwrap();
        assert_eq!(r.alignment_ratio, 1.0);
        assert!(r.missing.is_empty());
        let r = check_evidence_alignment(&docket, &full[..3], &asserts, Some("consistent")).unwrap();
        assert_eq!(r.alignment_ratio, 0.75);
        assert_eq!(r.missing, ["d"]);
        assert_eq!(r.consistency.as_deref(), Some("consistent"));
    }

    #[test]
    fn dangling() {
        let err = check_evidence_alignment(&[ev("E1")], &[link("a", &["E9"])], &[], None).unwrap_err();
        assert_eq!(err.to_string(), "dangling evidence id \"E9\"");
    }

    #[test]
    fn docket_rules() {
        assert!(check_docket(&[ev("E1"), ev("E1")]).is_err());
        let mut e = ev("E2");
        e.excerpt = " ".into();
        assert!(check_docket(&[e]).is_err());
    }
}
