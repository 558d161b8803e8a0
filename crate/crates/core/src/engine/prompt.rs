//! Phase instructions, built verbatim from the contract text.

use std::collections::BTreeMap;

use crate::contract::ContractDoc;
use crate::phase::Phase;

fn bullets(out: &mut String, items: &[String]) {
    for s in items {
        out.push_str("- ");
        out.push_str(s);
        out.push('\n');
    }
}

/// Phase steps, then tool preambles and the selected agentic-mode text.
pub fn phase_instructions(doc: &ContractDoc, phase: Phase) -> String {
    let p = &doc.phases;
    let mut out = format!("[{}]\n", phase.key());
    match phase {
        Phase::Analysis => bullets(&mut out, &p.analysis_steps),
        Phase::Plan => bullets(&mut out, &p.plan_steps),
        Phase::Execution => {
            bullets(&mut out, &p.execution_rules);
            for extra in [&p.code_editing_rules, &p.zero_to_one_booster].into_iter().flatten() {
                out.push_str(extra.trim_end());
                out.push('\n');
            }
        }
        Phase::Validation => {
            for pr in &p.validation.procedures {
                out.push_str(&format!("- {}: {}\n", pr.id, pr.goal));
                for c in &pr.checks {
                    out.push_str(&format!("  - {c}\n"));
                }
            }
            bullets(&mut out, &p.validation.checks);
            let criteria: Vec<String> = doc
                .scoring
                .criteria
                .iter()
                .map(|c| format!("{}:{}", c.id, serde_json::to_value(c.logic).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()))
                .collect();
            out.push_str(&format!("criteria: {}\n", criteria.join(", ")));
        }
        Phase::Review => {
            for (k, v) in &p.review.metrics {
                out.push_str(&format!("- {k}: {v}\n"));
            }
            for r in &p.review.adaptive_actions {
                out.push_str(&format!("- when {} do {}\n", r.when, r.action));
            }
        }
        Phase::Handoff => bullets(&mut out, &p.handoff_deliverables),
        Phase::Changelog => {
            out.push_str(&p.changelog_format);
            out.push('\n');
        }
    }
    for pre in &p.preambles {
        out.push_str(pre.content.trim_end());
        out.push('\n');
    }
    let mode = p.agentic_modes.text_for(doc.eagerness());
    if !mode.is_empty() {
        out.push_str(mode.trim_end());
        out.push('\n');
    }
    out
}

/// Instructions for the dedicated checklist call.
pub fn checklist_instructions(doc: &ContractDoc) -> String {
    let c = &doc.scoring.checklist;
    format!(
        "[{}|checklist]\n- counterfactuals: at least {}\n- adversarial probes: {}\n- uncertainties: at most {}, classed epistemic/aleatoric with impact\n",
        Phase::Validation.key(),
        c.min_counterfactuals,
        c.adversarial_probes,
        c.max_uncertainty_items
    )
}

/// Replaces `{{name}}` slots; unknown slots are left as they are.
pub fn fill_template(template: &str, values: &BTreeMap<&str, String>) -> String {
    let re = regex::Regex::new(r"\{\{\s*([A-Za-z0-9_.]+)\s*\}\}").expect("static pattern");
    re.replace_all(template, |c: &regex::Captures<'_>| {
        values.get(&c[1]).cloned().unwrap_or_else(|| c[0].to_string())
    })
    .into_owned()
}

/// True for placeholders such as `<problem description>` or `{{x}}`.
pub fn is_placeholder(text: &str) -> bool {
    let t = text.trim();
    t.is_empty() || (t.starts_with('<') && t.ends_with('>')) || crate::contract::template_slot(t).is_some()
}
