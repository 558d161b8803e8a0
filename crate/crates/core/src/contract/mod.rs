//! Declarative operational contracts: in-memory form, parsing, validation,
//! profile resolution, mini-dialect desugaring and graph-contract emission.
//!
//! A [`ContractDoc`] is immutable once built and is the single source of
//! every limit and threshold used by the runtime.

mod graph;
mod mini;
mod parse;
mod profile;
mod reader;
mod serialize;
mod types;
mod validate;

use std::sync::OnceLock;

pub use graph::{compile_graph_contract, EdgeSpec, GraphContract, NodeSpec};
pub use mini::desugar_mini;
pub use parse::{load_contract, parse_contract, Dialect, ParseFailure, Parsed};
pub use profile::apply_profile;
pub use serialize::{serialize_contract, to_yaml_value};
pub use types::*;
pub use validate::validate;

/// Source text of the canonical v1.4.7 contract.
pub const BASELINE_SOURCE: &str = include_str!("../../fixtures/parcer_v1_4_7.yaml");

/// The canonical contract, parsed once. Supplies defaults for missing blocks
/// and the scoring/budget blocks injected into desugared mini contracts.
pub fn baseline() -> &'static ContractDoc {
    static BASE: OnceLock<ContractDoc> = OnceLock::new();
    BASE.get_or_init(|| {
        parse::parse_strict(BASELINE_SOURCE)
            .expect("embedded baseline contract parses")
            .doc
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ContractError {
    #[error("unknown profile \"{0}\"")]
    UnknownProfile(String),
    #[error("profile {0} already applied")]
    ProfileAlreadyApplied(ProfileId),
    #[error("profile {profile}: {message}")]
    ProfileInvalid { profile: ProfileId, message: String },
    #[error("unknown mode \"{0}\"")]
    UnknownMode(String),
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Diagnostics(Vec<crate::diag::Diagnostic>),
}
