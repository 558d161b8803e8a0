//! Governance runtime for declarative LLM operational contracts.
//!
//! A contract document is parsed and validated into a [`contract::ContractDoc`],
//! then a run is driven through seven phases by [`engine`], with scoring in
//! [`hygiene`], adaptive budgets in [`budget`], context defense in
//! [`fallback`] and tracing in [`telemetry`]. Model calls go through a
//! [`backend::Backend`].

pub mod clock;
pub mod contract;
pub mod diag;
pub mod exec;
pub mod phase;
pub mod backend;
pub mod budget;
pub mod hygiene;
pub mod fallback;
pub mod telemetry;
pub mod engine;
pub mod cli;
