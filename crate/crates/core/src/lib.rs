//! Dual-model code generation: a code specialist and a reasoning model
//! composed into plan-then-code, review-then-fix (with and without an
//! eval-retry loop), adversarial dual generation, spec-gated and
//! spec-enriched review, plus the benchmark harness and run analysis
//! around them.

pub mod analysis;
pub mod bench;
pub mod config;
pub mod extract;
pub mod gateway;
pub mod harness;
pub mod pipelines;
pub mod problem;
pub mod prompts;
pub mod sandbox;
pub mod testing;
