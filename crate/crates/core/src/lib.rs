//! Experiment harness for the nine-instance clone-awareness Theory of Mind
//! protocol.
//!
//! Two instances decide whether a test-taking clone needs extra instructions
//! (one of them is told the taker is its clone), a referee picks the more
//! useful instruction set, three instances sit the Strange Stories test
//! (unaided, and with each instruction set), and three scorers grade those
//! answers with the 0-2 rubric. Every trial is recorded in full and the
//! record files feed an offline statistics pipeline.
//!
//! - [`model`]: trial records and their invariants
//! - [`backend`]: chat-completions HTTP client and a scripted mock
//! - [`protocol`]: prompt templates and prompt assembly
//! - [`orchestrator`]: the per-trial dependency graph and batch runner
//! - [`parsing`]: answers, rubric scores, referee verdicts
//! - [`metrics`]: character length and Shannon entropy
//! - [`stats`]: t-tests, exact binomial test, logistic and OLS regression
//! - [`analysis`]: batch aggregation into the report tables
//! - [`store`]: append-only record files
//! - [`report`]: text and JSON rendering of an analysis
//! - [`cli`]: command-line front end

pub mod analysis;
pub mod backend;
pub mod cli;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod parsing;
pub mod protocol;
pub mod report;
pub mod stats;
pub mod store;

pub use model::{RoleId, TrialRecord};
