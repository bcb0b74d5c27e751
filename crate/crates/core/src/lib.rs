//! Neural intuition with symbolic cleanup.
//!
//! A model produces a fast per-position answer together with a *reflection
//! vector* that flags positions it suspects are inconsistent with the domain
//! rules. Flagged positions are blanked and handed to an exact solver
//! (abduction), which fills them back in so the final output always satisfies
//! the knowledge base. The reflection head is trained from the knowledge base
//! alone via a score-function gradient on the consistency improvement it
//! achieves, so it needs no labels.
//!
//! Crate layout:
//! - [`autodiff`]: a small reverse-mode tape engine (f64 throughout) plus Adam.
//! - [`graph`]: undirected graphs and the Sudoku constraint graph.
//! - [`model`]: the message-passing model with output and reflection heads.
//! - [`knowledge`]: consistency scoring and abduction (SAT, finite-domain
//!   search, and branch-and-bound for clique / independent set).
//! - [`reflect`]: the inference pipeline and the competing error selectors.
//! - [`train`]: supervised + consistency + size losses and the training loop.
//! - [`data`]: dataset loading, puzzle/graph generation.
//! - [`oracle`]: independent brute-force checkers used only to verify the rest.
//! - [`eval`]: metrics and benchmark drivers behind the CLI.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod eval;
pub mod graph;
pub mod knowledge;
pub mod model;
pub mod oracle;
pub mod reflect;
pub mod train;

pub use graph::{ConstraintGraph, Graph};
pub use knowledge::{Assignment, ConsistencyScore, KnowledgeBase};
