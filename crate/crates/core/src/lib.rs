//! Measure how strongly a chat model clings to its parametric memory when the
//! prompt carries evidence that says otherwise.
//!
//! The pipeline runs in six stages, each reading the previous stage's JSONL
//! output and appending its own:
//!
//! 1. [`strength`] — paraphrase every question, collect a closed-book answer
//!    per paraphrase, cluster the answers, and score per-question memory
//!    strength as the negative entropy of the cluster sizes.
//! 2. [`conflict`] — elicit the memory answer (MA), type the question, rewrite
//!    one entity to get a counter-memory answer (CMA), and keep only pairs
//!    that genuinely conflict.
//! 3. [`evidence`] — synthesize direct (paraphrase) and indirect (multi-
//!    sentence) evidence for the CMA, gated by an entailment backend.
//! 4. [`eval`] — pose each question as a three-option multiple choice (MA,
//!    CMA, "Uncertain.") grounded in the evidence and parse the model's pick.
//! 5. Reporting — memory/context/uncertain ratios sliced by strength bin,
//!    entity type, evidence style, and option order.
//!
//! All model traffic flows through [`gateway`], which owns prompt rendering,
//! retries, verdict parsing, and an append-only call cache that makes runs
//! resumable and replayable. [`pipeline`] wires the stages to a config file
//! and a run directory; the `credence` binary is a thin CLI over it.

pub mod conflict;
pub mod dataset;
pub mod eval;
pub mod evidence;
pub mod gateway;
pub mod pipeline;
pub mod score;
pub mod strength;
pub mod template;
pub mod text;

/// Concrete scalar used by the pipeline. The formulas in [`score`] are generic
/// over `num_traits::Float`; everything downstream fixes f64.
pub type Score = f64;
