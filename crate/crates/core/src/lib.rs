//! Tuning harness for LLM decoding hyperparameters in domain-model generation.
//!
//! The library combines a multi-objective evolutionary search (NSGA-II) with an
//! exhaustive grid search over a discrete hyperparameter space, scores generated
//! models against references with syntactic (term-frequency cosine) and semantic
//! (pluggable scorer) similarity, and evaluates tuned configurations against a
//! baseline with a nonparametric statistical protocol (one-sided Wilcoxon,
//! Vargha-Delaney A12, Win/Tie/Loss tabulation).

pub mod fitness;
pub mod gateway;
pub mod grid;
pub mod hpspace;
pub mod moo;
pub mod prompt;
pub mod report;
pub mod runner;
pub mod stats;
pub mod util;
