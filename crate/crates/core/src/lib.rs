//! Symbolic regression with an evolved collection of expression-tree features
//! feeding a ridge-regression head, selected by epsilon-lexicase.
//!
//! Parent selection supports the median-absolute-deviation criteria (static,
//! semi-dynamic, dynamic) and the minimum variance threshold criteria, which
//! split each case's errors into the two clusters minimising
//! `Var(l)/|l| + Var(r)/|r|` and keep the low-error cluster.
//!
//! Population-wide work (fitting, weight tuning, per-parent selection) runs on
//! rayon when the `parallel` feature is enabled; every run is bit-identical
//! regardless of worker count.

pub mod cli;
pub mod data;
pub mod evolve;
pub mod expr;
pub mod model;
pub mod par;
pub mod rng;
pub mod selection;

pub use data::{Dataset, SplitPair};
pub use evolve::{EvolutionConfig, GenerationLog, RunOutput, SurvivalMode};
pub use expr::{ComplexityTable, ExprTree, Op};
pub use model::{Individual, RidgeConfig};
pub use selection::{ErrorMatrix, SelectionStats, SelectionStrategy};
