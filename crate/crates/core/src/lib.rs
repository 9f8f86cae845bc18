//! Micro-dialect identification: corpus handling, splits, models,
//! semi-supervised regimes and evaluation.

pub mod corpus;
pub mod splits;
pub mod evalkit;
pub mod models;
pub mod semisup;
pub mod synthetic;
