//! High-order polynomial regression with self-supervised low-rank embeddings.

pub mod benchmarks;
pub mod cli;
pub mod dim_reduction;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingestion;
pub mod numerics;
pub mod poly_model;
pub mod polycg_solver;

pub use error::{HopsError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/ingestion.md")]
    mod ingestion {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
