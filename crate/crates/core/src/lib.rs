//! Relevance-based margins for contrastively trained cross-modal retrieval.
//!
//! - [`relevance`]: graded relevance from verb/noun class overlap, and the
//!   margin derived from it.
//! - [`metrics`]: nDCG, mAP and recall@k over both retrieval directions.
//! - [`loss`]: triplet hinge losses with fixed or relevance-based margins.
//! - [`mining`]: offline and online-hard triplet mining, margin histograms.
//! - [`embed`]: the two-tower model, its training loop and gradient check.
//! - [`data`]: synthetic datasets and dataset files.

pub mod data;
pub mod embed;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod mining;
pub mod relevance;
pub mod seed;

pub use error::{Error, Result};
