//! Online hubness-aware retrieval over precomputed embeddings.
//!
//! Each incoming query batch is scored against a fixed gallery. The raw
//! similarity matrix then feeds two paths:
//!
//! * **retrieval**: [`hsm::refine`] reweights scores using a sliding memory of
//!   recent matrices, demoting gallery items that attract many queries;
//! * **adaptation**: the combined objective in [`losses`] is differentiated
//!   back to a lightweight query-side [`adapter`] and one optimizer step is
//!   taken, improving embeddings for later batches.
//!
//! [`diagnostics`] measures hubness and Recall@K, [`synth`] produces seeded
//! shifted fixtures, and [`io`] reads and writes the binary embedding format.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod hsm;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod reliable;
pub mod synth;

pub use embedding::{EmbeddingSet, ProbabilityRow, SimilarityMatrix};
pub use error::{Error, Result};
pub use hsm::{HsmConfig, HubnessMemory};
pub use pipeline::{run_stream, StreamConfig, StreamOutcome, StreamReport};
pub use synth::{PairedDataset, ShiftKind, SynthSpec};
