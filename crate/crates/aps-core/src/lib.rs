//! Automatic prompt selection over a finite candidate set.
//!
//! The pipeline clusters a training corpus, generates candidate
//! instruction prompts per cluster with an LLM, scores prompts against
//! gold answers to synthesize pairwise preference data, trains a small
//! scorer on that data, and at inference ranks the candidates per input
//! and answers with the top-k prompts under majority voting. A
//! deterministic simulator backend makes the whole chain verifiable
//! offline; a remote backend speaks the OpenAI-compatible wire format.

pub mod cluster;
pub mod domain;
pub mod embed;
pub mod error;
pub mod evaluator;
pub mod forge;
pub mod gateway;
pub mod hashing;
pub mod pipeline;
pub mod rank;
pub mod synth;

pub use error::{ApsError, Result};
