//! Retrieval-augmented automated short-answer scoring.
//!
//! The pipeline trains a linear embedding adapter on labeled answer pairs,
//! stores embedded training answers in an exact cosine vector store,
//! retrieves the most similar graded answers for each new answer, renders a
//! grading prompt with them, and asks a generative backend for a judgment.
//! [`harness`] drives end-to-end evaluation and the command line.

pub mod corpus;
pub mod embed;
pub mod glm;
pub mod harness;
pub mod optimizer;
pub mod pairset;
pub mod promptkit;
pub mod vstore;

use sha2::{Digest, Sha256};

/// Stable per-key seed derived from a base seed, independent of platform
/// and iteration order.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
