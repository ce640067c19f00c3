//! Generation, measurement, and simulation of out-of-distribution (OOD)
//! driving scenarios.
//!
//! The pipeline, end to end: a scenario tree is built by a language model and
//! refined through red-teaming ([`generation`]), pruned against a simulator
//! asset catalog ([`tree`], [`catalog`]), used to generate textual scenario
//! datasets, scored for OOD-ness and diversity in sentence-embedding space
//! ([`metrics`], [`corpus`]), translated into executable scene configurations
//! and run in a deterministic 2D traffic simulator ([`sim`]), and finally used
//! to benchmark vision/language models on OOD recognition and safe-action
//! selection ([`eval`]).
//!
//! All model access goes through [`gateway`], which provides scripted offline
//! mocks so every stage is reproducible without network access.

pub mod catalog;
pub mod clock;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod generation;
pub mod metrics;
pub mod sim;
pub mod tree;
pub mod validation;

/// Hex-encoded SHA-256 of a byte slice. Used for content addressing
/// (embedding cache keys, artifact hashes, transcript request hashes).
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        let _ = write!(out, "{b:02x}");
    }
    out
}
