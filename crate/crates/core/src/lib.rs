//! Corpus analysis of x86-64 binaries: decode, normalize, count, find the
//! long tail, map it back to source, classify it, and fingerprint binaries
//! by the rare tokens they contain.

pub mod classify;
pub mod corpus;
pub mod fingerprint;
pub mod frontend;
pub mod normalize;
pub mod source_map;
pub mod stats;
pub mod synthetic;
