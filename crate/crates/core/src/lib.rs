//! Signature curation and fast-elimination packet matching.

pub mod bench;
pub mod curation;
pub mod engine;
pub mod rules;
pub mod severity;
pub mod synth;
pub mod traffic;
