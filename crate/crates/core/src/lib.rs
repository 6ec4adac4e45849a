//! Continuation log-probability style scoring, gated hybrid rewards and
//! group-relative policy optimisation over a synthetic world of
//! style-conditioned interleaved text/audio token sequences.

pub mod curation;
pub mod error;
pub mod eval;
pub mod fidelity;
pub mod grpo;
pub mod mclp;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sft;
pub mod ta4;
pub mod world;

pub use error::{Error, Result};
