//! Strict incremental learning with phantom sampling.
//!
//! A base site trains a classifier and a generative adversarial network on
//! its own data and broadcasts both as a sealed bundle. An increment site
//! expands the classifier to new classes and trains it on its own data
//! interleaved with generated samples whose targets come from the frozen
//! base classifier through a temperature-raised softmax. No base data ever
//! reaches the increment site.

pub mod continual;
pub mod data;
mod error;
pub mod gan;
pub mod nn;
pub mod phantom;
pub mod sites;

pub use error::{Error, Result};

/// Seedable generator used for every random draw in the library.
pub type SeedRng = rand_chacha::ChaCha8Rng;

/// Derives an independent stream seed from a parent seed and a label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the combined value
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
