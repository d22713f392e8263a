//! Joint training of a convolutional autoencoder and a Siamese embedding for
//! content-based histology patch retrieval.
//!
//! The crate trains a shared encoder whose features serve two purposes at
//! once: a decoder reconstructs the input patch from them, and a triplet
//! hinge pulls patches of the same class together in feature space. A third
//! term keeps feature magnitudes bounded. After training, retrieval is a
//! nearest-neighbor search in the learned feature space, scored by the
//! fraction of correct classes among the top results.
//!
//! Everything runs on the CPU in 64-bit floating point with fixed reduction
//! orders, so a given seed reproduces training logs and checkpoints bit for
//! bit.

pub(crate) mod container;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod guide;
pub mod loss;
pub mod mining;
pub mod model;
pub mod ops;
pub mod optim;
pub mod retrieval;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Derives an independent RNG seed from a base seed and a context label.
/// Used wherever a component needs its own stream (parameter init, batch
/// shuffling, triplet sampling) so that consuming randomness in one place
/// never shifts another.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
