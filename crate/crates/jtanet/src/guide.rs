//! Long-form guide to the crate, one module per chapter of the rendered
//! book under `book/`. Each chapter is included verbatim, so every Rust
//! block in the book compiles and runs under `cargo test --doc`; the book
//! cannot drift from the API it documents.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/mining.md")]
pub mod mining {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/retrieval.md")]
pub mod retrieval {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/determinism.md")]
pub mod determinism {}
