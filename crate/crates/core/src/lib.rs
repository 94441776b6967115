// SPDX-License-Identifier: MIT OR Apache-2.0

//! TopK sparse autoencoders for molecular embeddings, with fidelity metrics,
//! statistical probes, ablation campaigns and similarity statistics.

pub mod analysis;
pub mod bridge;
pub mod cli;
pub mod error;
pub mod fidelity;
pub mod io;
pub mod probes;
pub mod sae;
pub mod similarity;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
