//! Multilingual word embeddings learned by pulling bag-of-words query
//! representations towards the representations of the images they retrieve.
//!
//! The crate is organised around the pipeline:
//!
//! * [`textproc`] turns raw queries into token ids (language tagging,
//!   vocabulary, out-of-vocabulary hash buckets).
//! * [`data`] reads and writes corpus files, applies the multilingual image
//!   filter and generates synthetic corpora with a known ground truth.
//! * [`model`] holds the embedding table and the two image towers.
//! * [`training`] implements the in-batch softmax cosine loss, its gradients,
//!   Adagrad and the training loop.
//! * [`embeddings`] and [`eval`] export the learned vectors and score them on
//!   similarity, retrieval and classification tasks.

pub mod data;
pub mod embeddings;
mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod textproc;
pub mod training;

pub use error::{Error, Result};
