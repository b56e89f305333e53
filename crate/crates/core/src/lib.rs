//! Label-conditioned variational dialog generation.
//!
//! The model encodes a two-party dialog with a shared token encoder and one
//! status GRU per speaker, then generates each utterance from a Gaussian
//! latent variable whose prior and posterior are conditioned on an attribute
//! label (a generic-response flag or a sentiment tag).

pub mod error;
pub mod eval;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod latent;
pub mod numeric;
pub mod session;
pub mod sphred;
pub mod training;

pub use error::{Error, Result};
