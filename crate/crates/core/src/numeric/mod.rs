//! Tensors, the autodiff tape, the GRU cell, Gaussian sampling and Adam.

mod adam;
mod gaussian;
mod gru;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gaussian::{reparameterize, sample_gaussian};
pub use gru::{gru_step, GateInputs, GruCell, GruParams};
pub use params::{ParamId, ParamKind, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{log_softmax, softmax, Tensor};

