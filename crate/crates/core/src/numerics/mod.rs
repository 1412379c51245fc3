//! Dense 64-bit linear algebra, activations, softmax, Adam and the seeded
//! random source.

mod adam;
mod matrix;
mod opcount;
mod ops;
mod rng;

pub use adam::{AdamState, FrozenRow};
pub use matrix::{axpy, dot, Matrix};
pub use opcount::OpCounter;
pub use ops::{
    cosine_similarity, masked_softmax, normal_cdf, normal_pdf, sigmoid, softplus, Activation,
};
pub(crate) use ops::{masked_softmax_into, softmax_backward};
pub use rng::{Rng, RNG_ALGORITHM};
