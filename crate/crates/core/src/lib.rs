//! Partial Tucker compression of 3D (video) convolutional networks.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure computation:
//!
//! * [`tensor`]: dense N-mode tensors, unfolding, mode products and a
//!   deterministic one-sided Jacobi SVD.
//! * [`tucker`]: partial Tucker decomposition (HOSVD initialised HOOI).
//! * [`vbmf`]: analytic empirical VBMF rank estimation.
//! * [`network`]: a small layer IR and the reference video-convolution engine.
//! * [`compress`]: the one-shot whole-network rewrite.
//! * [`cost`]: closed-form parameter and multiplication accounting.
//!
//! IO, benchmarking and the command-line driver live in the `tuckervid` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod compress;
pub mod cost;
mod error;
pub mod network;
pub mod tensor;
pub mod tucker;
pub mod vbmf;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, Matrix, SvdResult};
