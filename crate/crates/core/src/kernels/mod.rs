//! Forward and backward kernels for every layer kind used by the model zoo.
//!
//! All kernels are pure functions of their inputs (plus an explicit RNG for
//! dropout) and run single-threaded, so repeated calls are bitwise stable.

mod activation;
mod conv;
mod dropout;
mod gemm;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
pub use dropout::{dropout, DropoutMask};
pub use linear::{fully_connected, fully_connected_backward, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use pool::{maxpool2d, maxpool2d_backward, PoolOutput};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::config(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}
