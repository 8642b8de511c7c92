//! The neural-network operation set.
//!
//! Every op follows the same pattern: validate shapes, compute the forward
//! result into a fresh tensor, and, when the tape is recording and any input
//! is tracked, push a backward closure that accumulates input gradients from
//! the output gradient. Convolution is documented as cross-correlation (no
//! kernel flip); all interpolation is align-corners bilinear so the
//! upsampler and the spatial-transformer sampler share one convention.

mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod pool;

pub use conv::{conv2d, depthwise_conv2d};
pub use elementwise::{add, relu, scale, scale_channels, sigmoid, softmax_channels, sum_all};
pub use linear::{concat, linear, reshape};
pub use loss::{smooth_l1, smooth_l1_masked, softmax_cross_entropy};
pub use norm::{batch_norm, BnMode};
pub use pool::{avg_pool2, global_avg_pool, upsample_bilinear};

use super::{Element, Tensor};
use crate::{Error, Result};

fn expect_rank<T: Element>(t: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::shape(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn expect_shape<T: Element>(t: &Tensor<T>, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(format!(
            "{what} must have shape {shape:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}
