//! Layer implementations and the common trait the network stacks them behind.
//!
//! Three kinds exist: fully trainable dense layers, half layers whose
//! projection matrix is frozen at construction (only a per-unit scale and
//! bias train), and the fixed two-stage convolution block.

mod conv;
mod dense;
mod half;

pub use conv::{ConvBlock, CONV_FLAT_DIM};
pub use dense::DenseLayer;
pub use half::HalfLayer;

use crate::error::Result;
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};

/// One tensor of a layer as it appears in a checkpoint.
pub struct TensorRecord {
    pub name: &'static str,
    pub frozen: bool,
    pub tensor: Tensor,
}

/// Common interface over the layer kinds.
///
/// Batch convention: inputs and outputs are `B x dim` row-major; gradients
/// accumulated into the layer are sums over the batch (the loss scales by
/// 1/B). `forward_batch` caches what `backward_batch` needs; `infer_batch`
/// is the pure forward map.
pub trait Layer {
    fn forward_batch(&mut self, x: &Tensor) -> Result<Tensor>;

    /// Consumes the cache of the matching `forward_batch`. Returns the
    /// gradient with respect to the layer input when `need_input_grad` is
    /// set (the bottom layer of a stack can skip that work).
    fn backward_batch(&mut self, grad_out: &Tensor, need_input_grad: bool)
        -> Result<Option<Tensor>>;

    fn infer_batch(&self, x: &Tensor) -> Result<Tensor>;

    /// Momentum SGD on the trainable tensors using the accumulated gradients.
    fn step(&mut self, lr: f64, momentum: f64);

    fn trainable_count(&self) -> usize;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Digest of the frozen tensors, if the layer has any.
    fn frozen_digest(&self) -> Option<[u8; 32]> {
        None
    }

    /// Digest of the trainable tensors.
    fn trainable_digest(&self) -> [u8; 32];

    /// Checkpoint records, in a fixed per-layer order.
    fn records(&self) -> Vec<TensorRecord>;

    /// Restore from checkpoint records (shapes must match).
    fn load_records(&mut self, records: Vec<TensorRecord>) -> Result<()>;

    fn as_half_mut(&mut self) -> Option<&mut HalfLayer> {
        None
    }
}

/// SHA-256 over the little-endian bytes of the given tensors.
pub fn digest_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for t in tensors {
        for &e in t.shape() {
            hasher.update((e as u64).to_le_bytes());
        }
        for &v in t.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().into()
}

/// v <- momentum * v - lr * g; p <- p + v, elementwise over a parameter slab.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    debug_assert!(params.len() == grads.len() && params.len() == velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step_no_momentum() {
        let mut p = [0.0];
        let mut v = [0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.0);
        assert_eq!(p, [-0.1]);
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut p = [1.5, -2.0];
        let mut v = [0.0, 0.0];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.5, 0.0);
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn sgd_two_momentum_steps_match_hand_arithmetic() {
        // v1 = -lr*g = -0.1, p1 = -0.1
        // v2 = 0.9*(-0.1) - 0.1*2 = -0.29, p2 = -0.39
        let mut p = [0.0];
        let mut v = [0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9);
        sgd_step(&mut p, &[2.0], &mut v, 0.1, 0.9);
        assert!((p[0] - (-0.39)).abs() < 1e-15);
        assert!((v[0] - (-0.29)).abs() < 1e-15);
    }

    #[test]
    fn digest_is_order_and_value_sensitive() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![2.0, 1.0]);
        assert_ne!(digest_tensors([&a]), digest_tensors([&b]));
        assert_eq!(digest_tensors([&a]), digest_tensors([&a.clone()]));
    }
}
