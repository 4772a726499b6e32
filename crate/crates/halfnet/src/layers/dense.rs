//! Fully trainable dense layer with the bias folded into the weight matrix
//! as column 0 (the implicit x0 = +1 input).

use super::{digest_tensors, sgd_step, Layer, TensorRecord};
use crate::error::{Error, Result};
use crate::rng::SeededGenerator;
use crate::tensor::{matmul_xt, Activation, Tensor};

pub struct DenseLayer {
    /// m x (n+1); column 0 is the bias.
    w: Tensor,
    activation: Activation,
    grad_w: Vec<f64>,
    vel_w: Vec<f64>,
    cache: Option<Cache>,
}

struct Cache {
    /// B x (n+1), inputs with the leading 1.
    x_aug: Tensor,
    /// B x m pre-activations.
    pre: Tensor,
}

impl DenseLayer {
    /// Glorot-style random init: weights ~ N(0, 1/sqrt(n)), biases 0.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, gen: &mut SeededGenerator) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        let mut data = vec![0.0; outputs * (inputs + 1)];
        for (j, v) in data.iter_mut().enumerate() {
            if j % (inputs + 1) != 0 {
                *v = gen.normal() * scale;
            }
        }
        let w = Tensor::new(vec![outputs, inputs + 1], data).unwrap();
        let n = w.len();
        DenseLayer {
            w,
            activation,
            grad_w: vec![0.0; n],
            vel_w: vec![0.0; n],
            cache: None,
        }
    }

    pub fn zeroed(inputs: usize, outputs: usize, activation: Activation) -> Self {
        let w = Tensor::zeros(vec![outputs, inputs + 1]);
        let n = w.len();
        DenseLayer {
            w,
            activation,
            grad_w: vec![0.0; n],
            vel_w: vec![0.0; n],
            cache: None,
        }
    }

    pub fn from_weights(w: Tensor, activation: Activation) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(Error::dim("DenseLayer::from_weights", format!("{:?}", w.shape())));
        }
        let n = w.len();
        Ok(DenseLayer {
            w,
            activation,
            grad_w: vec![0.0; n],
            vel_w: vec![0.0; n],
            cache: None,
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.w
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Single-instance forward: (pre-activation, output).
    pub fn forward_one(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = self.w.shape()[1] - 1;
        if x.shape() != [n] {
            return Err(Error::dim(
                "dense_forward",
                format!("weights {:?} vs input {:?}", self.w.shape(), x.shape()),
            ));
        }
        let m = self.w.shape()[0];
        let mut pre = vec![0.0; m];
        for (i, p) in pre.iter_mut().enumerate() {
            let row = self.w.row(i);
            *p = row[0] + crate::tensor::dot(&row[1..], x.data());
        }
        let pre = Tensor::from_vec(pre);
        let out = self.activation.apply(&pre);
        Ok((pre, out))
    }

    fn forward_impl(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let n = self.w.shape()[1] - 1;
        if x.shape().len() != 2 || x.shape()[1] != n {
            return Err(Error::dim(
                "dense_forward",
                format!("weights {:?} vs batch input {:?}", self.w.shape(), x.shape()),
            ));
        }
        let b = x.shape()[0];
        let mut aug = vec![0.0; b * (n + 1)];
        for bi in 0..b {
            aug[bi * (n + 1)] = 1.0;
            aug[bi * (n + 1) + 1..(bi + 1) * (n + 1)].copy_from_slice(x.row(bi));
        }
        let x_aug = Tensor::new(vec![b, n + 1], aug)?;
        let pre = matmul_xt(&x_aug, &self.w)?;
        let mut out = pre.clone();
        if self.activation == Activation::Softmax {
            let m = self.w.shape()[0];
            for bi in 0..b {
                crate::tensor::softmax_in_place(&mut out.data_mut()[bi * m..(bi + 1) * m]);
            }
        } else {
            self.activation.apply_in_place(out.data_mut());
        }
        Ok((x_aug, pre, out))
    }
}

impl Layer for DenseLayer {
    fn forward_batch(&mut self, x: &Tensor) -> Result<Tensor> {
        let (x_aug, pre, out) = self.forward_impl(x)?;
        self.cache = Some(Cache { x_aug, pre });
        Ok(out)
    }

    /// For softmax activation the incoming gradient must already be with
    /// respect to the pre-activation scores (the cross-entropy op supplies
    /// exactly that); the softmax Jacobian is never materialized.
    fn backward_batch(
        &mut self,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Internal("dense backward without forward".into()))?;
        let (m, n1) = (self.w.shape()[0], self.w.shape()[1]);
        let b = cache.x_aug.shape()[0];
        if grad_out.shape() != [b, m] {
            return Err(Error::Internal(format!(
                "stale dense cache: grad {:?}, expected [{b}, {m}]",
                grad_out.shape()
            )));
        }
        self.grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_in = need_input_grad.then(|| Tensor::zeros(vec![b, n1 - 1]));
        for bi in 0..b {
            let xr = cache.x_aug.row(bi);
            for i in 0..m {
                let s = match self.activation {
                    Activation::Softmax => grad_out.row(bi)[i],
                    act => grad_out.row(bi)[i] * act.derivative(cache.pre.row(bi)[i]),
                };
                if s == 0.0 {
                    continue;
                }
                let gw = &mut self.grad_w[i * n1..(i + 1) * n1];
                for (g, &xv) in gw.iter_mut().zip(xr) {
                    *g += s * xv;
                }
                if let Some(gi) = grad_in.as_mut() {
                    let wr = &self.w.row(i)[1..];
                    let gr = &mut gi.data_mut()[bi * (n1 - 1)..(bi + 1) * (n1 - 1)];
                    for (g, &wv) in gr.iter_mut().zip(wr) {
                        *g += s * wv;
                    }
                }
            }
        }
        Ok(grad_in)
    }

    fn infer_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_impl(x).map(|(_, _, out)| out)
    }

    fn step(&mut self, lr: f64, momentum: f64) {
        sgd_step(self.w.data_mut(), &self.grad_w, &mut self.vel_w, lr, momentum);
    }

    fn trainable_count(&self) -> usize {
        self.w.len()
    }

    fn input_dim(&self) -> usize {
        self.w.shape()[1] - 1
    }

    fn output_dim(&self) -> usize {
        self.w.shape()[0]
    }

    fn trainable_digest(&self) -> [u8; 32] {
        digest_tensors([&self.w])
    }

    fn records(&self) -> Vec<TensorRecord> {
        vec![TensorRecord { name: "weights", frozen: false, tensor: self.w.clone() }]
    }

    fn load_records(&mut self, records: Vec<TensorRecord>) -> Result<()> {
        let [rec]: [TensorRecord; 1] = records
            .try_into()
            .map_err(|_| Error::Internal("dense layer expects one checkpoint record".into()))?;
        if rec.tensor.shape() != self.w.shape() {
            return Err(Error::dim(
                "DenseLayer::load_records",
                format!("{:?} vs {:?}", rec.tensor.shape(), self.w.shape()),
            ));
        }
        self.w = rec.tensor;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut w = Tensor::zeros(vec![3, 4]);
        for i in 0..3 {
            w.data_mut()[i * 4 + 1 + i] = 1.0;
        }
        let layer = DenseLayer::from_weights(w, Activation::Identity).unwrap();
        let x = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
        let (_, out) = layer.forward_one(&x).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn zero_logistic_unit_outputs_half() {
        let layer = DenseLayer::zeroed(4, 1, Activation::Sigmoid);
        let x = Tensor::from_vec(vec![0.0; 4]);
        let (_, out) = layer.forward_one(&x).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut gen = SeededGenerator::new(8);
        let layer = DenseLayer::new(5, 3, Activation::Relu, &mut gen);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| gen.normal()).collect())
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
        let batch = Tensor::new(vec![4, 5], flat).unwrap();
        let out = layer.infer_batch(&batch).unwrap();
        for (bi, row) in rows.iter().enumerate() {
            let (_, single) = layer.forward_one(&Tensor::from_vec(row.clone())).unwrap();
            for (a, b) in out.row(bi).iter().zip(single.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let layer = DenseLayer::zeroed(4, 2, Activation::Identity);
        let x = Tensor::from_vec(vec![1.0; 3]);
        assert!(layer.forward_one(&x).is_err());
    }
}
