//! Half layer: a frozen random projection followed by one trainable scale and
//! one trainable bias per unit.
//!
//! Forward, per unit h:
//!
//! ```text
//! a_h = sum_j R[h,j] * x_j          (frozen, no bias term)
//! z_h = g(u_h * a_h + u0_h)         (u, u0 trainable)
//! ```
//!
//! The trainable parameter count is 2H however wide the input is. R is never
//! touched after construction: no gradient for it is ever computed or stored.

use super::{digest_tensors, sgd_step, Layer, TensorRecord};
use crate::error::{Error, Result};
use crate::scheme::WeightScheme;
use crate::tensor::{matmul_xt, matvec, Activation, Tensor};

pub struct HalfLayer {
    /// H x d frozen projection.
    r: Tensor,
    u: Tensor,
    u0: Tensor,
    activation: Activation,
    scheme: WeightScheme,
    grad_u: Vec<f64>,
    grad_u0: Vec<f64>,
    vel_u: Vec<f64>,
    vel_u0: Vec<f64>,
    cache: Option<Cache>,
}

struct Cache {
    /// B x d inputs.
    x: Tensor,
    /// B x H first-stage activations.
    a: Tensor,
    /// B x H pre-activations u*a + u0.
    pre: Tensor,
}

impl HalfLayer {
    /// Constant init: u = 1/sqrt(d), u0 = 0. `calibrate` replaces these with
    /// data-driven values when the calibrated init mode is selected.
    pub fn new(r: Tensor, activation: Activation, scheme: WeightScheme) -> Result<Self> {
        if r.shape().len() != 2 {
            return Err(Error::dim("HalfLayer::new", format!("R must be H x d, got {:?}", r.shape())));
        }
        let (h, d) = (r.shape()[0], r.shape()[1]);
        Ok(HalfLayer {
            r,
            u: Tensor::new(vec![h], vec![1.0 / (d as f64).sqrt(); h])?,
            u0: Tensor::zeros(vec![h]),
            activation,
            scheme,
            grad_u: vec![0.0; h],
            grad_u0: vec![0.0; h],
            vel_u: vec![0.0; h],
            vel_u0: vec![0.0; h],
            cache: None,
        })
    }

    pub fn units(&self) -> usize {
        self.r.shape()[0]
    }

    pub fn frozen_matrix(&self) -> &Tensor {
        &self.r
    }

    pub fn scale(&self) -> &Tensor {
        &self.u
    }

    pub fn bias(&self) -> &Tensor {
        &self.u0
    }

    pub fn scheme(&self) -> &WeightScheme {
        &self.scheme
    }

    pub fn set_scale_bias(&mut self, u: Tensor, u0: Tensor) -> Result<()> {
        let h = self.units();
        if u.shape() != [h] || u0.shape() != [h] {
            return Err(Error::dim(
                "HalfLayer::set_scale_bias",
                format!("{:?} / {:?} vs H = {h}", u.shape(), u0.shape()),
            ));
        }
        self.u = u;
        self.u0 = u0;
        Ok(())
    }

    /// Single-instance forward: (first-stage activation a, output z).
    pub fn forward_one(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let a = matvec(&self.r, x)?;
        let mut z = a.clone();
        for (zi, (&ui, &u0i)) in z
            .data_mut()
            .iter_mut()
            .zip(self.u.iter().zip(self.u0.iter()))
        {
            *zi = ui * *zi + u0i;
        }
        self.activation.apply_in_place(z.data_mut());
        Ok((a, z))
    }

    fn forward_impl(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let a = matmul_xt(x, &self.r)?;
        let h = self.units();
        let b = a.shape()[0];
        let mut pre = a.clone();
        for bi in 0..b {
            let row = &mut pre.data_mut()[bi * h..(bi + 1) * h];
            for (p, (&ui, &u0i)) in row.iter_mut().zip(self.u.iter().zip(self.u0.iter())) {
                *p = ui * *p + u0i;
            }
        }
        let mut z = pre.clone();
        self.activation.apply_in_place(z.data_mut());
        Ok((a, pre, z))
    }

    /// Data-driven (u, u0) so each unit's pre-activation is standardized over
    /// the given batch: u = 1/sigma, u0 = target - mu/sigma. The target is a
    /// small positive constant for ReLU (keeps units initially active) and 0
    /// otherwise. A constant-activation unit clamps sigma at 1e-8.
    pub fn calibrate(&mut self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.shape()[0] < 2 {
            return Err(Error::Config(format!(
                "calibration needs a batch of at least 2 instances, got {:?}",
                batch.shape()
            )));
        }
        let a = matmul_xt(batch, &self.r)?;
        let (b, h) = (a.shape()[0], a.shape()[1]);
        let target = if self.activation == Activation::Relu { 0.1 } else { 0.0 };
        let mut u = vec![0.0; h];
        let mut u0 = vec![0.0; h];
        for hi in 0..h {
            let mut mean = 0.0;
            for bi in 0..b {
                mean += a.row(bi)[hi];
            }
            mean /= b as f64;
            let mut var = 0.0;
            for bi in 0..b {
                let d = a.row(bi)[hi] - mean;
                var += d * d;
            }
            let sigma = (var / b as f64).sqrt().max(1e-8);
            u[hi] = 1.0 / sigma;
            u0[hi] = target - mean / sigma;
        }
        self.u = Tensor::new(vec![h], u)?;
        self.u0 = Tensor::new(vec![h], u0)?;
        Ok(())
    }
}

impl Layer for HalfLayer {
    fn forward_batch(&mut self, x: &Tensor) -> Result<Tensor> {
        let (a, pre, z) = self.forward_impl(x)?;
        self.cache = Some(Cache { x: x.clone(), a, pre });
        Ok(z)
    }

    fn backward_batch(
        &mut self,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Internal("half backward without forward".into()))?;
        let h = self.units();
        let d = self.r.shape()[1];
        let b = cache.a.shape()[0];
        if grad_out.shape() != [b, h] {
            return Err(Error::Internal(format!(
                "stale half-layer cache: grad {:?}, expected [{b}, {h}]",
                grad_out.shape()
            )));
        }
        self.grad_u.iter_mut().for_each(|g| *g = 0.0);
        self.grad_u0.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_in = need_input_grad.then(|| Tensor::zeros(vec![b, d]));
        for bi in 0..b {
            for hi in 0..h {
                let s = grad_out.row(bi)[hi]
                    * self.activation.derivative(cache.pre.row(bi)[hi]);
                if s == 0.0 {
                    continue;
                }
                self.grad_u[hi] += s * cache.a.row(bi)[hi];
                self.grad_u0[hi] += s;
                if let Some(gi) = grad_in.as_mut() {
                    let coeff = s * self.u.data()[hi];
                    let rrow = self.r.row(hi);
                    let grow = &mut gi.data_mut()[bi * d..(bi + 1) * d];
                    for (g, &rv) in grow.iter_mut().zip(rrow) {
                        *g += coeff * rv;
                    }
                }
            }
        }
        let _ = cache.x;
        Ok(grad_in)
    }

    fn infer_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_impl(x).map(|(_, _, z)| z)
    }

    fn step(&mut self, lr: f64, momentum: f64) {
        sgd_step(self.u.data_mut(), &self.grad_u, &mut self.vel_u, lr, momentum);
        sgd_step(self.u0.data_mut(), &self.grad_u0, &mut self.vel_u0, lr, momentum);
    }

    fn trainable_count(&self) -> usize {
        2 * self.units()
    }

    fn input_dim(&self) -> usize {
        self.r.shape()[1]
    }

    fn output_dim(&self) -> usize {
        self.units()
    }

    fn frozen_digest(&self) -> Option<[u8; 32]> {
        Some(digest_tensors([&self.r]))
    }

    fn trainable_digest(&self) -> [u8; 32] {
        digest_tensors([&self.u, &self.u0])
    }

    fn records(&self) -> Vec<TensorRecord> {
        vec![
            TensorRecord { name: "projection", frozen: true, tensor: self.r.clone() },
            TensorRecord { name: "scale", frozen: false, tensor: self.u.clone() },
            TensorRecord { name: "bias", frozen: false, tensor: self.u0.clone() },
        ]
    }

    fn load_records(&mut self, records: Vec<TensorRecord>) -> Result<()> {
        let [r, u, u0]: [TensorRecord; 3] = records
            .try_into()
            .map_err(|_| Error::Internal("half layer expects three checkpoint records".into()))?;
        if r.tensor.shape() != self.r.shape()
            || u.tensor.shape() != self.u.shape()
            || u0.tensor.shape() != self.u0.shape()
        {
            return Err(Error::dim("HalfLayer::load_records", "checkpoint shapes differ"));
        }
        self.r = r.tensor;
        self.u = u.tensor;
        self.u0 = u0.tensor;
        Ok(())
    }

    fn as_half_mut(&mut self) -> Option<&mut HalfLayer> {
        Some(self)
    }
}
