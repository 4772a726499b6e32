//! Two-stage convolutional feature extractor: 16 ReLU 5x5 filters (pad 2)
//! with 2x2 pooling, then 32 ReLU 3x3 filters (pad 0) with 2x2 pooling. A
//! 28x28 input comes out as a 1,152-dimensional vector (32 x 6 x 6).

use super::{digest_tensors, sgd_step, Layer, TensorRecord};
use crate::error::{Error, Result};
use crate::rng::SeededGenerator;
use crate::tensor::{conv2d, maxpool2, maxpool2_backward, Activation, PoolArgmax, Tensor};

const IMG: usize = 28;
pub const CONV_FLAT_DIM: usize = 1152;

pub struct ConvBlock {
    filters1: Tensor, // 16 x 1 x 5 x 5, pad 2
    bias1: Tensor,
    filters2: Tensor, // 32 x 16 x 3 x 3, pad 0
    bias2: Tensor,
    grads: Grads,
    vels: Grads,
    cache: Vec<InstCache>,
}

struct Grads {
    f1: Vec<f64>,
    b1: Vec<f64>,
    f2: Vec<f64>,
    b2: Vec<f64>,
}

impl Grads {
    fn zeros() -> Self {
        Grads {
            f1: vec![0.0; 16 * 25],
            b1: vec![0.0; 16],
            f2: vec![0.0; 32 * 16 * 9],
            b2: vec![0.0; 32],
        }
    }

    fn clear(&mut self) {
        self.f1.iter_mut().for_each(|g| *g = 0.0);
        self.b1.iter_mut().for_each(|g| *g = 0.0);
        self.f2.iter_mut().for_each(|g| *g = 0.0);
        self.b2.iter_mut().for_each(|g| *g = 0.0);
    }
}

struct InstCache {
    image: Tensor,   // 1 x 28 x 28
    pre1: Tensor,    // 16 x 28 x 28
    rec1: PoolArgmax,
    pooled1: Tensor, // 16 x 14 x 14
    pre2: Tensor,    // 32 x 12 x 12
    rec2: PoolArgmax,
}

impl ConvBlock {
    /// He-style init: filter entries ~ N(0, sqrt(2 / fan_in)), biases 0.
    pub fn new(gen: &mut SeededGenerator) -> Self {
        let s1 = (2.0 / 25.0_f64).sqrt();
        let f1: Vec<f64> = (0..16 * 25).map(|_| gen.normal() * s1).collect();
        let s2 = (2.0 / (16.0 * 9.0) as f64).sqrt();
        let f2: Vec<f64> = (0..32 * 16 * 9).map(|_| gen.normal() * s2).collect();
        ConvBlock {
            filters1: Tensor::new(vec![16, 1, 5, 5], f1).unwrap(),
            bias1: Tensor::zeros(vec![16]),
            filters2: Tensor::new(vec![32, 16, 3, 3], f2).unwrap(),
            bias2: Tensor::zeros(vec![32]),
            grads: Grads::zeros(),
            vels: Grads::zeros(),
            cache: Vec::new(),
        }
    }

    pub fn zeroed() -> Self {
        ConvBlock {
            filters1: Tensor::zeros(vec![16, 1, 5, 5]),
            bias1: Tensor::zeros(vec![16]),
            filters2: Tensor::zeros(vec![32, 16, 3, 3]),
            bias2: Tensor::zeros(vec![32]),
            grads: Grads::zeros(),
            vels: Grads::zeros(),
            cache: Vec::new(),
        }
    }

    fn forward_one(&self, image: &Tensor) -> Result<(Tensor, InstCache)> {
        let pre1 = conv2d(image, &self.filters1, &self.bias1, 2)?;
        let act1 = Activation::Relu.apply(&pre1);
        let (pooled1, rec1) = maxpool2(&act1)?;
        let pre2 = conv2d(&pooled1, &self.filters2, &self.bias2, 0)?;
        let act2 = Activation::Relu.apply(&pre2);
        let (pooled2, rec2) = maxpool2(&act2)?;
        let flat = pooled2.reshape(vec![CONV_FLAT_DIM])?;
        let cache = InstCache {
            image: image.clone(),
            pre1,
            rec1,
            pooled1,
            pre2,
            rec2,
        };
        Ok((flat, cache))
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.shape().len() != 2 || x.shape()[1] != IMG * IMG {
            return Err(Error::dim(
                "conv_forward",
                format!("expected B x {} flattened 28x28 images, got {:?}", IMG * IMG, x.shape()),
            ));
        }
        Ok(x.shape()[0])
    }
}

/// Gradients of a zero-padded cross-correlation: filter and bias gradients
/// always, input gradient on request.
fn conv2d_backward(
    input: &Tensor,
    filters: &Tensor,
    pad: usize,
    grad_out: &Tensor,
    grad_filters: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (c, hin, win) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (f, kh, kw) = (filters.shape()[0], filters.shape()[2], filters.shape()[3]);
    let (hout, wout) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(vec![c, hin, win]));
    for fi in 0..f {
        for oh in 0..hout {
            for ow in 0..wout {
                let g = grad_out.data()[(fi * hout + oh) * wout + ow];
                if g == 0.0 {
                    continue;
                }
                grad_bias[fi] += g;
                for ci in 0..c {
                    for ki in 0..kh {
                        let ih = oh + ki;
                        if ih < pad || ih >= hin + pad {
                            continue;
                        }
                        let ih = ih - pad;
                        for kj in 0..kw {
                            let iw = ow + kj;
                            if iw < pad || iw >= win + pad {
                                continue;
                            }
                            let iw = iw - pad;
                            let iidx = (ci * hin + ih) * win + iw;
                            let fidx = ((fi * c + ci) * kh + ki) * kw + kj;
                            grad_filters[fidx] += g * input.data()[iidx];
                            if let Some(gi) = grad_in.as_mut() {
                                gi.data_mut()[iidx] += g * filters.data()[fidx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

impl Layer for ConvBlock {
    fn forward_batch(&mut self, x: &Tensor) -> Result<Tensor> {
        let b = self.check_input(x)?;
        self.cache.clear();
        let mut out = vec![0.0; b * CONV_FLAT_DIM];
        for bi in 0..b {
            let image = Tensor::new(vec![1, IMG, IMG], x.row(bi).to_vec())?;
            let (flat, cache) = self.forward_one(&image)?;
            out[bi * CONV_FLAT_DIM..(bi + 1) * CONV_FLAT_DIM].copy_from_slice(flat.data());
            self.cache.push(cache);
        }
        Tensor::new(vec![b, CONV_FLAT_DIM], out)
    }

    fn backward_batch(
        &mut self,
        grad_out: &Tensor,
        _need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let b = self.cache.len();
        if b == 0 {
            return Err(Error::Internal("conv backward without forward".into()));
        }
        if grad_out.shape() != [b, CONV_FLAT_DIM] {
            return Err(Error::Internal(format!(
                "stale conv cache: grad {:?}, expected [{b}, {CONV_FLAT_DIM}]",
                grad_out.shape()
            )));
        }
        self.grads.clear();
        let caches = std::mem::take(&mut self.cache);
        for (bi, cache) in caches.iter().enumerate() {
            let g_pooled2 = Tensor::new(vec![32, 6, 6], grad_out.row(bi).to_vec())?;
            let mut g_act2 = maxpool2_backward(&cache.rec2, &g_pooled2)?;
            for (g, &p) in g_act2.data_mut().iter_mut().zip(cache.pre2.iter()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            let g_pooled1 = conv2d_backward(
                &cache.pooled1,
                &self.filters2,
                0,
                &g_act2,
                &mut self.grads.f2,
                &mut self.grads.b2,
                true,
            )?
            .expect("input grad requested");
            let mut g_act1 = maxpool2_backward(&cache.rec1, &g_pooled1)?;
            for (g, &p) in g_act1.data_mut().iter_mut().zip(cache.pre1.iter()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            conv2d_backward(
                &cache.image,
                &self.filters1,
                2,
                &g_act1,
                &mut self.grads.f1,
                &mut self.grads.b1,
                false,
            )?;
        }
        // gradient below the image input is never needed
        Ok(None)
    }

    fn infer_batch(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.check_input(x)?;
        let mut out = vec![0.0; b * CONV_FLAT_DIM];
        for bi in 0..b {
            let image = Tensor::new(vec![1, IMG, IMG], x.row(bi).to_vec())?;
            let (flat, _) = self.forward_one(&image)?;
            out[bi * CONV_FLAT_DIM..(bi + 1) * CONV_FLAT_DIM].copy_from_slice(flat.data());
        }
        Tensor::new(vec![b, CONV_FLAT_DIM], out)
    }

    fn step(&mut self, lr: f64, momentum: f64) {
        sgd_step(self.filters1.data_mut(), &self.grads.f1, &mut self.vels.f1, lr, momentum);
        sgd_step(self.bias1.data_mut(), &self.grads.b1, &mut self.vels.b1, lr, momentum);
        sgd_step(self.filters2.data_mut(), &self.grads.f2, &mut self.vels.f2, lr, momentum);
        sgd_step(self.bias2.data_mut(), &self.grads.b2, &mut self.vels.b2, lr, momentum);
    }

    fn trainable_count(&self) -> usize {
        // 16*(25+1) + 32*(16*9+1)
        self.filters1.len() + self.bias1.len() + self.filters2.len() + self.bias2.len()
    }

    fn input_dim(&self) -> usize {
        IMG * IMG
    }

    fn output_dim(&self) -> usize {
        CONV_FLAT_DIM
    }

    fn trainable_digest(&self) -> [u8; 32] {
        digest_tensors([&self.filters1, &self.bias1, &self.filters2, &self.bias2])
    }

    fn records(&self) -> Vec<TensorRecord> {
        vec![
            TensorRecord { name: "filters1", frozen: false, tensor: self.filters1.clone() },
            TensorRecord { name: "bias1", frozen: false, tensor: self.bias1.clone() },
            TensorRecord { name: "filters2", frozen: false, tensor: self.filters2.clone() },
            TensorRecord { name: "bias2", frozen: false, tensor: self.bias2.clone() },
        ]
    }

    fn load_records(&mut self, records: Vec<TensorRecord>) -> Result<()> {
        let [f1, b1, f2, b2]: [TensorRecord; 4] = records
            .try_into()
            .map_err(|_| Error::Internal("conv block expects four checkpoint records".into()))?;
        if f1.tensor.shape() != self.filters1.shape()
            || b1.tensor.shape() != self.bias1.shape()
            || f2.tensor.shape() != self.filters2.shape()
            || b2.tensor.shape() != self.bias2.shape()
        {
            return Err(Error::dim("ConvBlock::load_records", "checkpoint shapes differ"));
        }
        self.filters1 = f1.tensor;
        self.bias1 = b1.tensor;
        self.filters2 = f2.tensor;
        self.bias2 = b2.tensor;
        Ok(())
    }
}
