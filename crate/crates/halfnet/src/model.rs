//! Architecture names, layer-stack assembly, exact trainable-parameter
//! counting, and inference.
//!
//! Six families exist. `lp` is a softmax layer on the raw pixels, `mlp-H`
//! adds one trained hidden layer, `rnd-H-C` adds one half layer whose frozen
//! matrix comes from scheme `C`. The `c`-prefixed versions put the fixed
//! two-stage convolution block in front and feed its 1,152-dimensional
//! output to the same three heads.

use crate::error::{Error, Result};
use crate::layers::{ConvBlock, DenseLayer, HalfLayer, Layer, CONV_FLAT_DIM};
use crate::rng::SeededGenerator;
use crate::scheme::{InitContext, SchemeKind, WeightScheme};
use crate::tensor::{Activation, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Lp,
    Mlp,
    Rnd,
    Clp,
    Cmlp,
    Crnd,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Lp => "lp",
            Family::Mlp => "mlp",
            Family::Rnd => "rnd",
            Family::Clp => "clp",
            Family::Cmlp => "cmlp",
            Family::Crnd => "crnd",
        }
    }

    fn convolutional(&self) -> bool {
        matches!(self, Family::Clp | Family::Cmlp | Family::Crnd)
    }
}

/// Parsed architecture descriptor.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub family: Family,
    pub hidden: Option<usize>,
    pub scheme: Option<WeightScheme>,
}

impl ModelSpec {
    /// Parse `family[-H[-C]]` names like `lp`, `mlp-32`, `rnd-1024-N`,
    /// `crnd-512-B`. The aliases `conv` (for `clp`) and `conv2` (for
    /// `cmlp-40`) are accepted.
    pub fn parse(name: &str) -> Result<ModelSpec> {
        let fail = |token: &str, reason: &str| Error::Parse {
            token: token.to_string(),
            reason: reason.to_string(),
        };
        match name {
            "conv" => return Self::parse("clp"),
            "conv2" => return Self::parse("cmlp-40"),
            _ => {}
        }
        let mut parts = name.split('-');
        let family = match parts.next().unwrap_or("") {
            "lp" => Family::Lp,
            "mlp" => Family::Mlp,
            "rnd" => Family::Rnd,
            "clp" => Family::Clp,
            "cmlp" => Family::Cmlp,
            "crnd" => Family::Crnd,
            other => return Err(fail(other, "unknown model family")),
        };
        let hidden = match (family, parts.next()) {
            (Family::Lp | Family::Clp, None) => None,
            (Family::Lp | Family::Clp, Some(extra)) => {
                return Err(fail(extra, "this family takes no hidden-unit count"))
            }
            (_, None) => return Err(fail(name, "missing hidden-unit count")),
            (_, Some(h)) => Some(
                h.parse::<usize>()
                    .ok()
                    .filter(|&h| h >= 1)
                    .ok_or_else(|| fail(h, "hidden-unit count must be a positive integer"))?,
            ),
        };
        let scheme = match (family, parts.next()) {
            (Family::Rnd | Family::Crnd, Some(c)) => {
                let kind = c
                    .chars()
                    .next()
                    .filter(|_| c.len() == 1)
                    .and_then(SchemeKind::from_code)
                    .ok_or_else(|| fail(c, "scheme must be one of N, B, M, T"))?;
                if family == Family::Crnd
                    && !matches!(kind, SchemeKind::Normal | SchemeKind::Binary)
                {
                    return Err(fail(c, "crnd supports only the N and B schemes"));
                }
                Some(WeightScheme::new(kind))
            }
            (Family::Rnd | Family::Crnd, None) => {
                return Err(fail(name, "missing weight scheme letter"))
            }
            (_, Some(extra)) => return Err(fail(extra, "unexpected trailing token")),
            (_, None) => None,
        };
        if let Some(extra) = parts.next() {
            return Err(fail(extra, "unexpected trailing token"));
        }
        Ok(ModelSpec { family, hidden, scheme })
    }

    /// Canonical display name, e.g. `rnd-1024-N`.
    pub fn name(&self) -> String {
        let mut s = self.family.name().to_string();
        if let Some(h) = self.hidden {
            s.push_str(&format!("-{h}"));
        }
        if let Some(scheme) = &self.scheme {
            s.push_str(&format!("-{}", scheme.kind.code()));
        }
        s
    }

    /// Exact trainable-parameter count, computed symbolically.
    ///
    /// `input_dim` is the raw input width for the dense families;
    /// convolutional families require 28x28 inputs and ignore it beyond the
    /// check.
    pub fn count_trainable(&self, input_dim: usize) -> Result<usize> {
        const CONV_PARAMS: usize = 5056; // 16*(25+1) + 32*(16*9+1)
        if self.family.convolutional() && input_dim != 784 {
            return Err(Error::Config(format!(
                "convolutional models need 784 (28x28) inputs, got {input_dim}"
            )));
        }
        let head = |d: usize| (d + 1) * 10;
        Ok(match self.family {
            Family::Lp => head(input_dim),
            Family::Mlp => {
                let h = self.hidden.unwrap();
                (input_dim + 1) * h + head(h)
            }
            Family::Rnd => {
                let h = self.hidden.unwrap();
                2 * h + head(h)
            }
            Family::Clp => CONV_PARAMS + head(CONV_FLAT_DIM),
            Family::Cmlp => {
                let h = self.hidden.unwrap();
                CONV_PARAMS + (CONV_FLAT_DIM + 1) * h + head(h)
            }
            Family::Crnd => {
                let h = self.hidden.unwrap();
                CONV_PARAMS + 2 * h + head(h)
            }
        })
    }

    fn needs_dataset(&self) -> bool {
        matches!(&self.scheme, Some(s) if s.kind == SchemeKind::Instances)
    }
}

/// Options resolved by the caller before building.
#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub seed: u64,
    /// Activation of half and mlp hidden layers.
    pub half_activation: Activation,
    /// Calibrate (u, u0) on a data batch, or keep the constant init.
    pub calibrated_init: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { seed: 0, half_activation: Activation::Relu, calibrated_init: true }
    }
}

/// An ordered layer stack; the output layer is always dense with softmax
/// over the ten classes.
pub struct Network {
    spec: ModelSpec,
    layers: Vec<Box<dyn Layer>>,
}

impl Network {
    /// Assemble the stack for `spec`. Frozen matrices and initial weights are
    /// derived from `(seed, layer index)`; when `calib` holds a data batch,
    /// half layers are calibrated on it (after any preceding layers).
    ///
    /// `train_images` (N x d, normalized) backs the T scheme and must be
    /// present for it; `image_dims` backs the M scheme.
    pub fn build(
        spec: &ModelSpec,
        opts: &BuildOptions,
        input_dim: usize,
        image_dims: Option<(usize, usize)>,
        train_images: Option<&Tensor>,
        calib: Option<&Tensor>,
    ) -> Result<Network> {
        if spec.needs_dataset() && train_images.is_none() {
            return Err(Error::Config(
                "the T scheme draws rows from the training set; load a dataset first".to_string(),
            ));
        }
        if spec.family.convolutional() && input_dim != 784 {
            return Err(Error::Config(format!(
                "convolutional models need 784 (28x28) inputs, got {input_dim}"
            )));
        }
        let gen_for = |idx: u64| SeededGenerator::derive(opts.seed, idx);
        let mut layers: Vec<Box<dyn Layer>> = Vec::new();
        let mut dim = input_dim;
        if spec.family.convolutional() {
            layers.push(Box::new(ConvBlock::new(&mut gen_for(layers.len() as u64))));
            dim = CONV_FLAT_DIM;
        }
        match spec.family {
            Family::Lp | Family::Clp => {}
            Family::Mlp | Family::Cmlp => {
                let h = spec.hidden.unwrap();
                layers.push(Box::new(DenseLayer::new(
                    dim,
                    h,
                    opts.half_activation,
                    &mut gen_for(layers.len() as u64),
                )));
                dim = h;
            }
            Family::Rnd | Family::Crnd => {
                let h = spec.hidden.unwrap();
                let mut scheme = spec.scheme.clone().unwrap();
                if let Some(dims) = image_dims {
                    scheme.image_dims = dims;
                }
                let ctx = InitContext { input_dim: dim, train_images };
                let r = scheme.generate(&mut gen_for(layers.len() as u64), h, &ctx)?;
                layers.push(Box::new(HalfLayer::new(r, opts.half_activation, scheme)?));
                dim = h;
            }
        }
        layers.push(Box::new(DenseLayer::new(
            dim,
            10,
            Activation::Softmax,
            &mut gen_for(layers.len() as u64),
        )));
        let mut net = Network { spec: spec.clone(), layers };
        if opts.calibrated_init {
            if let Some(batch) = calib {
                net.calibrate(batch)?;
            }
        }
        Ok(net)
    }

    /// Run the calibration batch through the stack, calibrating each half
    /// layer on the representation it actually receives.
    fn calibrate(&mut self, batch: &Tensor) -> Result<()> {
        let mut x = batch.clone();
        for layer in self.layers.iter_mut() {
            if let Some(half) = layer.as_half_mut() {
                half.calibrate(&x)?;
            }
            x = layer.infer_batch(&x)?;
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut Vec<Box<dyn Layer>> {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Trainable scalars only; frozen projections never count.
    pub fn count_trainable(&self) -> usize {
        self.layers.iter().map(|l| l.trainable_count()).sum()
    }

    /// Class probabilities for a batch (B x 10).
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        for layer in &self.layers {
            out = layer.infer_batch(&out)?;
        }
        Ok(out)
    }

    /// Training forward pass; caches live in the layers.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        for layer in self.layers.iter_mut() {
            out = layer.forward_batch(&out)?;
        }
        Ok(out)
    }

    /// Backward pass from the loss gradient (already scaled by 1/B).
    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let mut g = Some(grad.clone());
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            let grad_out = g.take().ok_or_else(|| {
                Error::Internal("gradient vanished mid-stack".to_string())
            })?;
            g = layer.backward_batch(&grad_out, idx > 0)?;
        }
        Ok(())
    }

    pub fn step(&mut self, lr: f64, momentum: f64) {
        for layer in self.layers.iter_mut() {
            layer.step(lr, momentum);
        }
    }

    /// Digests of every frozen tensor in the stack, in layer order.
    pub fn frozen_digests(&self) -> Vec<[u8; 32]> {
        self.layers.iter().filter_map(|l| l.frozen_digest()).collect()
    }

    /// Fraction of instances whose argmax probability matches the label.
    pub fn evaluate(&self, images: &Tensor, labels: &[u8]) -> Result<f64> {
        let n = images.shape()[0];
        if n == 0 {
            return Err(Error::Config("cannot evaluate on an empty split".to_string()));
        }
        if n != labels.len() {
            return Err(Error::dim(
                "evaluate",
                format!("{n} images vs {} labels", labels.len()),
            ));
        }
        let d = images.shape()[1];
        let mut correct = 0usize;
        let chunk = 256;
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let batch = Tensor::new(
                vec![end - start, d],
                images.data()[start * d..end * d].to_vec(),
            )?;
            let probs = self.infer(&batch)?;
            for (bi, &label) in labels[start..end].iter().enumerate() {
                let row = probs.row(bi);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                if pred == label as usize {
                    correct += 1;
                }
            }
            start = end;
        }
        Ok(correct as f64 / n as f64)
    }
}
