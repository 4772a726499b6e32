//! The four recipes for a half layer's frozen projection matrix, each behind
//! the [`WeightInit`] trait and registered by its one-letter code:
//!
//! - `N` unit-normal entries
//! - `B` binary entries in {-1, +1}
//! - `M` randomly placed and sized Mexican-hat (blob detector) filters
//! - `T` randomly drawn training instances (template matchers)

use crate::error::{Error, Result};
use crate::rng::SeededGenerator;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Normal,
    Binary,
    Mexican,
    Instances,
}

impl SchemeKind {
    pub fn code(&self) -> char {
        match self {
            SchemeKind::Normal => 'N',
            SchemeKind::Binary => 'B',
            SchemeKind::Mexican => 'M',
            SchemeKind::Instances => 'T',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'N' => Some(SchemeKind::Normal),
            'B' => Some(SchemeKind::Binary),
            'M' => Some(SchemeKind::Mexican),
            'T' => Some(SchemeKind::Instances),
            _ => None,
        }
    }
}

/// A scheme choice plus the hyperparameters only some kinds need.
#[derive(Debug, Clone)]
pub struct WeightScheme {
    pub kind: SchemeKind,
    /// Filter size range in pixels (Mexican-hat only).
    pub mexican_sigma_range: (f64, f64),
    /// Input image height and width (Mexican-hat only).
    pub image_dims: (usize, usize),
}

impl WeightScheme {
    pub fn new(kind: SchemeKind) -> Self {
        WeightScheme {
            kind,
            mexican_sigma_range: (1.0, 5.0),
            image_dims: (28, 28),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mexican_sigma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "mexican_sigma_range must satisfy 0 < min <= max, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// Generate the frozen H x d matrix for this scheme.
    pub fn generate(
        &self,
        gen: &mut SeededGenerator,
        units: usize,
        ctx: &InitContext,
    ) -> Result<Tensor> {
        self.validate()?;
        lookup(self.kind.code())
            .expect("every SchemeKind is registered")
            .generate(gen, units, self, ctx)
    }
}

/// What a scheme may need besides dimensions.
pub struct InitContext<'a> {
    pub input_dim: usize,
    /// Normalized training images, N x d row-major. Required by the T scheme.
    pub train_images: Option<&'a Tensor>,
}

impl<'a> InitContext<'a> {
    pub fn dims_only(input_dim: usize) -> Self {
        InitContext { input_dim, train_images: None }
    }
}

/// One frozen-weight recipe.
pub trait WeightInit: Sync {
    fn code(&self) -> char;
    fn describe(&self) -> &'static str;
    fn generate(
        &self,
        gen: &mut SeededGenerator,
        units: usize,
        scheme: &WeightScheme,
        ctx: &InitContext,
    ) -> Result<Tensor>;
}

struct NormalInit;
struct BinaryInit;
struct MexicanInit;
struct InstanceInit;

static REGISTRY: [&dyn WeightInit; 4] = [&NormalInit, &BinaryInit, &MexicanInit, &InstanceInit];

/// All registered schemes.
pub fn registry() -> &'static [&'static dyn WeightInit] {
    &REGISTRY
}

/// Find a scheme by its one-letter code.
pub fn lookup(code: char) -> Option<&'static dyn WeightInit> {
    REGISTRY.iter().copied().find(|s| s.code() == code)
}

impl WeightInit for NormalInit {
    fn code(&self) -> char {
        'N'
    }

    fn describe(&self) -> &'static str {
        "independent unit-normal entries"
    }

    fn generate(
        &self,
        gen: &mut SeededGenerator,
        units: usize,
        _scheme: &WeightScheme,
        ctx: &InitContext,
    ) -> Result<Tensor> {
        let data: Vec<f64> = (0..units * ctx.input_dim).map(|_| gen.normal()).collect();
        Tensor::new(vec![units, ctx.input_dim], data)
    }
}

impl WeightInit for BinaryInit {
    fn code(&self) -> char {
        'B'
    }

    fn describe(&self) -> &'static str {
        "independent {-1,+1} entries, p = 0.5"
    }

    fn generate(
        &self,
        gen: &mut SeededGenerator,
        units: usize,
        _scheme: &WeightScheme,
        ctx: &InitContext,
    ) -> Result<Tensor> {
        let data: Vec<f64> = (0..units * ctx.input_dim)
            .map(|_| if gen.next_u64() & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        Tensor::new(vec![units, ctx.input_dim], data)
    }
}

impl WeightInit for MexicanInit {
    fn code(&self) -> char {
        'M'
    }

    fn describe(&self) -> &'static str {
        "randomly placed and sized Mexican-hat blob detectors"
    }

    /// Each row is psi(r) = (1 - r^2/sigma^2) * exp(-r^2 / (2 sigma^2)) on the
    /// image grid, centered at a uniformly drawn pixel with sigma uniform in
    /// the configured range, then shifted to exact zero mean so the unit
    /// ignores global brightness.
    fn generate(
        &self,
        gen: &mut SeededGenerator,
        units: usize,
        scheme: &WeightScheme,
        ctx: &InitContext,
    ) -> Result<Tensor> {
        let (rows, cols) = scheme.image_dims;
        if rows * cols != ctx.input_dim {
            return Err(Error::Config(format!(
                "Mexican-hat scheme needs image dims matching the input: {rows}x{cols} vs {}",
                ctx.input_dim
            )));
        }
        let (lo, hi) = scheme.mexican_sigma_range;
        let d = rows * cols;
        let mut data = vec![0.0; units * d];
        for h in 0..units {
            let cy = gen.below(rows) as f64;
            let cx = gen.below(cols) as f64;
            let sigma = lo + gen.uniform() * (hi - lo);
            let row = &mut data[h * d..(h + 1) * d];
            let mut mean = 0.0;
            for y in 0..rows {
                for x in 0..cols {
                    let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let s2 = sigma * sigma;
                    let v = (1.0 - r2 / s2) * (-r2 / (2.0 * s2)).exp();
                    row[y * cols + x] = v;
                    mean += v;
                }
            }
            mean /= d as f64;
            for v in row.iter_mut() {
                *v -= mean;
            }
        }
        Tensor::new(vec![units, d], data)
    }
}

impl WeightInit for InstanceInit {
    fn code(&self) -> char {
        'T'
    }

    fn describe(&self) -> &'static str {
        "randomly drawn training instances (template matchers)"
    }

    /// Rows are drawn without replacement while instances remain, then with
    /// replacement once the training set is exhausted.
    fn generate(
        &self,
        gen: &mut SeededGenerator,
        units: usize,
        _scheme: &WeightScheme,
        ctx: &InitContext,
    ) -> Result<Tensor> {
        let images = ctx.train_images.ok_or_else(|| {
            Error::Config("T scheme needs a loaded training set".to_string())
        })?;
        let n = images.shape()[0];
        let d = images.shape()[1];
        if n == 0 {
            return Err(Error::Config("T scheme: training set is empty".to_string()));
        }
        if d != ctx.input_dim {
            return Err(Error::Config(format!(
                "T scheme: instances have {d} features but the layer expects {}",
                ctx.input_dim
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        gen.shuffle(&mut order);
        let mut data = Vec::with_capacity(units * d);
        for h in 0..units {
            let src = if h < n { order[h] } else { gen.below(n) };
            data.extend_from_slice(images.row(src));
        }
        Tensor::new(vec![units, d], data)
    }
}
