//! Networks built around "half layers": hidden layers whose projection
//! matrix is frozen at random values while only a per-unit scale and bias
//! train, so the trainable count of a layer is 2H no matter how wide its
//! input is. The crate bundles the layer implementations, four recipes for
//! the frozen matrix, a from-scratch SGD training loop, MNIST/FashionMNIST
//! IDX loading, and a deterministic multi-seed experiment harness.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod rng;
pub mod scheme;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{BuildOptions, Family, ModelSpec, Network};
pub use scheme::{SchemeKind, WeightScheme};
pub use tensor::{Activation, Tensor};
pub use train::{RunReport, TrainConfig};
