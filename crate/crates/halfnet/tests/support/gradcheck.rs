//! Shared finite-difference gradient checks. Gradients are recovered through
//! the public Layer trait alone: after one SGD step with lr = 1 and
//! momentum = 0, parameter deltas equal the negated accumulated gradients.

use halfnet::layers::{ConvBlock, DenseLayer, HalfLayer, Layer, TensorRecord};
use halfnet::rng::SeededGenerator;
use halfnet::scheme::{InitContext, SchemeKind, WeightScheme};
use halfnet::tensor::{Activation, Tensor};
use halfnet::train::cross_entropy;

pub const EPS: f64 = 1e-6;
pub const INSTANCES: usize = 20;

/// Relative-or-absolute agreement: |a - fd| <= tol * max(|a|, |fd|, 1).
fn close(analytic: f64, fd: f64, tol: f64) -> bool {
    (analytic - fd).abs() <= tol * analytic.abs().max(fd.abs()).max(1.0)
}

/// The scalar objective: for softmax layers the cross-entropy of a fixed
/// label; otherwise a fixed random linear functional of the output.
enum Objective {
    Linear(Vec<f64>),
    CrossEntropy(usize),
}

impl Objective {
    fn loss(&self, output: &[f64]) -> f64 {
        match self {
            Objective::Linear(c) => c.iter().zip(output).map(|(a, b)| a * b).sum(),
            Objective::CrossEntropy(label) => cross_entropy(output, *label).0,
        }
    }

    /// What the layer's backward expects upstream: d loss / d output for
    /// ordinary activations, d loss / d pre-activation for softmax heads.
    fn upstream(&self, output: &[f64]) -> Vec<f64> {
        match self {
            Objective::Linear(c) => c.clone(),
            Objective::CrossEntropy(label) => cross_entropy(output, *label).1,
        }
    }
}

fn flat_records(records: &[TensorRecord]) -> Vec<(bool, Vec<f64>)> {
    records.iter().map(|r| (r.frozen, r.tensor.data().to_vec())).collect()
}

fn set_records(layer: &mut dyn Layer, values: &[(bool, Vec<f64>)]) {
    let mut records = layer.records();
    for (rec, (_, vals)) in records.iter_mut().zip(values) {
        rec.tensor.data_mut().copy_from_slice(vals);
    }
    layer.load_records(records).unwrap();
}

/// Check d loss / d parameter for the given coordinates of each trainable
/// record, and d loss / d input for every input coordinate, on one instance.
fn check_layer(
    layer: &mut dyn Layer,
    x: &Tensor,
    objective: &Objective,
    tol: f64,
    param_coords: Option<&mut dyn FnMut(usize, usize) -> bool>,
    label: &str,
) {
    let base = flat_records(&layer.records());
    let out = layer.forward_batch(x).unwrap();
    let upstream = Tensor::new(out.shape().to_vec(), objective.upstream(out.data())).unwrap();
    // the conv block sits at the bottom of every stack and reports no
    // input gradient; everything else must produce one
    let grad_x = layer.backward_batch(&upstream, true).unwrap();

    // recover parameter gradients from a unit step
    layer.step(1.0, 0.0);
    let stepped = flat_records(&layer.records());
    let grads: Vec<Vec<f64>> = base
        .iter()
        .zip(&stepped)
        .map(|((_, b), (_, s))| b.iter().zip(s).map(|(b, s)| b - s).collect())
        .collect();
    set_records(layer, &base);

    let mut want = param_coords;
    for (ri, (frozen, vals)) in base.iter().enumerate() {
        if *frozen {
            assert!(grads[ri].iter().all(|&g| g == 0.0), "{label}: frozen record {ri} moved");
            continue;
        }
        for j in 0..vals.len() {
            if let Some(f) = want.as_deref_mut() {
                if !f(ri, j) {
                    continue;
                }
            }
            let mut probe = |delta: f64| -> f64 {
                let mut v = base.clone();
                v[ri].1[j] += delta;
                set_records(layer, &v);
                let y = layer.infer_batch(x).unwrap();
                objective.loss(y.data())
            };
            let fd = (probe(EPS) - probe(-EPS)) / (2.0 * EPS);
            set_records(layer, &base);
            assert!(
                close(grads[ri][j], fd, tol),
                "{label}: record {ri} coord {j}: analytic {} vs fd {fd}",
                grads[ri][j]
            );
        }
    }

    // input gradient against finite differences
    let Some(grad_x) = grad_x else { return };
    for j in 0..x.len() {
        let probe = |delta: f64| -> f64 {
            let mut xs = x.data().to_vec();
            xs[j] += delta;
            let xt = Tensor::new(x.shape().to_vec(), xs).unwrap();
            let y = layer.infer_batch(&xt).unwrap();
            objective.loss(y.data())
        };
        let fd = (probe(EPS) - probe(-EPS)) / (2.0 * EPS);
        assert!(
            close(grad_x.data()[j], fd, tol),
            "{label}: input coord {j}: analytic {} vs fd {fd}",
            grad_x.data()[j]
        );
    }
}

fn random_input(gen: &mut SeededGenerator, dim: usize) -> Tensor {
    Tensor::new(vec![1, dim], (0..dim).map(|_| gen.normal()).collect()).unwrap()
}

pub fn check_dense() {
    for inst in 0..INSTANCES {
        let mut gen = SeededGenerator::new(100 + inst as u64);
        let act = if inst % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let mut layer = DenseLayer::new(6, 5, act, &mut gen);
        let x = random_input(&mut gen, 6);
        let c = Objective::Linear((0..5).map(|_| gen.normal()).collect());
        check_layer(&mut layer, &x, &c, 1e-6, None, "dense");
    }
}

pub fn check_softmax_cross_entropy() {
    for inst in 0..INSTANCES {
        let mut gen = SeededGenerator::new(300 + inst as u64);
        let mut layer = DenseLayer::new(7, 10, Activation::Softmax, &mut gen);
        let x = random_input(&mut gen, 7);
        let obj = Objective::CrossEntropy(gen.below(10));
        check_layer(&mut layer, &x, &obj, 1e-6, None, "softmax+ce");
    }
}

pub fn check_half() {
    for inst in 0..INSTANCES {
        let mut gen = SeededGenerator::new(500 + inst as u64);
        let scheme = WeightScheme::new(SchemeKind::Normal);
        let ctx = InitContext { input_dim: 8, train_images: None };
        let r = scheme.generate(&mut gen, 6, &ctx).unwrap();
        let act = if inst % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let mut layer = HalfLayer::new(r, act, scheme).unwrap();
        let u = Tensor::from_vec((0..6).map(|_| 0.5 + gen.uniform()).collect());
        let u0 = Tensor::from_vec((0..6).map(|_| gen.normal() * 0.3).collect());
        layer.set_scale_bias(u, u0).unwrap();
        let x = random_input(&mut gen, 8);
        let c = Objective::Linear((0..6).map(|_| gen.normal()).collect());
        check_layer(&mut layer, &x, &c, 1e-6, None, "half");
    }
}

pub fn check_conv() {
    // the block has 5056 parameters; probing all of them with finite
    // differences is needlessly slow, so each instance checks a random
    // sample of coordinates from every trainable record
    for inst in 0..INSTANCES {
        let mut gen = SeededGenerator::new(700 + inst as u64);
        let mut layer = ConvBlock::new(&mut gen);
        let x = Tensor::new(vec![1, 784], (0..784).map(|_| gen.uniform()).collect()).unwrap();
        let c = Objective::Linear((0..layer.output_dim()).map(|_| gen.normal()).collect());
        let mut coord_gen = SeededGenerator::new(900 + inst as u64);
        let sizes: Vec<usize> = layer.records().iter().map(|r| r.tensor.len()).collect();
        let mut chosen: Vec<std::collections::HashSet<usize>> = Vec::new();
        for &s in &sizes {
            let mut set = std::collections::HashSet::new();
            while set.len() < 6.min(s) {
                set.insert(coord_gen.below(s));
            }
            chosen.push(set);
        }
        let mut want = |ri: usize, j: usize| chosen[ri].contains(&j);
        check_layer(&mut layer, &x, &c, 1e-5, Some(&mut want), "conv");
    }
}
