//! Randomized invariants over the numeric core and the model grammar.

use halfnet::layers::{HalfLayer, Layer};
use halfnet::rng::SeededGenerator;
use halfnet::scheme::{InitContext, SchemeKind, WeightScheme};
use halfnet::tensor::{matvec, maxpool2, maxpool2_backward, Activation, Tensor};
use halfnet::train::cross_entropy;
use halfnet::ModelSpec;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_is_a_probability_vector(logits in prop::collection::vec(-50.0..50.0f64, 2..12)) {
        let mut row = logits.clone();
        Activation::Softmax.apply_in_place(&mut row);
        let sum: f64 = row.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(row.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-10.0..10.0f64, 3..8), shift in -100.0..100.0f64) {
        let mut a = logits.clone();
        let mut b: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        Activation::Softmax.apply_in_place(&mut a);
        Activation::Softmax.apply_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_grad_sums_to_zero(
        logits in prop::collection::vec(-10.0..10.0f64, 10),
        label in 0usize..10,
    ) {
        let mut probs = logits.clone();
        Activation::Softmax.apply_in_place(&mut probs);
        let (loss, grad) = cross_entropy(&probs, label);
        prop_assert!(loss >= -1e-12);
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn identity_half_layer_with_unit_scale_is_the_projection(
        seed in 0u64..1000,
        units in 1usize..8,
        dim in 1usize..12,
        xs in prop::collection::vec(-3.0..3.0f64, 12),
    ) {
        let mut gen = SeededGenerator::new(seed);
        let scheme = WeightScheme::new(SchemeKind::Normal);
        let ctx = InitContext { input_dim: dim, train_images: None };
        let r = scheme.generate(&mut gen, units, &ctx).unwrap();
        let mut layer = HalfLayer::new(r.clone(), Activation::Identity, scheme).unwrap();
        layer.set_scale_bias(
            Tensor::from_vec(vec![1.0; units]),
            Tensor::from_vec(vec![0.0; units]),
        ).unwrap();
        let x = Tensor::from_vec(xs[..dim].to_vec());
        let batch = Tensor::new(vec![1, dim], x.data().to_vec()).unwrap();
        let out = layer.infer_batch(&batch).unwrap();
        let direct = matvec(&r, &x).unwrap();
        for (a, b) in out.data().iter().zip(direct.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_scheme_is_plus_minus_one(seed in 0u64..500, units in 1usize..10, dim in 1usize..40) {
        let mut gen = SeededGenerator::new(seed);
        let scheme = WeightScheme::new(SchemeKind::Binary);
        let ctx = InitContext { input_dim: dim, train_images: None };
        let r = scheme.generate(&mut gen, units, &ctx).unwrap();
        prop_assert!(r.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn scheme_generation_is_seed_deterministic(seed in 0u64..500, kind in 0usize..3) {
        let kind = [SchemeKind::Normal, SchemeKind::Binary, SchemeKind::Mexican][kind];
        let scheme = WeightScheme::new(kind);
        let ctx = InitContext { input_dim: 784, train_images: None };
        let a = scheme.generate(&mut SeededGenerator::new(seed), 4, &ctx).unwrap();
        let b = scheme.generate(&mut SeededGenerator::new(seed), 4, &ctx).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn maxpool_backward_routes_all_gradient_mass(
        vals in prop::collection::vec(-5.0..5.0f64, 36),
        grads in prop::collection::vec(-2.0..2.0f64, 9),
    ) {
        let input = Tensor::new(vec![1, 6, 6], vals).unwrap();
        let (pooled, argmax) = maxpool2(&input).unwrap();
        prop_assert_eq!(pooled.shape(), &[1, 3, 3]);
        let upstream = Tensor::new(vec![1, 3, 3], grads.clone()).unwrap();
        let back = maxpool2_backward(&argmax, &upstream).unwrap();
        let up_sum: f64 = grads.iter().sum();
        let back_sum: f64 = back.iter().sum();
        prop_assert!((up_sum - back_sum).abs() < 1e-12);
        // gradient lands only on cells holding the window maximum
        for (j, &g) in back.iter().enumerate() {
            if g != 0.0 {
                let (r, c) = (j / 6, j % 6);
                let win = pooled.data()[(r / 2) * 3 + c / 2];
                prop_assert_eq!(input.data()[j], win);
            }
        }
    }

    #[test]
    fn model_names_round_trip_through_parse(
        family in 0usize..4,
        hidden in 1usize..4096,
        scheme in 0usize..4,
    ) {
        let scheme_code = ['N', 'B', 'M', 'T'][scheme];
        let name = match family {
            0 => format!("mlp-{hidden}"),
            1 => format!("rnd-{hidden}-{scheme_code}"),
            2 => format!("cmlp-{hidden}"),
            _ => {
                // crnd admits only N and B
                let code = ['N', 'B'][scheme % 2];
                format!("crnd-{hidden}-{code}")
            }
        };
        let spec = ModelSpec::parse(&name).unwrap();
        prop_assert_eq!(spec.name(), name);
    }

    #[test]
    fn trainable_count_of_half_models_ignores_fan_in(
        hidden in 1usize..2048,
        d1 in 1usize..2000,
        d2 in 1usize..2000,
    ) {
        let spec = ModelSpec::parse(&format!("rnd-{hidden}-N")).unwrap();
        let a = spec.count_trainable(d1).unwrap();
        let b = spec.count_trainable(d2).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a, 2 * hidden + 10 * (hidden + 1));
    }

    #[test]
    fn frozen_digest_survives_training_steps(seed in 0u64..200) {
        let mut gen = SeededGenerator::new(seed);
        let scheme = WeightScheme::new(SchemeKind::Normal);
        let ctx = InitContext { input_dim: 5, train_images: None };
        let r = scheme.generate(&mut gen, 3, &ctx).unwrap();
        let mut layer = HalfLayer::new(r, Activation::Relu, scheme).unwrap();
        let before = layer.frozen_digest().unwrap();
        for step in 0..5 {
            let x = Tensor::new(vec![2, 5], (0..10).map(|i| ((i + step) as f64).sin()).collect()).unwrap();
            let out = layer.forward_batch(&x).unwrap();
            let grad = Tensor::new(out.shape().to_vec(), vec![0.1; out.len()]).unwrap();
            layer.backward_batch(&grad, false).unwrap();
            layer.step(0.05, 0.9);
        }
        prop_assert_eq!(layer.frozen_digest().unwrap(), before);
    }
}
