//! Fully convolutional networks trained from scratch.
//!
//! The main model chains three valid convolutions (64 filters of 10x10,
//! 16 of 6x6, one of 5x5) with a ReLU after each, turning a 32x32 degraded
//! window into the 14x14 clean window at its center. A single-layer linear
//! model with the same receptive field serves as a baseline.
//!
//! Weights are stored `[out][in][kh][kw]` and every layer computes a true
//! (kernel-flipped) convolution, like the rest of the crate.

mod backprop;
mod format;
mod layer;
mod model;
mod scalar;
mod train;

pub use backprop::{evaluate_loss, loss_and_gradients, Gradients, LayerGrad};
pub use format::{decode_model, encode_model, header_len, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layer::{ConvLayer, Tensor};
pub use model::{
    build_1cnn, build_3cnn, Architecture, CnnModel, ForwardOutput, LayerSpec, INPUT_WINDOW,
    OUTPUT_WINDOW,
};
pub use scalar::Scalar;
pub use train::{train, train_with_validator, EpochRecord, TrainConfig, TrainHistory};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PatchPair;
    use crate::image::Image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> CnnModel<f64> {
        let specs = [
            LayerSpec { out_channels: 2, kernel: 3, relu: true },
            LayerSpec { out_channels: 2, kernel: 3, relu: true },
            LayerSpec { out_channels: 1, kernel: 3, relu: true },
        ];
        CnnModel::from_spec(&specs, 12, seed).unwrap()
    }

    fn random_pairs(rng: &mut ChaCha8Rng, n: usize, input: usize, output: usize) -> Vec<PatchPair> {
        (0..n)
            .map(|i| PatchPair {
                input: Image::from_fn(input, input, |_, _| rng.random_range(0.0..1.0)),
                target: Image::from_fn(output, output, |_, _| rng.random_range(0.0..1.0)),
                source_id: format!("s{i}"),
                top: 0,
                left: 0,
            })
            .collect()
    }

    /// Signs of every ReLU pre-activation over the batch.
    fn relu_signs(model: &CnnModel<f64>, pairs: &[PatchPair]) -> Vec<bool> {
        let mut signs = Vec::new();
        for p in pairs {
            let mut x = model.image_tensor(&p.input).unwrap();
            for layer in model.layers() {
                let mut linear = layer.clone();
                linear.relu = false;
                let z = linear.forward(&x).unwrap();
                if layer.relu {
                    signs.extend(z.data.iter().map(|&v| v > 0.0));
                }
                x = layer.forward(&x).unwrap();
            }
        }
        signs
    }

    #[test]
    fn perfect_model_has_zero_loss_and_gradient() {
        let model = build_3cnn(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pairs = random_pairs(&mut rng, 3, 32, 14);
        for p in pairs.iter_mut() {
            p.target = model.predict(&p.input).unwrap();
        }
        let (loss, grads) = loss_and_gradients(&model, &pairs).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_is_equivalent() {
        let model = tiny_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = random_pairs(&mut rng, 4, 12, 6);
        let doubled: Vec<_> = pairs.iter().chain(&pairs).cloned().collect();
        let (l1, g1) = loss_and_gradients(&model, &pairs).unwrap();
        let (l2, g2) = loss_and_gradients(&model, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = tiny_model(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs = random_pairs(&mut rng, 1, 12, 5);
        assert!(matches!(loss_and_gradients(&model, &pairs), Err(crate::Error::ShapeMismatch(_))));
        assert!(loss_and_gradients(&model, &[]).is_err());
    }

    #[test]
    fn finite_difference_gradient_check() {
        // Fixture chosen so that no +-h perturbation of any parameter flips a
        // ReLU, while both active and inactive units occur.
        let mut model = tiny_model(8);
        for l in model.layers_mut() {
            l.biases.iter_mut().for_each(|b| *b = 0.05);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        let pairs = random_pairs(&mut rng, 3, 12, 6);
        let signs = relu_signs(&model, &pairs);
        assert!(signs.iter().any(|&s| s) && signs.iter().any(|&s| !s));

        let (_, analytic) = loss_and_gradients(&model, &pairs).unwrap();
        let loss = |m: &CnnModel<f64>| loss_and_gradients(m, &pairs).unwrap().0;
        let h = 1e-3;
        let mut worst = 0.0f64;
        for li in 0..model.layers().len() {
            let nw = model.layers()[li].weights.len();
            let nb = model.layers()[li].biases.len();
            for pi in 0..nw + nb {
                let shifted = |d: f64| {
                    let mut m = model.clone();
                    let l = &mut m.layers_mut()[li];
                    if pi < nw { l.weights[pi] += d } else { l.biases[pi - nw] += d }
                    assert_eq!(relu_signs(&m, &pairs), signs, "layer {li} parameter {pi} crosses a kink");
                    m
                };
                let numeric = (loss(&shifted(h)) - loss(&shifted(-h))) / (2.0 * h);
                let g = &analytic.layers[li];
                let a = if pi < nw { g.weights[pi] } else { g.biases[pi - nw] };
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let model = tiny_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train_set = random_pairs(&mut rng, 20, 12, 6);
        let val = random_pairs(&mut rng, 5, 12, 6);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 7,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let (trained, hist) = train(model.clone(), &train_set, &val, &cfg).unwrap();
        assert_eq!(trained, model);
        assert_eq!(hist.epochs.len(), 3);
        assert!(hist.epochs.iter().all(|e| e.val_loss == hist.initial_val_loss));
        assert!(!hist.stopped_early);
    }

    #[test]
    fn plain_sgd_step() {
        let model = tiny_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let train_set = random_pairs(&mut rng, 4, 12, 6);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.0,
            nesterov: false,
            batch_size: 4,
            max_epochs: 1,
            early_stop: false,
            seed: 1,
        };
        let (_, grads) = loss_and_gradients(&model, &train_set).unwrap();
        let (stepped, _) = train_with_validator(model.clone(), &train_set, &cfg, |_| Ok(1.0)).unwrap();
        // The full batch is one step; shuffling only reorders the summation.
        for ((a, b), g) in stepped.layers().iter().zip(model.layers()).zip(&grads.layers) {
            for ((&wa, &wb), &gw) in a.weights.iter().zip(&b.weights).zip(&g.weights) {
                assert!((wa - (wb - 0.05 * gw)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn plain_sgd_step_is_exact_for_a_single_sample() {
        let model = tiny_model(8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train_set = random_pairs(&mut rng, 1, 12, 6);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.0,
            nesterov: false,
            batch_size: 1,
            max_epochs: 1,
            early_stop: false,
            seed: 1,
        };
        let (_, grads) = loss_and_gradients(&model, &train_set).unwrap();
        let (stepped, _) = train_with_validator(model.clone(), &train_set, &cfg, |_| Ok(1.0)).unwrap();
        for ((a, b), g) in stepped.layers().iter().zip(model.layers()).zip(&grads.layers) {
            for ((&wa, &wb), &gw) in a.weights.iter().zip(&b.weights).zip(&g.weights) {
                assert_eq!(wa, wb - 0.05 * gw);
            }
        }
    }

    #[test]
    fn early_stopping_returns_previous_snapshot() {
        let model = tiny_model(9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train_set = random_pairs(&mut rng, 10, 12, 6);
        let cfg = TrainConfig {
            batch_size: 5,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        let scripted = [2.0, 1.0, 0.5, 0.6, 0.1];
        let mut calls = 0;
        let mut snapshots = Vec::new();
        let (returned, hist) = train_with_validator(model, &train_set, &cfg, |m| {
            snapshots.push(m.clone());
            let v = scripted[calls];
            calls += 1;
            Ok(v)
        })
        .unwrap();
        assert!(hist.stopped_early);
        assert_eq!(hist.epochs.len(), 3);
        assert_eq!(hist.returned_epoch, 2);
        assert_eq!(returned, snapshots[2]);
        assert_ne!(returned, snapshots[3]);
    }

    #[test]
    fn divergence_is_reported() {
        // A linear model cannot escape into dead ReLUs.
        let model = build_1cnn(10);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let train_set = random_pairs(&mut rng, 10, 32, 14);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            batch_size: 5,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let res = train_with_validator(model, &train_set, &cfg, |_| Ok(1.0));
        assert!(matches!(res, Err(crate::Error::Diverged { .. })));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { max_epochs: 0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
