//! Minimal convolutional network library: layers with hand-written backprop,
//! softmax losses, Adam, checkpoints and builders for the four architectures.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod optim;
mod real;
mod spec;
mod tensor;

use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION,
};
pub use layers::{
    build_module, AvgPool2d, BatchNorm2d, Conv2d, DenseBlock, Flatten, GlobalAvgPool, Linear,
    MaxPool2d, Module, Relu, Residual, Sequential, BN_EPS, BN_MOMENTUM,
};
pub use loss::{loss_and_grad, softmax};
pub use network::{
    gradient_check, gradient_check_with, module_gradient_check, train, Network, TrainConfig,
    TrainReport, Trainer,
};
pub use optim::{adam_step, AdamState};
pub use real::Real;
pub use spec::{
    build_densenet121, build_mobilenetv1, build_resnet18, build_small_cnn, conv_cost, densenet121,
    mobilenetv1, resnet18, small_cnn, small_cnn_flatten_index, ConvCost, ConvSpec, InputGeometry,
    LayerSpec, LossKind, NetworkSpec, DENSENET121_BLOCKS, DENSENET_GROWTH,
};
pub use tensor::{Shape, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(std::io::Error),
}

/// Training mode uses batch statistics and keeps backward caches; inference
/// uses running statistics and keeps nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut r = rng::seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn module(spec: LayerSpec, seed: u64) -> Box<dyn Module<f64>> {
        build_module(&spec, &mut rng::seeded(seed)).unwrap()
    }

    fn set_all(m: &mut dyn Module<f64>, pick: impl Fn(&Tensor<f64>) -> bool, v: f64) {
        for p in m.params_mut() {
            if pick(p) {
                p.data.iter_mut().for_each(|x| *x = v);
            }
        }
    }

    fn is_weight(t: &Tensor<f64>) -> bool {
        t.shape()[1..] != [1, 1, 1]
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut conv =
            Conv2d::<f64>::new(ConvSpec::new(1, 1, 3, 1, 1), true, &mut rng::seeded(0)).unwrap();
        conv.weight.data = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let x = random([1, 1, 3, 3], 1);
        assert_eq!(conv.forward(&x, Mode::Inference).unwrap(), x);
    }

    #[test]
    fn table_stem_shape() {
        let mut conv = module(LayerSpec::conv(ConvSpec::new(1, 64, 3, 1, 1)), 0);
        let x = Tensor::<f64>::zeros([16, 1, 100, 100]);
        assert_eq!(
            conv.forward(&x, Mode::Inference).unwrap().shape(),
            [16, 64, 100, 100]
        );
    }

    #[test]
    fn conv_matches_direct_sum() {
        let spec = ConvSpec {
            groups: 2,
            ..ConvSpec::new(4, 6, 3, 2, 1)
        };
        let mut conv = Conv2d::<f64>::new(spec, true, &mut rng::seeded(3)).unwrap();
        conv.bias.as_mut().unwrap().data = vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.6];
        let x = random([2, 4, 7, 6], 4);
        let y = conv.forward(&x, Mode::Inference).unwrap();
        assert_eq!(y.shape(), [2, 6, 4, 3]);
        for b in 0..2 {
            for o in 0..6 {
                let g = o / 3;
                for oy in 0..4 {
                    for ox in 0..3 {
                        let mut s = conv.bias.as_ref().unwrap().data[o];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (iy, ix) =
                                        ((oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1);
                                    if (0..7).contains(&iy) && (0..6).contains(&ix) {
                                        let w = conv.weight.data[((o * 2 + ci) * 3 + ky) * 3 + kx];
                                        s += w * x.at(b, g * 2 + ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        assert!((y.at(b, o, oy, ox) - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut conv = module(LayerSpec::conv(ConvSpec::new(2, 3, 3, 1, 1)), 5);
        assert!(
            module_gradient_check(conv.as_mut(), &random([1, 2, 5, 5], 6), 1e-3, 7).unwrap() < 1e-4
        );
        let mut grouped = module(
            LayerSpec::conv(ConvSpec {
                groups: 2,
                ..ConvSpec::new(4, 4, 3, 2, 1)
            }),
            8,
        );
        assert!(
            module_gradient_check(grouped.as_mut(), &random([2, 4, 6, 6], 9), 1e-3, 10).unwrap()
                < 1e-4
        );
    }

    #[test]
    fn every_layer_kind_gradients() {
        let x = random([2, 4, 6, 6], 11);
        let kinds = [
            LayerSpec::BatchNorm { channels: 4 },
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                kernel: 2,
                stride: 2,
                padding: 0,
            },
            LayerSpec::MaxPool {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            LayerSpec::AvgPool {
                kernel: 2,
                stride: 2,
            },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Flatten,
            LayerSpec::conv(ConvSpec::depthwise(4, 1)),
        ];
        for (i, spec) in kinds.into_iter().enumerate() {
            let mut m = module(spec.clone(), i as u64);
            let err = module_gradient_check(m.as_mut(), &x, 1e-5, 12).unwrap();
            assert!(err < 1e-3, "{spec:?}: {err}");
        }
        let mut lin = module(
            LayerSpec::Linear {
                inputs: 5,
                outputs: 3,
            },
            13,
        );
        assert!(
            module_gradient_check(lin.as_mut(), &random([3, 5, 1, 1], 14), 1e-3, 15).unwrap()
                < 1e-6
        );
    }

    #[test]
    fn batch_norm_inference_identity() {
        let mut bn = BatchNorm2d::<f64>::new(3);
        let x = random([2, 3, 4, 4], 16);
        let y = bn.forward(&x, Mode::Inference).unwrap();
        assert!(y
            .data
            .iter()
            .zip(&x.data)
            .all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn batch_norm_running_stats_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::new([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data[0] - 0.1 * 3.0).abs() < 1e-12);
        // unbiased variance of [1,2,3,6] is 14/3
        assert!((bn.running_var.data[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn depthwise_separable_shapes_and_zero_pointwise() {
        let mut ds = module(
            LayerSpec::DepthwiseSeparable {
                in_channels: 32,
                out_channels: 64,
                stride: 1,
            },
            17,
        );
        let x = random([1, 32, 100, 100], 18);
        assert_eq!(
            ds.forward(&x, Mode::Inference).unwrap().shape(),
            [1, 64, 100, 100]
        );
        for p in ds.params_mut() {
            if p.shape() == [64, 32, 1, 1] {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let y = ds
            .forward(&random([1, 32, 10, 10], 19), Mode::Inference)
            .unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_separable_equals_rank_one_conv() {
        let mut r = rng::seeded(20);
        let mut dw = Conv2d::<f64>::new(ConvSpec::depthwise(1, 1), false, &mut r).unwrap();
        let mut pw = Conv2d::<f64>::new(ConvSpec::new(1, 5, 1, 1, 0), false, &mut r).unwrap();
        let mut full = Conv2d::<f64>::new(ConvSpec::new(1, 5, 3, 1, 1), false, &mut r).unwrap();
        full.weight.data = pw
            .weight
            .data
            .iter()
            .flat_map(|&p| dw.weight.data.iter().map(move |&d| p * d))
            .collect();
        let x = random([2, 1, 9, 9], 21);
        let a = pw
            .forward(&dw.forward(&x, Mode::Inference).unwrap(), Mode::Inference)
            .unwrap();
        let b = full.forward(&x, Mode::Inference).unwrap();
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn residual_identity_shortcut_dominates() {
        let mut res = module(
            LayerSpec::Residual {
                in_channels: 3,
                out_channels: 3,
                stride: 1,
            },
            22,
        );
        set_all(res.as_mut(), is_weight, 0.0);
        let x = random([2, 3, 5, 5], 23);
        let y = res.forward(&x, Mode::Inference).unwrap();
        assert!(y.data.iter().zip(&x.data).all(|(a, b)| *a == b.max(0.0)));
    }

    #[test]
    fn residual_gradients() {
        for (i, o, s) in [(4, 4, 1), (4, 6, 2)] {
            let mut res = module(
                LayerSpec::Residual {
                    in_channels: i,
                    out_channels: o,
                    stride: s,
                },
                24,
            );
            let err =
                module_gradient_check(res.as_mut(), &random([1, i, 6, 6], 25), 1e-5, 26).unwrap();
            assert!(err < 1e-3, "({i},{o},{s}): {err}");
        }
    }

    #[test]
    fn dense_block_channels_zeroing_and_gradients() {
        let mut block = module(
            LayerSpec::DenseBlock {
                in_channels: 16,
                layers: 5,
                growth: 12,
                bottleneck: false,
            },
            27,
        );
        assert_eq!(
            block
                .forward(&random([1, 16, 6, 6], 28), Mode::Inference)
                .unwrap()
                .channels(),
            76
        );

        let mut one = module(
            LayerSpec::DenseBlock {
                in_channels: 3,
                layers: 1,
                growth: 2,
                bottleneck: false,
            },
            29,
        );
        set_all(one.as_mut(), is_weight, 0.0);
        let x = random([1, 3, 4, 4], 30);
        let y = one.forward(&x, Mode::Inference).unwrap();
        assert_eq!(y.slice_channels(0, 3), x);
        assert!(y.slice_channels(3, 5).data.iter().all(|&v| v == 0.0));

        let mut bn = module(
            LayerSpec::DenseBlock {
                in_channels: 2,
                layers: 2,
                growth: 2,
                bottleneck: true,
            },
            31,
        );
        let err = module_gradient_check(bn.as_mut(), &random([2, 2, 4, 4], 32), 1e-5, 33).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn dense_connectivity_by_ablation() {
        let spec = LayerSpec::DenseBlock {
            in_channels: 4,
            layers: 4,
            growth: 3,
            bottleneck: true,
        };
        let x = random([1, 4, 5, 5], 34);
        let mut base = module(spec.clone(), 35);
        let y0 = base.forward(&x, Mode::Inference).unwrap();
        let mut ablated = module(spec, 35);
        // only the first layer's 3×3 conv reads the 12-channel bottleneck of width 4·3
        let params = ablated.params_mut();
        let first_conv = params
            .into_iter()
            .filter(|p| p.shape() == [3, 12, 3, 3])
            .next()
            .unwrap();
        first_conv.data.iter_mut().for_each(|v| *v = 0.0);
        let y1 = ablated.forward(&x, Mode::Inference).unwrap();
        assert_eq!(y0.slice_channels(0, 4), y1.slice_channels(0, 4));
        assert!(y1.slice_channels(4, 7).data.iter().all(|&v| v == 0.0));
        for l in 1..4 {
            let c = 4 + 3 * l;
            assert_ne!(
                y0.slice_channels(c, c + 3),
                y1.slice_channels(c, c + 3),
                "layer {l} ignores layer 0"
            );
        }
    }

    fn tiny_conv_net() -> NetworkSpec {
        NetworkSpec {
            name: "tiny".into(),
            input: [1, 8, 8],
            layers: vec![
                LayerSpec::conv(ConvSpec::new(1, 2, 3, 1, 1)),
                LayerSpec::Relu,
                LayerSpec::conv(ConvSpec::new(2, 2, 3, 1, 1)),
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    inputs: 128,
                    outputs: 3,
                },
            ],
            loss: LossKind::SoftmaxCrossEntropy,
            classes: 3,
        }
    }

    #[test]
    fn network_gradient_checks_and_fault_injection() {
        let linear = NetworkSpec {
            name: "linear".into(),
            input: [1, 2, 2],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    inputs: 4,
                    outputs: 3,
                },
            ],
            loss: LossKind::SoftmaxMse,
            classes: 3,
        };
        let mut net = Network::<f64>::new(linear, 1).unwrap();
        let x = random([3, 1, 2, 2], 40);
        let e = gradient_check(&mut net, &x, &[0, 1, 2], 1e-5).unwrap();
        assert!(e < 1e-6, "{e}");

        let mut conv = Network::<f64>::new(tiny_conv_net(), 2).unwrap();
        let x = random([2, 1, 8, 8], 41);
        assert!(gradient_check(&mut conv, &x, &[1, 2], 1e-3).unwrap() < 1e-3);
        let corrupted = gradient_check_with(&mut conv, &x, &[1, 2], 1e-3, &mut |g| {
            let (i, _) = g[0]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            g[0][i] *= 2.0;
        })
        .unwrap();
        assert!(corrupted > 0.3, "{corrupted}");
    }

    #[test]
    fn small_cnn_forward() {
        let mut net = Network::<f32>::new(build_small_cnn(), 3).unwrap();
        let x = random([2, 1, 100, 100], 42).cast::<f32>();
        assert_eq!(
            net.forward(&x, Mode::Inference).unwrap().shape(),
            [2, 3, 1, 1]
        );
        for p in net.predict_proba(&x, 16).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let flat = small_cnn_flatten_index(net.spec()).unwrap();
        assert_eq!(
            net.forward_prefix(&x, flat + 1, Mode::Inference)
                .unwrap()
                .shape(),
            [2, 1296, 1, 1]
        );
        assert!(net
            .forward(&random([2, 3, 100, 100], 1).cast(), Mode::Inference)
            .is_err());
    }

    #[test]
    fn zero_weight_resnet_outputs_linear_bias() {
        let spec = resnet18(InputGeometry {
            channels: 1,
            side: 24,
        });
        let mut net = Network::<f64>::new(spec, 4).unwrap();
        for p in net.params_mut() {
            if is_weight(p) {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let last = net.layer_count() - 1;
        net.layer_params_mut(last)[1].data = vec![0.25, -1.0, 3.0];
        let y = net
            .forward(&random([3, 1, 24, 24], 43), Mode::Inference)
            .unwrap();
        for row in y.data.chunks(3) {
            assert_eq!(row, [0.25, -1.0, 3.0]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = Network::<f32>::new(tiny_conv_net(), 5).unwrap();
        let x = random([4, 1, 8, 8], 44).cast::<f32>();
        train(
            &mut net,
            &x,
            &[0, 1, 2, 0],
            &TrainConfig {
                epochs: 2,
                batch: 2,
                lr: 1e-2,
                seed: 1,
            },
        )
        .unwrap();
        let bytes = save_checkpoint(&mut net);
        assert_eq!(&bytes[..4], MAGIC);
        let mut back = load_checkpoint::<f32>(&bytes).unwrap();
        let a: Vec<Vec<f32>> = net.params_mut().iter().map(|p| p.data.clone()).collect();
        let b: Vec<Vec<f32>> = back.params_mut().iter().map(|p| p.data.clone()).collect();
        assert!(a
            .iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(
            net.predict_proba(&x, 3).unwrap(),
            back.predict_proba(&x, 3).unwrap()
        );

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(load_checkpoint::<f32>(&bad).is_err());
        assert!(load_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn batch_norm_stats_survive_checkpoint() {
        let spec = NetworkSpec {
            name: "bn".into(),
            input: [2, 4, 4],
            layers: vec![
                LayerSpec::BasicConv {
                    in_channels: 2,
                    out_channels: 3,
                    stride: 1,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear {
                    inputs: 3,
                    outputs: 3,
                },
            ],
            loss: LossKind::SoftmaxCrossEntropy,
            classes: 3,
        };
        let mut net = Network::<f32>::new(spec, 6).unwrap();
        let x = random([4, 2, 4, 4], 45).cast::<f32>();
        train(
            &mut net,
            &x,
            &[0, 1, 2, 1],
            &TrainConfig {
                epochs: 3,
                batch: 4,
                lr: 1e-2,
                seed: 2,
            },
        )
        .unwrap();
        let mut back = load_checkpoint::<f32>(&save_checkpoint(&mut net)).unwrap();
        assert_eq!(
            net.predict_proba(&x, 4).unwrap(),
            back.predict_proba(&x, 4).unwrap()
        );
    }

    #[test]
    fn training_is_deterministic_and_rejects_empty() {
        let x = random([6, 1, 8, 8], 46).cast::<f32>();
        let labels = [0, 1, 2, 0, 1, 2];
        let cfg = TrainConfig {
            epochs: 3,
            batch: 4,
            lr: 1e-3,
            seed: 9,
        };
        let run = || {
            let mut net = Network::<f32>::new(tiny_conv_net(), 7).unwrap();
            train(&mut net, &x, &labels, &cfg).unwrap().loss_history
        };
        let h = run();
        assert_eq!(h.len(), 3);
        assert_eq!(h, run());
        let mut net = Network::<f32>::new(tiny_conv_net(), 7).unwrap();
        assert!(matches!(
            train(&mut net, &x.gather(&[]), &[], &cfg),
            Err(NnError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn default_learning_rates() {
        assert_eq!(TrainConfig::for_spec(&build_small_cnn(), 0).lr, 1e-4);
        for spec in [build_resnet18(), build_mobilenetv1(), build_densenet121()] {
            let cfg = TrainConfig::for_spec(&spec, 0);
            assert_eq!((cfg.lr, cfg.epochs, cfg.batch), (1e-5, 10, 16));
        }
    }
}
