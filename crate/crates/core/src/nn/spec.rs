use serde::{Deserialize, Serialize};

use super::tensor::Shape;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups: 1,
        }
    }

    /// 3×3 depthwise convolution (one filter per input channel).
    pub fn depthwise(channels: usize, stride: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            kernel: 3,
            stride,
            padding: 1,
            groups: channels,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel > 0
            && self.stride > 0
            && self.groups > 0
            && self.in_channels % self.groups == 0
            && self.out_channels % self.groups == 0;
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!(
                "invalid convolution {self:?}"
            )))
        }
    }

    pub fn weight_shape(&self) -> Shape {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    /// floor((H + 2p − k) / s) + 1 for each spatial side.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let side = |d: usize| {
            (d + 2 * self.padding)
                .checked_sub(self.kernel)
                .map(|v| v / self.stride + 1)
                .ok_or_else(|| {
                    NnError::ShapeMismatch(format!(
                        "{d}px input is smaller than kernel {}",
                        self.kernel
                    ))
                })
        };
        Ok((side(h)?, side(w)?))
    }
}

/// Multiply-accumulate counts for one convolution over a D_F × D_F map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConvCost {
    /// D_K²·M·N·D_F²
    pub standard: u64,
    /// D_K²·M·D_F²
    pub depthwise: u64,
    /// Depthwise plus pointwise: D_K²·M·D_F² + M·N·D_F²
    pub separable_total: u64,
}

pub fn conv_cost(spec: &ConvSpec, d_f: usize) -> ConvCost {
    let (k, m, n, f) = (
        spec.kernel as u64,
        spec.in_channels as u64,
        spec.out_channels as u64,
        d_f as u64,
    );
    let depthwise = k * k * m * f * f;
    ConvCost {
        standard: k * k * m * n * f * f,
        depthwise,
        separable_total: depthwise + m * n * f * f,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax followed by mean squared error against one-hot targets.
    SoftmaxMse,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        conv: ConvSpec,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    Linear {
        inputs: usize,
        outputs: usize,
    },
    /// 3×3 conv, batch norm, ReLU.
    BasicConv {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    /// Two 3×3 conv+BN stages around a shortcut, ReLU after the sum.
    Residual {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    /// Depthwise 3×3 then pointwise 1×1, each followed by BN and ReLU.
    DepthwiseSeparable {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    DenseBlock {
        in_channels: usize,
        layers: usize,
        growth: usize,
        bottleneck: bool,
    },
    /// BN, ReLU, 1×1 conv, 2×2 average pool.
    Transition {
        in_channels: usize,
        out_channels: usize,
    },
}

fn conv_bn(conv: ConvSpec) -> [LayerSpec; 2] {
    [
        LayerSpec::Conv { conv, bias: false },
        LayerSpec::BatchNorm {
            channels: conv.out_channels,
        },
    ]
}

impl LayerSpec {
    pub fn conv(conv: ConvSpec) -> Self {
        LayerSpec::Conv { conv, bias: true }
    }

    /// Primitive layers this record stands for, as nested sequences.
    pub(crate) fn expand(&self) -> Expansion {
        use LayerSpec::*;
        match *self {
            BasicConv {
                in_channels,
                out_channels,
                stride,
            } => {
                let mut v =
                    conv_bn(ConvSpec::new(in_channels, out_channels, 3, stride, 1)).to_vec();
                v.push(Relu);
                Expansion::Sequence(v)
            }
            Residual {
                in_channels,
                out_channels,
                stride,
            } => {
                let mut main =
                    conv_bn(ConvSpec::new(in_channels, out_channels, 3, stride, 1)).to_vec();
                main.push(Relu);
                main.extend(conv_bn(ConvSpec::new(out_channels, out_channels, 3, 1, 1)));
                let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
                    conv_bn(ConvSpec::new(in_channels, out_channels, 1, stride, 0)).to_vec()
                });
                Expansion::Residual { main, shortcut }
            }
            DepthwiseSeparable {
                in_channels,
                out_channels,
                stride,
            } => {
                let mut v = conv_bn(ConvSpec::depthwise(in_channels, stride)).to_vec();
                v.push(Relu);
                v.extend(conv_bn(ConvSpec::new(in_channels, out_channels, 1, 1, 0)));
                v.push(Relu);
                Expansion::Sequence(v)
            }
            DenseBlock {
                in_channels,
                layers,
                growth,
                bottleneck,
            } => Expansion::Dense {
                growth,
                layers: (0..layers)
                    .map(|l| {
                        let c = in_channels + l * growth;
                        if bottleneck {
                            vec![
                                BatchNorm { channels: c },
                                Relu,
                                Conv {
                                    conv: ConvSpec::new(c, 4 * growth, 1, 1, 0),
                                    bias: false,
                                },
                                BatchNorm {
                                    channels: 4 * growth,
                                },
                                Relu,
                                Conv {
                                    conv: ConvSpec::new(4 * growth, growth, 3, 1, 1),
                                    bias: false,
                                },
                            ]
                        } else {
                            vec![
                                BatchNorm { channels: c },
                                Relu,
                                Conv {
                                    conv: ConvSpec::new(c, growth, 3, 1, 1),
                                    bias: false,
                                },
                            ]
                        }
                    })
                    .collect(),
            },
            Transition {
                in_channels,
                out_channels,
            } => Expansion::Sequence(vec![
                BatchNorm {
                    channels: in_channels,
                },
                Relu,
                Conv {
                    conv: ConvSpec::new(in_channels, out_channels, 1, 1, 0),
                    bias: false,
                },
                AvgPool {
                    kernel: 2,
                    stride: 2,
                },
            ]),
            _ => Expansion::Primitive,
        }
    }

    /// Every convolution inside this record, in forward order.
    pub fn convs(&self) -> Vec<ConvSpec> {
        match (self, self.expand()) {
            (LayerSpec::Conv { conv, .. }, _) => vec![*conv],
            (_, Expansion::Primitive) => vec![],
            (_, Expansion::Sequence(v)) => v.iter().flat_map(LayerSpec::convs).collect(),
            (_, Expansion::Residual { main, shortcut }) => main
                .iter()
                .chain(shortcut.iter().flatten())
                .flat_map(LayerSpec::convs)
                .collect(),
            (_, Expansion::Dense { layers, .. }) => {
                layers.iter().flatten().flat_map(LayerSpec::convs).collect()
            }
        }
    }

    /// Convolution and linear layers, the units a "121-layer" count refers to.
    pub fn weight_layers(&self) -> usize {
        match self {
            LayerSpec::Linear { .. } => 1,
            _ => self.convs().len(),
        }
    }

    pub fn output_shape(&self, s: Shape) -> Result<Shape, NnError> {
        use LayerSpec::*;
        let [n, c, h, w] = s;
        let need = |want: usize| {
            if c == want {
                Ok(())
            } else {
                Err(NnError::ShapeMismatch(format!(
                    "{self:?} expects {want} channels, got {c}"
                )))
            }
        };
        match self {
            Conv { conv, .. } => {
                conv.validate()?;
                need(conv.in_channels)?;
                let (ho, wo) = conv.output_hw(h, w)?;
                Ok([n, conv.out_channels, ho, wo])
            }
            BatchNorm { channels } => need(*channels).map(|_| s),
            Relu => Ok(s),
            MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (ho, wo) = ConvSpec {
                    in_channels: c,
                    out_channels: c,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    groups: 1,
                }
                .output_hw(h, w)?;
                Ok([n, c, ho, wo])
            }
            AvgPool { kernel, stride } => {
                let (ho, wo) = ConvSpec::new(c, c, *kernel, *stride, 0).output_hw(h, w)?;
                Ok([n, c, ho, wo])
            }
            GlobalAvgPool => Ok([n, c, 1, 1]),
            Flatten => Ok([n, c * h * w, 1, 1]),
            Linear { inputs, outputs } => {
                if (h, w) != (1, 1) {
                    return Err(NnError::ShapeMismatch(format!(
                        "linear layer needs a flattened input, got {s:?}"
                    )));
                }
                need(*inputs)?;
                Ok([n, *outputs, 1, 1])
            }
            _ => match self.expand() {
                Expansion::Primitive => unreachable!("composite records expand"),
                Expansion::Sequence(v) => chain(&v, s),
                Expansion::Residual { main, shortcut } => {
                    let a = chain(&main, s)?;
                    let b = match shortcut {
                        Some(sc) => chain(&sc, s)?,
                        None => s,
                    };
                    if a != b {
                        return Err(NnError::ShapeMismatch(format!(
                            "residual branches disagree: {a:?} vs {b:?}"
                        )));
                    }
                    Ok(a)
                }
                Expansion::Dense { layers, growth } => {
                    let mut cur = s;
                    for layer in &layers {
                        let out = chain(layer, cur)?;
                        if out[1] != growth || out[2..] != cur[2..] {
                            return Err(NnError::ShapeMismatch(format!(
                                "dense layer produced {out:?}"
                            )));
                        }
                        cur[1] += growth;
                    }
                    Ok(cur)
                }
            },
        }
    }
}

pub(crate) enum Expansion {
    Primitive,
    Sequence(Vec<LayerSpec>),
    Residual {
        main: Vec<LayerSpec>,
        shortcut: Option<Vec<LayerSpec>>,
    },
    Dense {
        layers: Vec<Vec<LayerSpec>>,
        growth: usize,
    },
}

fn chain(layers: &[LayerSpec], mut s: Shape) -> Result<Shape, NnError> {
    for l in layers {
        s = l.output_shape(s)?;
    }
    Ok(s)
}

/// A network as data: input geometry, layer records, loss and head size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// (channels, height, width)
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    pub classes: usize,
}

impl NetworkSpec {
    /// Output shape after each layer for a batch of `batch` inputs.
    pub fn trace(&self, batch: usize) -> Result<Vec<Shape>, NnError> {
        let mut s = [batch, self.input[0], self.input[1], self.input[2]];
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            s = l.output_shape(s)?;
            out.push(s);
        }
        if s != [batch, self.classes, 1, 1] {
            return Err(NnError::ShapeMismatch(format!(
                "network ends in {s:?}, expected {} logits",
                self.classes
            )));
        }
        Ok(out)
    }

    pub fn weight_layers(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_layers).sum()
    }

    pub fn convs(&self) -> Vec<ConvSpec> {
        self.layers.iter().flat_map(LayerSpec::convs).collect()
    }

    /// Learning rate the architecture trains with by default.
    pub fn default_lr(&self) -> f64 {
        if self.name == "small_cnn" {
            1e-4
        } else {
            1e-5
        }
    }
}

/// Input geometry shared by the builders. Defaults to 1×100×100 grayscale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputGeometry {
    pub channels: usize,
    pub side: usize,
}

impl Default for InputGeometry {
    fn default() -> Self {
        Self {
            channels: 1,
            side: crate::dataset::MODEL_SIDE,
        }
    }
}

pub const CLASSES: usize = crate::metrics::NUM_CLASSES;

/// Three conv(3×3, pad 1) + ReLU + 2×2 max-pool stages with 3, 6 and 9
/// kernels, a flatten and a linear head trained with softmax + MSE.
pub fn build_small_cnn() -> NetworkSpec {
    small_cnn(InputGeometry::default())
}

pub fn small_cnn(g: InputGeometry) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut c = g.channels;
    let mut side = g.side;
    for out in [3, 6, 9] {
        layers.push(LayerSpec::conv(ConvSpec::new(c, out, 3, 1, 1)));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool {
            kernel: 2,
            stride: 2,
            padding: 0,
        });
        c = out;
        side /= 2;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Linear {
        inputs: c * side * side,
        outputs: CLASSES,
    });
    NetworkSpec {
        name: "small_cnn".into(),
        input: [g.channels, g.side, g.side],
        layers,
        loss: LossKind::SoftmaxMse,
        classes: CLASSES,
    }
}

/// Index of the flatten layer in a small CNN; its output is the last
/// pooling map as a vector.
pub fn small_cnn_flatten_index(spec: &NetworkSpec) -> Option<usize> {
    spec.layers.iter().position(|l| *l == LayerSpec::Flatten)
}

pub fn build_resnet18() -> NetworkSpec {
    resnet18(InputGeometry::default())
}

pub fn resnet18(g: InputGeometry) -> NetworkSpec {
    let mut layers = vec![LayerSpec::BasicConv {
        in_channels: g.channels,
        out_channels: 64,
        stride: 1,
    }];
    for (i, o, s) in [
        (64, 64, 1),
        (64, 64, 1),
        (64, 128, 2),
        (128, 128, 1),
        (128, 256, 2),
        (256, 256, 1),
        (256, 512, 2),
        (512, 512, 1),
    ] {
        layers.push(LayerSpec::Residual {
            in_channels: i,
            out_channels: o,
            stride: s,
        });
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Linear {
        inputs: 512,
        outputs: CLASSES,
    });
    NetworkSpec {
        name: "resnet18".into(),
        input: [g.channels, g.side, g.side],
        layers,
        loss: LossKind::SoftmaxCrossEntropy,
        classes: CLASSES,
    }
}

pub fn build_mobilenetv1() -> NetworkSpec {
    mobilenetv1(InputGeometry::default())
}

pub fn mobilenetv1(g: InputGeometry) -> NetworkSpec {
    let mut layers = vec![LayerSpec::BasicConv {
        in_channels: g.channels,
        out_channels: 32,
        stride: 1,
    }];
    let mut rows = vec![
        (32, 64, 1),
        (64, 128, 2),
        (128, 128, 1),
        (128, 256, 1),
        (256, 256, 1),
        (256, 512, 2),
    ];
    rows.extend([(512, 512, 1); 5]);
    rows.extend([(512, 1024, 2), (1024, 1024, 1)]);
    for (i, o, s) in rows {
        layers.push(LayerSpec::DepthwiseSeparable {
            in_channels: i,
            out_channels: o,
            stride: s,
        });
    }
    layers.push(LayerSpec::AvgPool {
        kernel: 4,
        stride: 4,
    });
    layers.push(LayerSpec::Flatten);
    let side = mobilenet_tail_side(g.side);
    layers.push(LayerSpec::Linear {
        inputs: 1024 * side * side,
        outputs: CLASSES,
    });
    NetworkSpec {
        name: "mobilenetv1".into(),
        input: [g.channels, g.side, g.side],
        layers,
        loss: LossKind::SoftmaxCrossEntropy,
        classes: CLASSES,
    }
}

fn mobilenet_tail_side(side: usize) -> usize {
    let mut s = side;
    for _ in 0..3 {
        s = (s - 1) / 2 + 1;
    }
    (s.saturating_sub(4)) / 4 + 1
}

pub const DENSENET121_BLOCKS: [usize; 4] = [6, 12, 24, 16];
pub const DENSENET_GROWTH: usize = 32;

pub fn build_densenet121() -> NetworkSpec {
    densenet121(InputGeometry::default())
}

pub fn densenet121(g: InputGeometry) -> NetworkSpec {
    let mut layers = vec![
        LayerSpec::Conv {
            conv: ConvSpec::new(g.channels, 64, 7, 2, 3),
            bias: false,
        },
        LayerSpec::BatchNorm { channels: 64 },
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        },
    ];
    let mut c = 64;
    for (i, &n) in DENSENET121_BLOCKS.iter().enumerate() {
        layers.push(LayerSpec::DenseBlock {
            in_channels: c,
            layers: n,
            growth: DENSENET_GROWTH,
            bottleneck: true,
        });
        c += n * DENSENET_GROWTH;
        if i + 1 < DENSENET121_BLOCKS.len() {
            layers.push(LayerSpec::Transition {
                in_channels: c,
                out_channels: c / 2,
            });
            c /= 2;
        }
    }
    layers.extend([
        LayerSpec::BatchNorm { channels: c },
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
    ]);
    layers.push(LayerSpec::Linear {
        inputs: c,
        outputs: CLASSES,
    });
    NetworkSpec {
        name: "densenet121".into(),
        input: [g.channels, g.side, g.side],
        layers,
        loss: LossKind::SoftmaxCrossEntropy,
        classes: CLASSES,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cost_hand_values() {
        let c = conv_cost(&ConvSpec::new(16, 32, 3, 1, 1), 10);
        assert_eq!(c.standard, 460_800);
        assert_eq!(c.depthwise, 14_400);
        let one = conv_cost(&ConvSpec::new(16, 32, 1, 1, 0), 10);
        assert_eq!(one.standard, one.depthwise * 32);
    }

    proptest! {
        #[test]
        fn separable_ratio_identity(k in 1usize..8, m in 1usize..64, n in 1usize..64, f in 1usize..50) {
            let c = conv_cost(&ConvSpec::new(m, n, k, 1, 0), f);
            let lhs = c.separable_total as f64 / c.standard as f64;
            let rhs = 1.0 / n as f64 + 1.0 / (k * k) as f64;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_output_size() {
        let s = LayerSpec::conv(ConvSpec::new(1, 64, 3, 1, 1))
            .output_shape([16, 1, 100, 100])
            .unwrap();
        assert_eq!(s, [16, 64, 100, 100]);
        assert!(LayerSpec::conv(ConvSpec::new(2, 64, 3, 1, 1))
            .output_shape([16, 1, 100, 100])
            .is_err());
        assert!(LayerSpec::conv(ConvSpec {
            groups: 3,
            ..ConvSpec::new(4, 6, 3, 1, 1)
        })
        .output_shape([1, 4, 8, 8])
        .is_err());
    }

    #[test]
    fn small_cnn_chain() {
        let t = build_small_cnn().trace(2).unwrap();
        let pools: Vec<usize> = t.iter().skip(2).step_by(3).take(3).map(|s| s[2]).collect();
        assert_eq!(pools, vec![50, 25, 12]);
        assert_eq!(t[t.len() - 2], [2, 1296, 1, 1]);
        assert_eq!(*t.last().unwrap(), [2, 3, 1, 1]);
    }

    #[test]
    fn resnet_trace() {
        let spec = build_resnet18();
        assert_eq!(spec.layers.len(), 11);
        let t = spec.trace(16).unwrap();
        let sides: Vec<usize> = t.iter().take(9).map(|s| s[2]).collect();
        assert_eq!(sides, vec![100, 100, 100, 50, 50, 25, 25, 13, 13]);
        assert_eq!(*t.last().unwrap(), [16, 3, 1, 1]);
        let r = LayerSpec::Residual {
            in_channels: 64,
            out_channels: 128,
            stride: 2,
        };
        assert_eq!(r.output_shape([1, 64, 100, 100]).unwrap(), [1, 128, 50, 50]);
    }

    #[test]
    fn mobilenet_rows_and_groups() {
        let spec = build_mobilenetv1();
        let chans: Vec<usize> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::BasicConv { out_channels, .. }
                | LayerSpec::DepthwiseSeparable { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect();
        assert_eq!(
            chans,
            vec![32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024]
        );
        let dw: Vec<ConvSpec> = spec.convs().into_iter().filter(|c| c.groups > 1).collect();
        assert_eq!(dw.len(), 13);
        assert!(dw
            .iter()
            .all(|c| c.groups == c.in_channels && c.kernel == 3));
        let t = spec.trace(16).unwrap();
        assert_eq!(t[t.len() - 3], [16, 1024, 3, 3]);
        assert_eq!(*t.last().unwrap(), [16, 3, 1, 1]);
        let ds = LayerSpec::DepthwiseSeparable {
            in_channels: 32,
            out_channels: 64,
            stride: 1,
        };
        assert_eq!(
            ds.output_shape([1, 32, 100, 100]).unwrap(),
            [1, 64, 100, 100]
        );
    }

    #[test]
    fn densenet_counts() {
        let spec = build_densenet121();
        assert_eq!(spec.weight_layers(), 121);
        assert_eq!(*spec.trace(4).unwrap().last().unwrap(), [4, 3, 1, 1]);
        assert_eq!(
            spec.trace(1).unwrap().iter().map(|s| s[1]).max(),
            Some(1024)
        );
        let block = LayerSpec::DenseBlock {
            in_channels: 16,
            layers: 5,
            growth: 12,
            bottleneck: false,
        };
        assert_eq!(block.output_shape([1, 16, 8, 8]).unwrap(), [1, 76, 8, 8]);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = build_densenet121();
        let back: NetworkSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
