//! Symbolic network descriptors with analytic shape propagation and parameter
//! counting.
//!
//! Conventions: convolutions are bias-free, batch norm holds a scale and a
//! shift per channel (running statistics are buffers, not parameters), and a
//! fully connected layer has `(in + 1) * out` parameters. Dense-block layers
//! are the reference bottleneck pair BN-ReLU-Conv1x1(4k) then BN-ReLU-Conv3x3(k);
//! a transition layer is BN-ReLU-Conv1x1(floor(theta * C)) followed by 2x2
//! average pooling.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense-block growth rate used by every built-in descriptor.
pub const GROWTH_RATE: usize = 32;
/// Bottleneck width multiplier inside a dense layer (1x1 conv emits 4k maps).
pub const BOTTLENECK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

impl Serialize for Shape {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.c, self.h, self.w].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [c, h, w] = <[usize; 3]>::deserialize(d)?;
        Ok(Shape { c, h, w })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
        out_channels: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    FullyConnected {
        out_features: usize,
    },
    DenseBlock {
        layers: usize,
        growth_rate: usize,
    },
    TransitionLayer {
        compression: f64,
    },
    Concat,
    SoftmaxHead,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::FullyConnected { .. } => "fc",
            LayerKind::DenseBlock { .. } => "denseblock",
            LayerKind::TransitionLayer { .. } => "transition",
            LayerKind::Concat => "concat",
            LayerKind::SoftmaxHead => "softmax",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Names of graph inputs or earlier layers feeding this one. Empty means
    /// the previous layer (or the first graph input for the first layer).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    pub name: String,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    pub inputs: Vec<GraphInput>,
    pub layers: Vec<LayerSpec>,
    /// Named result nodes (heads, branch outputs).
    #[serde(default)]
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub kind: String,
    #[serde(rename = "outShape")]
    pub out_shape: Shape,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchReport {
    pub name: String,
    pub layers: Vec<LayerReport>,
    #[serde(rename = "totalParams")]
    pub total_params: u64,
    #[serde(default)]
    pub outputs: Vec<(String, Shape)>,
}

impl ArchReport {
    pub fn shape_of(&self, layer: &str) -> Option<Shape> {
        self.layers
            .iter()
            .find(|l| l.name == layer)
            .map(|l| l.out_shape)
    }

    pub fn output(&self, name: &str) -> Option<Shape> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
    }
}

impl fmt::Display for ArchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .layers
            .iter()
            .map(|l| l.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(f, "{}", self.name)?;
        writeln!(
            f,
            "{:<width$}  {:<10}  {:>14}  {:>10}",
            "layer", "kind", "output", "params"
        )?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<width$}  {:<10}  {:>14}  {:>10}",
                l.name,
                l.kind,
                l.out_shape.to_string(),
                l.params
            )?;
        }
        for (name, shape) in &self.outputs {
            writeln!(f, "output {name}: {shape}")?;
        }
        write!(f, "total params: {}", self.total_params)
    }
}

fn spatial(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

fn dense_layer_params(c_in: usize, growth: usize) -> u64 {
    let mid = BOTTLENECK * growth;
    (2 * c_in + c_in * mid + 2 * mid + 9 * mid * growth) as u64
}

fn transition_out(c_in: usize, compression: f64) -> usize {
    (compression * c_in as f64).floor() as usize
}

fn shape_err(layer: &str, detail: impl Into<String>) -> Error {
    Error::Shape {
        layer: layer.to_owned(),
        detail: detail.into(),
    }
}

/// Output shape and parameter count of a single layer.
fn eval_layer(spec: &LayerSpec, inputs: &[Shape]) -> Result<(Shape, u64)> {
    let name = spec.name.as_str();
    if !matches!(spec.kind, LayerKind::Concat) && inputs.len() != 1 {
        return Err(shape_err(
            name,
            format!("expects one input, got {}", inputs.len()),
        ));
    }
    let x = inputs[0];
    match spec.kind {
        LayerKind::Conv {
            kernel,
            stride,
            padding,
            out_channels,
        } => {
            if kernel == 0 || stride == 0 || out_channels == 0 {
                return Err(shape_err(name, "zero kernel, stride or channel count"));
            }
            let h = spatial(x.h, kernel, stride, padding)
                .ok_or_else(|| shape_err(name, format!("kernel {kernel} larger than input {x}")))?;
            let w = spatial(x.w, kernel, stride, padding)
                .ok_or_else(|| shape_err(name, format!("kernel {kernel} larger than input {x}")))?;
            let params = (kernel * kernel * x.c * out_channels) as u64;
            Ok((Shape::new(out_channels, h, w), params))
        }
        LayerKind::BatchNorm => Ok((x, 2 * x.c as u64)),
        LayerKind::Relu | LayerKind::SoftmaxHead => Ok((x, 0)),
        LayerKind::MaxPool {
            kernel,
            stride,
            padding,
        }
        | LayerKind::AvgPool {
            kernel,
            stride,
            padding,
        } => {
            if kernel == 0 || stride == 0 {
                return Err(shape_err(name, "zero kernel or stride"));
            }
            let h = spatial(x.h, kernel, stride, padding)
                .ok_or_else(|| shape_err(name, format!("window {kernel} larger than input {x}")))?;
            let w = spatial(x.w, kernel, stride, padding)
                .ok_or_else(|| shape_err(name, format!("window {kernel} larger than input {x}")))?;
            Ok((Shape::new(x.c, h, w), 0))
        }
        LayerKind::GlobalAvgPool => Ok((Shape::new(x.c, 1, 1), 0)),
        LayerKind::FullyConnected { out_features } => {
            if out_features == 0 {
                return Err(shape_err(name, "zero output features"));
            }
            Ok((
                Shape::new(out_features, 1, 1),
                ((x.numel() + 1) * out_features) as u64,
            ))
        }
        LayerKind::DenseBlock {
            layers,
            growth_rate,
        } => {
            if layers == 0 || growth_rate == 0 {
                return Err(shape_err(name, "empty dense block"));
            }
            if x.h < 1 || x.w < 1 {
                return Err(shape_err(name, format!("degenerate input {x}")));
            }
            let params = (0..layers)
                .map(|i| dense_layer_params(x.c + i * growth_rate, growth_rate))
                .sum();
            Ok((Shape::new(x.c + layers * growth_rate, x.h, x.w), params))
        }
        LayerKind::TransitionLayer { compression } => {
            if !(compression > 0.0 && compression <= 1.0) {
                return Err(shape_err(
                    name,
                    format!("compression {compression} outside (0, 1]"),
                ));
            }
            let out = transition_out(x.c, compression);
            if out == 0 {
                return Err(shape_err(name, "compression leaves no channels"));
            }
            if x.h < 2 || x.w < 2 {
                return Err(shape_err(name, format!("cannot halve spatial size of {x}")));
            }
            Ok((
                Shape::new(out, x.h / 2, x.w / 2),
                (2 * x.c + x.c * out) as u64,
            ))
        }
        LayerKind::Concat => {
            if inputs.len() < 2 {
                return Err(shape_err(name, "concat needs at least two inputs"));
            }
            let first = inputs[0];
            if let Some(bad) = inputs.iter().find(|s| s.h != first.h || s.w != first.w) {
                return Err(shape_err(
                    name,
                    format!("spatial mismatch: {first} vs {bad}"),
                ));
            }
            let c = inputs.iter().map(|s| s.c).sum();
            Ok((Shape::new(c, first.h, first.w), 0))
        }
    }
}

/// Propagates shapes through the descriptor and counts parameters per layer.
pub fn propagate(d: &ArchDescriptor) -> Result<ArchReport> {
    if d.inputs.is_empty() {
        return Err(shape_err(&d.name, "descriptor has no inputs"));
    }
    let mut known: HashMap<&str, Shape> = HashMap::new();
    for input in &d.inputs {
        if known.insert(&input.name, input.shape).is_some() {
            return Err(shape_err(&input.name, "duplicate node name"));
        }
    }
    let mut prev = d.inputs[0].name.as_str();
    let mut layers = Vec::with_capacity(d.layers.len());
    for spec in &d.layers {
        let srcs: Vec<Shape> = if spec.inputs.is_empty() {
            vec![known[prev]]
        } else {
            spec.inputs
                .iter()
                .map(|n| {
                    known
                        .get(n.as_str())
                        .copied()
                        .ok_or_else(|| shape_err(&spec.name, format!("unknown input `{n}`")))
                })
                .collect::<Result<_>>()?
        };
        let (out, params) = eval_layer(spec, &srcs)?;
        if known.insert(&spec.name, out).is_some() {
            return Err(shape_err(&spec.name, "duplicate node name"));
        }
        layers.push(LayerReport {
            name: spec.name.clone(),
            kind: spec.kind.label().to_owned(),
            out_shape: out,
            params,
        });
        prev = &spec.name;
    }
    let outputs = d
        .outputs
        .iter()
        .map(|n| {
            known
                .get(n.as_str())
                .map(|s| (n.clone(), *s))
                .ok_or_else(|| shape_err(n, "unknown output node"))
        })
        .collect::<Result<_>>()?;
    Ok(ArchReport {
        name: d.name.clone(),
        total_params: layers.iter().map(|l| l.params).sum(),
        layers,
        outputs,
    })
}

pub fn param_count(d: &ArchDescriptor) -> Result<u64> {
    propagate(d).map(|r| r.total_params)
}

impl ArchDescriptor {
    /// Rewrites dense blocks and transition layers into primitive BN, ReLU,
    /// Conv, Concat and AvgPool layers. Shapes at block boundaries and the
    /// total parameter count are unchanged.
    pub fn expanded(&self) -> Result<ArchDescriptor> {
        let report = propagate(self)?;
        let mut shapes: HashMap<String, Shape> = self
            .inputs
            .iter()
            .map(|i| (i.name.clone(), i.shape))
            .collect();
        for l in &report.layers {
            shapes.insert(l.name.clone(), l.out_shape);
        }
        let mut out = Vec::new();
        let mut prev = self.inputs[0].name.clone();
        for spec in &self.layers {
            let inputs = if spec.inputs.is_empty() {
                vec![prev.clone()]
            } else {
                spec.inputs.clone()
            };
            match spec.kind {
                LayerKind::DenseBlock {
                    layers,
                    growth_rate,
                } => {
                    let mut feed = inputs[0].clone();
                    for i in 0..layers {
                        let p = format!("{}.l{}", spec.name, i + 1);
                        let seq = [
                            (format!("{p}.bn1"), LayerKind::BatchNorm),
                            (format!("{p}.relu1"), LayerKind::Relu),
                            (
                                format!("{p}.conv1"),
                                LayerKind::Conv {
                                    kernel: 1,
                                    stride: 1,
                                    padding: 0,
                                    out_channels: BOTTLENECK * growth_rate,
                                },
                            ),
                            (format!("{p}.bn2"), LayerKind::BatchNorm),
                            (format!("{p}.relu2"), LayerKind::Relu),
                            (
                                format!("{p}.conv2"),
                                LayerKind::Conv {
                                    kernel: 3,
                                    stride: 1,
                                    padding: 1,
                                    out_channels: growth_rate,
                                },
                            ),
                        ];
                        let mut first = true;
                        for (name, kind) in seq {
                            out.push(LayerSpec {
                                name,
                                kind,
                                inputs: if first { vec![feed.clone()] } else { vec![] },
                            });
                            first = false;
                        }
                        let cat = if i + 1 == layers {
                            spec.name.clone()
                        } else {
                            format!("{p}.cat")
                        };
                        out.push(LayerSpec {
                            name: cat.clone(),
                            kind: LayerKind::Concat,
                            inputs: vec![feed.clone(), format!("{p}.conv2")],
                        });
                        feed = cat;
                    }
                }
                LayerKind::TransitionLayer { .. } => {
                    let c_out = shapes[&spec.name].c;
                    let p = &spec.name;
                    out.push(LayerSpec {
                        name: format!("{p}.bn"),
                        kind: LayerKind::BatchNorm,
                        inputs: inputs.clone(),
                    });
                    out.push(LayerSpec {
                        name: format!("{p}.relu"),
                        kind: LayerKind::Relu,
                        inputs: vec![],
                    });
                    out.push(LayerSpec {
                        name: format!("{p}.conv"),
                        kind: LayerKind::Conv {
                            kernel: 1,
                            stride: 1,
                            padding: 0,
                            out_channels: c_out,
                        },
                        inputs: vec![],
                    });
                    out.push(LayerSpec {
                        name: p.clone(),
                        kind: LayerKind::AvgPool {
                            kernel: 2,
                            stride: 2,
                            padding: 0,
                        },
                        inputs: vec![],
                    });
                }
                _ => out.push(LayerSpec {
                    name: spec.name.clone(),
                    kind: spec.kind.clone(),
                    inputs,
                }),
            }
            prev = spec.name.clone();
        }
        Ok(ArchDescriptor {
            name: format!("{} (expanded)", self.name),
            inputs: self.inputs.clone(),
            layers: out,
            outputs: self.outputs.clone(),
        })
    }
}

/// Incremental descriptor construction. Each method appends a layer fed by
/// the current cursor (or by `from` when set).
pub struct ArchBuilder {
    name: String,
    inputs: Vec<GraphInput>,
    layers: Vec<LayerSpec>,
    outputs: Vec<String>,
    pending: Vec<String>,
}

impl ArchBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            inputs: Vec::new(),
            layers: Vec::new(),
            outputs: Vec::new(),
            pending: Vec::new(),
        }
    }

    pub fn input(mut self, name: &str, shape: Shape) -> Self {
        self.inputs.push(GraphInput {
            name: name.to_owned(),
            shape,
        });
        self
    }

    /// Feeds the next layer from the named node(s).
    pub fn from(mut self, nodes: &[&str]) -> Self {
        self.pending = nodes.iter().map(|s| (*s).to_owned()).collect();
        self
    }

    pub fn layer(mut self, name: &str, kind: LayerKind) -> Self {
        let inputs = std::mem::take(&mut self.pending);
        self.layers.push(LayerSpec {
            name: name.to_owned(),
            kind,
            inputs,
        });
        self
    }

    pub fn conv(
        self,
        name: &str,
        kernel: usize,
        stride: usize,
        padding: usize,
        out: usize,
    ) -> Self {
        self.layer(
            name,
            LayerKind::Conv {
                kernel,
                stride,
                padding,
                out_channels: out,
            },
        )
    }

    /// Pre-activation convolution: `{name}.bn`, `{name}.relu`, then `{name}`.
    pub fn bn_relu_conv(
        self,
        name: &str,
        kernel: usize,
        stride: usize,
        padding: usize,
        out: usize,
    ) -> Self {
        self.layer(&format!("{name}.bn"), LayerKind::BatchNorm)
            .layer(&format!("{name}.relu"), LayerKind::Relu)
            .conv(name, kernel, stride, padding, out)
    }

    pub fn avg_pool(self, name: &str, kernel: usize, stride: usize) -> Self {
        self.layer(
            name,
            LayerKind::AvgPool {
                kernel,
                stride,
                padding: 0,
            },
        )
    }

    pub fn dense_block(self, name: &str, layers: usize) -> Self {
        self.layer(
            name,
            LayerKind::DenseBlock {
                layers,
                growth_rate: GROWTH_RATE,
            },
        )
    }

    pub fn transition(self, name: &str, compression: f64) -> Self {
        self.layer(name, LayerKind::TransitionLayer { compression })
    }

    pub fn fc(self, name: &str, out: usize) -> Self {
        self.layer(name, LayerKind::FullyConnected { out_features: out })
    }

    pub fn output(mut self, name: &str) -> Self {
        self.outputs.push(name.to_owned());
        self
    }

    pub fn build(self) -> ArchDescriptor {
        ArchDescriptor {
            name: self.name,
            inputs: self.inputs,
            layers: self.layers,
            outputs: self.outputs,
        }
    }
}

const RGB_PATCH: Shape = Shape::new(3, 224, 224);

/// DenseNet-121 stem: 7x7/2 conv to 64 maps, BN, ReLU, 3x3/2 max pool.
fn densenet_stem(b: ArchBuilder, prefix: &str) -> ArchBuilder {
    b.conv(&format!("{prefix}conv0"), 7, 2, 3, 64)
        .layer(&format!("{prefix}norm0"), LayerKind::BatchNorm)
        .layer(&format!("{prefix}relu0"), LayerKind::Relu)
        .layer(
            &format!("{prefix}pool0"),
            LayerKind::MaxPool {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
        )
}

/// Dense blocks with standard (theta = 0.5) transitions between them, closed
/// by the final batch norm and ReLU.
fn densenet_body(mut b: ArchBuilder, prefix: &str, blocks: &[usize]) -> ArchBuilder {
    for (i, &n) in blocks.iter().enumerate() {
        b = b.dense_block(&format!("{prefix}db{}", i + 1), n);
        if i + 1 < blocks.len() {
            b = b.transition(&format!("{prefix}tl{}", i + 1), 0.5);
        }
    }
    b.layer(&format!("{prefix}norm5"), LayerKind::BatchNorm)
        .layer(&format!("{prefix}relu5"), LayerKind::Relu)
}

/// Reference DenseNet-121 feature extractor ({6,12,24,16}, k = 32).
pub fn densenet121_features() -> ArchDescriptor {
    let b = densenet_stem(
        ArchBuilder::new("densenet121").input("patch", RGB_PATCH),
        "",
    );
    densenet_body(b, "", &[6, 12, 24, 16])
        .layer("gap", LayerKind::GlobalAvgPool)
        .output("gap")
        .build()
}

fn classifier_layers(b: ArchBuilder, prefix: &str) -> ArchBuilder {
    // First three DenseNet-121 blocks; TL3 brings the maps to 7x7 for pooling.
    densenet_stem(b, prefix)
        .dense_block(&format!("{prefix}db1"), 6)
        .transition(&format!("{prefix}tl1"), 0.5)
        .dense_block(&format!("{prefix}db2"), 12)
        .transition(&format!("{prefix}tl2"), 0.5)
        .dense_block(&format!("{prefix}db3"), 24)
        .transition(&format!("{prefix}tl3"), 0.5)
        .layer(&format!("{prefix}norm5"), LayerKind::BatchNorm)
        .layer(&format!("{prefix}relu5"), LayerKind::Relu)
        .layer(&format!("{prefix}gap"), LayerKind::GlobalAvgPool)
        .fc(&format!("{prefix}class_fc"), 4)
        .layer(&format!("{prefix}softmax"), LayerKind::SoftmaxHead)
}

fn regressor_layers(b: ArchBuilder, prefix: &str) -> ArchBuilder {
    let b = densenet_stem(b, prefix);
    densenet_body(b, prefix, &[6, 12, 18, 12])
        .layer(&format!("{prefix}gap"), LayerKind::GlobalAvgPool)
        .fc(&format!("{prefix}count_fc"), 1)
}

/// Four-way density classifier of the modular scheme.
pub fn ccmod_classifier() -> ArchDescriptor {
    classifier_layers(
        ArchBuilder::new("ccmod-classifier").input("patch", RGB_PATCH),
        "",
    )
    .output("softmax")
    .build()
}

/// Count regressor: {6,12,18,12} dense blocks and a single output neuron.
pub fn ccmod_regressor() -> ArchDescriptor {
    regressor_layers(
        ArchBuilder::new("ccmod-regressor").input("patch", RGB_PATCH),
        "",
    )
    .output("count_fc")
    .build()
}

/// Classifier and regressor side by side, as deployed by the modular scheme.
pub fn ccmod() -> ArchDescriptor {
    let b = ArchBuilder::new("ccmod")
        .input("patch", RGB_PATCH)
        .input("routed", RGB_PATCH);
    let b = classifier_layers(b, "cls.");
    let b = regressor_layers(b.from(&["routed"]), "reg.");
    b.output("cls.softmax").output("reg.count_fc").build()
}

/// Two-pass base network: {6,12,18,12} trunk with a four-way softmax head and
/// a one-neuron count head on the pooled features.
pub fn cc2p_base() -> ArchDescriptor {
    let b = densenet_stem(ArchBuilder::new("cc2p").input("patch", RGB_PATCH), "");
    densenet_body(b, "", &[6, 12, 18, 12])
        .layer("gap", LayerKind::GlobalAvgPool)
        .fc("class_fc", 4)
        .layer("softmax", LayerKind::SoftmaxHead)
        .from(&["gap"])
        .fc("count_fc", 1)
        .output("softmax")
        .output("count_fc")
        .build()
}

/// Dense block after which the single-pass network branches its classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchPoint {
    Db1,
    Db2,
    Db3,
    Db4,
}

impl BranchPoint {
    pub const ALL: [BranchPoint; 4] = [
        BranchPoint::Db1,
        BranchPoint::Db2,
        BranchPoint::Db3,
        BranchPoint::Db4,
    ];

    fn node(self) -> &'static str {
        match self {
            BranchPoint::Db1 => "db1",
            BranchPoint::Db2 => "db2",
            BranchPoint::Db3 => "db3",
            BranchPoint::Db4 => "db4",
        }
    }
}

/// Single-pass network. The trunk sees the original patch; the classification
/// head branches off `branch`; PRM-routed patches (grayscale) enter the C-stem
/// whose 128 maps are concatenated with TL2's 128 (theta = 0.25) before DB3.
pub fn cc1p_with_branch(branch: BranchPoint) -> ArchDescriptor {
    let name = match branch {
        BranchPoint::Db2 => "cc1p".to_owned(),
        other => format!("cc1p-branch-{}", other.node()),
    };
    let b = ArchBuilder::new(name)
        .input("patch", RGB_PATCH)
        .input("routed", Shape::new(1, 224, 224));
    let b = densenet_stem(b, "")
        .dense_block("db1", 6)
        .transition("tl1", 0.5)
        .dense_block("db2", 12)
        .transition("tl2", 0.25);
    // C-stem on the routed patch.
    let b = b
        .from(&["routed"])
        .bn_relu_conv("cstem.conv1", 3, 2, 1, 64)
        .bn_relu_conv("cstem.conv2", 3, 2, 1, 32)
        .avg_pool("cstem.pool1", 2, 2)
        .dense_block("cstem.db", 3)
        .avg_pool("cstem.pool2", 2, 2)
        .from(&["tl2", "cstem.pool2"])
        .layer("concat", LayerKind::Concat)
        .dense_block("db3", 18)
        .transition("tl3", 0.5)
        .dense_block("db4", 12)
        .layer("norm5", LayerKind::BatchNorm)
        .layer("relu5", LayerKind::Relu)
        .layer("gap", LayerKind::GlobalAvgPool)
        .fc("count_fc", 1);
    // Classification head.
    b.from(&[branch.node()])
        .bn_relu_conv("head.conv1", 1, 1, 0, 64)
        .avg_pool("head.pool", 2, 2)
        .bn_relu_conv("head.conv2", 3, 2, 1, 32)
        .fc("head.fc", 4)
        .layer("head.softmax", LayerKind::SoftmaxHead)
        .output("head.softmax")
        .output("count_fc")
        .build()
}

pub fn cc1p() -> ArchDescriptor {
    cc1p_with_branch(BranchPoint::Db2)
}

/// Every built-in descriptor, keyed by name.
pub fn builtin_descriptors() -> Vec<ArchDescriptor> {
    let mut v = vec![
        ccmod_classifier(),
        ccmod_regressor(),
        ccmod(),
        cc2p_base(),
        cc1p(),
        densenet121_features(),
    ];
    v.extend(
        [BranchPoint::Db1, BranchPoint::Db3, BranchPoint::Db4]
            .into_iter()
            .map(cc1p_with_branch),
    );
    v
}

pub fn builtin(name: &str) -> Option<ArchDescriptor> {
    builtin_descriptors().into_iter().find(|d| d.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_block_adds_growth_times_layers() {
        let d = ArchBuilder::new("t")
            .input("x", Shape::new(32, 28, 28))
            .dense_block("db", 3)
            .build();
        let r = propagate(&d).unwrap();
        assert_eq!(r.shape_of("db"), Some(Shape::new(128, 28, 28)));
    }

    #[test]
    fn transition_floors_fractional_channels() {
        let d = ArchBuilder::new("t")
            .input("x", Shape::new(33, 8, 8))
            .transition("tl", 0.5)
            .build();
        let r = propagate(&d).unwrap();
        assert_eq!(r.shape_of("tl"), Some(Shape::new(16, 4, 4)));
        assert_eq!(r.total_params, (2 * 33 + 33 * 16) as u64);
    }

    #[test]
    fn concat_spatial_mismatch_names_layer() {
        let d = ArchBuilder::new("t")
            .input("a", Shape::new(8, 14, 14))
            .input("b", Shape::new(8, 28, 28))
            .from(&["a", "b"])
            .layer("join", LayerKind::Concat)
            .build();
        match propagate(&d) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "join"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_kernel_is_a_shape_error() {
        let d = ArchBuilder::new("t")
            .input("x", Shape::new(1, 2, 2))
            .conv("c", 5, 1, 0, 4)
            .build();
        assert!(matches!(propagate(&d), Err(Error::Shape { .. })));
    }

    #[test]
    fn bad_compression_rejected() {
        let d = ArchBuilder::new("t")
            .input("x", Shape::new(8, 8, 8))
            .transition("tl", 1.5)
            .build();
        assert!(matches!(propagate(&d), Err(Error::Shape { .. })));
    }

    #[test]
    fn unknown_input_rejected() {
        let d = ArchBuilder::new("t")
            .input("x", Shape::new(8, 8, 8))
            .from(&["nope"])
            .layer("r", LayerKind::Relu)
            .build();
        assert!(propagate(&d).is_err());
    }

    #[test]
    fn fc_counts_bias() {
        let d = ArchBuilder::new("t")
            .input("x", Shape::new(32, 7, 7))
            .fc("fc", 4)
            .build();
        assert_eq!(param_count(&d).unwrap(), (32 * 49 + 1) * 4);
    }

    #[test]
    fn builtin_names_unique() {
        let all = builtin_descriptors();
        assert!(all.len() >= 8);
        let mut names: Vec<_> = all.iter().map(|d| d.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), all.len());
        for d in &all {
            propagate(d).unwrap();
        }
    }

    #[test]
    fn cc2p_heads() {
        let r = propagate(&cc2p_base()).unwrap();
        assert_eq!(r.shape_of("gap"), Some(Shape::new(800, 1, 1)));
        assert_eq!(r.output("softmax"), Some(Shape::new(4, 1, 1)));
        assert_eq!(r.output("count_fc"), Some(Shape::new(1, 1, 1)));
    }

    #[test]
    fn branch_variants_feed_head_from_their_block() {
        let expect = [
            (BranchPoint::Db1, Shape::new(256, 56, 56)),
            (BranchPoint::Db2, Shape::new(512, 28, 28)),
            (BranchPoint::Db3, Shape::new(832, 14, 14)),
            (BranchPoint::Db4, Shape::new(800, 7, 7)),
        ];
        for (bp, shape) in expect {
            let r = propagate(&cc1p_with_branch(bp)).unwrap();
            assert_eq!(r.shape_of(bp.node()), Some(shape), "{bp:?}");
            assert_eq!(r.output("head.softmax"), Some(Shape::new(4, 1, 1)));
        }
    }

    #[test]
    fn report_json_fields() {
        let r = propagate(&cc2p_base()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["name"], "cc2p");
        assert!(v["totalParams"].as_u64().unwrap() > 0);
        assert_eq!(
            v["layers"][0]["outShape"],
            serde_json::json!([64, 112, 112])
        );
    }

    #[test]
    fn descriptor_json_roundtrip() {
        let d = cc1p();
        let s = serde_json::to_string(&d).unwrap();
        let back: ArchDescriptor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }
}
