//! Victim-model zoo: declarative layer stacks, parameter initialization,
//! forward execution on the autodiff graph, prediction and accuracy.
//!
//! Four architectures are registered: `wdcnn` (wide first kernel, then
//! small-kernel conv blocks), `lenet1d`, `cnn1d`, and `alexnet1d` — the
//! last deliberately carries no normalization layers.

mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BatchStats, Graph, GradientSet, NodeId, Tensor};
use crate::signal::{SignalWindow, NUM_CLASSES, WINDOW_LEN};

pub use train::{train, OptimizerKind, TrainConfig, TrainMetrics};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model {0:?}; known models: wdcnn, lenet1d, cnn1d, alexnet1d")]
    UnknownModel(String),
    #[error("invalid spec {name}: {details}")]
    InvalidSpec { name: String, details: String },
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        source: AutodiffError,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    State(String),
}

/// Stabilizer inside batch normalization denominators.
pub const BN_EPS: f64 = 1e-5;

/// Stabilizer inside the DN defensive layer denominator.
pub const DN_EPS: f64 = 1e-5;

/// Momentum for running mean/variance updates.
pub const RUNNING_MOMENTUM: f64 = 0.9;

/// One layer of a model, with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        features: usize,
    },
    Relu,
    MaxPool {
        width: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Defensive normalization: per-position batch standardization with a
    /// learned scalar affine.
    Dn,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dn => "dn",
        }
    }

    pub fn is_normalization(&self) -> bool {
        matches!(self, LayerSpec::BatchNorm { .. } | LayerSpec::Dn)
    }
}

/// Declarative model description. The layer chain must accept
/// `(batch, 1, 2048)` and emit 10 logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub uses_normalization: bool,
}

/// Shape of the activation between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainShape {
    Map { ch: usize, len: usize },
    Flat { features: usize },
}

impl ChainShape {
    pub fn feature_count(self) -> usize {
        match self {
            ChainShape::Map { ch, len } => ch * len,
            ChainShape::Flat { features } => features,
        }
    }
}

impl ModelSpec {
    /// Walk the layer chain from `(1, 2048)`, checking extent consistency.
    /// Returns the input shape of every layer plus the final output shape
    /// at the end.
    pub fn shape_chain(&self) -> Result<Vec<ChainShape>, ModelError> {
        let fail = |details: String| ModelError::InvalidSpec {
            name: self.name.clone(),
            details,
        };
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = ChainShape::Map {
            ch: 1,
            len: WINDOW_LEN,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            shapes.push(cur);
            cur = match (layer, cur) {
                (LayerSpec::Conv1d { in_ch, out_ch, kernel, stride, pad }, ChainShape::Map { ch, len }) => {
                    if *in_ch != ch {
                        return Err(fail(format!("layer {i} conv1d wants {in_ch} in channels, chain has {ch}")));
                    }
                    if *stride == 0 || *kernel == 0 {
                        return Err(fail(format!("layer {i} conv1d stride/kernel must be >= 1")));
                    }
                    if len + 2 * pad < *kernel {
                        return Err(fail(format!("layer {i} conv1d kernel {kernel} exceeds padded length {}", len + 2 * pad)));
                    }
                    ChainShape::Map {
                        ch: *out_ch,
                        len: (len + 2 * pad - kernel) / stride + 1,
                    }
                }
                (LayerSpec::BatchNorm { features }, ChainShape::Map { ch, len }) => {
                    if *features != ch {
                        return Err(fail(format!("layer {i} batchnorm wants {features} channels, chain has {ch}")));
                    }
                    ChainShape::Map { ch, len }
                }
                (LayerSpec::Relu, any) => any,
                (LayerSpec::Dn, any) => any,
                (LayerSpec::MaxPool { width, stride }, ChainShape::Map { ch, len }) => {
                    if *width == 0 || *stride == 0 || *width > len {
                        return Err(fail(format!("layer {i} maxpool window {width} invalid for length {len}")));
                    }
                    ChainShape::Map {
                        ch,
                        len: (len - width) / stride + 1,
                    }
                }
                (LayerSpec::Flatten, ChainShape::Map { ch, len }) => ChainShape::Flat { features: ch * len },
                (LayerSpec::Dense { inputs, outputs }, ChainShape::Flat { features }) => {
                    if *inputs != features {
                        return Err(fail(format!("layer {i} dense wants {inputs} inputs, chain has {features}")));
                    }
                    ChainShape::Flat { features: *outputs }
                }
                (other, shape) => {
                    return Err(fail(format!("layer {i} {} cannot consume shape {shape:?}", other.kind_name())));
                }
            };
        }
        if cur != (ChainShape::Flat { features: NUM_CLASSES }) {
            return Err(fail(format!("chain ends in {cur:?}, want 10 flat logits")));
        }
        shapes.push(cur);
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.shape_chain().map(|_| ())
    }
}

fn conv_block(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, norm: bool) -> Vec<LayerSpec> {
    let mut block = vec![LayerSpec::Conv1d { in_ch, out_ch, kernel, stride, pad }];
    if norm {
        block.push(LayerSpec::BatchNorm { features: out_ch });
    }
    block.push(LayerSpec::Relu);
    block
}

/// Build a registered victim architecture by name.
pub fn build(name: &str) -> Result<ModelSpec, ModelError> {
    let pool = LayerSpec::MaxPool { width: 2, stride: 2 };
    let layers: Vec<LayerSpec> = match name {
        // Wide first kernel to capture global structure, then four
        // small-kernel blocks; batchnorm after every conv.
        "wdcnn" => {
            let mut l = Vec::new();
            l.extend(conv_block(1, 16, 64, 16, 24, true)); // 2048 -> 128
            l.push(pool.clone()); // 64
            l.extend(conv_block(16, 32, 3, 1, 1, true)); // 64
            l.push(pool.clone()); // 32
            l.extend(conv_block(32, 64, 3, 1, 1, true)); // 32
            l.push(pool.clone()); // 16
            l.extend(conv_block(64, 64, 3, 1, 1, true)); // 16
            l.push(pool.clone()); // 8
            l.extend(conv_block(64, 64, 3, 1, 0, true)); // 6
            l.push(pool.clone()); // 3
            l.push(LayerSpec::Flatten); // 192
            l.push(LayerSpec::Dense { inputs: 192, outputs: 100 });
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::Dense { inputs: 100, outputs: 10 });
            l
        }
        "lenet1d" => {
            let pool4 = LayerSpec::MaxPool { width: 4, stride: 4 };
            let mut l = Vec::new();
            l.extend(conv_block(1, 6, 5, 1, 2, true)); // 2048
            l.push(pool4.clone()); // 512
            l.extend(conv_block(6, 16, 5, 1, 0, true)); // 508
            l.push(pool4); // 127
            l.push(LayerSpec::Flatten); // 2032
            l.push(LayerSpec::Dense { inputs: 2032, outputs: 120 });
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::Dense { inputs: 120, outputs: 84 });
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::Dense { inputs: 84, outputs: 10 });
            l
        }
        "cnn1d" => {
            let mut l = Vec::new();
            l.extend(conv_block(1, 8, 9, 4, 4, true)); // 512
            l.push(pool.clone()); // 256
            l.extend(conv_block(8, 16, 5, 2, 2, true)); // 128
            l.push(pool.clone()); // 64
            l.extend(conv_block(16, 32, 3, 1, 1, true)); // 64
            l.push(pool.clone()); // 32
            l.push(LayerSpec::Flatten); // 1024
            l.push(LayerSpec::Dense { inputs: 1024, outputs: 64 });
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::Dense { inputs: 64, outputs: 10 });
            l
        }
        // Five conv blocks and two dense layers, no normalization anywhere.
        "alexnet1d" => {
            let mut l = Vec::new();
            l.extend(conv_block(1, 16, 32, 8, 12, false)); // 256
            l.push(pool.clone()); // 128
            l.extend(conv_block(16, 32, 5, 1, 2, false)); // 128
            l.push(pool.clone()); // 64
            l.extend(conv_block(32, 32, 3, 1, 1, false)); // 64
            l.extend(conv_block(32, 32, 3, 1, 1, false)); // 64
            l.extend(conv_block(32, 32, 3, 1, 1, false)); // 64
            l.push(pool); // 32
            l.push(LayerSpec::Flatten); // 1024
            l.push(LayerSpec::Dense { inputs: 1024, outputs: 64 });
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::Dense { inputs: 64, outputs: 10 });
            l
        }
        other => return Err(ModelError::UnknownModel(other.to_string())),
    };
    let uses_normalization = layers.iter().any(LayerSpec::is_normalization);
    let spec = ModelSpec {
        name: name.to_string(),
        layers,
        uses_normalization,
    };
    spec.validate()?;
    Ok(spec)
}

/// A named parameter or state tensor of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
    /// Optimizers update trainable tensors; running statistics are state.
    pub trainable: bool,
}

/// Ordered parameter list. Order follows the layer chain and is the
/// checkpoint payload order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Parameters {
    pub tensors: Vec<NamedTensor>,
}

impl Parameters {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }
}

/// Number of tensors each layer kind contributes to [`Parameters`].
fn layer_param_count(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. } => 2,
        LayerSpec::BatchNorm { .. } | LayerSpec::Dn => 4,
        LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Flatten => 0,
    }
}

/// First parameter index of every layer.
pub fn param_layout(spec: &ModelSpec) -> Vec<usize> {
    let mut base = 0;
    spec.layers
        .iter()
        .map(|l| {
            let b = base;
            base += layer_param_count(l);
            b
        })
        .collect()
}

/// He-style fan-in initialization, deterministic for a fixed seed.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> Result<Parameters, ModelError> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    let shapes = spec.shape_chain()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    let sample = |shape: &[usize], std: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let dist = Normal::new(0.0, std).expect("valid normal");
        let len: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| dist.sample(rng)).collect()).expect("sized")
    };

    for (i, layer) in spec.layers.iter().enumerate() {
        let pfx = format!("l{i}");
        match layer {
            LayerSpec::Conv1d { in_ch, out_ch, kernel, .. } => {
                let std = (2.0 / (in_ch * kernel) as f64).sqrt();
                tensors.push(NamedTensor {
                    name: format!("{pfx}.weight"),
                    tensor: sample(&[*out_ch, *in_ch, *kernel], std, &mut rng),
                    trainable: true,
                });
                tensors.push(NamedTensor {
                    name: format!("{pfx}.bias"),
                    tensor: Tensor::zeros(&[*out_ch]),
                    trainable: true,
                });
            }
            LayerSpec::Dense { inputs, outputs } => {
                let std = (2.0 / *inputs as f64).sqrt();
                tensors.push(NamedTensor {
                    name: format!("{pfx}.weight"),
                    tensor: sample(&[*outputs, *inputs], std, &mut rng),
                    trainable: true,
                });
                tensors.push(NamedTensor {
                    name: format!("{pfx}.bias"),
                    tensor: Tensor::zeros(&[*outputs]),
                    trainable: true,
                });
            }
            LayerSpec::BatchNorm { features } => {
                let ones = Tensor::new(vec![*features], vec![1.0; *features]).expect("sized");
                tensors.push(NamedTensor { name: format!("{pfx}.gamma"), tensor: ones.clone(), trainable: true });
                tensors.push(NamedTensor { name: format!("{pfx}.beta"), tensor: Tensor::zeros(&[*features]), trainable: true });
                tensors.push(NamedTensor { name: format!("{pfx}.running_mean"), tensor: Tensor::zeros(&[*features]), trainable: false });
                tensors.push(NamedTensor { name: format!("{pfx}.running_var"), tensor: ones, trainable: false });
            }
            LayerSpec::Dn => {
                let features = shapes[i].feature_count();
                tensors.push(NamedTensor { name: format!("{pfx}.gamma"), tensor: Tensor::scalar(1.0), trainable: true });
                tensors.push(NamedTensor { name: format!("{pfx}.shift"), tensor: Tensor::scalar(0.0), trainable: true });
                tensors.push(NamedTensor { name: format!("{pfx}.running_mean"), tensor: Tensor::zeros(&[features]), trainable: false });
                tensors.push(NamedTensor {
                    name: format!("{pfx}.running_var"),
                    tensor: Tensor::new(vec![features], vec![1.0; features]).expect("sized"),
                    trainable: false,
                });
            }
            LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Flatten => {}
        }
    }
    Ok(Parameters { tensors })
}

/// Statistics policy for batch-stat layers when not training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    /// Use the statistics of the evaluated batch (the DN default; attacks
    /// then see cross-example coupling in their gradients).
    Batch,
    /// Use stored running averages (a plain affine map at evaluation).
    Running,
}

/// How a forward pass is wired into the graph.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Insert trainable parameters with gradients enabled.
    pub grad_params: bool,
    /// Insert the input window batch with gradients enabled.
    pub grad_input: bool,
    /// Training mode: batchnorm and DN use the current batch statistics.
    pub train_stats: bool,
    /// DN behavior when `train_stats` is false.
    pub dn_mode: StatsMode,
}

/// A forward pass materialized on a graph.
pub struct ForwardPass {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    /// Node per trainable parameter tensor, ordered like `Parameters`
    /// (state tensors get `None`).
    pub param_nodes: Vec<Option<NodeId>>,
    /// Batch statistics captured by batch-stat layers this pass, as
    /// `(parameter base index, stats)`.
    pub batch_stats: Vec<(usize, BatchStats)>,
}

/// Run `spec` with `params` on input batch `x` of shape (B, 1, 2048).
pub fn forward(
    spec: &ModelSpec,
    params: &Parameters,
    x: &Tensor,
    opts: ForwardOptions,
) -> Result<ForwardPass, ModelError> {
    if x.shape().len() != 3 || x.shape()[1] != 1 || x.shape()[2] != WINDOW_LEN {
        return Err(ModelError::Config(format!(
            "input batch must be (B, 1, {WINDOW_LEN}), got {:?}",
            x.shape()
        )));
    }
    let mut g = Graph::new();
    let input = if opts.grad_input {
        g.leaf(x.clone().with_grad())
    } else {
        g.constant(x.clone())
    };

    let mut param_nodes: Vec<Option<NodeId>> = vec![None; params.tensors.len()];
    let mut batch_stats = Vec::new();
    let mut cursor = 0usize;
    let next_param = |count: usize, cursor: &mut usize| {
        let base = *cursor;
        *cursor += count;
        base
    };

    let mut node = input;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv1d { stride, pad, .. } => {
                let base = next_param(2, &mut cursor);
                let w = insert_param(&mut g, params, base, opts.grad_params, &mut param_nodes);
                let b = insert_param(&mut g, params, base + 1, opts.grad_params, &mut param_nodes);
                node = g.conv1d(node, w, b, *stride, *pad)?;
            }
            LayerSpec::Dense { .. } => {
                let base = next_param(2, &mut cursor);
                let w = insert_param(&mut g, params, base, opts.grad_params, &mut param_nodes);
                let b = insert_param(&mut g, params, base + 1, opts.grad_params, &mut param_nodes);
                node = g.dense(node, w, b)?;
            }
            LayerSpec::Relu => {
                node = g.relu(node)?;
            }
            LayerSpec::MaxPool { width, stride } => {
                node = g.maxpool1d(node, *width, *stride)?;
            }
            LayerSpec::Flatten => {
                node = g.flatten(node)?;
            }
            LayerSpec::BatchNorm { .. } => {
                let base = next_param(4, &mut cursor);
                if opts.train_stats {
                    let gamma = insert_param(&mut g, params, base, opts.grad_params, &mut param_nodes);
                    let beta = insert_param(&mut g, params, base + 1, opts.grad_params, &mut param_nodes);
                    node = g.batchnorm(node, gamma, beta, BN_EPS)?;
                    let stats = g.batch_stats(node).expect("batchnorm saves stats").clone();
                    batch_stats.push((base, stats));
                } else {
                    let gamma = params.tensors[base].tensor.data();
                    let beta = params.tensors[base + 1].tensor.data();
                    let rm = params.tensors[base + 2].tensor.data();
                    let rv = params.tensors[base + 3].tensor.data();
                    let scale: Vec<f64> = gamma
                        .iter()
                        .zip(rv)
                        .map(|(g, v)| g / (v + BN_EPS).sqrt())
                        .collect();
                    let shift: Vec<f64> = beta
                        .iter()
                        .zip(rm.iter().zip(&scale))
                        .map(|(b, (m, s))| b - m * s)
                        .collect();
                    node = g.channel_affine(node, scale, shift)?;
                }
            }
            LayerSpec::Dn => {
                let base = next_param(4, &mut cursor);
                let use_batch = opts.train_stats || opts.dn_mode == StatsMode::Batch;
                if use_batch {
                    let gamma = insert_param(&mut g, params, base, opts.grad_params, &mut param_nodes);
                    let shift = insert_param(&mut g, params, base + 1, opts.grad_params, &mut param_nodes);
                    node = g.dn_norm(node, gamma, shift, DN_EPS)?;
                    let stats = g.batch_stats(node).expect("dn saves stats").clone();
                    batch_stats.push((base, stats));
                } else {
                    let gamma = params.tensors[base].tensor.item();
                    let shift = params.tensors[base + 1].tensor.item();
                    let rm = params.tensors[base + 2].tensor.data();
                    let rv = params.tensors[base + 3].tensor.data();
                    let scale: Vec<f64> = rv.iter().map(|v| gamma / (v + DN_EPS).sqrt()).collect();
                    let offs: Vec<f64> = rm
                        .iter()
                        .zip(&scale)
                        .map(|(m, s)| shift - m * s)
                        .collect();
                    node = g.pos_affine(node, scale, offs)?;
                }
            }
        }
    }

    Ok(ForwardPass {
        graph: g,
        input,
        logits: node,
        param_nodes,
        batch_stats,
    })
}

fn insert_param(
    g: &mut Graph,
    params: &Parameters,
    index: usize,
    grad: bool,
    param_nodes: &mut [Option<NodeId>],
) -> NodeId {
    let t = params.tensors[index].tensor.clone();
    let id = if grad && params.tensors[index].trainable {
        g.leaf(t.with_grad())
    } else {
        g.constant(t)
    };
    param_nodes[index] = Some(id);
    id
}

/// A trained model: spec, learned parameters, provenance and final metrics.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Parameters,
    pub train_seed: u64,
    pub metrics: TrainMetrics,
    /// Statistics policy DN layers follow at inference and under attack.
    pub dn_mode: StatsMode,
}

/// Evaluation batch size: predictions and attacks run in chunks of this
/// many rows, which is also the batch DN sees in batch-stats mode.
pub const EVAL_BATCH: usize = 64;

/// Stack windows into a (B, 1, 2048) tensor.
pub fn windows_to_tensor(windows: &[SignalWindow]) -> Tensor {
    let mut data = Vec::with_capacity(windows.len() * WINDOW_LEN);
    for w in windows {
        data.extend_from_slice(w.samples());
    }
    Tensor::new(vec![windows.len(), 1, WINDOW_LEN], data).expect("window length fixed")
}

pub fn labels_of(windows: &[SignalWindow]) -> Vec<usize> {
    windows.iter().map(|w| w.label.id()).collect()
}

/// Row-wise softmax of a (B, K) logits tensor.
pub fn softmax_rows(logits: &Tensor) -> Vec<f64> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    let mut probs = vec![0.0; b * k];
    for bi in 0..b {
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &v) in probs[bi * k..(bi + 1) * k].iter_mut().zip(row) {
            *p = (v - m).exp();
            z += *p;
        }
        for p in &mut probs[bi * k..(bi + 1) * k] {
            *p /= z;
        }
    }
    probs
}

fn argmax_rows(probs: &[f64], k: usize) -> Vec<usize> {
    probs
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                .0
        })
        .collect()
}

impl TrainedModel {
    /// Class probabilities and argmax labels for a batch tensor.
    pub fn predict_tensor(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<usize>), ModelError> {
        let pass = forward(
            &self.spec,
            &self.params,
            x,
            ForwardOptions {
                grad_params: false,
                grad_input: false,
                train_stats: false,
                dn_mode: self.dn_mode,
            },
        )?;
        let probs = softmax_rows(pass.graph.value(pass.logits));
        let labels = argmax_rows(&probs, NUM_CLASSES);
        Ok((probs, labels))
    }

    /// Predict windows in evaluation batches of [`EVAL_BATCH`] rows.
    pub fn predict(&self, windows: &[SignalWindow]) -> Result<(Vec<f64>, Vec<usize>), ModelError> {
        let mut probs = Vec::with_capacity(windows.len() * NUM_CLASSES);
        let mut labels = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(EVAL_BATCH) {
            let x = windows_to_tensor(chunk);
            let (p, l) = self.predict_tensor(&x)?;
            probs.extend(p);
            labels.extend(l);
        }
        Ok((probs, labels))
    }

    /// Fraction of windows whose argmax prediction matches the label.
    pub fn accuracy(&self, windows: &[SignalWindow]) -> Result<f64, ModelError> {
        if windows.is_empty() {
            return Err(ModelError::Config("accuracy over an empty set".into()));
        }
        let (_, preds) = self.predict(windows)?;
        Ok(accuracy_of(&preds, &labels_of(windows)))
    }

    /// Gradient of the mean cross-entropy loss with respect to the input
    /// batch, with parameters frozen. This is the quantity whose sign the
    /// attacks consume.
    pub fn input_gradient(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor, ModelError> {
        let pass = forward(
            &self.spec,
            &self.params,
            x,
            ForwardOptions {
                grad_params: false,
                grad_input: true,
                train_stats: false,
                dn_mode: self.dn_mode,
            },
        )?;
        let mut g = pass.graph;
        let loss = g.softmax_cross_entropy(pass.logits, labels)?;
        let mut grads: GradientSet = g.backward(loss)?;
        grads
            .take(pass.input)
            .ok_or_else(|| ModelError::State("input gradient missing from backward pass".into()))
    }
}

/// Share of matching prediction/label pairs.
pub fn accuracy_of(preds: &[usize], labels: &[usize]) -> f64 {
    debug_assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / preds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_all_four_specs() {
        for name in ["wdcnn", "lenet1d", "cnn1d", "alexnet1d"] {
            let spec = build(name).unwrap();
            assert!(spec.validate().is_ok(), "{name} shape chain");
            let chain = spec.shape_chain().unwrap();
            assert_eq!(*chain.last().unwrap(), ChainShape::Flat { features: 10 }, "{name} emits 10 logits");
            assert_eq!(chain[0], ChainShape::Map { ch: 1, len: WINDOW_LEN });
        }
        assert!(matches!(build("bilstm"), Err(ModelError::UnknownModel(_))));
    }

    #[test]
    fn wdcnn_first_layer_is_wide() {
        let spec = build("wdcnn").unwrap();
        assert_eq!(
            spec.layers[0],
            LayerSpec::Conv1d { in_ch: 1, out_ch: 16, kernel: 64, stride: 16, pad: 24 }
        );
        assert!(spec.uses_normalization);
    }

    #[test]
    fn alexnet_has_no_normalization() {
        let spec = build("alexnet1d").unwrap();
        assert!(!spec.uses_normalization);
        assert!(!spec.layers.iter().any(|l| l.is_normalization()));
        // The other three all normalize.
        for name in ["wdcnn", "lenet1d", "cnn1d"] {
            let s = build(name).unwrap();
            assert!(s.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm { .. })), "{name}");
        }
    }

    #[test]
    fn inconsistent_chain_is_rejected() {
        let spec = ModelSpec {
            name: "broken".into(),
            layers: vec![
                LayerSpec::Conv1d { in_ch: 2, out_ch: 4, kernel: 3, stride: 1, pad: 0 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 10, outputs: 10 },
            ],
            uses_normalization: false,
        };
        assert!(matches!(spec.validate(), Err(ModelError::InvalidSpec { .. })));
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let spec = build("wdcnn").unwrap();
        let a = init_parameters(&spec, 9).unwrap();
        let b = init_parameters(&spec, 9).unwrap();
        assert_eq!(a, b);
        let c = init_parameters(&spec, 10).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.get("l0.weight").unwrap().shape(), &[16, 1, 64]);
        assert_eq!(a.get("l1.gamma").unwrap().shape(), &[16]);
    }

    #[test]
    fn forward_emits_logits_for_every_model() {
        let x = Tensor::new(
            vec![2, 1, WINDOW_LEN],
            (0..2 * WINDOW_LEN).map(|i| (i % 97) as f64 / 96.0).collect(),
        )
        .unwrap();
        for name in ["wdcnn", "lenet1d", "cnn1d", "alexnet1d"] {
            let spec = build(name).unwrap();
            let params = init_parameters(&spec, 1).unwrap();
            let pass = forward(
                &spec,
                &params,
                &x,
                ForwardOptions {
                    grad_params: false,
                    grad_input: false,
                    train_stats: false,
                    dn_mode: StatsMode::Batch,
                },
            )
            .unwrap();
            assert_eq!(pass.graph.value(pass.logits).shape(), &[2, 10], "{name}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_argmax_shift_invariant() {
        let logits = Tensor::new(vec![2, 10], (0..20).map(|i| (i as f64 * 0.37).sin() * 3.0).collect()).unwrap();
        let probs = softmax_rows(&logits);
        for row in probs.chunks(10) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let shifted = Tensor::new(vec![2, 10], logits.data().iter().map(|v| v + 123.0).collect()).unwrap();
        assert_eq!(argmax_rows(&probs, 10), argmax_rows(&softmax_rows(&shifted), 10));
    }

    #[test]
    fn accuracy_of_stub_predictions() {
        let labels: Vec<usize> = (0..10).cycle().take(100).collect();
        assert_eq!(accuracy_of(&labels, &labels), 1.0);
        let constant = vec![3usize; 100];
        assert!((accuracy_of(&constant, &labels) - 0.1).abs() < 1e-12);
    }
}
