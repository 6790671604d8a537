//! Minimal reverse-mode differentiation over shaped `f64` arrays.
//!
//! A [`Graph`] is a tape: every forward op appends one node holding its
//! output value plus whatever the backward pass needs (saved activations,
//! argmax indices, softmax probabilities). [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients for every tensor that was
//! inserted with `requires_grad`, including input windows — which is what
//! the gradient-sign attacks consume.
//!
//! Determinism contract: identical parameters and inputs produce
//! bit-identical outputs and gradients. All parallel loops write disjoint
//! output slices and reduce in a fixed sequential order, so results do not
//! depend on thread count or scheduling.

mod tensor;

pub mod gradcheck;

use rayon::prelude::*;
use thiserror::Error;

pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid graph state: {0}")]
    State(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Saved statistics of a batch-normalizing op, used by trainers to update
/// running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    MaxPool1d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Flatten {
        x: NodeId,
    },
    /// Batch normalization over (batch, length) per channel, batch-stats mode.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        stats: BatchStats,
    },
    /// Per-channel affine `y = scale[c]*x + shift[c]` (normalization with
    /// frozen statistics).
    ChannelAffine {
        x: NodeId,
        scale: Vec<f64>,
    },
    /// DN layer in batch-stats mode: standardize each feature position
    /// across the batch, then apply the learned scalar affine.
    DnNorm {
        x: NodeId,
        gamma: NodeId,
        shift: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        stats: BatchStats,
    },
    /// Per-position affine `y = scale[f]*x + shift[f]` (DN with frozen
    /// statistics, learned affine folded in).
    PosAffine {
        x: NodeId,
        scale: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum {
        x: NodeId,
    },
    WeightedSum {
        x: NodeId,
        weights: Vec<f64>,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by one backward pass, keyed by node id.
#[derive(Debug)]
pub struct GradientSet {
    grads: Vec<Option<Tensor>>,
}

impl GradientSet {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// A reverse-mode tape over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Insert an input tensor. Its `requires_grad` flag decides whether
    /// [`Graph::backward`] will produce a gradient for it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let requires_grad = value.requires_grad();
        self.push_unchecked(value, requires_grad, Op::Leaf)
    }

    /// Insert a tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, false, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Batch mean/variance saved by a `batchnorm` or `dn_norm` node.
    pub fn batch_stats(&self, id: NodeId) -> Option<&BatchStats> {
        match &self.nodes[id.0].op {
            Op::BatchNorm { stats, .. } | Op::DnNorm { stats, .. } => Some(stats),
            _ => None,
        }
    }

    /// Softmax probabilities saved by a `softmax_cross_entropy` node,
    /// shaped (batch, classes).
    pub fn probabilities(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push_unchecked(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Every forward op funnels through here so the all-finite invariant
    /// holds on each node the moment it is created.
    fn push(&mut self, opname: &'static str, data: Vec<f64>, shape: Vec<usize>, op: Op) -> Result<NodeId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: opname });
        }
        let requires_grad = self.op_requires_grad(&op);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let dep = |id: &NodeId| self.nodes[id.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::Conv1d { x, w, b, .. } | Op::Dense { x, w, b } => dep(x) || dep(w) || dep(b),
            Op::Relu { x }
            | Op::MaxPool1d { x, .. }
            | Op::Flatten { x }
            | Op::ChannelAffine { x, .. }
            | Op::PosAffine { x, .. }
            | Op::Sum { x }
            | Op::WeightedSum { x, .. }
            | Op::Scale { x, .. } => dep(x),
            Op::BatchNorm { x, gamma, beta, .. } => dep(x) || dep(gamma) || dep(beta),
            Op::DnNorm { x, gamma, shift, .. } => dep(x) || dep(gamma) || dep(shift),
            Op::SoftmaxCrossEntropy { logits, .. } => dep(logits),
        }
    }

    fn shape_err(op: &'static str, details: String) -> AutodiffError {
        AutodiffError::ShapeMismatch { op, details }
    }

    // ─── forward ops ────────────────────────────────────────────────────

    /// 1-D convolution. `x`: (batch, in_ch, len); `w`: (out_ch, in_ch, k);
    /// `b`: (out_ch). Output length is `(len + 2*pad - k)/stride + 1`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        const OP: &str = "conv1d";
        let (xs, ws, bs) = (
            self.nodes[x.0].value.shape().to_vec(),
            self.nodes[w.0].value.shape().to_vec(),
            self.nodes[b.0].value.shape().to_vec(),
        );
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return Err(Self::shape_err(
                OP,
                format!("want x=(B,Ci,L) w=(Co,Ci,K) b=(Co), got x={xs:?} w={ws:?} b={bs:?}"),
            ));
        }
        let (batch, ci, l) = (xs[0], xs[1], xs[2]);
        let (co, wci, k) = (ws[0], ws[1], ws[2]);
        if wci != ci || bs[0] != co {
            return Err(Self::shape_err(
                OP,
                format!("in_ch {ci} vs kernel in_ch {wci}, bias {} vs out_ch {co}", bs[0]),
            ));
        }
        if stride == 0 {
            return Err(Self::shape_err(OP, "stride must be >= 1".into()));
        }
        if l + 2 * pad < k {
            return Err(Self::shape_err(
                OP,
                format!("kernel {k} exceeds padded length {}", l + 2 * pad),
            ));
        }
        let lout = (l + 2 * pad - k) / stride + 1;

        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![0.0; batch * co * lout];
        out.par_chunks_mut(co * lout).enumerate().for_each(|(bi, orow)| {
            let xrow = &xd[bi * ci * l..(bi + 1) * ci * l];
            for c_out in 0..co {
                let wbase = c_out * ci * k;
                for t in 0..lout {
                    let start = t * stride;
                    let kk_lo = pad.saturating_sub(start);
                    let kk_hi = k.min((l + pad).saturating_sub(start));
                    let mut acc = bd[c_out];
                    if kk_lo < kk_hi {
                        for c_in in 0..ci {
                            let xseg =
                                &xrow[c_in * l + start + kk_lo - pad..c_in * l + start + kk_hi - pad];
                            let wk = &wd[wbase + c_in * k + kk_lo..wbase + c_in * k + kk_hi];
                            acc += xseg.iter().zip(wk).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    orow[c_out * lout + t] = acc;
                }
            }
        });
        self.push(OP, out, vec![batch, co, lout], Op::Conv1d { x, w, b, stride, pad })
    }

    /// Fully connected layer. `x`: (batch, in); `w`: (out, in); `b`: (out).
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        const OP: &str = "dense";
        let xs = self.nodes[x.0].value.shape().to_vec();
        let ws = self.nodes[w.0].value.shape().to_vec();
        let bs = self.nodes[b.0].value.shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(Self::shape_err(
                OP,
                format!("want x=(B,F) w=(O,F) b=(O), got x={xs:?} w={ws:?} b={bs:?}"),
            ));
        }
        let (batch, f, o) = (xs[0], xs[1], ws[0]);
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![0.0; batch * o];
        out.par_chunks_mut(o).enumerate().for_each(|(bi, orow)| {
            let xrow = &xd[bi * f..(bi + 1) * f];
            for (oi, slot) in orow.iter_mut().enumerate() {
                let wrow = &wd[oi * f..(oi + 1) * f];
                *slot = bd[oi] + xrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
        });
        self.push(OP, out, vec![batch, o], Op::Dense { x, w, b })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        let out: Vec<f64> = v.data().iter().map(|&a| a.max(0.0)).collect();
        let shape = v.shape().to_vec();
        self.push("relu", out, shape, Op::Relu { x })
    }

    /// Max pooling over the trailing axis of (batch, ch, len). No padding;
    /// ties resolve to the earliest index.
    pub fn maxpool1d(&mut self, x: NodeId, width: usize, stride: usize) -> Result<NodeId> {
        const OP: &str = "maxpool1d";
        let xs = self.nodes[x.0].value.shape().to_vec();
        if xs.len() != 3 {
            return Err(Self::shape_err(OP, format!("want (B,C,L), got {xs:?}")));
        }
        let (batch, c, l) = (xs[0], xs[1], xs[2]);
        if width == 0 || stride == 0 || width > l {
            return Err(Self::shape_err(
                OP,
                format!("window {width} / stride {stride} invalid for length {l}"),
            ));
        }
        let lp = (l - width) / stride + 1;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; batch * c * lp];
        let mut argmax = vec![0usize; batch * c * lp];
        out.chunks_mut(lp)
            .zip(argmax.chunks_mut(lp))
            .enumerate()
            .for_each(|(row, (orow, arow))| {
                let base = row * l; // row = bi*c + ci over (B,C)
                for t in 0..lp {
                    let s = t * stride;
                    let mut best = xd[base + s];
                    let mut besti = base + s;
                    for i in s + 1..s + width {
                        if xd[base + i] > best {
                            best = xd[base + i];
                            besti = base + i;
                        }
                    }
                    orow[t] = best;
                    arow[t] = besti;
                }
            });
        self.push(OP, out, vec![batch, c, lp], Op::MaxPool1d { x, argmax })
    }

    /// (batch, c, l) -> (batch, c*l). Row-major data is untouched.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        const OP: &str = "flatten";
        let v = &self.nodes[x.0].value;
        let xs = v.shape();
        if xs.len() != 3 {
            return Err(Self::shape_err(OP, format!("want (B,C,L), got {xs:?}")));
        }
        let shape = vec![xs[0], xs[1] * xs[2]];
        let out = v.data().to_vec();
        self.push(OP, out, shape, Op::Flatten { x })
    }

    /// Batch normalization in batch-stats mode over (batch, ch, len):
    /// per-channel mean/variance over batch and length, then
    /// `y = gamma[c] * xhat + beta[c]`. `gamma`/`beta` are (ch) nodes.
    pub fn batchnorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        const OP: &str = "batchnorm";
        let xs = self.nodes[x.0].value.shape().to_vec();
        if xs.len() != 3 {
            return Err(Self::shape_err(OP, format!("want x=(B,C,L), got {xs:?}")));
        }
        let (batch, c, l) = (xs[0], xs[1], xs[2]);
        let gs = self.nodes[gamma.0].value.shape();
        let bs = self.nodes[beta.0].value.shape();
        if gs != [c] || bs != [c] {
            return Err(Self::shape_err(
                OP,
                format!("gamma {gs:?} / beta {bs:?} vs {c} channels"),
            ));
        }
        if eps <= 0.0 {
            return Err(Self::shape_err(OP, "eps_stab must be positive".into()));
        }
        let xd = self.nodes[x.0].value.data();
        let gd = self.nodes[gamma.0].value.data().to_vec();
        let bd = self.nodes[beta.0].value.data().to_vec();

        let n = (batch * l) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        mean.par_iter_mut().zip(var.par_iter_mut()).enumerate().for_each(|(ci, (m, v))| {
            let mut s = 0.0;
            for bi in 0..batch {
                let row = &xd[(bi * c + ci) * l..(bi * c + ci) * l + l];
                s += row.iter().sum::<f64>();
            }
            let mu = s / n;
            let mut sv = 0.0;
            for bi in 0..batch {
                let row = &xd[(bi * c + ci) * l..(bi * c + ci) * l + l];
                sv += row.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>();
            }
            *m = mu;
            *v = sv / n;
        });
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        xhat.par_chunks_mut(c * l)
            .zip(out.par_chunks_mut(c * l))
            .enumerate()
            .for_each(|(bi, (hrow, orow))| {
                for ci in 0..c {
                    let (mu, is, g, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
                    let src = &xd[(bi * c + ci) * l..(bi * c + ci) * l + l];
                    for (i, &v) in src.iter().enumerate() {
                        let h = (v - mu) * is;
                        hrow[ci * l + i] = h;
                        orow[ci * l + i] = g * h + be;
                    }
                }
            });
        let stats = BatchStats { mean, var };
        self.push(
            OP,
            out,
            xs,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, stats },
        )
    }

    /// Per-channel affine over (batch, ch, len) with constant coefficients;
    /// this is batch normalization evaluated with frozen running statistics.
    pub fn channel_affine(&mut self, x: NodeId, scale: Vec<f64>, shift: Vec<f64>) -> Result<NodeId> {
        const OP: &str = "channel_affine";
        let xs = self.nodes[x.0].value.shape().to_vec();
        if xs.len() != 3 || scale.len() != xs[1] || shift.len() != xs[1] {
            return Err(Self::shape_err(
                OP,
                format!("x={xs:?} scale={} shift={}", scale.len(), shift.len()),
            ));
        }
        let (c, l) = (xs[1], xs[2]);
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; xd.len()];
        out.par_chunks_mut(c * l).enumerate().for_each(|(bi, orow)| {
            for ci in 0..c {
                let (s, t) = (scale[ci], shift[ci]);
                let src = &xd[(bi * c + ci) * l..(bi * c + ci) * l + l];
                for (slot, &v) in orow[ci * l..ci * l + l].iter_mut().zip(src) {
                    *slot = s * v + t;
                }
            }
        });
        self.push(OP, out, xs, Op::ChannelAffine { x, scale })
    }

    /// DN defensive layer in batch-stats mode. Statistics are computed per
    /// feature position across the batch dimension; `gamma` and `shift` are
    /// scalar (shape `[1]`) nodes. Requires a batch of at least 2 rows.
    pub fn dn_norm(&mut self, x: NodeId, gamma: NodeId, shift: NodeId, eps: f64) -> Result<NodeId> {
        const OP: &str = "dn_norm";
        let xs = self.nodes[x.0].value.shape().to_vec();
        if xs.len() < 2 {
            return Err(Self::shape_err(OP, format!("want (B, ..), got {xs:?}")));
        }
        let m = xs[0];
        let f: usize = xs[1..].iter().product();
        if m < 2 {
            return Err(AutodiffError::State(
                "dn_norm in batch-stats mode needs a batch of >= 2 rows; use stored statistics for single examples".into(),
            ));
        }
        if !self.nodes[gamma.0].value.is_scalar() || !self.nodes[shift.0].value.is_scalar() {
            return Err(Self::shape_err(OP, "gamma and shift must be scalars".into()));
        }
        if eps <= 0.0 {
            return Err(Self::shape_err(OP, "eps_stab must be positive".into()));
        }
        let xd = self.nodes[x.0].value.data();
        let g = self.nodes[gamma.0].value.item();
        let d = self.nodes[shift.0].value.item();

        let mf = m as f64;
        let mut mean = vec![0.0; f];
        for bi in 0..m {
            let row = &xd[bi * f..(bi + 1) * f];
            for (acc, &v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= mf;
        }
        let mut var = vec![0.0; f];
        for bi in 0..m {
            let row = &xd[bi * f..(bi + 1) * f];
            for ((acc, &mu), &v) in var.iter_mut().zip(&mean).zip(row) {
                let dvi = v - mu;
                *acc += dvi * dvi;
            }
        }
        for v in &mut var {
            *v /= mf;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        xhat.par_chunks_mut(f)
            .zip(out.par_chunks_mut(f))
            .enumerate()
            .for_each(|(bi, (hrow, orow))| {
                let src = &xd[bi * f..(bi + 1) * f];
                for i in 0..f {
                    let h = (src[i] - mean[i]) * inv_std[i];
                    hrow[i] = h;
                    orow[i] = g * h + d;
                }
            });
        let stats = BatchStats { mean, var };
        self.push(
            OP,
            out,
            xs,
            Op::DnNorm { x, gamma, shift, xhat, inv_std, stats },
        )
    }

    /// Per-position affine over (batch, positions...) with constant
    /// coefficients; this is the DN layer evaluated with stored statistics.
    pub fn pos_affine(&mut self, x: NodeId, scale: Vec<f64>, shift: Vec<f64>) -> Result<NodeId> {
        const OP: &str = "pos_affine";
        let xs = self.nodes[x.0].value.shape().to_vec();
        let f: usize = xs[1..].iter().product();
        if xs.len() < 2 || scale.len() != f || shift.len() != f {
            return Err(Self::shape_err(
                OP,
                format!("x={xs:?} scale={} shift={}", scale.len(), shift.len()),
            ));
        }
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; xd.len()];
        out.par_chunks_mut(f).enumerate().for_each(|(bi, orow)| {
            let src = &xd[bi * f..(bi + 1) * f];
            for i in 0..f {
                orow[i] = scale[i] * src[i] + shift[i];
            }
        });
        self.push(OP, out, xs, Op::PosAffine { x, scale })
    }

    /// Mean over the batch of per-row softmax cross-entropy. Returns a
    /// scalar node; the row-wise softmax probabilities are saved and
    /// retrievable via [`Graph::probabilities`].
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        const OP: &str = "softmax_cross_entropy";
        let ls = self.nodes[logits.0].value.shape().to_vec();
        if ls.len() != 2 {
            return Err(Self::shape_err(OP, format!("want logits=(B,K), got {ls:?}")));
        }
        let (batch, k) = (ls[0], ls[1]);
        if labels.len() != batch {
            return Err(Self::shape_err(
                OP,
                format!("{} labels for batch {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(AutodiffError::LabelOutOfRange { label: bad, classes: k });
        }
        let ld = self.nodes[logits.0].value.data();
        let mut probs = vec![0.0; batch * k];
        let mut row_losses = vec![0.0; batch];
        probs
            .par_chunks_mut(k)
            .zip(row_losses.par_iter_mut())
            .enumerate()
            .for_each(|(bi, (prow, loss))| {
                let row = &ld[bi * k..(bi + 1) * k];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (p, &v) in prow.iter_mut().zip(row) {
                    *p = (v - m).exp();
                    z += *p;
                }
                for p in prow.iter_mut() {
                    *p /= z;
                }
                *loss = -(prow[labels[bi]].max(f64::MIN_POSITIVE)).ln();
            });
        let loss = row_losses.iter().sum::<f64>() / batch as f64;
        self.push(
            OP,
            vec![loss],
            vec![1],
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs },
        )
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.nodes[x.0].value.data().iter().sum();
        self.push("sum", vec![s], vec![1], Op::Sum { x })
    }

    /// Scalar dot product with fixed weights — handy as a probe functional
    /// when gradient-checking a single op.
    pub fn weighted_sum(&mut self, x: NodeId, weights: &[f64]) -> Result<NodeId> {
        const OP: &str = "weighted_sum";
        let xd = self.nodes[x.0].value.data();
        if weights.len() != xd.len() {
            return Err(Self::shape_err(
                OP,
                format!("{} weights for {} values", weights.len(), xd.len()),
            ));
        }
        let s = xd.iter().zip(weights).map(|(a, b)| a * b).sum();
        self.push(OP, vec![s], vec![1], Op::WeightedSum { x, weights: weights.to_vec() })
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        let out: Vec<f64> = v.data().iter().map(|a| a * c).collect();
        let shape = v.shape().to_vec();
        self.push("scale", out, shape, Op::Scale { x, c })
    }

    // ─── backward ───────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss node. Returns gradients for every
    /// tensor inserted with `requires_grad`.
    pub fn backward(&self, loss: NodeId) -> Result<GradientSet> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| AutodiffError::State("backward on a node this graph never produced; run the forward pass first".into()))?;
        if !node.value.is_scalar() {
            return Err(AutodiffError::State(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if !node.requires_grad {
            return Ok(GradientSet { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(idx);
            let go = rest[0].as_ref().expect("checked above");
            self.accumulate(idx, go.data(), before);
        }

        for (idx, g) in grads.iter().enumerate() {
            if let Some(t) = g {
                if !t.all_finite() {
                    return Err(AutodiffError::NonFinite {
                        op: op_name(&self.nodes[idx].op),
                    });
                }
            }
        }
        Ok(GradientSet { grads })
    }

    /// Add this node's contribution to its parents' gradient buffers.
    /// Parents always precede the node on the tape, so they live in `before`.
    fn accumulate(&self, idx: usize, go: &[f64], before: &mut [Option<Tensor>]) {
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let buf = |slot: &mut Option<Tensor>, shape: &[usize]| -> *mut f64 {
            if slot.is_none() {
                *slot = Some(Tensor::zeros(shape));
            }
            slot.as_mut().unwrap().data_mut().as_mut_ptr()
        };
        // Convenience: fetch a parent's grad buffer as a slice.
        macro_rules! grad_of {
            ($id:expr) => {{
                let shape = self.nodes[$id.0].value.shape().to_vec();
                let len = self.nodes[$id.0].value.len();
                let p = buf(&mut before[$id.0], &shape);
                unsafe { std::slice::from_raw_parts_mut(p, len) }
            }};
        }

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, stride, pad } => {
                let xs = self.nodes[x.0].value.shape();
                let ws = self.nodes[w.0].value.shape();
                let (batch, ci, l) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[0], ws[2]);
                let lout = self.nodes[idx].value.shape()[2];
                let (stride, pad) = (*stride, *pad);
                let xd = self.nodes[x.0].value.data();
                let wd = self.nodes[w.0].value.data();
                if wants(*x) {
                    let gx = grad_of!(x);
                    gx.par_chunks_mut(ci * l).enumerate().for_each(|(bi, gxrow)| {
                        let gorow = &go[bi * co * lout..(bi + 1) * co * lout];
                        for c_out in 0..co {
                            let wbase = c_out * ci * k;
                            for t in 0..lout {
                                let g = gorow[c_out * lout + t];
                                if g == 0.0 {
                                    continue;
                                }
                                let start = t * stride;
                                let kk_lo = pad.saturating_sub(start);
                                let kk_hi = k.min((l + pad).saturating_sub(start));
                                if kk_lo >= kk_hi {
                                    continue;
                                }
                                for c_in in 0..ci {
                                    let dst = &mut gxrow
                                        [c_in * l + start + kk_lo - pad..c_in * l + start + kk_hi - pad];
                                    let wk = &wd[wbase + c_in * k + kk_lo..wbase + c_in * k + kk_hi];
                                    for (d, &wv) in dst.iter_mut().zip(wk) {
                                        *d += g * wv;
                                    }
                                }
                            }
                        }
                    });
                }
                if wants(*w) {
                    let gw = grad_of!(w);
                    gw.par_chunks_mut(ci * k).enumerate().for_each(|(c_out, gwrow)| {
                        for bi in 0..batch {
                            let gorow = &go[(bi * co + c_out) * lout..(bi * co + c_out) * lout + lout];
                            let xrow = &xd[bi * ci * l..(bi + 1) * ci * l];
                            for (t, &g) in gorow.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                let start = t * stride;
                                let kk_lo = pad.saturating_sub(start);
                                let kk_hi = k.min((l + pad).saturating_sub(start));
                                if kk_lo >= kk_hi {
                                    continue;
                                }
                                for c_in in 0..ci {
                                    let src = &xrow
                                        [c_in * l + start + kk_lo - pad..c_in * l + start + kk_hi - pad];
                                    let dst = &mut gwrow[c_in * k + kk_lo..c_in * k + kk_hi];
                                    for (d, &xv) in dst.iter_mut().zip(src) {
                                        *d += g * xv;
                                    }
                                }
                            }
                        }
                    });
                }
                if wants(*b) {
                    let gb = grad_of!(b);
                    for (c_out, slot) in gb.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for bi in 0..batch {
                            s += go[(bi * co + c_out) * lout..(bi * co + c_out) * lout + lout]
                                .iter()
                                .sum::<f64>();
                        }
                        *slot += s;
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (batch, f) = (xs[0], xs[1]);
                let o = self.nodes[w.0].value.shape()[0];
                let xd = self.nodes[x.0].value.data();
                let wd = self.nodes[w.0].value.data();
                if wants(*x) {
                    let gx = grad_of!(x);
                    gx.par_chunks_mut(f).enumerate().for_each(|(bi, gxrow)| {
                        let gorow = &go[bi * o..(bi + 1) * o];
                        for (oi, &g) in gorow.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let wrow = &wd[oi * f..(oi + 1) * f];
                            for (d, &wv) in gxrow.iter_mut().zip(wrow) {
                                *d += g * wv;
                            }
                        }
                    });
                }
                if wants(*w) {
                    let gw = grad_of!(w);
                    gw.par_chunks_mut(f).enumerate().for_each(|(oi, gwrow)| {
                        for bi in 0..batch {
                            let g = go[bi * o + oi];
                            if g == 0.0 {
                                continue;
                            }
                            let xrow = &xd[bi * f..(bi + 1) * f];
                            for (d, &xv) in gwrow.iter_mut().zip(xrow) {
                                *d += g * xv;
                            }
                        }
                    });
                }
                if wants(*b) {
                    let gb = grad_of!(b);
                    for bi in 0..batch {
                        for (slot, &g) in gb.iter_mut().zip(&go[bi * o..(bi + 1) * o]) {
                            *slot += g;
                        }
                    }
                }
            }
            Op::Relu { x } => {
                if wants(*x) {
                    let xd = self.nodes[x.0].value.data();
                    let gx = grad_of!(x);
                    for ((d, &xv), &g) in gx.iter_mut().zip(xd).zip(go) {
                        if xv > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::MaxPool1d { x, argmax } => {
                if wants(*x) {
                    let gx = grad_of!(x);
                    for (&src, &g) in argmax.iter().zip(go) {
                        gx[src] += g;
                    }
                }
            }
            Op::Flatten { x } => {
                if wants(*x) {
                    let gx = grad_of!(x);
                    for (d, &g) in gx.iter_mut().zip(go) {
                        *d += g;
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, .. } => {
                let xs = self.nodes[x.0].value.shape();
                let (batch, c, l) = (xs[0], xs[1], xs[2]);
                let n = (batch * l) as f64;
                let gd = self.nodes[gamma.0].value.data();
                // Per-channel reductions: sum(go) and sum(go * xhat).
                let mut sum_go = vec![0.0; c];
                let mut sum_goh = vec![0.0; c];
                sum_go
                    .par_iter_mut()
                    .zip(sum_goh.par_iter_mut())
                    .enumerate()
                    .for_each(|(ci, (sg, sgh))| {
                        for bi in 0..batch {
                            let base = (bi * c + ci) * l;
                            let grow = &go[base..base + l];
                            let hrow = &xhat[base..base + l];
                            *sg += grow.iter().sum::<f64>();
                            *sgh += grow.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                if wants(*gamma) {
                    let gg = grad_of!(gamma);
                    for (d, &s) in gg.iter_mut().zip(&sum_goh) {
                        *d += s;
                    }
                }
                if wants(*beta) {
                    let gb = grad_of!(beta);
                    for (d, &s) in gb.iter_mut().zip(&sum_go) {
                        *d += s;
                    }
                }
                if wants(*x) {
                    let gx = grad_of!(x);
                    gx.par_chunks_mut(c * l).enumerate().for_each(|(bi, gxrow)| {
                        for ci in 0..c {
                            let coef = gd[ci] * inv_std[ci] / n;
                            let base = (bi * c + ci) * l;
                            let grow = &go[base..base + l];
                            let hrow = &xhat[base..base + l];
                            let dst = &mut gxrow[ci * l..ci * l + l];
                            for ((d, &g), &h) in dst.iter_mut().zip(grow).zip(hrow) {
                                *d += coef * (n * g - sum_go[ci] - h * sum_goh[ci]);
                            }
                        }
                    });
                }
            }
            Op::ChannelAffine { x, scale } => {
                if wants(*x) {
                    let xs = self.nodes[x.0].value.shape();
                    let (c, l) = (xs[1], xs[2]);
                    let gx = grad_of!(x);
                    gx.par_chunks_mut(c * l).enumerate().for_each(|(bi, gxrow)| {
                        for ci in 0..c {
                            let s = scale[ci];
                            let base = (bi * c + ci) * l;
                            for (d, &g) in gxrow[ci * l..ci * l + l].iter_mut().zip(&go[base..base + l]) {
                                *d += s * g;
                            }
                        }
                    });
                }
            }
            Op::DnNorm { x, gamma, shift, xhat, inv_std, .. } => {
                let xs = self.nodes[x.0].value.shape();
                let m = xs[0];
                let f: usize = xs[1..].iter().product();
                let mf = m as f64;
                let g = self.nodes[gamma.0].value.item();
                if wants(*gamma) {
                    let gg = grad_of!(gamma);
                    gg[0] += go.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>();
                }
                if wants(*shift) {
                    let gs = grad_of!(shift);
                    gs[0] += go.iter().sum::<f64>();
                }
                if wants(*x) {
                    // Through the batch statistics: with gxh = gamma * go,
                    // gx = inv_std/m * (m*gxh - sum_b gxh - xhat * sum_b gxh*xhat).
                    let mut sum1 = vec![0.0; f];
                    let mut sum2 = vec![0.0; f];
                    for bi in 0..m {
                        let grow = &go[bi * f..(bi + 1) * f];
                        let hrow = &xhat[bi * f..(bi + 1) * f];
                        for i in 0..f {
                            let gxh = g * grow[i];
                            sum1[i] += gxh;
                            sum2[i] += gxh * hrow[i];
                        }
                    }
                    let gx = grad_of!(x);
                    gx.par_chunks_mut(f).enumerate().for_each(|(bi, gxrow)| {
                        let grow = &go[bi * f..(bi + 1) * f];
                        let hrow = &xhat[bi * f..(bi + 1) * f];
                        for i in 0..f {
                            let gxh = g * grow[i];
                            gxrow[i] += inv_std[i] / mf * (mf * gxh - sum1[i] - hrow[i] * sum2[i]);
                        }
                    });
                }
            }
            Op::PosAffine { x, scale } => {
                if wants(*x) {
                    let f = scale.len();
                    let gx = grad_of!(x);
                    gx.par_chunks_mut(f).enumerate().for_each(|(bi, gxrow)| {
                        let grow = &go[bi * f..(bi + 1) * f];
                        for i in 0..f {
                            gxrow[i] += scale[i] * grow[i];
                        }
                    });
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if wants(*logits) {
                    let ls = self.nodes[logits.0].value.shape();
                    let (batch, k) = (ls[0], ls[1]);
                    let g = go[0] / batch as f64;
                    let gl = grad_of!(logits);
                    gl.par_chunks_mut(k).enumerate().for_each(|(bi, glrow)| {
                        let prow = &probs[bi * k..(bi + 1) * k];
                        for (j, (d, &p)) in glrow.iter_mut().zip(prow).enumerate() {
                            let ind = if j == labels[bi] { 1.0 } else { 0.0 };
                            *d += g * (p - ind);
                        }
                    });
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    let g = go[0];
                    let gx = grad_of!(x);
                    for d in gx.iter_mut() {
                        *d += g;
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                if wants(*x) {
                    let g = go[0];
                    let gx = grad_of!(x);
                    for (d, &w) in gx.iter_mut().zip(weights) {
                        *d += g * w;
                    }
                }
            }
            Op::Scale { x, c } => {
                if wants(*x) {
                    let c = *c;
                    let gx = grad_of!(x);
                    for (d, &g) in gx.iter_mut().zip(go) {
                        *d += c * g;
                    }
                }
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv1d { .. } => "conv1d",
        Op::Dense { .. } => "dense",
        Op::Relu { .. } => "relu",
        Op::MaxPool1d { .. } => "maxpool1d",
        Op::Flatten { .. } => "flatten",
        Op::BatchNorm { .. } => "batchnorm",
        Op::ChannelAffine { .. } => "channel_affine",
        Op::DnNorm { .. } => "dn_norm",
        Op::PosAffine { .. } => "pos_affine",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        Op::Sum { .. } => "sum",
        Op::WeightedSum { .. } => "weighted_sum",
        Op::Scale { .. } => "scale",
    }
}
