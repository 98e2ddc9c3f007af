//! Operation recording and reverse traversal.

use super::conv::{self, ConvSpec};
use super::{Element, Tensor};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Index of a recorded node. Inputs of a node always have smaller ids,
/// so reverse id order is a valid backward schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

/// A recorded operation together with the values its backward rule needs.
/// Saved buffers are `Arc` clones of tensor storage, so recording never
/// copies array data.
pub(crate) enum Op<E: Element> {
    Leaf,
    Conv1d {
        x: Arc<Vec<E>>,
        w: Arc<Vec<E>>,
        spec: ConvSpec,
        x_node: Option<NodeId>,
        w_node: Option<NodeId>,
        bias_node: Option<NodeId>,
    },
    Dense {
        x: Arc<Vec<E>>,
        w: Arc<Vec<E>>,
        batch: usize,
        n_in: usize,
        n_out: usize,
        x_node: Option<NodeId>,
        w_node: Option<NodeId>,
        bias_node: Option<NodeId>,
    },
    Relu {
        /// Output values; their sign pattern equals the input's under
        /// the subgradient-0-at-0 convention, so the input need not
        /// outlive the forward buffer.
        out: Arc<Vec<E>>,
        x_node: NodeId,
    },
    ResidualAdd {
        a_node: Option<NodeId>,
        b_node: Option<NodeId>,
    },
    GlobalAvgPool {
        batch: usize,
        channels: usize,
        len: usize,
        x_node: NodeId,
    },
    L1Loss {
        pred: Arc<Vec<E>>,
        target: Arc<Vec<E>>,
        pred_node: Option<NodeId>,
        target_node: Option<NodeId>,
    },
    BatchNorm {
        x: Arc<Vec<E>>,
        gamma: Arc<Vec<E>>,
        mean: Vec<E>,
        var: Vec<E>,
        eps: E,
        batch: usize,
        channels: usize,
        len: usize,
        x_node: Option<NodeId>,
        gamma_node: Option<NodeId>,
        beta_node: Option<NodeId>,
    },
    WeightStandardize {
        w: Arc<Vec<E>>,
        mean: Vec<E>,
        var: Vec<E>,
        eps: E,
        filters: usize,
        filter_len: usize,
        w_node: NodeId,
    },
}

struct Node<E: Element> {
    op: Op<E>,
    numel: usize,
}

/// Records one forward pass worth of operations.
///
/// A tape is confined to a single worker; heavy operations may still
/// split their per-sample arithmetic over `threads` workers internally,
/// which is bitwise-deterministic because every output element is
/// produced by exactly one thread and reductions run in fixed order.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    threads: usize,
    capture_kinks: bool,
    kink_signs: Vec<bool>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Training holds dozens of multi-megabyte activation buffers per step;
/// with glibc defaults those round-trip through mmap on every batch.
/// Raising the thresholds keeps the pages resident across steps.
fn tune_allocator() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        }
    });
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self::with_threads(1)
    }

    pub fn with_threads(threads: usize) -> Self {
        tune_allocator();
        Tape {
            nodes: Vec::new(),
            threads: threads.max(1),
            capture_kinks: false,
            kink_signs: Vec::new(),
        }
    }

    /// Records the sign of every kink-adjacent quantity (ReLU inputs,
    /// L1 residuals) seen by subsequent ops. The finite-difference
    /// checker compares these between probe points: a changed sign means
    /// the probe segment crossed a non-differentiable point and the
    /// coordinate cannot be validated by central differences.
    pub fn with_kink_capture() -> Self {
        let mut tape = Self::new();
        tape.capture_kinks = true;
        tape
    }

    pub(crate) fn capture_kinks(&self) -> bool {
        self.capture_kinks
    }

    pub(crate) fn push_kink_signs(&mut self, signs: impl Iterator<Item = bool>) {
        self.kink_signs.extend(signs);
    }

    pub fn kink_signs(&self) -> &[bool] {
        &self.kink_signs
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes, keeping allocated capacity for reuse.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Registers a trainable tensor as a tape leaf and links the tensor
    /// to the new node.
    pub fn leaf(&mut self, tensor: &mut Tensor<E>) -> NodeId {
        debug_assert!(tensor.requires_grad(), "leaf bound for non-grad tensor");
        let id = self.push(Op::Leaf, tensor.numel());
        tensor.set_node(Some(id));
        id
    }

    pub(crate) fn push(&mut self, op: Op<E>, numel: usize) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, numel });
        id
    }

    /// Propagates d(loss)/d(node) to every recorded node reachable from
    /// `loss`, visiting each node exactly once. Fan-out contributions
    /// accumulate additively.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<Gradients<E>> {
        let root = loss
            .node()
            .ok_or_else(|| Error::invalid("loss is not recorded on this tape"))?;
        if self.nodes[root.index()].numel != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got {} elements",
                self.nodes[root.index()].numel
            )));
        }

        let mut grads: Vec<Option<Vec<E>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.index()] = Some(vec![E::ONE]);

        for id in (0..=root.index()).rev() {
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // keep the buffer for the caller
            }
            let (lower, upper) = grads.split_at_mut(id);
            // Take ownership: intermediate gradients are dead once
            // propagated, and pass-through ops reuse the buffer.
            let Some(g) = upper[0].take() else {
                continue;
            };
            self.backward_op(&self.nodes[id].op, g, lower);
        }

        Ok(Gradients { grads })
    }

    fn backward_op(&self, op: &Op<E>, g: Vec<E>, grads: &mut [Option<Vec<E>>]) {
        match op {
            Op::Leaf => unreachable!("leaves are handled by the caller"),
            Op::Conv1d {
                x,
                w,
                spec,
                x_node,
                w_node,
                bias_node,
            } => {
                let (dx, dw, db) = conv::backward(
                    &g,
                    x,
                    w,
                    spec,
                    self.threads,
                    x_node.is_some(),
                    w_node.is_some(),
                    bias_node.is_some(),
                );
                if let (Some(wn), Some(dw)) = (w_node, dw) {
                    accumulate(&mut grads[wn.index()], dw);
                }
                if let (Some(bn), Some(db)) = (bias_node, db) {
                    accumulate(&mut grads[bn.index()], db);
                }
                if let (Some(xn), Some(dx)) = (x_node, dx) {
                    accumulate(&mut grads[xn.index()], dx);
                }
            }
            Op::Dense {
                x,
                w,
                batch,
                n_in,
                n_out,
                x_node,
                w_node,
                bias_node,
            } => {
                let (b, n, m) = (*batch, *n_in, *n_out);
                if let Some(xn) = x_node {
                    let mut dx = vec![E::ZERO; b * n];
                    for bi in 0..b {
                        for mi in 0..m {
                            let go = g[bi * m + mi];
                            let wrow = &w[mi * n..(mi + 1) * n];
                            let dxrow = &mut dx[bi * n..(bi + 1) * n];
                            for ni in 0..n {
                                dxrow[ni] += go * wrow[ni];
                            }
                        }
                    }
                    accumulate(&mut grads[xn.index()], dx);
                }
                if let Some(wn) = w_node {
                    let mut dw = vec![E::ZERO; m * n];
                    for bi in 0..b {
                        let xrow = &x[bi * n..(bi + 1) * n];
                        for mi in 0..m {
                            let go = g[bi * m + mi];
                            let dwrow = &mut dw[mi * n..(mi + 1) * n];
                            for ni in 0..n {
                                dwrow[ni] += go * xrow[ni];
                            }
                        }
                    }
                    accumulate(&mut grads[wn.index()], dw);
                }
                if let Some(bn) = bias_node {
                    let mut db = vec![E::ZERO; m];
                    for bi in 0..b {
                        for mi in 0..m {
                            db[mi] += g[bi * m + mi];
                        }
                    }
                    accumulate(&mut grads[bn.index()], db);
                }
            }
            Op::Relu { out, x_node } => {
                let mut g = g;
                for (gi, &oi) in g.iter_mut().zip(out.iter()) {
                    if !(oi > E::ZERO) {
                        *gi = E::ZERO;
                    }
                }
                accumulate(&mut grads[x_node.index()], g);
            }
            Op::ResidualAdd { a_node, b_node } => {
                // Both branches receive the upstream gradient unchanged.
                if let Some(an) = a_node {
                    if b_node.is_some() {
                        accumulate(&mut grads[an.index()], g.clone());
                    } else {
                        accumulate(&mut grads[an.index()], g);
                        return;
                    }
                }
                if let Some(bn) = b_node {
                    accumulate(&mut grads[bn.index()], g);
                }
            }
            Op::GlobalAvgPool {
                batch,
                channels,
                len,
                x_node,
            } => {
                let inv_len = E::ONE / E::from_f64(*len as f64);
                let mut dx = vec![E::ZERO; batch * channels * len];
                for bc in 0..batch * channels {
                    let go = g[bc] * inv_len;
                    for t in 0..*len {
                        dx[bc * len + t] = go;
                    }
                }
                accumulate(&mut grads[x_node.index()], dx);
            }
            Op::L1Loss {
                pred,
                target,
                pred_node,
                target_node,
            } => {
                let n = pred.len();
                let scale = g[0] / E::from_f64(n as f64);
                // Subgradient at zero residual is zero.
                let signs: Vec<E> = pred
                    .iter()
                    .zip(target.iter())
                    .map(|(&p, &t)| {
                        if p > t {
                            scale
                        } else if p < t {
                            -scale
                        } else {
                            E::ZERO
                        }
                    })
                    .collect();
                if let Some(pn) = pred_node {
                    accumulate(&mut grads[pn.index()], signs.clone());
                }
                if let Some(tn) = target_node {
                    let neg: Vec<E> = signs.iter().map(|&s| -s).collect();
                    accumulate(&mut grads[tn.index()], neg);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                mean,
                var,
                eps,
                batch,
                channels,
                len,
                x_node,
                gamma_node,
                beta_node,
            } => {
                self.backward_batch_norm(
                    x, gamma, mean, var, *eps, *batch, *channels, *len, g, *x_node, *gamma_node,
                    *beta_node, grads,
                );
            }
            Op::WeightStandardize {
                w,
                mean,
                var,
                eps,
                filters,
                filter_len,
                w_node,
            } => {
                let n = *filter_len;
                let inv_n = E::ONE / E::from_f64(n as f64);
                let mut dw = vec![E::ZERO; w.len()];
                for f in 0..*filters {
                    let wf = &w[f * n..(f + 1) * n];
                    let gf = &g[f * n..(f + 1) * n];
                    let inv = E::ONE / (var[f] + *eps).sqrt();
                    let mut sum_g = E::ZERO;
                    let mut sum_gc = E::ZERO; // sum of g * (w - mean)
                    let mut sum_c = E::ZERO; // sum of (w - mean)
                    for i in 0..n {
                        let c = wf[i] - mean[f];
                        sum_g += gf[i];
                        sum_gc += gf[i] * c;
                        sum_c += c;
                    }
                    let dvar = sum_gc * E::from_f64(-0.5) * inv * inv * inv;
                    let dmean = -inv * sum_g + dvar * E::from_f64(-2.0) * inv_n * sum_c;
                    let two = E::from_f64(2.0);
                    let dst = &mut dw[f * n..(f + 1) * n];
                    for i in 0..n {
                        let c = wf[i] - mean[f];
                        dst[i] = gf[i] * inv + dvar * two * c * inv_n + dmean * inv_n;
                    }
                }
                accumulate(&mut grads[w_node.index()], dw);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_batch_norm(
        &self,
        x: &[E],
        gamma: &[E],
        mean: &[E],
        var: &[E],
        eps: E,
        batch: usize,
        channels: usize,
        len: usize,
        mut g: Vec<E>,
        x_node: Option<NodeId>,
        gamma_node: Option<NodeId>,
        beta_node: Option<NodeId>,
        grads: &mut [Option<Vec<E>>],
    ) {
        let n = (batch * len) as f64;
        let mut dgamma = vec![E::ZERO; channels];
        let mut dbeta = vec![E::ZERO; channels];

        for c in 0..channels {
            let inv = 1.0 / (var[c] + eps).to_f64().sqrt();
            let mu = mean[c].to_f64();
            // Channel reductions over (batch, time), accumulated in f64
            // to match the forward statistics.
            let mut sum_g = 0.0f64;
            let mut sum_gc = 0.0f64;
            let mut sum_c = 0.0f64;
            for b in 0..batch {
                let base = (b * channels + c) * len;
                let (rg, rgc, rc) =
                    super::ops::bn_row_sums(&g[base..base + len], &x[base..base + len], mu);
                sum_g += rg;
                sum_gc += rgc;
                sum_c += rc;
            }
            dbeta[c] = E::from_f64(sum_g);
            dgamma[c] = E::from_f64(sum_gc * inv);

            if x_node.is_some() {
                // d(x_hat) = g * gamma, then back through the batch
                // statistics; the gradient buffer is rewritten in place.
                let gm = gamma[c].to_f64();
                let dvar = gm * sum_gc * -0.5 * inv * inv * inv;
                let dmean = -inv * gm * sum_g + dvar * (-2.0 / n) * sum_c;
                let k_g = E::from_f64(gm * inv);
                let k_cent = E::from_f64(dvar * 2.0 / n);
                let k_const = E::from_f64(dmean / n);
                let mu_e = mean[c];
                for b in 0..batch {
                    let base = (b * channels + c) * len;
                    for t in 0..len {
                        let cent = x[base + t] - mu_e;
                        g[base + t] = g[base + t] * k_g + cent * k_cent + k_const;
                    }
                }
            }
        }

        if let Some(gn) = gamma_node {
            accumulate(&mut grads[gn.index()], dgamma);
        }
        if let Some(bn) = beta_node {
            accumulate(&mut grads[bn.index()], dbeta);
        }
        if let Some(xn) = x_node {
            accumulate(&mut grads[xn.index()], g);
        }
    }
}

fn accumulate<E: Element>(slot: &mut Option<Vec<E>>, contribution: Vec<E>) {
    match slot {
        None => *slot = Some(contribution),
        Some(existing) => {
            debug_assert_eq!(existing.len(), contribution.len());
            for (a, b) in existing.iter_mut().zip(contribution) {
                *a += b;
            }
        }
    }
}

/// Gradient buffers produced by [`Tape::backward`], indexed by node.
pub struct Gradients<E: Element> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, node: NodeId) -> Option<&[E]> {
        self.grads.get(node.index()).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, node: NodeId) -> Option<Vec<E>> {
        self.grads.get_mut(node.index()).and_then(|g| g.take())
    }
}
