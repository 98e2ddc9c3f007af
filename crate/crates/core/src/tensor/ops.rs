//! Differentiable operations.
//!
//! Every op validates its preconditions, computes the forward value, and
//! records a tape node when at least one input participates in the
//! gradient graph. Untracked calls (no bound inputs) are pure compute,
//! which is how evaluation-mode forwards avoid recording overhead.

use super::conv::{self, ConvSpec};
use super::tape::{Op, Tape};
use super::{Element, Tensor};
use crate::error::{Error, Result};

fn tracked<E: Element>(t: &Tensor<E>) -> bool {
    t.node().is_some()
}

const LANES: usize = 8;

/// (sum x, sum x^2) with lane-split f64 accumulators; the reduction
/// order is fixed, so results do not depend on call context.
pub(crate) fn sum_sq_f64<E: Element>(xs: &[E]) -> (f64, f64) {
    let body = xs.len() - xs.len() % LANES;
    let mut s1 = [0.0f64; LANES];
    let mut s2 = [0.0f64; LANES];
    for c in xs[..body].chunks_exact(LANES) {
        for l in 0..LANES {
            let v = c[l].to_f64();
            s1[l] += v;
            s2[l] += v * v;
        }
    }
    let (mut t1, mut t2) = (0.0, 0.0);
    for l in 0..LANES {
        t1 += s1[l];
        t2 += s2[l];
    }
    for &v in &xs[body..] {
        let v = v.to_f64();
        t1 += v;
        t2 += v * v;
    }
    (t1, t2)
}

/// (sum g, sum g*(x-mu), sum (x-mu)) over paired rows, lane-split f64.
pub(crate) fn bn_row_sums<E: Element>(g: &[E], x: &[E], mu: f64) -> (f64, f64, f64) {
    debug_assert_eq!(g.len(), x.len());
    let body = g.len() - g.len() % LANES;
    let mut sg = [0.0f64; LANES];
    let mut sgc = [0.0f64; LANES];
    let mut sc = [0.0f64; LANES];
    for (gc, xc) in g[..body]
        .chunks_exact(LANES)
        .zip(x[..body].chunks_exact(LANES))
    {
        for l in 0..LANES {
            let gv = gc[l].to_f64();
            let cent = xc[l].to_f64() - mu;
            sg[l] += gv;
            sgc[l] += gv * cent;
            sc[l] += cent;
        }
    }
    let (mut t1, mut t2, mut t3) = (0.0, 0.0, 0.0);
    for l in 0..LANES {
        t1 += sg[l];
        t2 += sgc[l];
        t3 += sc[l];
    }
    for (gv, xv) in g[body..].iter().zip(&x[body..]) {
        let gv = gv.to_f64();
        let cent = xv.to_f64() - mu;
        t1 += gv;
        t2 += gv * cent;
        t3 += cent;
    }
    (t1, t2, t3)
}

/// Cross-correlation over the temporal axis with symmetric zero padding.
///
/// `input` is `[B, Cin, L]`, `weight` is `[Cout, Cin, K]`, `bias` is
/// `[Cout]`. Output length follows
/// `floor((L + 2*padding - dilation*(K-1) - 1)/stride) + 1`.
pub fn conv1d<E: Element>(
    tape: &mut Tape<E>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    conv1d_padded(tape, input, weight, bias, stride, dilation, padding, padding)
}

/// Cross-correlation with independent left/right padding; left-only
/// padding of `dilation*(K-1)` makes the op causal.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_padded<E: Element>(
    tape: &mut Tape<E>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    dilation: usize,
    pad_left: usize,
    pad_right: usize,
) -> Result<Tensor<E>> {
    let ishape = input.shape();
    let wshape = weight.shape();
    if ishape.len() != 3 {
        return Err(Error::invalid(format!(
            "conv1d input must be [B, Cin, L], got {ishape:?}"
        )));
    }
    if wshape.len() != 3 {
        return Err(Error::invalid(format!(
            "conv1d weight must be [Cout, Cin, K], got {wshape:?}"
        )));
    }
    let (batch, cin, lin) = (ishape[0], ishape[1], ishape[2]);
    let (cout, wcin, kernel) = (wshape[0], wshape[1], wshape[2]);
    if cin != wcin {
        return Err(Error::invalid(format!(
            "conv1d channel mismatch: input has Cin={cin}, weight expects {wcin}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::invalid(format!(
                "conv1d bias must be [Cout={cout}], got {:?}",
                b.shape()
            )));
        }
    }
    let spec = ConvSpec::new(
        batch,
        cin,
        cout,
        lin,
        kernel,
        stride,
        dilation,
        pad_left,
        pad_right,
        bias.is_some(),
    )?;

    let y = conv::forward(
        input.data(),
        weight.data(),
        bias.map(|b| b.data()),
        &spec,
        tape.threads(),
    );
    let out_len = spec.out_len;
    let mut out = Tensor::from_vec(vec![batch, cout, out_len], y)?;

    let bias_node = bias.and_then(|b| b.node());
    if tracked(input) || tracked(weight) || bias_node.is_some() {
        let node = tape.push(
            Op::Conv1d {
                x: input.data_arc(),
                w: weight.data_arc(),
                spec,
                x_node: input.node(),
                w_node: weight.node(),
                bias_node,
            },
            out.numel(),
        );
        out.set_node(Some(node));
    }
    Ok(out)
}

/// Affine map: `[B, N] x [M, N]^T + [M] -> [B, M]`.
pub fn dense<E: Element>(
    tape: &mut Tape<E>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    let ishape = input.shape();
    let wshape = weight.shape();
    if ishape.len() != 2 || wshape.len() != 2 {
        return Err(Error::invalid(format!(
            "dense expects input [B, N] and weight [M, N], got {ishape:?} and {wshape:?}"
        )));
    }
    let (batch, n_in) = (ishape[0], ishape[1]);
    let (n_out, wn) = (wshape[0], wshape[1]);
    if n_in != wn {
        return Err(Error::invalid(format!(
            "dense dimension mismatch: input N={n_in}, weight N={wn}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [n_out] {
            return Err(Error::invalid(format!(
                "dense bias must be [M={n_out}], got {:?}",
                b.shape()
            )));
        }
    }

    let x = input.data();
    let w = weight.data();
    let mut y = vec![E::ZERO; batch * n_out];
    for b in 0..batch {
        let xrow = &x[b * n_in..(b + 1) * n_in];
        let yrow = &mut y[b * n_out..(b + 1) * n_out];
        for m in 0..n_out {
            let wrow = &w[m * n_in..(m + 1) * n_in];
            let mut acc = bias.map_or(E::ZERO, |bv| bv.data()[m]);
            for n in 0..n_in {
                acc += xrow[n] * wrow[n];
            }
            yrow[m] = acc;
        }
    }
    let mut out = Tensor::from_vec(vec![batch, n_out], y)?;

    let bias_node = bias.and_then(|b| b.node());
    if tracked(input) || tracked(weight) || bias_node.is_some() {
        let node = tape.push(
            Op::Dense {
                x: input.data_arc(),
                w: weight.data_arc(),
                batch,
                n_in,
                n_out,
                x_node: input.node(),
                w_node: weight.node(),
                bias_node,
            },
            out.numel(),
        );
        out.set_node(Some(node));
    }
    Ok(out)
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
///
/// The owned form rewrites the buffer in place when nothing else holds
/// it, which is the common case for freshly produced activations.
pub fn relu_owned<E: Element>(tape: &mut Tape<E>, mut input: Tensor<E>) -> Tensor<E> {
    if tape.capture_kinks() {
        tape.push_kink_signs(input.data().iter().map(|&v| v > E::ZERO));
    }
    let x_node = input.node();
    let mut out = match input.try_unique_mut() {
        Some(buf) => {
            for v in buf.iter_mut() {
                if !(*v > E::ZERO) {
                    *v = E::ZERO;
                }
            }
            input.set_node(None);
            input
        }
        None => {
            let y: Vec<E> = input
                .data()
                .iter()
                .map(|&v| if v > E::ZERO { v } else { E::ZERO })
                .collect();
            Tensor::from_vec(input.shape().to_vec(), y).expect("same shape")
        }
    };
    if let Some(x_node) = x_node {
        let node = tape.push(
            Op::Relu {
                out: out.data_arc(),
                x_node,
            },
            out.numel(),
        );
        out.set_node(Some(node));
    }
    out
}

pub fn relu<E: Element>(tape: &mut Tape<E>, input: &Tensor<E>) -> Tensor<E> {
    relu_owned(tape, input.clone())
}

/// Elementwise sum of two same-shape tensors; both branches receive the
/// upstream gradient unchanged. The owned form accumulates into `a`'s
/// buffer when nothing else holds it.
pub fn residual_add_owned<E: Element>(
    tape: &mut Tape<E>,
    mut a: Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "residual_add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let a_node = a.node();
    let b_node = b.node();
    let mut out = match a.try_unique_mut() {
        Some(buf) => {
            for (av, &bv) in buf.iter_mut().zip(b.data().iter()) {
                *av += bv;
            }
            a.set_node(None);
            a
        }
        None => {
            let y: Vec<E> = a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(&av, &bv)| av + bv)
                .collect();
            Tensor::from_vec(a.shape().to_vec(), y)?
        }
    };
    if a_node.is_some() || b_node.is_some() {
        let node = tape.push(Op::ResidualAdd { a_node, b_node }, out.numel());
        out.set_node(Some(node));
    }
    Ok(out)
}

pub fn residual_add<E: Element>(
    tape: &mut Tape<E>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>> {
    residual_add_owned(tape, a.clone(), b)
}

/// Mean over the temporal axis: `[B, C, L] -> [B, C]`.
pub fn global_avg_pool<E: Element>(tape: &mut Tape<E>, input: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "global_avg_pool expects [B, C, L], got {shape:?}"
        )));
    }
    let (batch, channels, len) = (shape[0], shape[1], shape[2]);
    let inv_len = E::ONE / E::from_f64(len as f64);
    let x = input.data();
    let mut y = vec![E::ZERO; batch * channels];
    for (bc, out) in y.iter_mut().enumerate() {
        let mut acc = E::ZERO;
        for t in 0..len {
            acc += x[bc * len + t];
        }
        *out = acc * inv_len;
    }
    let mut out = Tensor::from_vec(vec![batch, channels], y)?;
    if let Some(x_node) = input.node() {
        let node = tape.push(
            Op::GlobalAvgPool {
                batch,
                channels,
                len,
                x_node,
            },
            out.numel(),
        );
        out.set_node(Some(node));
    }
    Ok(out)
}

/// Mean absolute error between two equal-length vectors, as a scalar.
pub fn l1_loss<E: Element>(
    tape: &mut Tape<E>,
    pred: &Tensor<E>,
    target: &Tensor<E>,
) -> Result<Tensor<E>> {
    if pred.numel() != target.numel() || pred.numel() == 0 {
        return Err(Error::invalid(format!(
            "l1_loss needs equal nonempty lengths, got {} and {}",
            pred.numel(),
            target.numel()
        )));
    }
    if tape.capture_kinks() {
        tape.push_kink_signs(
            pred.data()
                .iter()
                .zip(target.data().iter())
                .map(|(&p, &t)| p > t),
        );
    }
    let n = pred.numel();
    let mut acc = E::ZERO;
    for (&p, &t) in pred.data().iter().zip(target.data().iter()) {
        acc += (p - t).abs();
    }
    let mut out = Tensor::scalar(acc / E::from_f64(n as f64));
    if tracked(pred) || tracked(target) {
        let node = tape.push(
            Op::L1Loss {
                pred: pred.data_arc(),
                target: target.data_arc(),
                pred_node: pred.node(),
                target_node: target.node(),
            },
            1,
        );
        out.set_node(Some(node));
    }
    Ok(out)
}

/// Output of [`batch_norm`]: the normalized tensor plus the batch
/// statistics the caller folds into its running averages.
pub struct BatchNormOut<E: Element> {
    pub output: Tensor<E>,
    pub batch_mean: Vec<E>,
    pub batch_var: Vec<E>,
}

/// Per-channel normalization of `[B, C, L]` by batch statistics, with a
/// learnable scale/shift. Training-mode only; evaluation uses
/// [`batch_norm_eval`] with running statistics.
pub fn batch_norm<E: Element>(
    tape: &mut Tape<E>,
    input: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: E,
) -> Result<BatchNormOut<E>> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "batch_norm expects [B, C, L], got {shape:?}"
        )));
    }
    let (batch, channels, len) = (shape[0], shape[1], shape[2]);
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(Error::invalid("batch_norm scale/shift must be [C]"));
    }

    let x = input.data();
    let n = (batch * len) as f64;
    let mut mean = vec![E::ZERO; channels];
    let mut var = vec![E::ZERO; channels];
    for c in 0..channels {
        // Single pass per row, f64 lane accumulators.
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for b in 0..batch {
            let base = (b * channels + c) * len;
            let (r1, r2) = sum_sq_f64(&x[base..base + len]);
            s1 += r1;
            s2 += r2;
        }
        let m = s1 / n;
        mean[c] = E::from_f64(m);
        var[c] = E::from_f64((s2 / n - m * m).max(0.0));
    }

    let g = gamma.data();
    let bt = beta.data();
    let mut y = vec![E::ZERO; x.len()];
    for c in 0..channels {
        let inv = E::ONE / (var[c] + eps).sqrt();
        let scale = g[c] * inv;
        let shift = bt[c] - mean[c] * scale;
        for b in 0..batch {
            let base = (b * channels + c) * len;
            for t in 0..len {
                y[base + t] = x[base + t] * scale + shift;
            }
        }
    }
    let mut out = Tensor::from_vec(shape.to_vec(), y)?;

    if tracked(input) || tracked(gamma) || tracked(beta) {
        let node = tape.push(
            Op::BatchNorm {
                x: input.data_arc(),
                gamma: gamma.data_arc(),
                mean: mean.clone(),
                var: var.clone(),
                eps,
                batch,
                channels,
                len,
                x_node: input.node(),
                gamma_node: gamma.node(),
                beta_node: beta.node(),
            },
            out.numel(),
        );
        out.set_node(Some(node));
    }
    Ok(BatchNormOut {
        output: out,
        batch_mean: mean,
        batch_var: var,
    })
}

/// Inference-mode normalization with fixed (running) statistics; pure
/// compute, never recorded.
pub fn batch_norm_eval<E: Element>(
    input: &Tensor<E>,
    gamma: &[E],
    beta: &[E],
    mean: &[E],
    var: &[E],
    eps: E,
) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "batch_norm_eval expects [B, C, L], got {shape:?}"
        )));
    }
    let (batch, channels, len) = (shape[0], shape[1], shape[2]);
    let x = input.data();
    let mut y = vec![E::ZERO; x.len()];
    for c in 0..channels {
        let inv = E::ONE / (var[c] + eps).sqrt();
        for b in 0..batch {
            let base = (b * channels + c) * len;
            for t in 0..len {
                y[base + t] = gamma[c] * (x[base + t] - mean[c]) * inv + beta[c];
            }
        }
    }
    Tensor::from_vec(shape.to_vec(), y)
}

/// Standardizes each output filter of a conv weight to zero mean and
/// unit variance, as a differentiable op.
pub fn weight_standardize<E: Element>(
    tape: &mut Tape<E>,
    weight: &Tensor<E>,
    eps: E,
) -> Result<Tensor<E>> {
    let shape = weight.shape();
    if shape.is_empty() {
        return Err(Error::invalid("weight_standardize expects rank >= 1"));
    }
    let filters = shape[0];
    let filter_len = weight.numel() / filters;
    if filter_len < 2 {
        return Err(Error::invalid(
            "weight_standardize needs at least 2 elements per filter",
        ));
    }
    let w = weight.data();
    let inv_n = E::ONE / E::from_f64(filter_len as f64);
    let mut mean = vec![E::ZERO; filters];
    let mut var = vec![E::ZERO; filters];
    let mut y = vec![E::ZERO; w.len()];
    for f in 0..filters {
        let row = &w[f * filter_len..(f + 1) * filter_len];
        let mut acc = E::ZERO;
        for &v in row {
            acc += v;
        }
        mean[f] = acc * inv_n;
        let mut acc2 = E::ZERO;
        for &v in row {
            let d = v - mean[f];
            acc2 += d * d;
        }
        var[f] = acc2 * inv_n;
        let inv = E::ONE / (var[f] + eps).sqrt();
        let dst = &mut y[f * filter_len..(f + 1) * filter_len];
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = (v - mean[f]) * inv;
        }
    }
    let mut out = Tensor::from_vec(shape.to_vec(), y)?;
    if let Some(w_node) = weight.node() {
        let node = tape.push(
            Op::WeightStandardize {
                w: weight.data_arc(),
                mean,
                var,
                eps,
                filters,
                filter_len,
                w_node,
            },
            out.numel(),
        );
        out.set_node(Some(node));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv1d_moving_pairwise_sum() {
        let mut tape = Tape::new();
        let x = t(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t(vec![1, 1, 2], vec![1.0, 1.0]);
        let y = conv1d(&mut tape, &x, &w, None, 1, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3]);
        assert_eq!(y.data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn conv1d_dilated_pairwise_sum() {
        let mut tape = Tape::new();
        let x = t(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t(vec![1, 1, 2], vec![1.0, 1.0]);
        let y = conv1d(&mut tape, &x, &w, None, 1, 2, 0).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut tape = Tape::new();
        let x = t(vec![1, 1, 5], vec![5.0, -1.0, 2.0, 0.5, 9.0]);
        let w = t(vec![1, 1, 1], vec![1.0]);
        let b = t(vec![1], vec![0.0]);
        let y = conv1d(&mut tape, &x, &w, Some(&b), 1, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv1d_channel_mismatch_is_invalid() {
        let mut tape = Tape::<f64>::new();
        let x = t(vec![1, 2, 4], vec![0.0; 8]);
        let w = t(vec![1, 3, 2], vec![0.0; 6]);
        assert!(matches!(
            conv1d(&mut tape, &x, &w, None, 1, 1, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dense_identity_and_sum() {
        let mut tape = Tape::new();
        let x = t(vec![1, 2], vec![1.0, 0.0]);
        let w = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = t(vec![2], vec![0.0, 0.0]);
        let y = dense(&mut tape, &x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);

        let x = t(vec![1, 2], vec![2.0, 3.0]);
        let w = t(vec![1, 2], vec![1.0, 1.0]);
        let b = t(vec![1], vec![1.0]);
        let y = dense(&mut tape, &x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let x = t(vec![3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&mut tape, &x).data(), &[0.0, 0.0, 2.0]);
        let x = t(vec![3], vec![-5.0, -0.1, -2.0]);
        assert_eq!(relu(&mut tape, &x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn residual_add_and_mismatch() {
        let mut tape = Tape::new();
        let a = t(vec![2], vec![1.0, 2.0]);
        let b = t(vec![2], vec![3.0, 4.0]);
        assert_eq!(residual_add(&mut tape, &a, &b).unwrap().data(), &[4.0, 6.0]);
        let zero = t(vec![2], vec![0.0, 0.0]);
        assert_eq!(
            residual_add(&mut tape, &a, &zero).unwrap().data(),
            a.data()
        );
        let c = t(vec![3], vec![0.0; 3]);
        assert!(residual_add(&mut tape, &a, &c).is_err());
    }

    #[test]
    fn gap_means_over_time() {
        let mut tape = Tape::new();
        let x = t(vec![1, 1, 2], vec![1.0, 3.0]);
        assert_eq!(global_avg_pool(&mut tape, &x).unwrap().data(), &[2.0]);
        let c = t(vec![1, 2, 4], vec![7.5; 8]);
        assert_eq!(
            global_avg_pool(&mut tape, &c).unwrap().data(),
            &[7.5, 7.5]
        );
    }

    #[test]
    fn l1_loss_examples() {
        let mut tape = Tape::new();
        let p = t(vec![1], vec![5.0]);
        let y = t(vec![1], vec![3.0]);
        assert_eq!(l1_loss(&mut tape, &p, &y).unwrap().item(), 2.0);

        let p = t(vec![2], vec![1.0, 3.0]);
        assert_eq!(l1_loss(&mut tape, &p, &p).unwrap().item(), 0.0);

        let y2 = t(vec![2], vec![2.0, 1.0]);
        assert_eq!(l1_loss(&mut tape, &p, &y2).unwrap().item(), 1.5);
    }

    #[test]
    fn backward_square_and_fanout() {
        // y = x * x via dense(weight = x as a 1x1 map): use the primitive
        // ops instead: residual_add(x, x) has grad 2.
        let mut tape = Tape::new();
        let mut a = t(vec![1], vec![1.0]);
        a.set_requires_grad(true);
        let node = tape.leaf(&mut a);
        let s = residual_add(&mut tape, &a, &a).unwrap();
        let target = t(vec![1], vec![0.0]);
        let loss = l1_loss(&mut tape, &s, &target).unwrap();
        let mut grads = tape.backward(&loss).unwrap();
        // d|2a|/da = 2 at a=1
        assert_eq!(grads.take(node).unwrap(), vec![2.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let mut a = t(vec![2], vec![1.0, 2.0]);
        a.set_requires_grad(true);
        tape.leaf(&mut a);
        let s = residual_add(&mut tape, &a, &a).unwrap();
        assert!(matches!(
            tape.backward(&s),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn relu_gradient_convention() {
        let mut tape = Tape::new();
        let mut x = t(vec![3], vec![2.0, -1.0, 0.0]);
        x.set_requires_grad(true);
        let node = tape.leaf(&mut x);
        let y = relu(&mut tape, &x);
        let target = t(vec![3], vec![-1.0, -1.0, -1.0]);
        let loss = l1_loss(&mut tape, &y, &target).unwrap();
        let mut grads = tape.backward(&loss).unwrap();
        let g = grads.take(node).unwrap();
        // loss = mean|relu(x) - (-1)|, every residual positive, so
        // d/dx = relu'(x) / 3: 1/3 at x=2, 0 at x=-1 and x=0.
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn residual_backward_propagates_equal_buffers() {
        let mut tape = Tape::new();
        let mut a = t(vec![2], vec![1.0, -2.0]);
        let mut b = t(vec![2], vec![0.5, 0.25]);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        let an = tape.leaf(&mut a);
        let bn = tape.leaf(&mut b);
        let s = residual_add(&mut tape, &a, &b).unwrap();
        let target = t(vec![2], vec![0.0, 0.0]);
        let loss = l1_loss(&mut tape, &s, &target).unwrap();
        let mut grads = tape.backward(&loss).unwrap();
        let ga = grads.take(an).unwrap();
        let gb = grads.take(bn).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let run = || -> (Vec<f32>, Vec<f32>) {
            let mut tape = Tape::<f32>::new();
            let x = Tensor::from_vec(
                vec![1, 2, 8],
                (0..16).map(|i| (i as f32 * 0.37).sin()).collect(),
            )
            .unwrap();
            let mut w = Tensor::from_vec(
                vec![3, 2, 3],
                (0..18).map(|i| (i as f32 * 0.11).cos()).collect(),
            )
            .unwrap();
            w.set_requires_grad(true);
            let wn = tape.leaf(&mut w);
            let y = conv1d(&mut tape, &x, &w, None, 1, 1, 1).unwrap();
            let pooled = global_avg_pool(&mut tape, &y).unwrap();
            let target = Tensor::from_vec(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
            let loss = l1_loss(&mut tape, &pooled, &target).unwrap();
            let mut grads = tape.backward(&loss).unwrap();
            (y.data().to_vec(), grads.take(wn).unwrap())
        };
        let (y1, g1) = run();
        let (y2, g2) = run();
        assert_eq!(y1, y2);
        assert_eq!(g1, g2);
    }
}
