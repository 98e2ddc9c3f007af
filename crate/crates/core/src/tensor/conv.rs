//! Dilated/strided 1-D cross-correlation, forward and backward.
//!
//! Each kernel tap is one GEMM over strided views of the original
//! buffers. Zero padding is virtual: a tap that would read the pad
//! region contributes nothing there, so its GEMM simply runs over the
//! sub-range of output positions whose reads are in bounds. No im2col
//! or pad buffer is ever materialized.
//!
//! Work splits across threads by sample. Every output element is
//! written by exactly one thread and the weight-gradient reduction runs
//! over samples in fixed order, so results are bitwise-identical for
//! any thread count.

use super::Element;
use crate::error::{Error, Result};

/// Geometry of one conv1d application.
#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub out_len: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        in_len: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
        has_bias: bool,
    ) -> Result<Self> {
        if kernel < 1 || stride < 1 || dilation < 1 {
            return Err(Error::invalid(format!(
                "conv1d requires kernel/stride/dilation >= 1, got K={kernel} stride={stride} dilation={dilation}"
            )));
        }
        let span = dilation * (kernel - 1) + 1;
        let padded = in_len + pad_left + pad_right;
        if padded < span {
            return Err(Error::invalid(format!(
                "conv1d output is empty: padded length {padded} < kernel span {span}"
            )));
        }
        let out_len = (padded - span) / stride + 1;
        if out_len < 1 {
            return Err(Error::invalid("conv1d output length < 1"));
        }
        Ok(ConvSpec {
            batch,
            in_channels,
            out_channels,
            in_len,
            kernel,
            stride,
            dilation,
            pad_left,
            pad_right,
            out_len,
            has_bias,
        })
    }

    /// Output positions whose tap-k read lands inside the real input:
    /// `(first_t, count, input_offset_of_first_read)`.
    fn tap_range(&self, k: usize) -> Option<(usize, usize, usize)> {
        let kd = k * self.dilation;
        let t0 = if kd >= self.pad_left {
            0
        } else {
            (self.pad_left - kd).div_ceil(self.stride)
        };
        // Largest t with t*stride + kd - pad_left <= in_len - 1.
        let hi = (self.in_len - 1 + self.pad_left).checked_sub(kd)?;
        let t_end = (hi / self.stride + 1).min(self.out_len);
        if t_end <= t0 {
            return None;
        }
        let x_off = t0 * self.stride + kd - self.pad_left;
        Some((t0, t_end - t0, x_off))
    }
}

/// Splits `0..n` into at most `threads` contiguous ranges.
fn ranges(n: usize, threads: usize) -> Vec<std::ops::Range<usize>> {
    let t = threads.clamp(1, n.max(1));
    let base = n / t;
    let rem = n % t;
    let mut out = Vec::with_capacity(t);
    let mut start = 0;
    for i in 0..t {
        let len = base + usize::from(i < rem);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Runs `job` over per-sample chunks of `data` (chunk size `stride`),
/// splitting samples across threads.
fn for_samples<E: Element>(
    data: &mut [E],
    stride: usize,
    batch: usize,
    threads: usize,
    job: impl Fn(usize, &mut [E]) + Sync,
) {
    debug_assert_eq!(data.len(), batch * stride);
    let parts = ranges(batch, threads);
    if parts.len() <= 1 {
        for (b, chunk) in data.chunks_mut(stride).enumerate() {
            job(b, chunk);
        }
        return;
    }
    std::thread::scope(|s| {
        let mut rest = data;
        for bs in parts {
            let (head, tail) = rest.split_at_mut(bs.len() * stride);
            rest = tail;
            let job = &job;
            s.spawn(move || {
                for (chunk, b) in head.chunks_mut(stride).zip(bs) {
                    job(b, chunk);
                }
            });
        }
    });
}

/// y[b,co,t] = bias[co] + sum_{ci,k} w[co,ci,k] * xpad[b,ci,t*stride + k*dilation]
pub(crate) fn forward<E: Element>(
    x: &[E],
    w: &[E],
    bias: Option<&[E]>,
    spec: &ConvSpec,
    threads: usize,
) -> Vec<E> {
    let x_stride = spec.in_channels * spec.in_len;
    let y_stride = spec.out_channels * spec.out_len;
    let mut y = vec![E::ZERO; spec.batch * y_stride];

    for_samples(&mut y, y_stride, spec.batch, threads, |b, yb| {
        let xb = &x[b * x_stride..(b + 1) * x_stride];
        if let Some(bias) = bias {
            for (co, row) in yb.chunks_mut(spec.out_len).enumerate() {
                row.fill(bias[co]);
            }
        }
        for k in 0..spec.kernel {
            let Some((t0, n, x_off)) = spec.tap_range(k) else {
                continue;
            };
            // A = W[:, :, k]; B = strided in-bounds view of the input.
            unsafe {
                E::gemm(
                    spec.out_channels,
                    spec.in_channels,
                    n,
                    E::ONE,
                    w.as_ptr().add(k),
                    (spec.in_channels * spec.kernel) as isize,
                    spec.kernel as isize,
                    xb.as_ptr().add(x_off),
                    spec.in_len as isize,
                    spec.stride as isize,
                    E::ONE,
                    yb.as_mut_ptr().add(t0),
                    spec.out_len as isize,
                    1,
                );
            }
        }
    });
    y
}

/// (d_input, d_weight, d_bias), each present when requested.
pub(crate) type ConvGrads<E> = (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>);

/// Gradients w.r.t. input, weight, and bias in one pass over samples.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<E: Element>(
    dy: &[E],
    x: &[E],
    w: &[E],
    spec: &ConvSpec,
    threads: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<E> {
    let x_stride = spec.in_channels * spec.in_len;
    let y_stride = spec.out_channels * spec.out_len;
    let wlen = spec.out_channels * spec.in_channels * spec.kernel;

    let mut dx = need_dx.then(|| vec![E::ZERO; spec.batch * x_stride]);
    // Per-sample weight-gradient partials, reduced serially afterwards
    // so the result is independent of the thread count.
    let mut dw_partials = need_dw.then(|| vec![E::ZERO; spec.batch * wlen]);

    {
        // Both gradients walk the same per-sample tap ranges; fold them
        // into one threaded sweep keyed by whichever buffer exists.
        let run_dx = |b: usize, dxb: &mut [E]| {
            let dyb = &dy[b * y_stride..(b + 1) * y_stride];
            for k in 0..spec.kernel {
                let Some((t0, n, x_off)) = spec.tap_range(k) else {
                    continue;
                };
                // dx[ci, t*s + kd - padL] += sum_co w[co,ci,k] * dy[co,t]
                unsafe {
                    E::gemm(
                        spec.in_channels,
                        spec.out_channels,
                        n,
                        E::ONE,
                        w.as_ptr().add(k),
                        spec.kernel as isize,
                        (spec.in_channels * spec.kernel) as isize,
                        dyb.as_ptr().add(t0),
                        spec.out_len as isize,
                        1,
                        E::ONE,
                        dxb.as_mut_ptr().add(x_off),
                        spec.in_len as isize,
                        spec.stride as isize,
                    );
                }
            }
        };
        let run_dw = |b: usize, dwb: &mut [E]| {
            let xb = &x[b * x_stride..(b + 1) * x_stride];
            let dyb = &dy[b * y_stride..(b + 1) * y_stride];
            for k in 0..spec.kernel {
                let Some((t0, n, x_off)) = spec.tap_range(k) else {
                    continue;
                };
                // dw[co,ci,k] += sum_t dy[co,t] * x[ci, t*s + kd - padL]
                dw_tap(dyb, xb, dwb, spec, k, t0, n, x_off);
            }
        };
        match (&mut dx, &mut dw_partials) {
            (Some(dx), Some(dwp)) => {
                // Two sweeps; each is per-sample independent.
                for_samples(dx, x_stride, spec.batch, threads, run_dx);
                for_samples(dwp, wlen, spec.batch, threads, run_dw);
            }
            (Some(dx), None) => for_samples(dx, x_stride, spec.batch, threads, run_dx),
            (None, Some(dwp)) => for_samples(dwp, wlen, spec.batch, threads, run_dw),
            (None, None) => {}
        }
    }

    let dw = dw_partials.map(|partials| {
        let mut dw = vec![E::ZERO; wlen];
        for b in 0..spec.batch {
            let p = &partials[b * wlen..(b + 1) * wlen];
            for (acc, v) in dw.iter_mut().zip(p) {
                *acc += *v;
            }
        }
        dw
    });

    let db = need_db.then(|| {
        let mut db = vec![E::ZERO; spec.out_channels];
        for b in 0..spec.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                let base = (b * spec.out_channels + co) * spec.out_len;
                for t in 0..spec.out_len {
                    *acc += dy[base + t];
                }
            }
        }
        db
    });

    (dx, dw, db)
}

/// Weight-gradient tap: `dw[co,ci,k] += sum_t dy[co, t0+t] * x[ci, x_off + t*stride]`.
///
/// This shape (two long vectors reduced per output scalar) defeats the
/// GEMM's packing, so it gets a register-blocked kernel: lane-split
/// partial sums keep the inner loop vectorizable without reassociating
/// a scalar accumulator, and the lane reduction order is fixed.
#[allow(clippy::too_many_arguments)]
fn dw_tap<E: Element>(
    dy: &[E],
    x: &[E],
    dw: &mut [E],
    spec: &ConvSpec,
    k: usize,
    t0: usize,
    n: usize,
    x_off: usize,
) {
    const LANES: usize = 8;
    let (cout, cin) = (spec.out_channels, spec.in_channels);
    let (lout, lin) = (spec.out_len, spec.in_len);
    let ktot = spec.kernel;

    if spec.stride == 1 {
        let body = n - n % LANES;
        for co in 0..cout {
            let dyrow = &dy[co * lout + t0..co * lout + t0 + n];
            let mut ci0 = 0;
            while ci0 < cin {
                if cin - ci0 >= 4 {
                    // Four input rows against one gradient row, eight
                    // partial-sum lanes each.
                    let row = |j: usize| &x[(ci0 + j) * lin + x_off..(ci0 + j) * lin + x_off + n];
                    let (x0, x1, x2, x3) = (row(0), row(1), row(2), row(3));
                    let mut a0 = [E::ZERO; LANES];
                    let mut a1 = [E::ZERO; LANES];
                    let mut a2 = [E::ZERO; LANES];
                    let mut a3 = [E::ZERO; LANES];
                    let d_it = dyrow[..body].chunks_exact(LANES);
                    let x0_it = x0[..body].chunks_exact(LANES);
                    let x1_it = x1[..body].chunks_exact(LANES);
                    let x2_it = x2[..body].chunks_exact(LANES);
                    let x3_it = x3[..body].chunks_exact(LANES);
                    for ((((d, c0), c1), c2), c3) in
                        d_it.zip(x0_it).zip(x1_it).zip(x2_it).zip(x3_it)
                    {
                        let d: &[E; LANES] = d.try_into().expect("exact chunk");
                        let c0: &[E; LANES] = c0.try_into().expect("exact chunk");
                        let c1: &[E; LANES] = c1.try_into().expect("exact chunk");
                        let c2: &[E; LANES] = c2.try_into().expect("exact chunk");
                        let c3: &[E; LANES] = c3.try_into().expect("exact chunk");
                        for l in 0..LANES {
                            a0[l] += d[l] * c0[l];
                            a1[l] += d[l] * c1[l];
                            a2[l] += d[l] * c2[l];
                            a3[l] += d[l] * c3[l];
                        }
                    }
                    for t in body..n {
                        a0[0] += dyrow[t] * x0[t];
                        a1[0] += dyrow[t] * x1[t];
                        a2[0] += dyrow[t] * x2[t];
                        a3[0] += dyrow[t] * x3[t];
                    }
                    for (j, acc) in [a0, a1, a2, a3].iter().enumerate() {
                        let mut total = E::ZERO;
                        for &lane in acc {
                            total += lane;
                        }
                        dw[(co * cin + ci0 + j) * ktot + k] += total;
                    }
                    ci0 += 4;
                } else {
                    let xrow = &x[ci0 * lin + x_off..ci0 * lin + x_off + n];
                    let mut a = [E::ZERO; LANES];
                    for (d, c) in dyrow[..body]
                        .chunks_exact(LANES)
                        .zip(xrow[..body].chunks_exact(LANES))
                    {
                        for l in 0..LANES {
                            a[l] += d[l] * c[l];
                        }
                    }
                    for t in body..n {
                        a[0] += dyrow[t] * xrow[t];
                    }
                    let mut total = E::ZERO;
                    for &lane in &a {
                        total += lane;
                    }
                    dw[(co * cin + ci0) * ktot + k] += total;
                    ci0 += 1;
                }
            }
        }
    } else {
        for co in 0..cout {
            let dyrow = &dy[co * lout + t0..co * lout + t0 + n];
            for ci in 0..cin {
                let xrow = &x[ci * lin..(ci + 1) * lin];
                let mut acc = E::ZERO;
                for (t, &g) in dyrow.iter().enumerate() {
                    acc += g * xrow[x_off + t * spec.stride];
                }
                dw[(co * cin + ci) * ktot + k] += acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference implementation with plain loops.
    fn conv_naive(x: &[f64], w: &[f64], bias: Option<&[f64]>, spec: &ConvSpec) -> Vec<f64> {
        let mut y = vec![0.0; spec.batch * spec.out_channels * spec.out_len];
        for b in 0..spec.batch {
            for co in 0..spec.out_channels {
                for t in 0..spec.out_len {
                    let mut acc = bias.map_or(0.0, |bv| bv[co]);
                    for ci in 0..spec.in_channels {
                        for k in 0..spec.kernel {
                            let u = t * spec.stride + k * spec.dilation;
                            let j = u as isize - spec.pad_left as isize;
                            if j >= 0 && (j as usize) < spec.in_len {
                                acc += w[(co * spec.in_channels + ci) * spec.kernel + k]
                                    * x[(b * spec.in_channels + ci) * spec.in_len + j as usize];
                            }
                        }
                    }
                    y[(b * spec.out_channels + co) * spec.out_len + t] = acc;
                }
            }
        }
        y
    }

    fn backward_naive(
        dy: &[f64],
        x: &[f64],
        w: &[f64],
        spec: &ConvSpec,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut dx = vec![0.0; spec.batch * spec.in_channels * spec.in_len];
        let mut dw = vec![0.0; spec.out_channels * spec.in_channels * spec.kernel];
        let mut db = vec![0.0; spec.out_channels];
        for b in 0..spec.batch {
            for co in 0..spec.out_channels {
                for t in 0..spec.out_len {
                    let g = dy[(b * spec.out_channels + co) * spec.out_len + t];
                    db[co] += g;
                    for ci in 0..spec.in_channels {
                        for k in 0..spec.kernel {
                            let u = t * spec.stride + k * spec.dilation;
                            let j = u as isize - spec.pad_left as isize;
                            if j >= 0 && (j as usize) < spec.in_len {
                                let xi = (b * spec.in_channels + ci) * spec.in_len + j as usize;
                                let wi = (co * spec.in_channels + ci) * spec.kernel + k;
                                dw[wi] += g * x[xi];
                                dx[xi] += g * w[wi];
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    type Case = (usize, usize, usize, usize, usize, usize, usize, usize, usize);
    const CASES: [Case; 8] = [
        (2, 3, 5, 40, 3, 1, 1, 1, 1),
        (1, 4, 2, 17, 7, 2, 1, 3, 3),
        (3, 2, 4, 23, 3, 1, 4, 8, 0),
        (2, 5, 3, 11, 1, 1, 1, 0, 0),
        (1, 1, 1, 9, 3, 2, 2, 2, 2),
        (2, 3, 4, 50, 3, 1, 16, 32, 0),
        (1, 2, 2, 16, 7, 1, 1, 12, 12),
        (2, 4, 4, 30, 3, 2, 1, 1, 1),
    ];

    #[test]
    fn gemm_forward_matches_naive_across_geometries() {
        for (i, &(b, cin, cout, l, k, s, d, pl, pr)) in CASES.iter().enumerate() {
            let spec = ConvSpec::new(b, cin, cout, l, k, s, d, pl, pr, true).unwrap();
            let x = pseudo_random(b * cin * l, 7 + i as u64);
            let w = pseudo_random(cout * cin * k, 101 + i as u64);
            let bias = pseudo_random(cout, 303 + i as u64);
            let got = forward(&x, &w, Some(&bias), &spec, 1);
            let want = conv_naive(&x, &w, Some(&bias), &spec);
            for (g, wv) in got.iter().zip(&want) {
                assert!((g - wv).abs() < 1e-12, "case {i}: {g} vs {wv}");
            }
        }
    }

    #[test]
    fn gemm_backward_matches_naive_across_geometries() {
        for (i, &(b, cin, cout, l, k, s, d, pl, pr)) in CASES.iter().enumerate() {
            let spec = ConvSpec::new(b, cin, cout, l, k, s, d, pl, pr, true).unwrap();
            let x = pseudo_random(b * cin * l, 19 + i as u64);
            let w = pseudo_random(cout * cin * k, 23 + i as u64);
            let dy = pseudo_random(b * cout * spec.out_len, 29 + i as u64);
            let (dx, dw, db) = backward(&dy, &x, &w, &spec, 1, true, true, true);
            let (ndx, ndw, ndb) = backward_naive(&dy, &x, &w, &spec);
            for (g, wv) in dx.unwrap().iter().zip(&ndx) {
                assert!((g - wv).abs() < 1e-12, "case {i} dx: {g} vs {wv}");
            }
            for (g, wv) in dw.unwrap().iter().zip(&ndw) {
                assert!((g - wv).abs() < 1e-12, "case {i} dw: {g} vs {wv}");
            }
            for (g, wv) in db.unwrap().iter().zip(&ndb) {
                assert!((g - wv).abs() < 1e-12, "case {i} db: {g} vs {wv}");
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let spec = ConvSpec::new(5, 3, 4, 50, 3, 1, 2, 4, 0, true).unwrap();
        let x: Vec<f32> = pseudo_random(5 * 3 * 50, 1).iter().map(|&v| v as f32).collect();
        let w: Vec<f32> = pseudo_random(4 * 3 * 3, 2).iter().map(|&v| v as f32).collect();
        let bias: Vec<f32> = pseudo_random(4, 3).iter().map(|&v| v as f32).collect();
        let y1 = forward(&x, &w, Some(&bias), &spec, 1);
        let y4 = forward(&x, &w, Some(&bias), &spec, 4);
        assert_eq!(y1, y4);

        let dy: Vec<f32> = pseudo_random(5 * 4 * spec.out_len, 4)
            .iter()
            .map(|&v| v as f32)
            .collect();
        let g1 = backward(&dy, &x, &w, &spec, 1, true, true, true);
        let g4 = backward(&dy, &x, &w, &spec, 4, true, true, true);
        assert_eq!(g1.0, g4.0);
        assert_eq!(g1.1, g4.1);
        assert_eq!(g1.2, g4.2);
    }

    #[test]
    fn empty_output_rejected() {
        assert!(ConvSpec::new(1, 1, 1, 3, 5, 1, 1, 0, 0, false).is_err());
        assert!(ConvSpec::new(1, 1, 1, 3, 2, 1, 4, 0, 0, false).is_err());
    }
}
