//! 2D convolution (cross-correlation) and its depthwise variant.
//!
//! The dense kernel lowers each batch item to an im2col matrix and runs an
//! axpy-style matmul whose inner loops are contiguous, so the compiler can
//! vectorize them. Batch items are processed in parallel; per-item weight
//! gradients are reduced sequentially in batch order, which keeps the
//! summation order independent of the thread count.

use rayon::prelude::*;

use super::{expect_rank, expect_shape};
use crate::tensor::{Element, Tape, Tensor};
use crate::{Error, Result};

pub(crate) fn conv_out_dim(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Lowers one `[C, H, W]` image to a `[C*k*k, Ho*Wo]` patch matrix.
fn im2col<T: Element>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let n = ho * wo;
    debug_assert_eq!(cols.len(), c * k * k * n);
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst = &mut row[oy * wo..][..wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a `[C*k*k, Ho*Wo]` gradient matrix back onto a `[C, H, W]` image gradient.
fn col2im_add<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    img_grad: &mut [T],
) {
    let n = ho * wo;
    for ci in 0..c {
        let plane = &mut img_grad[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * wo..][..wo];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] = dst[ix as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

/// `out[co] = bias[co] + sum_k w[co][k] * cols[k]`, inner loop contiguous over spatial.
fn matmul_forward<T: Element>(
    w: &[T],
    bias: Option<&[T]>,
    cols: &[T],
    cout: usize,
    kdim: usize,
    n: usize,
    out: &mut [T],
) {
    for co in 0..cout {
        let orow = &mut out[co * n..][..n];
        orow.fill(bias.map_or(T::zero(), |b| b[co]));
        let wrow = &w[co * kdim..][..kdim];
        for (kk, &coef) in wrow.iter().enumerate() {
            if coef == T::zero() {
                continue; // frozen ternary banks are mostly zeros
            }
            let crow = &cols[kk * n..][..n];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o = *o + coef * cv;
            }
        }
    }
}

/// 2D cross-correlation of `input: [B, Cin, H, W]` with `weight: [Cout, Cin, k, k]`.
///
/// `H' = floor((H + 2*padding - k) / stride) + 1`, likewise for `W'`. There
/// is no kernel flip; the nested-loop oracle in the tests pins the
/// convention. Gradient rules are recorded for input, weight, and bias.
pub fn conv2d<T: Element>(
    tape: &Tape<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    expect_rank(input, 4, "conv2d input")?;
    expect_rank(weight, 4, "conv2d weight")?;
    if stride == 0 {
        return Err(Error::arg("conv2d stride must be positive".into()));
    }
    let (b, cin, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let (cout, wcin, kh, kw) = {
        let s = weight.shape();
        (s[0], s[1], s[2], s[3])
    };
    if kh != kw {
        return Err(Error::shape(format!("conv2d expects square kernels, got {kh}x{kw}")));
    }
    let k = kh;
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input has {cin} channels, weight expects {wcin}"
        )));
    }
    if let Some(bt) = bias {
        expect_shape(bt, &[cout], "conv2d bias")?;
    }
    let (ho, wo) = match (conv_out_dim(h, k, stride, padding), conv_out_dim(w, k, stride, padding)) {
        (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
        _ => {
            return Err(Error::shape(format!(
                "conv2d produces an empty output for input {h}x{w}, kernel {k}, stride {stride}, padding {padding}"
            )))
        }
    };

    let n = ho * wo;
    let kdim = cin * k * k;
    let mut out_data = vec![T::zero(); b * cout * n];
    {
        let xd_guard = input.data();
        let wd_guard = weight.data();
        let xd: &[T] = &xd_guard;
        let wd: &[T] = &wd_guard;
        let bd = bias.map(|t| t.to_vec());
        let bd = bd.as_deref();
        let in_stride = cin * h * w;
        out_data
            .par_chunks_mut(cout * n)
            .enumerate()
            .for_each(|(bi, out_b)| {
                let mut cols = vec![T::zero(); kdim * n];
                im2col(&xd[bi * in_stride..][..in_stride], cin, h, w, k, stride, padding, ho, wo, &mut cols);
                matmul_forward(wd, bd, &cols, cout, kdim, n, out_b);
            });
    }
    let out = Tensor::from_vec(vec![b, cout, ho, wo], out_data).unwrap();

    let mut tracked_inputs = vec![input, weight];
    if let Some(bt) = bias {
        tracked_inputs.push(bt);
    }
    if tape.wants(&tracked_inputs) {
        out.mark_tracked();
        let (xc, wc, oc) = (input.clone(), weight.clone(), out.clone());
        let bc = bias.cloned();
        tape.record(move || {
            let Some(gy_guard) = oc.grad_ref() else { return };
            let xd_guard = xc.data();
            let wd_guard = wc.data();
            let gy: &[T] = &gy_guard;
            let xd: &[T] = &xd_guard;
            let wd: &[T] = &wd_guard;
            let in_stride = cin * h * w;

            if let Some(ref bt) = bc {
                if bt.tracked() {
                    let mut gb = bt.grad_mut();
                    for bi in 0..b {
                        for co in 0..cout {
                            let row = &gy[(bi * cout + co) * n..][..n];
                            let s: T = row.iter().copied().sum();
                            gb[co] = gb[co] + s;
                        }
                    }
                }
            }

            let want_x = xc.tracked();
            let want_w = wc.tracked();
            if !want_x && !want_w {
                return;
            }

            // Per-item pass, parallel over the batch. Each item yields its
            // input gradient in place (disjoint slices) and a private weight
            // gradient; partials are folded in batch order afterwards, so
            // arithmetic order never depends on the thread count.
            let mut gx_store = if want_x { vec![T::zero(); b * in_stride] } else { Vec::new() };
            let gx_slots: Vec<Option<&mut [T]>> = if want_x {
                gx_store.chunks_mut(in_stride).map(Some).collect()
            } else {
                (0..b).map(|_| None).collect()
            };
            let gw_partials: Vec<Vec<T>> = gx_slots
                .into_par_iter()
                .enumerate()
                .map(|(bi, gx_b)| {
                    let mut cols = vec![T::zero(); kdim * n];
                    im2col(&xd[bi * in_stride..][..in_stride], cin, h, w, k, stride, padding, ho, wo, &mut cols);
                    let gy_b = &gy[bi * cout * n..][..cout * n];

                    let mut gw_b = if want_w { vec![T::zero(); cout * kdim] } else { Vec::new() };
                    if want_w {
                        for co in 0..cout {
                            let gyrow = &gy_b[co * n..][..n];
                            let gwrow = &mut gw_b[co * kdim..][..kdim];
                            for (kk, gwv) in gwrow.iter_mut().enumerate() {
                                let crow = &cols[kk * n..][..n];
                                let mut acc = T::zero();
                                for (&g, &cv) in gyrow.iter().zip(crow) {
                                    acc = acc + g * cv;
                                }
                                *gwv = acc;
                            }
                        }
                    }

                    if let Some(gx_b) = gx_b {
                        // gcols = W^T * gy, then scatter back to image layout.
                        let mut gcols = vec![T::zero(); kdim * n];
                        for co in 0..cout {
                            let gyrow = &gy_b[co * n..][..n];
                            let wrow = &wd[co * kdim..][..kdim];
                            for (kk, &coef) in wrow.iter().enumerate() {
                                if coef == T::zero() {
                                    continue;
                                }
                                let grow = &mut gcols[kk * n..][..n];
                                for (g, &gyv) in grow.iter_mut().zip(gyrow) {
                                    *g = *g + coef * gyv;
                                }
                            }
                        }
                        col2im_add(&gcols, cin, h, w, k, stride, padding, ho, wo, gx_b);
                    }
                    gw_b
                })
                .collect();

            if want_w {
                let mut gw = wc.grad_mut();
                for gw_b in &gw_partials {
                    for (g, &p) in gw.iter_mut().zip(gw_b) {
                        *g = *g + p;
                    }
                }
            }
            drop(xd_guard);
            if want_x {
                xc.accumulate_grad(&gx_store);
            }
        });
    }
    Ok(out)
}

/// Depthwise 2D cross-correlation: one `[k, k]` filter per channel.
///
/// `weight: [C, k, k]`; output has the same channel count as the input.
pub fn depthwise_conv2d<T: Element>(
    tape: &Tape<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    expect_rank(input, 4, "depthwise_conv2d input")?;
    expect_rank(weight, 3, "depthwise_conv2d weight")?;
    if stride == 0 {
        return Err(Error::arg("depthwise_conv2d stride must be positive".into()));
    }
    let (b, c, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let (wc_, kh, kw) = {
        let s = weight.shape();
        (s[0], s[1], s[2])
    };
    if kh != kw {
        return Err(Error::shape(format!("depthwise kernels must be square, got {kh}x{kw}")));
    }
    let k = kh;
    if wc_ != c {
        return Err(Error::shape(format!(
            "depthwise channel mismatch: input has {c}, weight has {wc_}"
        )));
    }
    let (ho, wo) = match (conv_out_dim(h, k, stride, padding), conv_out_dim(w, k, stride, padding)) {
        (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
        _ => return Err(Error::shape("depthwise_conv2d produces an empty output".into())),
    };

    let mut out_data = vec![T::zero(); b * c * ho * wo];
    {
        let xd = input.data();
        let wd = weight.data();
        for bi in 0..b {
            for ci in 0..c {
                let plane = &xd[(bi * c + ci) * h * w..][..h * w];
                let filt = &wd[ci * k * k..][..k * k];
                let orow = &mut out_data[(bi * c + ci) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = T::zero();
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc = acc + filt[ky * k + kx] * plane[iy as usize * w + ix as usize];
                            }
                        }
                        orow[oy * wo + ox] = acc;
                    }
                }
            }
        }
    }
    let out = Tensor::from_vec(vec![b, c, ho, wo], out_data).unwrap();

    if tape.wants(&[input, weight]) {
        out.mark_tracked();
        let (xc, wc, oc) = (input.clone(), weight.clone(), out.clone());
        tape.record(move || {
            let Some(gy) = oc.grad_ref() else { return };
            let xd = xc.data();
            let wd = wc.data();
            let want_x = xc.tracked();
            let want_w = wc.tracked();
            let mut gx = if want_x { vec![T::zero(); b * c * h * w] } else { Vec::new() };
            let mut gw = if want_w { vec![T::zero(); c * k * k] } else { Vec::new() };
            for bi in 0..b {
                for ci in 0..c {
                    let plane = &xd[(bi * c + ci) * h * w..][..h * w];
                    let filt = &wd[ci * k * k..][..k * k];
                    let gyrow = &gy[(bi * c + ci) * ho * wo..][..ho * wo];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = gyrow[oy * wo + ox];
                            if g == T::zero() {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let pidx = iy as usize * w + ix as usize;
                                    if want_w {
                                        gw[ci * k * k + ky * k + kx] =
                                            gw[ci * k * k + ky * k + kx] + g * plane[pidx];
                                    }
                                    if want_x {
                                        gx[(bi * c + ci) * h * w + pidx] =
                                            gx[(bi * c + ci) * h * w + pidx] + g * filt[ky * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            drop(xd);
            if want_w {
                wc.accumulate_grad(&gw);
            }
            if want_x {
                xc.accumulate_grad(&gx);
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::sum_all;

    /// Independent six-nested-loop cross-correlation oracle.
    pub(crate) fn conv2d_oracle(
        x: &[f64],
        xs: (usize, usize, usize, usize),
        w: &[f64],
        ws: (usize, usize, usize),
        bias: Option<&[f64]>,
        stride: usize,
        padding: usize,
    ) -> (Vec<f64>, (usize, usize)) {
        let (b, cin, h, wd) = xs;
        let (cout, _, k) = (ws.0, ws.1, ws.2);
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (wd + 2 * padding - k) / stride + 1;
        let mut out = vec![0.0; b * cout * ho * wo];
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.map_or(0.0, |bb| bb[co]);
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w[((co * cin + ci) * k + ky) * k + kx]
                                        * x[((bi * cin + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        (out, (ho, wo))
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            })
            .collect()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let tape = Tape::new();
        let x = Tensor::from_vec(vec![1, 1, 3, 3], pseudo_random(9, 1)).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = conv2d(&tape, &x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn all_ones_kernel_sums_constant_patches() {
        let tape = Tape::new();
        let c = 0.7;
        let x = Tensor::from_vec(vec![1, 1, 5, 5], vec![c; 25]).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&tape, &x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        for &v in y.data().iter() {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let xs = (1usize, 2usize, 4usize, 4usize);
        let x_data = pseudo_random(32, 7);
        let w_data = pseudo_random(3 * 2 * 9, 8);
        let b_data = pseudo_random(3, 9);
        let (expect, (ho, wo)) = conv2d_oracle(&x_data, xs, &w_data, (3, 2, 3), Some(&b_data), 1, 1);
        assert_eq!((ho, wo), (4, 4));

        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 2, 4, 4], x_data).unwrap();
        let w = Tensor::from_vec(vec![3, 2, 3, 3], w_data).unwrap();
        let b = Tensor::from_vec(vec![3], b_data).unwrap();
        let y = conv2d(&tape, &x, &w, Some(&b), 1, 1).unwrap();
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-9, "conv2d deviates from oracle: {a} vs {e}");
        }
    }

    #[test]
    fn strided_case_matches_oracle() {
        let xs = (2usize, 3usize, 6usize, 6usize);
        let x_data = pseudo_random(2 * 3 * 36, 21);
        let w_data = pseudo_random(4 * 3 * 9, 22);
        let (expect, (ho, wo)) = conv2d_oracle(&x_data, xs, &w_data, (4, 3, 3), None, 2, 1);
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![2, 3, 6, 6], x_data).unwrap();
        let w = Tensor::from_vec(vec![4, 3, 3, 3], w_data).unwrap();
        let y = conv2d(&tape, &x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, ho, wo]);
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 2, 4, 4], vec![0.0; 32]).unwrap();
        let w_wrong_cin = Tensor::from_vec(vec![3, 3, 3, 3], vec![0.0; 81]).unwrap();
        assert!(conv2d(&tape, &x, &w_wrong_cin, None, 1, 1).is_err());
        // kernel larger than padded input -> empty output
        let w_big = Tensor::from_vec(vec![1, 2, 5, 5], vec![0.0; 50]).unwrap();
        assert!(conv2d(&tape, &x, &w_big, None, 1, 0).is_err());
    }

    #[test]
    fn depthwise_matches_grouped_oracle() {
        // Depthwise == per-channel single-channel conv with the matching filter.
        let x_data = pseudo_random(2 * 3 * 16, 31);
        let w_data = pseudo_random(3 * 9, 32);
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![2, 3, 4, 4], x_data.clone()).unwrap();
        let w = Tensor::from_vec(vec![3, 3, 3], w_data.clone()).unwrap();
        let y = depthwise_conv2d(&tape, &x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 2]);
        for bi in 0..2 {
            for ci in 0..3 {
                let plane: Vec<f64> = x_data[(bi * 3 + ci) * 16..][..16].to_vec();
                let filt: Vec<f64> = w_data[ci * 9..][..9].to_vec();
                let (expect, _) = conv2d_oracle(&plane, (1, 1, 4, 4), &filt, (1, 1, 3), None, 2, 1);
                let got = &y.to_vec()[(bi * 3 + ci) * 4..][..4];
                for (a, e) in got.iter().zip(&expect) {
                    assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_gradients_flow_to_all_inputs() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 1, 3, 3], pseudo_random(9, 40)).unwrap().requires_grad();
        let w = Tensor::from_vec(vec![2, 1, 2, 2], pseudo_random(8, 41)).unwrap().requires_grad();
        let b = Tensor::from_vec(vec![2], pseudo_random(2, 42)).unwrap().requires_grad();
        let y = conv2d(&tape, &x, &w, Some(&b), 1, 0).unwrap();
        let s = sum_all(&tape, &y);
        tape.backward(&s).unwrap();
        assert!(x.grad_linf().unwrap() > 0.0);
        assert!(w.grad_linf().unwrap() > 0.0);
        // d(sum)/d(bias) counts output pixels per channel
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0]);
    }
}
