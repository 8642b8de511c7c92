use super::expect_rank;
use crate::tensor::{Element, Tape, Tensor};
use crate::{Error, Result};

/// Per-channel spatial mean: `[B, C, H, W] -> [B, C, 1, 1]`.
pub fn global_avg_pool<T: Element>(tape: &Tape<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(input, 4, "global_avg_pool input")?;
    let (b, c, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let hw = h * w;
    let inv = T::one() / T::from_usize(hw);
    let xd = input.data();
    let mut y_data = vec![T::zero(); b * c];
    for bc in 0..b * c {
        let s: T = xd[bc * hw..][..hw].iter().copied().sum();
        y_data[bc] = s * inv;
    }
    drop(xd);
    let y = Tensor::from_vec(vec![b, c, 1, 1], y_data).unwrap();
    if tape.wants(&[input]) {
        y.mark_tracked();
        let (xc, yc) = (input.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let mut gx = xc.grad_mut();
            for bc in 0..b * c {
                let g = gy[bc] * inv;
                for v in gx[bc * hw..][..hw].iter_mut() {
                    *v = *v + g;
                }
            }
        });
    }
    Ok(y)
}

/// Non-overlapping 2x2 window means; both spatial dims must be even.
pub fn avg_pool2<T: Element>(tape: &Tape<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(input, 4, "avg_pool2 input")?;
    let (b, c, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("avg_pool2 requires even spatial dims, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let xd = input.data();
    let mut y_data = vec![T::zero(); b * c * ho * wo];
    for bc in 0..b * c {
        let plane = &xd[bc * h * w..][..h * w];
        let orow = &mut y_data[bc * ho * wo..][..ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let i = 2 * oy * w + 2 * ox;
                orow[oy * wo + ox] =
                    (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
            }
        }
    }
    drop(xd);
    let y = Tensor::from_vec(vec![b, c, ho, wo], y_data).unwrap();
    if tape.wants(&[input]) {
        y.mark_tracked();
        let (xc, yc) = (input.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let mut gx = xc.grad_mut();
            for bc in 0..b * c {
                let grow = &gy[bc * ho * wo..][..ho * wo];
                let plane = &mut gx[bc * h * w..][..h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = grow[oy * wo + ox] * quarter;
                        let i = 2 * oy * w + 2 * ox;
                        plane[i] = plane[i] + g;
                        plane[i + 1] = plane[i + 1] + g;
                        plane[i + w] = plane[i + w] + g;
                        plane[i + w + 1] = plane[i + w + 1] + g;
                    }
                }
            }
        });
    }
    Ok(y)
}

/// Align-corners source position for output index `i` of `out_size` mapped
/// into `in_size`. With a single output sample the first pixel is used.
fn src_pos<T: Element>(i: usize, in_size: usize, out_size: usize) -> T {
    if out_size <= 1 || in_size <= 1 {
        return T::zero();
    }
    T::from_usize(i * (in_size - 1)) / T::from_usize(out_size - 1)
}

/// Align-corners bilinear upsampling (or downsampling) to `(out_h, out_w)`.
///
/// Corner pixels map to corner pixels; resizing to the identical size is an
/// exact identity because integer source positions are hit exactly.
pub fn upsample_bilinear<T: Element>(
    tape: &Tape<T>,
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    expect_rank(input, 4, "upsample_bilinear input")?;
    if out_h < 1 || out_w < 1 {
        return Err(Error::arg(format!("upsample target {out_h}x{out_w} is empty")));
    }
    let (b, c, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };

    // Precompute per-axis taps: (lo index, hi index, hi weight).
    let taps = |in_size: usize, out_size: usize| -> Vec<(usize, usize, T)> {
        (0..out_size)
            .map(|i| {
                let p = src_pos::<T>(i, in_size, out_size);
                let lo = p.floor().to_f64() as usize;
                let lo = lo.min(in_size - 1);
                let hi = (lo + 1).min(in_size - 1);
                (lo, hi, p - T::from_usize(lo))
            })
            .collect()
    };
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);

    let xd = input.data();
    let mut y_data = vec![T::zero(); b * c * out_h * out_w];
    for bc in 0..b * c {
        let plane = &xd[bc * h * w..][..h * w];
        let orow = &mut y_data[bc * out_h * out_w..][..out_h * out_w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let one = T::one();
                let v = plane[y0 * w + x0] * (one - wy) * (one - wx)
                    + plane[y0 * w + x1] * (one - wy) * wx
                    + plane[y1 * w + x0] * wy * (one - wx)
                    + plane[y1 * w + x1] * wy * wx;
                orow[oy * out_w + ox] = v;
            }
        }
    }
    drop(xd);
    let y = Tensor::from_vec(vec![b, c, out_h, out_w], y_data).unwrap();

    if tape.wants(&[input]) {
        y.mark_tracked();
        let (xc, yc) = (input.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let mut gx = xc.grad_mut();
            let one = T::one();
            for bc in 0..b * c {
                let grow = &gy[bc * out_h * out_w..][..out_h * out_w];
                let plane = &mut gx[bc * h * w..][..h * w];
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let g = grow[oy * out_w + ox];
                        plane[y0 * w + x0] = plane[y0 * w + x0] + g * (one - wy) * (one - wx);
                        plane[y0 * w + x1] = plane[y0 * w + x1] + g * (one - wy) * wx;
                        plane[y1 * w + x0] = plane[y1 * w + x0] + g * wy * (one - wx);
                        plane[y1 * w + x1] = plane[y1 * w + x1] + g * wy * wx;
                    }
                }
            }
        });
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::sum_all;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn global_pool_means_and_distributes_gradient() {
        let tape = Tape::new();
        let x = t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).requires_grad();
        let y = global_avg_pool(&tape, &x).unwrap();
        assert_eq!(y.to_vec(), vec![2.5]);
        let s = sum_all(&tape, &y);
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn global_pool_of_constant_is_constant() {
        let tape = Tape::new();
        let x = t64(&[2, 3, 4, 4], &[0.4; 96]);
        let y = global_avg_pool(&tape, &x).unwrap();
        for &v in y.data().iter() {
            assert!((v - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool2_window_means() {
        let tape = Tape::new();
        let x = t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = avg_pool2(&tape, &x).unwrap();
        assert_eq!(y.to_vec(), vec![2.5]);

        // 4x4 ramp against an explicit window-mean oracle
        let ramp: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = t64(&[1, 1, 4, 4], &ramp);
        let y = avg_pool2(&tape, &x).unwrap();
        let mut oracle = vec![0.0; 4];
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += ramp[(2 * oy + dy) * 4 + (2 * ox + dx)];
                    }
                }
                oracle[oy * 2 + ox] = s / 4.0;
            }
        }
        assert_eq!(y.to_vec(), oracle);
    }

    #[test]
    fn avg_pool2_rejects_odd_dims() {
        let tape = Tape::<f64>::new();
        let x = t64(&[1, 1, 3, 4], &[0.0; 12]);
        assert!(avg_pool2(&tape, &x).is_err());
    }

    #[test]
    fn upsample_from_single_pixel_is_constant() {
        let tape = Tape::new();
        let x = t64(&[1, 1, 1, 1], &[0.8]);
        let y = upsample_bilinear(&tape, &x, 5, 7).unwrap();
        assert!(y.to_vec().iter().all(|&v| (v - 0.8).abs() < 1e-12));
    }

    #[test]
    fn upsample_center_of_2x2_to_3x3() {
        // Hand interpolation: center of [1 2; 3 4] is the mean 2.5.
        let tape = Tape::new();
        let x = t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = upsample_bilinear(&tape, &x, 3, 3).unwrap();
        let yd = y.to_vec();
        assert_eq!(yd[0], 1.0);
        assert_eq!(yd[2], 2.0);
        assert_eq!(yd[6], 3.0);
        assert_eq!(yd[8], 4.0);
        assert!((yd[4] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn upsample_to_same_size_is_identity() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..48).map(|i| (i as f64) * 0.11 - 2.0).collect();
        let x = t64(&[1, 3, 4, 4], &data);
        let y = upsample_bilinear(&tape, &x, 4, 4).unwrap();
        assert_eq!(y.to_vec(), data);
    }
}
