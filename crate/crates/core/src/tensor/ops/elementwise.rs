use super::{expect_rank, expect_shape};
use crate::tensor::{Element, Tape, Tensor};
use crate::Result;

/// Elementwise `max(0, x)`. The gradient at exactly 0 is defined as 0.
pub fn relu<T: Element>(tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
    let y_data: Vec<T> = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    let y = Tensor::from_vec(x.shape().to_vec(), y_data).unwrap();
    if tape.wants(&[x]) {
        y.mark_tracked();
        let (xc, yc) = (x.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let xd = xc.data();
            let mut gx = xc.grad_mut();
            for ((g, &gyv), &xv) in gx.iter_mut().zip(gy.iter()).zip(xd.iter()) {
                if xv > T::zero() {
                    *g = *g + gyv;
                }
            }
        });
    }
    y
}

/// Elementwise logistic sigmoid.
pub fn sigmoid<T: Element>(tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
    let one = T::one();
    let y_data: Vec<T> = x.data().iter().map(|&v| one / (one + (-v).exp())).collect();
    let y = Tensor::from_vec(x.shape().to_vec(), y_data).unwrap();
    if tape.wants(&[x]) {
        y.mark_tracked();
        let (xc, yc) = (x.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let yd = yc.data();
            let mut gx = xc.grad_mut();
            for ((g, &gyv), &yv) in gx.iter_mut().zip(gy.iter()).zip(yd.iter()) {
                *g = *g + gyv * yv * (T::one() - yv);
            }
        });
    }
    y
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Element>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_shape(b, a.shape(), "add rhs")?;
    let y_data: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    let y = Tensor::from_vec(a.shape().to_vec(), y_data).unwrap();
    if tape.wants(&[a, b]) {
        y.mark_tracked();
        let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            if ac.tracked() {
                ac.accumulate_grad(&gy);
            }
            if bc.tracked() {
                bc.accumulate_grad(&gy);
            }
        });
    }
    Ok(y)
}

/// Multiplies every element by a constant.
pub fn scale<T: Element>(tape: &Tape<T>, x: &Tensor<T>, factor: T) -> Tensor<T> {
    let y_data: Vec<T> = x.data().iter().map(|&v| v * factor).collect();
    let y = Tensor::from_vec(x.shape().to_vec(), y_data).unwrap();
    if tape.wants(&[x]) {
        y.mark_tracked();
        let (xc, yc) = (x.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let mut gx = xc.grad_mut();
            for (g, &gyv) in gx.iter_mut().zip(gy.iter()) {
                *g = *g + gyv * factor;
            }
        });
    }
    y
}

/// Sum of all elements, as a scalar tensor.
pub fn sum_all<T: Element>(tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
    let s: T = x.data().iter().copied().sum();
    let y = Tensor::scalar(s);
    if tape.wants(&[x]) {
        y.mark_tracked();
        let (xc, yc) = (x.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let g0 = gy[0];
            let mut gx = xc.grad_mut();
            for g in gx.iter_mut() {
                *g = *g + g0;
            }
        });
    }
    y
}

/// Softmax over the channel axis of a `[B, K, H, W]` tensor.
pub fn softmax_channels<T: Element>(tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 4, "softmax_channels input")?;
    let (b, k, h, w) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let hw = h * w;
    let xd = x.data();
    let mut y_data = vec![T::zero(); xd.len()];
    for bi in 0..b {
        let base = bi * k * hw;
        for p in 0..hw {
            let mut maxv = T::neg_infinity();
            for c in 0..k {
                maxv = maxv.max(xd[base + c * hw + p]);
            }
            let mut denom = T::zero();
            for c in 0..k {
                let e = (xd[base + c * hw + p] - maxv).exp();
                y_data[base + c * hw + p] = e;
                denom = denom + e;
            }
            for c in 0..k {
                y_data[base + c * hw + p] = y_data[base + c * hw + p] / denom;
            }
        }
    }
    drop(xd);
    let y = Tensor::from_vec(x.shape().to_vec(), y_data).unwrap();
    if tape.wants(&[x]) {
        y.mark_tracked();
        let (xc, yc) = (x.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let yd = yc.data();
            let mut gx = xc.grad_mut();
            // dx_c = p_c * (g_c - sum_j p_j g_j) per pixel
            for bi in 0..b {
                let base = bi * k * hw;
                for p in 0..hw {
                    let mut dot = T::zero();
                    for c in 0..k {
                        let i = base + c * hw + p;
                        dot = dot + yd[i] * gy[i];
                    }
                    for c in 0..k {
                        let i = base + c * hw + p;
                        gx[i] = gx[i] + yd[i] * (gy[i] - dot);
                    }
                }
            }
        });
    }
    Ok(y)
}

/// Multiplies each channel of `x: [B, C, H, W]` by a per-(batch, channel)
/// gate `g: [B, C, 1, 1]`. Gradients flow to both operands.
pub fn scale_channels<T: Element>(tape: &Tape<T>, x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 4, "scale_channels input")?;
    let (b, c, h, w) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    expect_shape(gate, &[b, c, 1, 1], "scale_channels gate")?;
    let hw = h * w;
    let xd = x.data();
    let gd = gate.data();
    let mut y_data = vec![T::zero(); xd.len()];
    for bc in 0..b * c {
        let g = gd[bc];
        for p in 0..hw {
            y_data[bc * hw + p] = xd[bc * hw + p] * g;
        }
    }
    drop(xd);
    drop(gd);
    let y = Tensor::from_vec(x.shape().to_vec(), y_data).unwrap();
    if tape.wants(&[x, gate]) {
        y.mark_tracked();
        let (xc, gc, yc) = (x.clone(), gate.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            if xc.tracked() {
                let gd = gc.data();
                let mut gx = xc.grad_mut();
                for bc in 0..b * c {
                    let g = gd[bc];
                    for p in 0..hw {
                        gx[bc * hw + p] = gx[bc * hw + p] + gy[bc * hw + p] * g;
                    }
                }
            }
            if gc.tracked() {
                let xd = xc.data();
                let mut gg = gc.grad_mut();
                for bc in 0..b * c {
                    let mut acc = T::zero();
                    for p in 0..hw {
                        acc = acc + gy[bc * hw + p] * xd[bc * hw + p];
                    }
                    gg[bc] = gg[bc] + acc;
                }
            }
        });
    }
    Ok(y)
}
