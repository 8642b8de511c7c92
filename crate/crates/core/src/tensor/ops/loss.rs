use super::{expect_rank, expect_shape};
use crate::tensor::{Element, IntTensor, Tape, Tensor};
use crate::{Error, Result};

/// Mean pixelwise softmax cross-entropy of `logits: [B, K, H, W]` against
/// integer `labels: [B, H, W]`.
///
/// Pixels whose label equals `ignore_label` are excluded from the mean.
/// Numerically stabilized by max-subtraction. Out-of-range labels are an
/// error.
pub fn softmax_cross_entropy<T: Element>(
    tape: &Tape<T>,
    logits: &Tensor<T>,
    labels: &IntTensor,
    ignore_label: Option<i32>,
) -> Result<Tensor<T>> {
    expect_rank(logits, 4, "softmax_cross_entropy logits")?;
    let (b, k, h, w) = {
        let s = logits.shape();
        (s[0], s[1], s[2], s[3])
    };
    if labels.shape() != [b, h, w] {
        return Err(Error::shape(format!(
            "labels shape {:?} does not match logits {:?}",
            labels.shape(),
            logits.shape()
        )));
    }
    let hw = h * w;
    let ld = labels.data();
    for &lab in ld {
        if Some(lab) == ignore_label {
            continue;
        }
        if lab < 0 || lab as usize >= k {
            return Err(Error::arg(format!("label {lab} out of range for {k} classes")));
        }
    }
    let counted = ld.iter().filter(|&&lab| Some(lab) != ignore_label).count();
    if counted == 0 {
        return Err(Error::arg("softmax_cross_entropy: every pixel is ignored".into()));
    }

    let xd = logits.data();
    // Per-pixel probabilities are needed again in backward; keep them.
    let mut probs = vec![T::zero(); xd.len()];
    let mut total = T::zero();
    for bi in 0..b {
        for p in 0..hw {
            let base = bi * k * hw;
            let mut maxv = T::neg_infinity();
            for c in 0..k {
                maxv = maxv.max(xd[base + c * hw + p]);
            }
            let mut denom = T::zero();
            for c in 0..k {
                let e = (xd[base + c * hw + p] - maxv).exp();
                probs[base + c * hw + p] = e;
                denom = denom + e;
            }
            let inv = T::one() / denom;
            for c in 0..k {
                probs[base + c * hw + p] = probs[base + c * hw + p] * inv;
            }
            let lab = ld[bi * hw + p];
            if Some(lab) != ignore_label {
                let z = xd[base + lab as usize * hw + p] - maxv;
                total = total + (denom.ln() - z);
            }
        }
    }
    drop(xd);
    let inv_count = T::one() / T::from_usize(counted);
    let loss = Tensor::scalar(total * inv_count);

    if tape.wants(&[logits]) {
        loss.mark_tracked();
        let (xc, lc) = (logits.clone(), loss.clone());
        let ld = labels.data().to_vec();
        tape.record(move || {
            let Some(gl) = lc.grad_ref() else { return };
            let g0 = gl[0] * inv_count;
            let mut gx = xc.grad_mut();
            for bi in 0..b {
                for p in 0..hw {
                    let lab = ld[bi * hw + p];
                    if Some(lab) == ignore_label {
                        continue;
                    }
                    let base = bi * k * hw;
                    for c in 0..k {
                        let i = base + c * hw + p;
                        let indicator = if c == lab as usize { T::one() } else { T::zero() };
                        gx[i] = gx[i] + g0 * (probs[i] - indicator);
                    }
                }
            }
        });
    }
    Ok(loss)
}

fn smooth_l1_value_grad<T: Element>(d: T) -> (T, T) {
    let half = T::from_f64(0.5);
    if d.abs() < T::one() {
        (half * d * d, d)
    } else {
        (d.abs() - half, d.signum())
    }
}

/// Smooth L1 (Huber at delta=1): mean over elements of
/// `0.5 d^2` when `|d| < 1`, else `|d| - 0.5`, with `d = pred - target`.
pub fn smooth_l1<T: Element>(tape: &Tape<T>, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    expect_shape(target, pred.shape(), "smooth_l1 target")?;
    let mask = vec![true; outer_rows(pred)];
    smooth_l1_masked(tape, pred, target, &mask)
}

fn outer_rows<T: Element>(t: &Tensor<T>) -> usize {
    if t.shape().len() <= 1 {
        1
    } else {
        t.shape()[0]
    }
}

/// Smooth L1 restricted to a subset of rows along the leading axis; the mean
/// runs over the elements of unmasked rows only. Used to exclude ROIs that
/// are absent from a frame.
pub fn smooth_l1_masked<T: Element>(
    tape: &Tape<T>,
    pred: &Tensor<T>,
    target: &Tensor<T>,
    row_mask: &[bool],
) -> Result<Tensor<T>> {
    expect_shape(target, pred.shape(), "smooth_l1 target")?;
    let rows = outer_rows(pred);
    if row_mask.len() != rows {
        return Err(Error::shape(format!(
            "row mask has {} entries for {rows} rows",
            row_mask.len()
        )));
    }
    let row_len = pred.len() / rows;
    let active: usize = row_mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::arg("smooth_l1: every row is masked out".into()));
    }
    let count = active * row_len;

    let pd = pred.data();
    let td = target.data();
    let mut total = T::zero();
    for (r, &keep) in row_mask.iter().enumerate() {
        if !keep {
            continue;
        }
        for i in r * row_len..(r + 1) * row_len {
            let (v, _) = smooth_l1_value_grad(pd[i] - td[i]);
            total = total + v;
        }
    }
    drop(pd);
    drop(td);
    let inv_count = T::one() / T::from_usize(count);
    let loss = Tensor::scalar(total * inv_count);

    if tape.wants(&[pred, target]) {
        loss.mark_tracked();
        let (pc, tc, lc) = (pred.clone(), target.clone(), loss.clone());
        let mask = row_mask.to_vec();
        tape.record(move || {
            let Some(gl) = lc.grad_ref() else { return };
            let g0 = gl[0] * inv_count;
            let pd = pc.data();
            let td = tc.data();
            let grads: Vec<(usize, T)> = mask
                .iter()
                .enumerate()
                .filter(|(_, &keep)| keep)
                .flat_map(|(r, _)| (r * row_len..(r + 1) * row_len))
                .map(|i| {
                    let (_, g) = smooth_l1_value_grad(pd[i] - td[i]);
                    (i, g0 * g)
                })
                .collect();
            drop(pd);
            drop(td);
            if pc.tracked() {
                let mut gp = pc.grad_mut();
                for &(i, g) in &grads {
                    gp[i] = gp[i] + g;
                }
            }
            if tc.tracked() {
                let mut gt = tc.grad_mut();
                for &(i, g) in &grads {
                    gt[i] = gt[i] - g;
                }
            }
        });
    }
    Ok(loss)
}
