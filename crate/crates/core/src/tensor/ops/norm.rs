use super::{expect_rank, expect_shape};
use crate::tensor::{Element, Tape, Tensor};
use crate::{Error, Result};

/// Whether batch statistics are computed (and running stats updated) or the
/// stored running statistics are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `[B, C, H, W]`.
///
/// Train mode normalizes by biased batch statistics and folds them into the
/// running stats with the given momentum; eval mode normalizes by the
/// running stats. Gradients are recorded for the input, `gamma`, and `beta`;
/// running stats are state, not parameters, and never receive gradients.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Element>(
    tape: &Tape<T>,
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: BnMode,
    momentum: T,
    eps: T,
) -> Result<Tensor<T>> {
    expect_rank(input, 4, "batch_norm input")?;
    let (b, c, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    expect_shape(gamma, &[c], "batch_norm gamma")?;
    expect_shape(beta, &[c], "batch_norm beta")?;
    expect_shape(running_mean, &[c], "batch_norm running_mean")?;
    expect_shape(running_var, &[c], "batch_norm running_var")?;
    let n = b * h * w;
    if mode == BnMode::Train && n < 2 {
        return Err(Error::arg(
            "batch_norm in train mode needs at least 2 elements per channel".into(),
        ));
    }

    let hw = h * w;
    let xd = input.data();
    let gd = gamma.data();
    let bd = beta.data();

    let (mean, istd): (Vec<T>, Vec<T>) = match mode {
        BnMode::Train => {
            let inv_n = T::one() / T::from_usize(n);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    let plane = &xd[(bi * c + ci) * hw..][..hw];
                    for &v in plane {
                        s = s + v;
                    }
                }
                let m = s * inv_n;
                let mut sq = T::zero();
                for bi in 0..b {
                    let plane = &xd[(bi * c + ci) * hw..][..hw];
                    for &v in plane {
                        let d = v - m;
                        sq = sq + d * d;
                    }
                }
                mean[ci] = m;
                var[ci] = sq * inv_n;
            }
            // fold into running stats
            {
                let mut rm = running_mean.data_mut();
                let mut rv = running_var.data_mut();
                let keep = T::one() - momentum;
                for ci in 0..c {
                    rm[ci] = rm[ci] * keep + mean[ci] * momentum;
                    rv[ci] = rv[ci] * keep + var[ci] * momentum;
                }
            }
            let istd = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, istd)
        }
        BnMode::Eval => {
            let rm = running_mean.to_vec();
            let rv = running_var.to_vec();
            let istd = rv.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (rm, istd)
        }
    };

    let mut xhat = vec![T::zero(); b * c * hw];
    let mut y_data = vec![T::zero(); b * c * hw];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let (m, is, g, bb) = (mean[ci], istd[ci], gd[ci], bd[ci]);
            for p in 0..hw {
                let xh = (xd[base + p] - m) * is;
                xhat[base + p] = xh;
                y_data[base + p] = g * xh + bb;
            }
        }
    }
    drop(xd);
    drop(gd);
    drop(bd);
    let y = Tensor::from_vec(input.shape().to_vec(), y_data).unwrap();

    if tape.wants(&[input, gamma, beta]) {
        y.mark_tracked();
        let (xc, gc, bc, yc) = (input.clone(), gamma.clone(), beta.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            if bc.tracked() {
                let mut gb = bc.grad_mut();
                for bi in 0..b {
                    for ci in 0..c {
                        let row = &gy[(bi * c + ci) * hw..][..hw];
                        let s: T = row.iter().copied().sum();
                        gb[ci] = gb[ci] + s;
                    }
                }
            }
            if gc.tracked() {
                let mut gg = gc.grad_mut();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        let mut s = T::zero();
                        for p in 0..hw {
                            s = s + gy[base + p] * xhat[base + p];
                        }
                        gg[ci] = gg[ci] + s;
                    }
                }
            }
            if xc.tracked() {
                let gd = gc.data();
                let mut gx = xc.grad_mut();
                match mode {
                    BnMode::Train => {
                        // dx = gamma*istd * (gy - mean(gy) - xhat * mean(gy*xhat))
                        let inv_n = T::one() / T::from_usize(n);
                        for ci in 0..c {
                            let mut sum_gy = T::zero();
                            let mut sum_gy_xhat = T::zero();
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                for p in 0..hw {
                                    sum_gy = sum_gy + gy[base + p];
                                    sum_gy_xhat = sum_gy_xhat + gy[base + p] * xhat[base + p];
                                }
                            }
                            let mg = sum_gy * inv_n;
                            let mgx = sum_gy_xhat * inv_n;
                            let coef = gd[ci] * istd[ci];
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                for p in 0..hw {
                                    gx[base + p] = gx[base + p]
                                        + coef * (gy[base + p] - mg - xhat[base + p] * mgx);
                                }
                            }
                        }
                    }
                    BnMode::Eval => {
                        for ci in 0..c {
                            let coef = gd[ci] * istd[ci];
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                for p in 0..hw {
                                    gx[base + p] = gx[base + p] + coef * gy[base + p];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    Ok(y)
}
