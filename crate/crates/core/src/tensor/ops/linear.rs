use super::{expect_rank, expect_shape};
use crate::tensor::{Element, Tape, Tensor};
use crate::{Error, Result};

/// Affine map `y = x W^T + b` with `x: [B, F]`, `weight: [O, F]`, `bias: [O]`.
pub fn linear<T: Element>(
    tape: &Tape<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    expect_rank(input, 2, "linear input")?;
    expect_rank(weight, 2, "linear weight")?;
    let (b, f) = (input.shape()[0], input.shape()[1]);
    let (o, wf) = (weight.shape()[0], weight.shape()[1]);
    if wf != f {
        return Err(Error::shape(format!(
            "linear feature mismatch: input has {f} features, weight expects {wf}"
        )));
    }
    expect_shape(bias, &[o], "linear bias")?;

    let xd = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut y_data = vec![T::zero(); b * o];
    for bi in 0..b {
        let xrow = &xd[bi * f..][..f];
        for oi in 0..o {
            let wrow = &wd[oi * f..][..f];
            let mut acc = bd[oi];
            for (&x, &w) in xrow.iter().zip(wrow) {
                acc = acc + x * w;
            }
            y_data[bi * o + oi] = acc;
        }
    }
    drop(xd);
    drop(wd);
    drop(bd);
    let y = Tensor::from_vec(vec![b, o], y_data).unwrap();

    if tape.wants(&[input, weight, bias]) {
        y.mark_tracked();
        let (xc, wc, bc, yc) = (input.clone(), weight.clone(), bias.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            if bc.tracked() {
                let mut gb = bc.grad_mut();
                for bi in 0..b {
                    for oi in 0..o {
                        gb[oi] = gb[oi] + gy[bi * o + oi];
                    }
                }
            }
            if wc.tracked() {
                let xd = xc.data();
                let mut gw = wc.grad_mut();
                for bi in 0..b {
                    let xrow = &xd[bi * f..][..f];
                    for oi in 0..o {
                        let g = gy[bi * o + oi];
                        let grow = &mut gw[oi * f..][..f];
                        for (gv, &xv) in grow.iter_mut().zip(xrow) {
                            *gv = *gv + g * xv;
                        }
                    }
                }
            }
            if xc.tracked() {
                let wd = wc.data();
                let mut gx = xc.grad_mut();
                for bi in 0..b {
                    let grow = &mut gx[bi * f..][..f];
                    for oi in 0..o {
                        let g = gy[bi * o + oi];
                        let wrow = &wd[oi * f..][..f];
                        for (gv, &wv) in grow.iter_mut().zip(wrow) {
                            *gv = *gv + g * wv;
                        }
                    }
                }
            }
        });
    }
    Ok(y)
}

/// Copies into a new shape with the same element count; gradients pass through.
pub fn reshape<T: Element>(tape: &Tape<T>, input: &Tensor<T>, shape: Vec<usize>) -> Result<Tensor<T>> {
    let numel: usize = shape.iter().product();
    if numel != input.len() {
        return Err(Error::shape(format!(
            "reshape from {:?} to {shape:?} changes element count",
            input.shape()
        )));
    }
    let y = Tensor::from_vec(shape, input.to_vec())?;
    if tape.wants(&[input]) {
        y.mark_tracked();
        let (xc, yc) = (input.clone(), y.clone());
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            xc.accumulate_grad(&gy);
        });
    }
    Ok(y)
}

/// Concatenates tensors along `dim`; every other dimension must agree.
pub fn concat<T: Element>(tape: &Tape<T>, parts: &[&Tensor<T>], dim: usize) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::arg("concat of zero tensors".into()));
    }
    let rank = parts[0].shape().len();
    if dim >= rank {
        return Err(Error::arg(format!("concat dim {dim} out of range for rank {rank}")));
    }
    for p in parts {
        if p.shape().len() != rank {
            return Err(Error::shape("concat inputs must share rank".into()));
        }
        for d in 0..rank {
            if d != dim && p.shape()[d] != parts[0].shape()[d] {
                return Err(Error::shape(format!(
                    "concat inputs disagree on dim {d}: {:?} vs {:?}",
                    p.shape(),
                    parts[0].shape()
                )));
            }
        }
    }

    let mut out_shape = parts[0].shape().to_vec();
    out_shape[dim] = parts.iter().map(|p| p.shape()[dim]).sum();

    // Treat each tensor as [outer, own_dim * inner] blocks.
    let outer: usize = out_shape[..dim].iter().product();
    let inner: usize = out_shape[dim + 1..].iter().product();
    let total_dim = out_shape[dim];
    let mut y_data = vec![T::zero(); outer * total_dim * inner];
    let mut offset = 0usize;
    for p in parts {
        let pd = p.data();
        let pdim = p.shape()[dim];
        let block = pdim * inner;
        for ou in 0..outer {
            let src = &pd[ou * block..][..block];
            let dst = &mut y_data[(ou * total_dim + offset) * inner..][..block];
            dst.copy_from_slice(src);
        }
        offset += pdim;
    }
    let y = Tensor::from_vec(out_shape, y_data).unwrap();

    let refs: Vec<&Tensor<T>> = parts.to_vec();
    if tape.wants(&refs) {
        y.mark_tracked();
        let yc = y.clone();
        let owned: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
        tape.record(move || {
            let Some(gy) = yc.grad_ref() else { return };
            let mut offset = 0usize;
            for p in &owned {
                let pdim = p.shape()[dim];
                let block = pdim * inner;
                if p.tracked() {
                    let mut gp = p.grad_mut();
                    for ou in 0..outer {
                        let src = &gy[(ou * total_dim + offset) * inner..][..block];
                        let dst = &mut gp[ou * block..][..block];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                offset += pdim;
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

    /// Independent triple-loop matmul oracle.
    fn linear_oracle(x: &[f64], b: usize, f: usize, w: &[f64], o: usize, bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; b * o];
        for bi in 0..b {
            for oi in 0..o {
                let mut acc = bias[oi];
                for fi in 0..f {
                    acc += x[bi * f + fi] * w[oi * f + fi];
                }
                out[bi * o + oi] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let tape = Tape::new();
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = t64(&[3, 3], &eye);
        let b = t64(&[3], &[0.0; 3]);
        let y = linear(&tape, &x, &w, &b).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn zero_weight_broadcasts_bias() {
        let tape = Tape::new();
        let x = t64(&[2, 3], &[9.0; 6]);
        let w = t64(&[2, 3], &[0.0; 6]);
        let b = t64(&[2], &[0.5, -1.5]);
        let y = linear(&tape, &x, &w, &b).unwrap();
        assert_eq!(y.to_vec(), vec![0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let x: Vec<f64> = (0..6).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let w: Vec<f64> = (0..12).map(|i| (i as f64) * 0.21 - 1.2).collect();
        let bias = vec![0.1, -0.2, 0.3, 0.4];
        let expect = linear_oracle(&x, 2, 3, &w, 4, &bias);
        let tape = Tape::new();
        let y = linear(&tape, &t64(&[2, 3], &x), &t64(&[4, 3], &w), &t64(&[4], &bias)).unwrap();
        for (a, e) in y.to_vec().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_orders_blocks_and_splits_gradients() {
        let tape = Tape::new();
        let a = t64(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).requires_grad();
        let b = t64(&[1, 1, 1, 2], &[5.0, 6.0]).requires_grad();
        let y = concat(&tape, &[&a, &b], 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 1, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = sum_all(&tape, &y);
        tape.backward(&s).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 2]);
    }

    #[test]
    fn reshape_round_trips_gradient() {
        let tape = Tape::new();
        let x = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).requires_grad();
        let y = reshape(&tape, &x, vec![4]).unwrap();
        let s = sum_all(&tape, &y);
        tape.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
        assert!(reshape(&tape, &x, vec![3]).is_err());
    }
}
