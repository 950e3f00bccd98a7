//! Forward and backward kernels for the classical layers.
//!
//! Kernels are plain functions over [`Tensor`]s; [`super::Graph`] wires them
//! together. Batched kernels parallelise over samples and reduce per-sample
//! partial gradients in sample order, so results do not depend on thread
//! scheduling.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Clamp applied inside every logarithm.
pub const PROB_EPS: f64 = 1e-10;

fn shape_err(what: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::dim(format!(
        "{what}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(shape_err("linear", x, w));
    }
    let (n, i_dim, o_dim) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    if b.shape() != [o_dim] {
        return Err(shape_err("linear bias", w, b));
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; n * o_dim];
    for (r, orow) in out.chunks_mut(o_dim).enumerate() {
        orow.copy_from_slice(bd);
        let xr = &xd[r * i_dim..(r + 1) * i_dim];
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &wd[i * o_dim..(i + 1) * o_dim];
            for (o, &wv) in orow.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![n, o_dim], out)
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, i_dim, o_dim) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let (xd, wd, gd) = (x.data(), w.data(), dout.data());
    let mut dx = vec![0.0; n * i_dim];
    let mut dw = vec![0.0; i_dim * o_dim];
    let mut db = vec![0.0; o_dim];
    for r in 0..n {
        let g = &gd[r * o_dim..(r + 1) * o_dim];
        for (d, &gv) in db.iter_mut().zip(g) {
            *d += gv;
        }
        for i in 0..i_dim {
            let xv = xd[r * i_dim + i];
            let wr = &wd[i * o_dim..(i + 1) * o_dim];
            let dwr = &mut dw[i * o_dim..(i + 1) * o_dim];
            let mut acc = 0.0;
            for o in 0..o_dim {
                acc += g[o] * wr[o];
                dwr[o] += xv * g[o];
            }
            dx[r * i_dim + i] = acc;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
        Tensor::new(w.shape().to_vec(), dw).unwrap(),
        Tensor::new(vec![o_dim], db).unwrap(),
    )
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
}

fn conv_dims(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<ConvDims> {
    if x.rank() != 4 || k.rank() != 4 {
        return Err(shape_err("conv2d expects rank-4 input and kernel", x, k));
    }
    let xs = x.shape();
    let ks = k.shape();
    if ks[2] != 3 || ks[3] != 3 {
        return Err(Error::dim(format!("conv2d kernel must be 3x3, got {ks:?}")));
    }
    if ks[1] != xs[1] {
        return Err(shape_err("conv2d channel mismatch", x, k));
    }
    if b.shape() != [ks[0]] {
        return Err(shape_err("conv2d bias", k, b));
    }
    Ok(ConvDims {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        f: ks[0],
    })
}

/// Valid output range for kernel offset `k` (0..3) with padding 1.
#[inline]
fn valid_range(k: usize, len: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { len - 1 } else { len };
    (lo, hi)
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ConvDims { n, c, h, w, f } = conv_dims(x, k, b)?;
    let plane = h * w;
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    let mut out = vec![0.0; n * f * plane];
    out.par_chunks_mut(f * plane).enumerate().for_each(|(s, os)| {
        let xs = &xd[s * c * plane..(s + 1) * c * plane];
        for fi in 0..f {
            let op = &mut os[fi * plane..(fi + 1) * plane];
            op.fill(bd[fi]);
            for ci in 0..c {
                let ip = &xs[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let wv = kd[((fi * c + ci) * 3 + ky) * 3 + kx];
                        let (x0, x1) = valid_range(kx, w);
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let orow = &mut op[y * w + x0..y * w + x1];
                            let irow = &ip[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                            for (o, &i) in orow.iter_mut().zip(irow) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![n, f, h, w], out)
}

/// Returns `(dx, dk, db)`.
pub fn conv2d_backward(x: &Tensor, k: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let xs = x.shape();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let f = k.shape()[0];
    let plane = h * w;
    let (xd, kd, gd) = (x.data(), k.data(), dout.data());

    let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let xs = &xd[s * c * plane..(s + 1) * c * plane];
            let gs = &gd[s * f * plane..(s + 1) * f * plane];
            let mut dx = vec![0.0; c * plane];
            let mut dk = vec![0.0; f * c * 9];
            let mut db = vec![0.0; f];
            for fi in 0..f {
                let gp = &gs[fi * plane..(fi + 1) * plane];
                db[fi] = gp.iter().sum();
                for ci in 0..c {
                    let ip = &xs[ci * plane..(ci + 1) * plane];
                    let dxp = &mut dx[ci * plane..(ci + 1) * plane];
                    for ky in 0..3 {
                        let (y0, y1) = valid_range(ky, h);
                        for kx in 0..3 {
                            let widx = ((fi * c + ci) * 3 + ky) * 3 + kx;
                            let wv = kd[widx];
                            let (x0, x1) = valid_range(kx, w);
                            let mut acc = 0.0;
                            for y in y0..y1 {
                                let iy = y + ky - 1;
                                let grow = &gp[y * w + x0..y * w + x1];
                                let ilo = iy * w + x0 + kx - 1;
                                let irow = &ip[ilo..ilo + (x1 - x0)];
                                let drow = &mut dxp[ilo..ilo + (x1 - x0)];
                                for ((&g, &i), d) in grow.iter().zip(irow).zip(drow) {
                                    acc += g * i;
                                    *d += g * wv;
                                }
                            }
                            dk[widx] = acc;
                        }
                    }
                }
            }
            (dx, dk, db)
        })
        .collect();

    let mut dx = Vec::with_capacity(n * c * plane);
    let mut dk = vec![0.0; f * c * 9];
    let mut db = vec![0.0; f];
    for (sdx, sdk, sdb) in per_sample {
        dx.extend_from_slice(&sdx);
        for (a, b) in dk.iter_mut().zip(&sdk) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(&sdb) {
            *a += b;
        }
    }
    (
        Tensor::new(xs.to_vec(), dx).unwrap(),
        Tensor::new(k.shape().to_vec(), dk).unwrap(),
        Tensor::new(vec![f], db).unwrap(),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dout: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// 2x2 non-overlapping max pool. Returns the pooled tensor and, for each
/// output element, the flat input index of its maximum (first maximum on ties).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if x.rank() != 4 {
        return Err(Error::dim(format!("maxpool2 expects rank 4, got {:?}", x.shape())));
    }
    let xs = x.shape();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    dx
}

/// `pi * tanh(x)`, bounding values to rotation angles in `(-pi, pi)`.
pub fn tanh_scale(x: &Tensor) -> Tensor {
    x.map(|v| PI * v.tanh())
}

pub fn tanh_scale_backward(x: &Tensor, dout: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| {
            let t = v.tanh();
            g * PI * (1.0 - t * t)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// Row-wise softmax of a `[B, K]` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::dim(format!("softmax expects [B,K], got {:?}", logits.shape())));
    }
    let k = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Vector-Jacobian product of softmax: `p * (g - <p, g>)` per row.
pub fn softmax_backward(probs: &Tensor, dout: &Tensor) -> Tensor {
    let k = probs.shape()[1];
    let mut dx = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(dout.data().chunks(k)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        dx.extend(p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - dot)));
    }
    Tensor::new(probs.shape().to_vec(), dx).unwrap()
}

/// Checks that every row of a `[B, K]` tensor is a probability vector.
pub fn check_distribution_rows(t: &Tensor, what: &str) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::dim(format!("{what} must be [B,K], got {:?}", t.shape())));
    }
    let k = t.shape()[1];
    for (i, row) in t.data().chunks(k).enumerate() {
        if let Some(v) = row.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::validation(format!("{what} row {i} has negative entry {v}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!("{what} row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Per-sample cross-entropy `-sum_k t_k log p_k` with clamped probabilities.
pub fn cross_entropy_rows(probs: &Tensor, targets: &Tensor) -> Vec<f64> {
    let k = probs.shape()[1];
    probs
        .data()
        .chunks(k)
        .zip(targets.data().chunks(k))
        .map(|(p, t)| {
            -p.iter()
                .zip(t)
                .map(|(&pi, &ti)| if ti == 0.0 { 0.0 } else { ti * pi.max(PROB_EPS).ln() })
                .sum::<f64>()
        })
        .collect()
}

/// Per-sample `KL(p || q)` with both arguments clamped.
pub fn kl_rows(p: &Tensor, q: &Tensor) -> Vec<f64> {
    let k = p.shape()[1];
    p.data()
        .chunks(k)
        .zip(q.data().chunks(k))
        .map(|(pr, qr)| kl(pr, qr))
        .collect()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pc = pi.max(PROB_EPS);
            pi * (pc / qi.max(PROB_EPS)).ln()
        })
        .sum()
}

/// Gradient of `mean_b KL(p_b || q_b)` with respect to `p`.
pub fn kl_grad_p(p: &Tensor, q: &Tensor) -> Tensor {
    let b = p.rows() as f64;
    let data = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&pi, &qi)| {
            let qc = qi.max(PROB_EPS);
            if pi > PROB_EPS {
                ((pi / qc).ln() + 1.0) / b
            } else {
                (PROB_EPS / qc).ln() / b
            }
        })
        .collect();
    Tensor::new(p.shape().to_vec(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_examples() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[1.0, 2.0]);

        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        let b = Tensor::vector(vec![1.0]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let x = Tensor::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 1]);
        let err = linear(&x, &w, &Tensor::zeros(&[1])).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 1]"), "{err}");
    }

    #[test]
    fn conv_identity_kernel_and_zero_input() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);

        let z = Tensor::zeros(&[2, 2, 4, 4]);
        let k = Tensor::full(&[3, 2, 3, 3], 0.7);
        let b = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let y = conv2d(&z, &k, &b).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4, 4]);
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, b.data()[(i / 16) % 3]);
        }
    }

    #[test]
    fn conv_padding_edges() {
        // All-ones 3x3 input with an all-ones kernel counts in-bounds neighbours.
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &k, &Tensor::zeros(&[1])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn relu_pool_tanh_examples() {
        let r = relu(&Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);

        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (p, arg) = maxpool2(&x).unwrap();
        assert_eq!(p.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        assert!(maxpool2(&Tensor::zeros(&[1, 1, 3, 2])).is_err());

        let t = tanh_scale(&Tensor::vector(vec![0.0, 10.0]));
        assert_eq!(t.data()[0], 0.0);
        assert!((t.data()[1] - PI).abs() < 1e-4);
    }

    #[test]
    fn maxpool_gradient_only_reaches_argmax() {
        let x = Tensor::new(vec![1, 1, 2, 4], vec![1.0, 5.0, 0.0, -1.0, 2.0, 3.0, 7.0, 6.0]).unwrap();
        let (_, arg) = maxpool2(&x).unwrap();
        let dx = maxpool2_backward(x.shape(), &arg, &Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = Tensor::from_rows(&[vec![1000.0, -3.0, 2.0], vec![0.1, 0.2, 0.3]]).unwrap();
        let p = softmax(&l).unwrap();
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn distribution_check() {
        let bad = Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert!(matches!(check_distribution_rows(&bad, "t"), Err(Error::Validation(_))));
        let neg = Tensor::from_rows(&[vec![1.5, -0.5]]).unwrap();
        assert!(matches!(check_distribution_rows(&neg, "t"), Err(Error::Validation(_))));
    }
}
