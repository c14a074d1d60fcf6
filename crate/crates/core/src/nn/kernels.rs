//! Forward kernels on batch-first tensors.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, Trans};

/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Upper bound on the im2col buffer, in elements.
const IM2COL_LIMIT: usize = 1 << 22;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
pub(crate) fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if x.rank() != 2 || x.cols() != inp {
        return Err(Error::Shape(format!("dense expects [N, {inp}], got {:?}", x.shape())));
    }
    let n = x.rows();
    let mut y = vec![0.0; n * out];
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(b.data());
    }
    gemm(n, inp, out, 1.0, x.data(), Trans::N, w.data(), Trans::T, 1.0, &mut y);
    Tensor::new(vec![n, out], y)
}

pub(crate) fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let [n, c, h, wd] = *x.shape() else {
        return Err(Error::Shape(format!(
            "conv2d expects [N, C, H, W], got {:?}",
            x.shape()
        )));
    };
    let [o, ci, kh, kw] = *w.shape() else {
        return Err(Error::Shape("conv2d weight must be rank 4".into()));
    };
    if ci != c {
        return Err(Error::Shape(format!("conv2d expects {ci} channels, got {c}")));
    }
    let ho = (h + 2 * padding.0 - kh) / stride.0 + 1;
    let wo = (wd + 2 * padding.1 - kw) / stride.1 + 1;
    let ckk = c * kh * kw;
    let plane = ho * wo;
    let mut y = vec![0.0; n * o * plane];
    let pointwise = kh == 1 && kw == 1 && stride == (1, 1) && padding == (0, 0);
    let rows_per_chunk = (IM2COL_LIMIT / (ckk * wo).max(1)).clamp(1, ho);
    let mut cols = Vec::new();
    let mut block = Vec::new();

    for s in 0..n {
        let xs = &x.data()[s * c * h * wd..(s + 1) * c * h * wd];
        let ys = &mut y[s * o * plane..(s + 1) * o * plane];
        if pointwise {
            gemm(o, c, plane, 1.0, w.data(), Trans::N, xs, Trans::N, 0.0, ys);
        } else {
            let mut oh0 = 0;
            while oh0 < ho {
                let oh1 = (oh0 + rows_per_chunk).min(ho);
                let width = (oh1 - oh0) * wo;
                cols.clear();
                cols.resize(ckk * width, 0.0);
                for ch in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let r = (ch * kh + i) * kw + j;
                            let dst = &mut cols[r * width..(r + 1) * width];
                            for oh in oh0..oh1 {
                                let ih = (oh * stride.0 + i) as isize - padding.0 as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let src = &xs[(ch * h + ih as usize) * wd..][..wd];
                                for ow in 0..wo {
                                    let iw = (ow * stride.1 + j) as isize - padding.1 as isize;
                                    if iw >= 0 && iw < wd as isize {
                                        dst[(oh - oh0) * wo + ow] = src[iw as usize];
                                    }
                                }
                            }
                        }
                    }
                }
                block.clear();
                block.resize(o * width, 0.0);
                gemm(o, ckk, width, 1.0, w.data(), Trans::N, &cols, Trans::N, 0.0, &mut block);
                for oc in 0..o {
                    ys[oc * plane + oh0 * wo..oc * plane + oh1 * wo]
                        .copy_from_slice(&block[oc * width..(oc + 1) * width]);
                }
                oh0 = oh1;
            }
        }
        for oc in 0..o {
            let bias = b.data()[oc];
            for v in &mut ys[oc * plane..(oc + 1) * plane] {
                *v += bias;
            }
        }
    }
    Tensor::new(vec![n, o, ho, wo], y)
}

/// Max pooling with no padding. Returns the output and, per output element,
/// the flat input index it was taken from. Ties keep the first index.
pub(crate) fn maxpool2d(x: &Tensor, kernel: (usize, usize), stride: (usize, usize)) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::Shape(format!(
            "maxpool2d expects [N, C, H, W], got {:?}",
            x.shape()
        )));
    };
    let ho = (h - kernel.0) / stride.0 + 1;
    let wo = (w - kernel.1) / stride.1 + 1;
    let mut y = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * stride.0 * w + ow * stride.1;
                for i in 0..kernel.0 {
                    for j in 0..kernel.1 {
                        let idx = base + (oh * stride.0 + i) * w + ow * stride.1 + j;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                y.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], y)?, arg))
}

/// Global pooling `[N, C, H, W] -> [N, C, 1]`. For max pooling the argmax
/// (first index on ties) is returned.
pub(crate) fn global_pool(x: &Tensor, max: bool) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::Shape(format!(
            "global pooling expects [N, C, H, W], got {:?}",
            x.shape()
        )));
    };
    let area = h * w;
    let mut y = Vec::with_capacity(n * c);
    let mut arg = Vec::new();
    for plane in x.data().chunks_exact(area) {
        if max {
            let mut best = 0;
            for (i, v) in plane.iter().enumerate() {
                if *v > plane[best] {
                    best = i;
                }
            }
            arg.push(best);
            y.push(plane[best]);
        } else {
            y.push(plane.iter().sum::<f64>() / area as f64);
        }
    }
    Ok((Tensor::new(vec![n, c, 1], y)?, arg))
}

/// `(outer, channels, inner)` view for batch normalization: rank 2 is
/// `[N, F]` with features on axis 1, rank 4 is `[N, C, H, W]`.
pub(crate) fn bn_layout(shape: &[usize], features: usize) -> Result<(usize, usize, usize)> {
    let layout = match *shape {
        [n, f] => (n, f, 1),
        [n, c, h, w] => (n, c, h * w),
        _ => (0, 0, 0),
    };
    if layout.1 != features {
        return Err(Error::Shape(format!(
            "batchnorm over {features} features got {shape:?}"
        )));
    }
    Ok(layout)
}

pub(crate) struct BatchNormOut {
    pub y: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization. `stats = None` computes (biased) batch statistics;
/// `Some((mean, var))` uses the given running estimates.
pub(crate) fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: Option<(&[f64], &[f64])>,
) -> Result<BatchNormOut> {
    let (outer, ch, inner) = bn_layout(x.shape(), gamma.len())?;
    let count = (outer * inner) as f64;
    let xd = x.data();
    let idx = |o: usize, c: usize, i: usize| (o * ch + c) * inner + i;
    let (mean, var) = match stats {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => {
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for c in 0..ch {
                let mut s = 0.0;
                for o in 0..outer {
                    for i in 0..inner {
                        s += xd[idx(o, c, i)];
                    }
                }
                let m = s / count;
                let mut q = 0.0;
                for o in 0..outer {
                    for i in 0..inner {
                        let d = xd[idx(o, c, i)] - m;
                        q += d * d;
                    }
                }
                mean[c] = m;
                var[c] = q / count;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut y = vec![0.0; xd.len()];
    for o in 0..outer {
        for c in 0..ch {
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            for i in 0..inner {
                let k = idx(o, c, i);
                let h = (xd[k] - mean[c]) * inv_std[c];
                xhat[k] = h;
                y[k] = g * h + b;
            }
        }
    }
    Ok(BatchNormOut {
        y: Tensor::new(x.shape().to_vec(), y)?,
        xhat,
        inv_std,
        mean,
        var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_loop() {
        let (n, c, h, w, o, k) = (2, 3, 5, 4, 2, 3);
        let x = Tensor::new(
            vec![n, c, h, w],
            (0..n * c * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect(),
        )
        .unwrap();
        let wt = Tensor::new(
            vec![o, c, k, k],
            (0..o * c * k * k).map(|i| ((i * 3) % 5) as f64 * 0.1 - 0.2).collect(),
        )
        .unwrap();
        let b = Tensor::vector(vec![0.5, -1.0]);
        let y = conv2d(&x, &wt, &b, (1, 1), (1, 1)).unwrap();
        assert_eq!(y.shape(), &[n, o, h, w]);
        for s in 0..n {
            for oc in 0..o {
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = b.data()[oc];
                        for ic in 0..c {
                            for di in 0..k {
                                for dj in 0..k {
                                    let (ii, jj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                        acc += x.data()[((s * c + ic) * h + ii as usize) * w + jj as usize]
                                            * wt.data()[((oc * c + ic) * k + di) * k + dj];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((s * o + oc) * h + i) * w + j];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_ties_take_first_index() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (y, arg) = maxpool2d(&x, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.data(), &[1.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let x = Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 20.0]]).unwrap();
        let out = batchnorm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), None).unwrap();
        for c in 0..2 {
            let col = out.y.column(c);
            let m: f64 = col.iter().sum::<f64>() / 3.0;
            let v: f64 = col.iter().map(|y| (y - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }
}
