//! Channel layer norm and batch norm kernels.
//!
//! Inputs are `[N, C, H, W]` or `[N, C]`; the latter is treated as `H = W = 1`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default epsilon for every normalizer.
pub const NORM_EPS: f64 = 1e-5;
/// Default EMA momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub n: usize,
    pub c: usize,
    pub plane: usize,
}

pub(crate) fn layout(shape: &[usize]) -> Result<Layout> {
    match shape {
        [n, c] => Ok(Layout { n: *n, c: *c, plane: 1 }),
        [n, c, h, w] => Ok(Layout {
            n: *n,
            c: *c,
            plane: h * w,
        }),
        _ => Err(Error::Shape(format!(
            "normalization expects [N,C] or [N,C,H,W], got {shape:?}"
        ))),
    }
}

fn check_affine(l: Layout, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [l.c] || beta.shape() != [l.c] {
        return Err(Error::Shape(format!(
            "affine parameters {:?}/{:?} do not match {} channels",
            gamma.shape(),
            beta.shape(),
            l.c
        )));
    }
    if l.c == 0 {
        return Err(Error::Shape("normalization over zero channels".into()));
    }
    Ok(())
}

pub(crate) struct NormForward {
    pub out: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes over channels independently at every `(n, h, w)` position.
pub(crate) fn layer_norm_c_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<NormForward> {
    let l = layout(x.shape())?;
    check_affine(l, gamma, beta)?;
    let xd = x.data();
    let (g, b) = (gamma.data(), beta.data());
    let mut out = vec![0.0; xd.len()];
    let mut xhat = vec![0.0; xd.len()];
    let mut inv_std = vec![0.0; l.n * l.plane];
    let cf = l.c as f64;
    for ni in 0..l.n {
        let base = ni * l.c * l.plane;
        for p in 0..l.plane {
            let idx = |c: usize| base + c * l.plane + p;
            let mean = (0..l.c).map(|c| xd[idx(c)]).sum::<f64>() / cf;
            let var = (0..l.c).map(|c| (xd[idx(c)] - mean).powi(2)).sum::<f64>() / cf;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[ni * l.plane + p] = is;
            for c in 0..l.c {
                let i = idx(c);
                let xh = (xd[i] - mean) * is;
                xhat[i] = xh;
                out[i] = g[c] * xh + b[c];
            }
        }
    }
    Ok(NormForward {
        out: Tensor::new(x.shape().to_vec(), out)?,
        xhat,
        inv_std,
    })
}

pub(crate) fn layer_norm_c_backward(
    shape: &[usize],
    gamma: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let l = layout(shape)?;
    let g = gamma.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; dyd.len()];
    let mut dg = vec![0.0; l.c];
    let mut db = vec![0.0; l.c];
    let cf = l.c as f64;
    for ni in 0..l.n {
        let base = ni * l.c * l.plane;
        for p in 0..l.plane {
            let idx = |c: usize| base + c * l.plane + p;
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for c in 0..l.c {
                let i = idx(c);
                let d = dyd[i] * g[c];
                sum_d += d;
                sum_dx += d * xhat[i];
                dg[c] += dyd[i] * xhat[i];
                db[c] += dyd[i];
            }
            let is = inv_std[ni * l.plane + p];
            for c in 0..l.c {
                let i = idx(c);
                let d = dyd[i] * g[c];
                dx[i] = is / cf * (cf * d - sum_d - xhat[i] * sum_dx);
            }
        }
    }
    Ok((
        Tensor::new(shape.to_vec(), dx)?,
        Tensor::new(vec![l.c], dg)?,
        Tensor::new(vec![l.c], db)?,
    ))
}

/// Batch-norm mode: batch statistics with a running-stat update, or stored
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch norm over `(N, H, W)` per channel. In train mode the running mean
/// and (unbiased) variance move by `momentum` toward the batch statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    momentum: f64,
    eps: f64,
    mode: BnMode,
) -> Result<NormForward> {
    let l = layout(x.shape())?;
    check_affine(l, gamma, beta)?;
    if running_mean.shape() != [l.c] || running_var.shape() != [l.c] {
        return Err(Error::Shape("running statistics do not match channels".into()));
    }
    let xd = x.data();
    let (g, b) = (gamma.data(), beta.data());
    let count = l.n * l.plane;
    if count == 0 {
        return Err(Error::Shape("batch norm over an empty batch".into()));
    }
    let mut out = vec![0.0; xd.len()];
    let mut xhat = vec![0.0; xd.len()];
    let mut inv_std = vec![0.0; l.c];
    for c in 0..l.c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut s = 0.0;
                for ni in 0..l.n {
                    let o = (ni * l.c + c) * l.plane;
                    s += xd[o..o + l.plane].iter().sum::<f64>();
                }
                let mean = s / count as f64;
                let mut ss = 0.0;
                for ni in 0..l.n {
                    let o = (ni * l.c + c) * l.plane;
                    ss += xd[o..o + l.plane].iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                }
                let var = ss / count as f64;
                let unbiased = if count > 1 {
                    ss / (count - 1) as f64
                } else {
                    var
                };
                let rm = &mut running_mean.data_mut()[c];
                *rm = (1.0 - momentum) * *rm + momentum * mean;
                let rv = &mut running_var.data_mut()[c];
                *rv = (1.0 - momentum) * *rv + momentum * unbiased;
                (mean, var)
            }
            BnMode::Eval => (running_mean.data()[c], running_var.data()[c]),
        };
        let is = 1.0 / (var + eps).sqrt();
        inv_std[c] = is;
        for ni in 0..l.n {
            let o = (ni * l.c + c) * l.plane;
            for i in o..o + l.plane {
                let xh = (xd[i] - mean) * is;
                xhat[i] = xh;
                out[i] = g[c] * xh + b[c];
            }
        }
    }
    Ok(NormForward {
        out: Tensor::new(x.shape().to_vec(), out)?,
        xhat,
        inv_std,
    })
}

pub(crate) fn batch_norm_backward(
    shape: &[usize],
    gamma: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    dy: &Tensor,
    mode: BnMode,
) -> Result<(Tensor, Tensor, Tensor)> {
    let l = layout(shape)?;
    let g = gamma.data();
    let dyd = dy.data();
    let m = (l.n * l.plane) as f64;
    let mut dx = vec![0.0; dyd.len()];
    let mut dg = vec![0.0; l.c];
    let mut db = vec![0.0; l.c];
    for c in 0..l.c {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for ni in 0..l.n {
            let o = (ni * l.c + c) * l.plane;
            for i in o..o + l.plane {
                sum_d += dyd[i];
                sum_dx += dyd[i] * xhat[i];
            }
        }
        dg[c] = sum_dx;
        db[c] = sum_d;
        let is = inv_std[c];
        for ni in 0..l.n {
            let o = (ni * l.c + c) * l.plane;
            for i in o..o + l.plane {
                dx[i] = match mode {
                    BnMode::Train => g[c] * is / m * (m * dyd[i] - sum_d - xhat[i] * sum_dx),
                    BnMode::Eval => g[c] * is * dyd[i],
                };
            }
        }
    }
    Ok((
        Tensor::new(shape.to_vec(), dx)?,
        Tensor::new(vec![l.c], dg)?,
        Tensor::new(vec![l.c], db)?,
    ))
}
