//! Grouped 2-D cross-correlation with zero padding.
//!
//! Per output element the sum runs bias first, then over input channel,
//! kernel row, kernel column. Batches are split across threads one sample at
//! a time; the weight gradient is split one output filter at a time.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dParams {
            stride,
            padding,
            groups,
        }
    }
}

/// `floor((input + 2 * padding - kernel) / stride) + 1`.
pub fn output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidArgument(
            "kernel and stride must be at least 1".into(),
        ));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], p: Conv2dParams) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects rank-4 input and weight, got {x:?} and {w:?}"
            )));
        }
        let (n, cin, h, wd) = (x[0], x[1], x[2], x[3]);
        let (cout, cin_g, kh, kw) = (w[0], w[1], w[2], w[3]);
        if p.groups == 0 || cin % p.groups != 0 || cout % p.groups != 0 {
            return Err(Error::Shape(format!(
                "groups {} must divide input channels {cin} and output channels {cout}",
                p.groups
            )));
        }
        if cin_g != cin / p.groups {
            return Err(Error::Shape(format!(
                "weight expects {cin_g} channels per group, input has {}",
                cin / p.groups
            )));
        }
        if kh != kw {
            return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
        }
        let ho = output_size(h, kh, p.stride, p.padding)?;
        let wo = output_size(wd, kw, p.stride, p.padding)?;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            cin_g,
            cout_g: cout / p.groups,
            k: kh,
            ho,
            wo,
            stride: p.stride,
            pad: p.padding,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.ho, self.wo]
    }
}

/// Output positions `o` in `lo..hi` whose input tap `o * stride + offset - pad`
/// lands inside `0..in_len`.
#[inline]
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    if in_len + pad <= offset {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - offset) / stride + 1).min(out_len);
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// A kernel offset together with the output rectangle it touches.
#[derive(Debug, Clone, Copy)]
struct Tap {
    /// `ky * k + kx`.
    index: usize,
    ky: usize,
    kx: usize,
    oy: (usize, usize),
    ox: (usize, usize),
    /// Output rows in `oy` map onto whole, contiguous input rows.
    contiguous: bool,
}

impl ConvGeom {
    /// Taps in `(ky, kx)` order, skipping those that only ever read padding.
    fn taps(&self) -> Vec<Tap> {
        let mut taps = Vec::new();
        for ky in 0..self.k {
            let oy = valid_range(ky, self.pad, self.stride, self.h, self.ho);
            if oy.0 >= oy.1 {
                continue;
            }
            for kx in 0..self.k {
                let ox = valid_range(kx, self.pad, self.stride, self.w, self.wo);
                if ox.0 >= ox.1 {
                    continue;
                }
                let contiguous = self.stride == 1 && kx == self.pad && self.w == self.wo && ox == (0, self.wo);
                taps.push(Tap {
                    index: ky * self.k + kx,
                    ky,
                    kx,
                    oy,
                    ox,
                    contiguous,
                });
            }
        }
        taps
    }
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0 && self.cin_g == self.cin && self.cout_g == self.cout
    }
}

/// `[C, P]` planes to `[P, C]` rows.
fn transpose(src: &[f64], c: usize, p: usize, dst: &mut [f64]) {
    for ci in 0..c {
        for (pi, &v) in src[ci * p..(ci + 1) * p].iter().enumerate() {
            dst[pi * c + ci] = v;
        }
    }
}

pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    p: Conv2dParams,
) -> Result<Tensor> {
    let g = ConvGeom::new(x.shape(), weight.shape(), p)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::Shape(format!(
                "conv bias shape {:?}, expected [{}]",
                b.shape(),
                g.cout
            )));
        }
    }
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.map(|b| b.data());
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; g.n * g.cout * plane_out];
    if g.is_pointwise() {
        // same per-element order as the general loop: bias, then input channels
        let p = plane_out;
        par::for_each_chunk(&mut out, g.cout * p, |ni, o| {
            let mut xt = vec![0.0; p * g.cin];
            transpose(&xd[ni * g.cin * p..(ni + 1) * g.cin * p], g.cin, p, &mut xt);
            for co in 0..g.cout {
                let wr = &wd[co * g.cin..(co + 1) * g.cin];
                let b = bd.map_or(0.0, |b| b[co]);
                for (pi, dst) in o[co * p..(co + 1) * p].iter_mut().enumerate() {
                    let mut acc = b;
                    for (w, x) in wr.iter().zip(&xt[pi * g.cin..(pi + 1) * g.cin]) {
                        acc += w * x;
                    }
                    *dst = acc;
                }
            }
        });
        return Tensor::new(g.out_shape(), out);
    }
    let taps = g.taps();
    par::for_each_chunk(&mut out, g.cout * plane_out, |ni, o| {
        let xs = &xd[ni * g.cin * g.h * g.w..(ni + 1) * g.cin * g.h * g.w];
        for co in 0..g.cout {
            let grp = co / g.cout_g;
            let plane = &mut o[co * plane_out..(co + 1) * plane_out];
            if let Some(b) = bd {
                plane.fill(b[co]);
            }
            for cil in 0..g.cin_g {
                let ci = grp * g.cin_g + cil;
                let xp = &xs[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                let wk = &wd[(co * g.cin_g + cil) * g.k * g.k..][..g.k * g.k];
                for t in &taps {
                    let wv = wk[t.index];
                    let (oy_lo, oy_hi) = t.oy;
                    let (ox_lo, ox_hi) = t.ox;
                    if t.contiguous {
                        let iy0 = oy_lo + t.ky - g.pad;
                        let src = &xp[iy0 * g.w..(iy0 + oy_hi - oy_lo) * g.w];
                        for (dst, s) in plane[oy_lo * g.wo..oy_hi * g.wo].iter_mut().zip(src) {
                            *dst += wv * s;
                        }
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + t.ky - g.pad;
                        let row = &xp[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut plane[oy * g.wo..(oy + 1) * g.wo];
                        if g.stride == 1 {
                            let shift = ox_lo + t.kx - g.pad;
                            let src = &row[shift..shift + (ox_hi - ox_lo)];
                            for (dst, s) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                *dst += wv * s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * row[ox * g.stride + t.kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(g.out_shape(), out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

fn bias_grad(g: &ConvGeom, dyd: &[f64]) -> Result<Tensor> {
    let plane_out = g.ho * g.wo;
    let mut db = vec![0.0; g.cout];
    for ni in 0..g.n {
        for (co, d) in db.iter_mut().enumerate() {
            let s = (ni * g.cout + co) * plane_out;
            *d += dyd[s..s + plane_out].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![g.cout], db)
}

fn pointwise_backward(g: &ConvGeom, x: &Tensor, weight: &Tensor, dyd: &[f64], need: [bool; 3]) -> Result<ConvGrads> {
    let (p, cin, cout) = (g.h * g.w, g.cin, g.cout);
    let input = if need[0] {
        let mut wt = vec![0.0; cin * cout];
        transpose(weight.data(), cout, cin, &mut wt);
        let mut dx = vec![0.0; g.n * cin * p];
        par::for_each_chunk(&mut dx, cin * p, |ni, dxs| {
            let mut dyt = vec![0.0; p * cout];
            transpose(&dyd[ni * cout * p..(ni + 1) * cout * p], cout, p, &mut dyt);
            for ci in 0..cin {
                let wr = &wt[ci * cout..(ci + 1) * cout];
                for (pi, dst) in dxs[ci * p..(ci + 1) * p].iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (w, d) in wr.iter().zip(&dyt[pi * cout..(pi + 1) * cout]) {
                        acc += w * d;
                    }
                    *dst = acc;
                }
            }
        });
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    let weight_grad = if need[1] {
        let mut xt = vec![0.0; g.n * p * cin];
        for ni in 0..g.n {
            transpose(
                &x.data()[ni * cin * p..(ni + 1) * cin * p],
                cin,
                p,
                &mut xt[ni * p * cin..(ni + 1) * p * cin],
            );
        }
        let mut dw = vec![0.0; cout * cin];
        par::for_each_chunk(&mut dw, cin, |co, row| {
            for ni in 0..g.n {
                let dplane = &dyd[(ni * cout + co) * p..(ni * cout + co + 1) * p];
                for (pi, &d) in dplane.iter().enumerate() {
                    let xr = &xt[(ni * p + pi) * cin..(ni * p + pi + 1) * cin];
                    for (r, xv) in row.iter_mut().zip(xr) {
                        *r += d * xv;
                    }
                }
            }
        });
        Some(Tensor::new(weight.shape().to_vec(), dw)?)
    } else {
        None
    };
    let bias = if need[2] { Some(bias_grad(g, dyd)?) } else { None };
    Ok(ConvGrads {
        input,
        weight: weight_grad,
        bias,
    })
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    dy: &Tensor,
    p: Conv2dParams,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let g = ConvGeom::new(x.shape(), weight.shape(), p)?;
    if dy.shape() != g.out_shape().as_slice() {
        return Err(Error::Shape(format!(
            "conv upstream grad {:?}, expected {:?}",
            dy.shape(),
            g.out_shape()
        )));
    }
    let xd = x.data();
    let wd = weight.data();
    let dyd = dy.data();
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;
    let taps = g.taps();

    if g.is_pointwise() {
        return pointwise_backward(&g, x, weight, dyd, need);
    }
    let input = if need[0] {
        let mut dx = vec![0.0; xd.len()];
        par::for_each_chunk(&mut dx, g.cin * plane_in, |ni, dxs| {
            let dys = &dyd[ni * g.cout * plane_out..(ni + 1) * g.cout * plane_out];
            for co in 0..g.cout {
                let grp = co / g.cout_g;
                let dplane = &dys[co * plane_out..(co + 1) * plane_out];
                for cil in 0..g.cin_g {
                    let ci = grp * g.cin_g + cil;
                    let dxp = &mut dxs[ci * plane_in..(ci + 1) * plane_in];
                    let wk = &wd[(co * g.cin_g + cil) * g.k * g.k..][..g.k * g.k];
                    for t in &taps {
                        let wv = wk[t.index];
                        let (oy_lo, oy_hi) = t.oy;
                        let (ox_lo, ox_hi) = t.ox;
                        if t.contiguous {
                            let iy0 = oy_lo + t.ky - g.pad;
                            let dst = &mut dxp[iy0 * g.w..(iy0 + oy_hi - oy_lo) * g.w];
                            for (d, s) in dst.iter_mut().zip(&dplane[oy_lo * g.wo..oy_hi * g.wo]) {
                                *d += wv * s;
                            }
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + t.ky - g.pad;
                            let drow = &dplane[oy * g.wo..(oy + 1) * g.wo];
                            let xrow = &mut dxp[iy * g.w..(iy + 1) * g.w];
                            for ox in ox_lo..ox_hi {
                                xrow[ox * g.stride + t.kx - g.pad] += wv * drow[ox];
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };

    let weight_grad = if need[1] {
        let per_filter = g.cin_g * g.k * g.k;
        let mut dw = vec![0.0; wd.len()];
        par::for_each_chunk(&mut dw, per_filter, |co, dwf| {
            let grp = co / g.cout_g;
            for ni in 0..g.n {
                let dplane = &dyd[(ni * g.cout + co) * plane_out..(ni * g.cout + co + 1) * plane_out];
                for cil in 0..g.cin_g {
                    let ci = grp * g.cin_g + cil;
                    let xp = &xd[(ni * g.cin + ci) * plane_in..(ni * g.cin + ci + 1) * plane_in];
                    let dwk = &mut dwf[cil * g.k * g.k..(cil + 1) * g.k * g.k];
                    for t in &taps {
                        let (oy_lo, oy_hi) = t.oy;
                        let (ox_lo, ox_hi) = t.ox;
                        let mut acc = 0.0;
                        if t.contiguous {
                            let iy0 = oy_lo + t.ky - g.pad;
                            let src = &xp[iy0 * g.w..(iy0 + oy_hi - oy_lo) * g.w];
                            for (d, s) in dplane[oy_lo * g.wo..oy_hi * g.wo].iter().zip(src) {
                                acc += d * s;
                            }
                        } else {
                            for oy in oy_lo..oy_hi {
                                let iy = oy * g.stride + t.ky - g.pad;
                                let drow = &dplane[oy * g.wo..(oy + 1) * g.wo];
                                let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                                for ox in ox_lo..ox_hi {
                                    acc += drow[ox] * xrow[ox * g.stride + t.kx - g.pad];
                                }
                            }
                        }
                        dwk[t.index] += acc;
                    }
                }
            }
        });
        Some(Tensor::new(weight.shape().to_vec(), dw)?)
    } else {
        None
    };

    let bias = if need[2] { Some(bias_grad(&g, dyd)?) } else { None };

    Ok(ConvGrads {
        input,
        weight: weight_grad,
        bias,
    })
}
