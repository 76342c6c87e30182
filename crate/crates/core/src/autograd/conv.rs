//! Channel-last 2D convolutions. Dense convolution lowers each batch item to
//! an im2col matrix and a single GEMM; depthwise convolution is direct.

use rayon::prelude::*;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub(crate) fn new(x: &[usize], kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 {
            return Err(Error::shape(format!("conv expects [B,H,W,C], got {x:?}")));
        }
        if stride == 0 {
            return Err(Error::shape("conv stride 0"));
        }
        let (hp, wp) = (x[1] + 2 * pad, x[2] + 2 * pad);
        if kh > hp || kw > wp {
            return Err(Error::shape(format!("{kh}x{kw} kernel does not fit padded input {hp}x{wp}")));
        }
        Ok(ConvGeom { b: x[0], h: x[1], w: x[2], cin: x[3], kh, kw, stride, pad, ho: (hp - kh) / stride + 1, wo: (wp - kw) / stride + 1 })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel for output `(oy, ox)` and tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col<T: Real>(&self, img: &[T], col: &mut [T]) {
        let (cin, patch) = (self.cin, self.patch());
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &mut col[(oy * self.wo + ox) * patch..(oy * self.wo + ox + 1) * patch];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let dst = &mut row[(ky * self.kw + kx) * cin..(ky * self.kw + kx + 1) * cin];
                        match self.source(oy, ox, ky, kx) {
                            Some((y, x)) => dst.copy_from_slice(&img[(y * self.w + x) * cin..(y * self.w + x + 1) * cin]),
                            None => dst.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        let (cin, patch) = (self.cin, self.patch());
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &col[(oy * self.wo + ox) * patch..(oy * self.wo + ox + 1) * patch];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                            let src = &row[(ky * self.kw + kx) * cin..(ky * self.kw + kx + 1) * cin];
                            let dst = &mut img[(y * self.w + x) * cin..(y * self.w + x + 1) * cin];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x[B,H,W,Cin]` with `w[kh,kw,Cin,Cout]` plus
    /// optional bias `b[Cout]`. Output extent `⌊(H+2p−k)/s⌋+1`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 {
            return Err(Error::shape(format!("conv2d weight must be [kh,kw,Cin,Cout], got {ws:?}")));
        }
        let g = ConvGeom::new(self.shape(x), ws[0], ws[1], stride, pad)?;
        if ws[2] != g.cin {
            return Err(Error::shape(format!("conv2d: input has {} channels, kernel expects {}", g.cin, ws[2])));
        }
        let cout = ws[3];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape(format!("conv2d bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let (patch, npos) = (g.patch(), g.positions());
        let in_img = g.h * g.w * g.cin;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = vec![T::zero(); g.b * npos * cout];
        out.par_chunks_mut(npos * cout).enumerate().for_each(|(bi, o)| {
            if let Some(bias) = &bias {
                for row in o.chunks_mut(cout) {
                    row.copy_from_slice(bias);
                }
            }
            let mut col = vec![T::zero(); npos * patch];
            g.im2col(&xv[bi * in_img..(bi + 1) * in_img], &mut col);
            gemm(npos, patch, cout, &col, false, wv, false, T::one(), o);
        });
        let value = Tensor::new(vec![g.b, g.ho, g.wo, cout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.custom(
            &inputs,
            value,
            Box::new(move |ctx| {
                let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let gy = ctx.grad.data();
                let mut gx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
                let mut gw = ctx.needs[1].then(|| vec![T::zero(); w.len()]);
                let mut col = vec![T::zero(); npos * patch];
                for bi in 0..g.b {
                    let gyb = &gy[bi * npos * cout..(bi + 1) * npos * cout];
                    if let Some(gw) = gw.as_mut() {
                        g.im2col(&x[bi * in_img..(bi + 1) * in_img], &mut col);
                        gemm(patch, npos, cout, &col, true, gyb, false, T::one(), gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(npos, cout, patch, gyb, false, w, true, T::zero(), &mut col);
                        g.col2im(&col, &mut gx[bi * in_img..(bi + 1) * in_img]);
                    }
                }
                let mut grads = vec![
                    gx.map(|d| Tensor::new(ctx.inputs[0].shape().to_vec(), d).unwrap()),
                    gw.map(|d| Tensor::new(ctx.inputs[1].shape().to_vec(), d).unwrap()),
                ];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| {
                        let mut d = vec![T::zero(); cout];
                        for row in gy.chunks(cout) {
                            for (a, &v) in d.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::new(vec![cout], d).unwrap()
                    }));
                }
                grads
            }),
        ))
    }

    /// One `kh×kw` kernel per channel: `w[kh,kw,C]`, bias `b[C]`, stride 1,
    /// padding `pad`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 {
            return Err(Error::shape(format!("depthwise weight must be [kh,kw,C], got {ws:?}")));
        }
        let g = ConvGeom::new(self.shape(x), ws[0], ws[1], 1, pad)?;
        let c = g.cin;
        if ws[2] != c {
            return Err(Error::shape(format!("depthwise: input has {c} channels, kernel has {}", ws[2])));
        }
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(Error::shape(format!("depthwise bias {:?} for {c} channels", self.shape(b))));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); g.b * g.ho * g.wo * c];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(c) {
                row.copy_from_slice(bias);
            }
        }
        for_each_tap(&g, |xo, oo, wo| {
            for ch in 0..c {
                out[oo + ch] += xv[xo + ch] * wv[wo + ch];
            }
        });
        let value = Tensor::new(vec![g.b, g.ho, g.wo, c], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.custom(
            &inputs,
            value,
            Box::new(move |ctx| {
                let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let gy = ctx.grad.data();
                let mut gx = vec![T::zero(); x.len()];
                let mut gw = vec![T::zero(); w.len()];
                for_each_tap(&g, |xo, oo, wo| {
                    for ch in 0..c {
                        gx[xo + ch] += gy[oo + ch] * w[wo + ch];
                        gw[wo + ch] += gy[oo + ch] * x[xo + ch];
                    }
                });
                let mut grads = vec![
                    ctx.needs[0].then(|| Tensor::new(ctx.inputs[0].shape().to_vec(), gx).unwrap()),
                    ctx.needs[1].then(|| Tensor::new(ctx.inputs[1].shape().to_vec(), gw).unwrap()),
                ];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| {
                        let mut d = vec![T::zero(); c];
                        for row in gy.chunks(c) {
                            for (a, &v) in d.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::new(vec![c], d).unwrap()
                    }));
                }
                grads
            }),
        ))
    }
}

/// Visits `(input offset, output offset, weight offset)` of every valid tap,
/// each pointing at channel 0.
fn for_each_tap(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let c = g.cin;
    for bi in 0..g.b {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let oo = ((bi * g.ho + oy) * g.wo + ox) * c;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            f(((bi * g.h + y) * g.w + x) * c, oo, (ky * g.kw + kx) * c);
                        }
                    }
                }
            }
        }
    }
}
