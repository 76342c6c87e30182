//! Separable bicubic resampling (Keys kernel, `a = −0.5`), half-pixel
//! centres, edge clamp.
//!
//! Each output sample is `(w₀x₀ + w₃x₃) + (w₁x₁ + w₂x₂)` and the 2D result is
//! the mean of the rows-first and columns-first passes. Both choices make the
//! rounding symmetric under flips and transposes, so resizing commutes
//! bit-exactly with the dihedral transforms whenever the sample positions are
//! exact (integer and power-of-two scales).

use super::{Extents, LightField};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CUBIC_A: f64 = -0.5;

pub fn cubic_weight(d: f64) -> f64 {
    let a = CUBIC_A;
    let d = d.abs();
    if d <= 1.0 {
        ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0
    } else if d < 2.0 {
        ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a
    } else {
        0.0
    }
}

struct Taps<T> {
    idx: Vec<[usize; 4]>,
    w: Vec<[T; 4]>,
}

fn taps<T: Real>(n_in: usize, n_out: usize) -> Taps<T> {
    let ratio = n_in as f64 / n_out as f64;
    let mut idx = Vec::with_capacity(n_out);
    let mut w = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let src = (i as f64 + 0.5) * ratio - 0.5;
        let f = src.floor();
        let t = src - f;
        let dist = [1.0 + t, t, 1.0 - t, 2.0 - t];
        let clamp = |k: f64| k.clamp(0.0, (n_in - 1) as f64) as usize;
        idx.push([clamp(f - 1.0), clamp(f), clamp(f + 1.0), clamp(f + 2.0)]);
        w.push(dist.map(|d| T::lit(cubic_weight(d))));
    }
    Taps { idx, w }
}

/// Resamples the middle axis of `[outer, n_in, inner]` to `n_out`.
fn resize_axis<T: Real>(src: &[T], outer: usize, n_in: usize, inner: usize, n_out: usize) -> Vec<T> {
    if n_in == n_out {
        return src.to_vec();
    }
    let tp = taps::<T>(n_in, n_out);
    let mut out = vec![T::zero(); outer * n_out * inner];
    for o in 0..outer {
        let s = &src[o * n_in * inner..(o + 1) * n_in * inner];
        let d = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for (i, (ix, w)) in tp.idx.iter().zip(&tp.w).enumerate() {
            let rows = ix.map(|k| &s[k * inner..(k + 1) * inner]);
            for (j, dst) in d[i * inner..(i + 1) * inner].iter_mut().enumerate() {
                *dst = (w[0] * rows[0][j] + w[3] * rows[3][j]) + (w[1] * rows[1][j] + w[2] * rows[2][j]);
            }
        }
    }
    out
}

/// Adjoint of [`resize_axis`]: scatters `[outer, n_out, inner]` back onto
/// `[outer, n_in, inner]`.
fn resize_axis_adjoint<T: Real>(g: &[T], outer: usize, n_in: usize, inner: usize, n_out: usize) -> Vec<T> {
    if n_in == n_out {
        return g.to_vec();
    }
    let tp = taps::<T>(n_in, n_out);
    let mut out = vec![T::zero(); outer * n_in * inner];
    for o in 0..outer {
        let s = &g[o * n_out * inner..(o + 1) * n_out * inner];
        let d = &mut out[o * n_in * inner..(o + 1) * n_in * inner];
        for (i, (ix, w)) in tp.idx.iter().zip(&tp.w).enumerate() {
            let src = &s[i * inner..(i + 1) * inner];
            for (k, &wk) in ix.iter().zip(w) {
                for (dst, &v) in d[k * inner..(k + 1) * inner].iter_mut().zip(src) {
                    *dst += wk * v;
                }
            }
        }
    }
    out
}

/// `[B, H, W, C] → [B, oh, ow, C]`.
pub fn resize_batch<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("resize_batch expects [B,H,W,C], got {s:?}")));
    }
    if oh == 0 || ow == 0 {
        return Err(Error::domain(format!("resize to empty extent {oh}x{ow}")));
    }
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let rows_first = resize_axis(&resize_axis(x.data(), b, h, w * c, oh), b * oh, w, c, ow);
    let cols_first = resize_axis(&resize_axis(x.data(), b * h, w, c, ow), b, h, ow * c, oh);
    let half = T::lit(0.5);
    let data = rows_first.iter().zip(&cols_first).map(|(&p, &q)| (p + q) * half).collect();
    Tensor::new(vec![b, oh, ow, c], data)
}

impl<T: Real> Tape<T> {
    /// Differentiable [`resize_batch`].
    pub fn bicubic_resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let value = resize_batch(self.value(x), oh, ow)?;
        let s = self.shape(x).to_vec();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let rows = resize_axis_adjoint(&resize_axis_adjoint(g, b * oh, w, c, ow), b, h, w * c, oh);
                let cols = resize_axis_adjoint(&resize_axis_adjoint(g, b, h, ow * c, oh), b * h, w, c, ow);
                let half = T::lit(0.5);
                let d = rows.iter().zip(&cols).map(|(&p, &q)| (p + q) * half).collect();
                vec![Some(Tensor::new(s.clone(), d).unwrap())]
            }),
        ))
    }
}

pub fn scaled_extent(n: usize, scale: f64) -> Result<usize> {
    let m = (n as f64 * scale).round();
    if !(m >= 1.0) {
        return Err(Error::domain(format!("scale {scale} maps extent {n} below 1")));
    }
    Ok(m as usize)
}

/// Resizes `[H, W]` or `[H, W, C]` by `scale`.
pub fn bicubic_resize<T: Real>(img: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let s = img.shape().to_vec();
    let (h, w, c) = match s.len() {
        2 => (s[0], s[1], 1),
        3 => (s[0], s[1], s[2]),
        _ => return Err(Error::shape(format!("bicubic_resize expects [H,W(,C)], got {s:?}"))),
    };
    let (oh, ow) = (scaled_extent(h, scale)?, scaled_extent(w, scale)?);
    let out = resize_batch(&img.reshape(&[1, h, w, c])?, oh, ow)?;
    if s.len() == 2 {
        out.into_reshaped(&[oh, ow])
    } else {
        out.into_reshaped(&[oh, ow, c])
    }
}

/// Resizes every view of a light field spatially.
pub fn bicubic_resize_lf<T: Real>(lf: &LightField<T>, scale: f64) -> Result<LightField<T>> {
    let e = lf.extents();
    let c = lf.channels();
    let (oh, ow) = (scaled_extent(e.h, scale)?, scaled_extent(e.w, scale)?);
    let batch = lf.tensor().reshape(&[e.views(), e.h, e.w, c])?;
    let out = resize_batch(&batch, oh, ow)?;
    LightField::new(out.into_reshaped(&[e.u, e.v, oh, ow, c])?)
}

/// Output extents of [`bicubic_resize_lf`].
pub fn scaled_extents(e: Extents, scale: f64) -> Result<Extents> {
    Ok(Extents::new(e.u, e.v, scaled_extent(e.h, scale)?, scaled_extent(e.w, scale)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[h, w], |i| ((i[0] * 7 + i[1] * 3) % 11) as f64 / 11.0)
    }

    #[test]
    fn weights_partition_unity() {
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let s: f64 = [1.0 + t, t, 1.0 - t, 2.0 - t].iter().map(|&d| cubic_weight(d)).sum();
            assert!((s - 1.0).abs() < 1e-12, "{t}");
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn unit_scale_is_identity() {
        let x = ramp(5, 7);
        assert!(bicubic_resize(&x, 1.0).unwrap().max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[6, 9], 0.37f64);
        for s in [0.5, 2.0, 4.0, 0.25] {
            let y = bicubic_resize(&x, s).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn patch_sizes() {
        assert_eq!(bicubic_resize(&ramp(32, 32), 0.5).unwrap().shape(), &[16, 16]);
        assert_eq!(bicubic_resize(&ramp(64, 64), 0.25).unwrap().shape(), &[16, 16]);
        assert!(matches!(bicubic_resize(&ramp(2, 2), 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn tape_op_matches_and_is_adjoint() {
        let x = Tensor::from_fn(&[2, 5, 6, 3], |i| ((i[0] + 3 * i[1] + 5 * i[2] + 7 * i[3]) % 13) as f64 / 13.0);
        let g = Tensor::from_fn(&[2, 10, 3, 3], |i| ((2 * i[0] + i[1] + 4 * i[2] + i[3]) % 7) as f64 - 3.0);
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let y = t.bicubic_resize(xv, 10, 3).unwrap();
        assert_eq!(t.value(y), &resize_batch(&x, 10, 3).unwrap());
        let l = t.dot_const(y, &g).unwrap();
        let grads = t.backward(l).unwrap();
        // ⟨R x, g⟩ = ⟨x, Rᵀ g⟩ with R applied column by column
        let lhs: f64 = t.value(y).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = grads.wrt(xv).unwrap().data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} {rhs}");
        for k in 0..x.len() {
            let mut e = Tensor::zeros(x.shape());
            e.data_mut()[k] = 1.0;
            let col = resize_batch(&e, 10, 3).unwrap();
            let want: f64 = col.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            assert!((grads.wrt(xv).unwrap().data()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn upscale_commutes_with_flip_and_transpose() {
        let x = ramp(5, 6);
        let y = bicubic_resize(&x, 2.0).unwrap();
        let flipped = Tensor::from_fn(&[5, 6], |i| x.at(&[i[0], 5 - i[1]]));
        let yf = bicubic_resize(&flipped, 2.0).unwrap();
        let transposed = x.permute(&[1, 0]).unwrap();
        let yt = bicubic_resize(&transposed, 2.0).unwrap();
        for r in 0..10 {
            for c in 0..12 {
                assert_eq!(yf.at(&[r, c]), y.at(&[r, 11 - c]));
                assert_eq!(yt.at(&[c, r]), y.at(&[r, c]));
            }
        }
    }
}
