//! 4D light fields in channel-last layout `[U, V, H, W, C]` and the four
//! slice views the network works on.
//!
//! | view   | batch form       | batch index |
//! |--------|------------------|-------------|
//! | SAI    | `[U·V, H, W, C]` | `u·V + v`   |
//! | MacPI  | `[H·W, U, V, C]` | `h·W + w`   |
//! | EPI-H  | `[V·W, U, H, C]` | `v·W + w`   |
//! | EPI-V  | `[U·H, V, W, C]` | `u·H + h`   |
//!
//! Every view is a permutation followed by a merge of the two leading axes,
//! so each is a bit-exact bijection.

pub mod augment;
pub mod color;
pub mod resize;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use augment::{augment, extract_patches, geometry_ensemble, Augment, Dihedral};
pub use color::{rgb_to_ycbcr, ycbcr_to_rgb};
pub use resize::{bicubic_resize, bicubic_resize_lf, cubic_weight};

/// Angular and spatial extents `(U, V, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extents {
    pub u: usize,
    pub v: usize,
    pub h: usize,
    pub w: usize,
}

impl Extents {
    pub fn new(u: usize, v: usize, h: usize, w: usize) -> Self {
        Extents { u, v, h, w }
    }

    pub fn views(&self) -> usize {
        self.u * self.v
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.u, self.v, self.h, self.w]
    }
}

/// A light field `L(u, v, h, w)` with `C` values per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField<T> {
    data: Tensor<T>,
}

impl<T: Real> LightField<T> {
    /// Accepts `[U,V,H,W]` (one channel) or `[U,V,H,W,C]`.
    pub fn new(data: Tensor<T>) -> Result<Self> {
        let data = match data.rank() {
            4 => {
                let mut s = data.shape().to_vec();
                s.push(1);
                data.into_reshaped(&s)?
            }
            5 => data,
            _ => return Err(Error::shape(format!("a light field is [U,V,H,W(,C)], got {:?}", data.shape()))),
        };
        if data.shape().contains(&0) {
            return Err(Error::shape(format!("empty light field {:?}", data.shape())));
        }
        Ok(LightField { data })
    }

    pub fn zeros(e: Extents, channels: usize) -> Self {
        LightField { data: Tensor::zeros(&[e.u, e.v, e.h, e.w, channels]) }
    }

    pub fn from_fn(e: Extents, channels: usize, f: impl FnMut(&[usize]) -> T) -> Self {
        LightField { data: Tensor::from_fn(&[e.u, e.v, e.h, e.w, channels], f) }
    }

    pub fn extents(&self) -> Extents {
        let s = self.data.shape();
        Extents::new(s[0], s[1], s[2], s[3])
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[4]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    /// `[U, V, H, W]` view of a single-channel field.
    pub fn to_4d(&self) -> Result<Tensor<T>> {
        if self.channels() != 1 {
            return Err(Error::shape(format!("expected one channel, have {}", self.channels())));
        }
        let e = self.extents();
        self.data.reshape(&e.as_array())
    }

    pub fn at(&self, u: usize, v: usize, h: usize, w: usize, c: usize) -> T {
        self.data.at(&[u, v, h, w, c])
    }

    /// The `[H, W, C]` sub-aperture image at `(u, v)`.
    pub fn view(&self, u: usize, v: usize) -> Tensor<T> {
        let e = self.extents();
        let n = e.h * e.w * self.channels();
        let off = (u * e.v + v) * n;
        Tensor::new(vec![e.h, e.w, self.channels()], self.data.data()[off..off + n].to_vec()).unwrap()
    }

    pub fn set_view(&mut self, u: usize, v: usize, img: &Tensor<T>) -> Result<()> {
        let e = self.extents();
        if img.shape() != [e.h, e.w, self.channels()] {
            return Err(Error::shape(format!("view {:?} into a field of {e:?}", img.shape())));
        }
        let n = img.len();
        let off = (u * e.v + v) * n;
        self.data.data_mut()[off..off + n].copy_from_slice(img.data());
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        LightField { data: self.data.map(f) }
    }

    pub fn cast<U: Real>(&self) -> LightField<U> {
        LightField { data: self.data.cast() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    Sai,
    MacPi,
    EpiH,
    EpiV,
}

impl SliceKind {
    pub const ALL: [SliceKind; 4] = [SliceKind::Sai, SliceKind::MacPi, SliceKind::EpiH, SliceKind::EpiV];

    /// Axis order applied to `[U, V, H, W, C]` before merging axes 0 and 1.
    pub fn axis_order(self) -> [usize; 5] {
        match self {
            SliceKind::Sai => [0, 1, 2, 3, 4],
            SliceKind::MacPi => [2, 3, 0, 1, 4],
            SliceKind::EpiH => [1, 3, 0, 2, 4],
            SliceKind::EpiV => [0, 2, 1, 3, 4],
        }
    }

    pub fn inverse_order(self) -> [usize; 5] {
        let mut inv = [0; 5];
        for (i, &o) in self.axis_order().iter().enumerate() {
            inv[o] = i;
        }
        inv
    }

    /// `[batch, rows, cols]` of the batch form.
    pub fn batch_dims(self, e: Extents) -> [usize; 3] {
        let ext = e.as_array();
        let o = self.axis_order();
        [ext[o[0]] * ext[o[1]], ext[o[2]], ext[o[3]]]
    }

    pub fn name(self) -> &'static str {
        match self {
            SliceKind::Sai => "sai",
            SliceKind::MacPi => "macpi",
            SliceKind::EpiH => "epih",
            SliceKind::EpiV => "epiv",
        }
    }
}

impl std::str::FromStr for SliceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SliceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown view `{s}` (sai, macpi, epih, epiv)")))
    }
}

/// A light field in one batch form, remembering the extents needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceView<T> {
    pub kind: SliceKind,
    pub tensor: Tensor<T>,
    pub extents: Extents,
}

pub fn to_slice<T: Real>(lf: &LightField<T>, kind: SliceKind) -> SliceView<T> {
    let e = lf.extents();
    let [b, r, c] = kind.batch_dims(e);
    let permuted = lf.data.permute(&kind.axis_order()).unwrap();
    let tensor = permuted.into_reshaped(&[b, r, c, lf.channels()]).unwrap();
    SliceView { kind, tensor, extents: e }
}

pub fn from_slice<T: Real>(view: &SliceView<T>) -> Result<LightField<T>> {
    let e = view.extents;
    let [b, r, c] = view.kind.batch_dims(e);
    let s = view.tensor.shape();
    if s.len() != 4 || s[..3] != [b, r, c] {
        return Err(Error::shape(format!("{:?} view of {e:?} cannot have shape {s:?}", view.kind)));
    }
    let ext = e.as_array();
    let o = view.kind.axis_order();
    let split = [ext[o[0]], ext[o[1]], r, c, s[3]];
    let t = view.tensor.reshape(&split)?.permute(&view.kind.inverse_order())?;
    LightField::new(t)
}

pub fn to_sai<T: Real>(lf: &LightField<T>) -> Tensor<T> {
    to_slice(lf, SliceKind::Sai).tensor
}

pub fn to_macpi<T: Real>(lf: &LightField<T>) -> Tensor<T> {
    to_slice(lf, SliceKind::MacPi).tensor
}

pub fn to_epi_h<T: Real>(lf: &LightField<T>) -> Tensor<T> {
    to_slice(lf, SliceKind::EpiH).tensor
}

pub fn to_epi_v<T: Real>(lf: &LightField<T>) -> Tensor<T> {
    to_slice(lf, SliceKind::EpiV).tensor
}

pub fn from_sai<T: Real>(t: &Tensor<T>, e: Extents) -> Result<LightField<T>> {
    from_slice(&SliceView { kind: SliceKind::Sai, tensor: t.clone(), extents: e })
}

pub fn from_macpi<T: Real>(t: &Tensor<T>, e: Extents) -> Result<LightField<T>> {
    from_slice(&SliceView { kind: SliceKind::MacPi, tensor: t.clone(), extents: e })
}

pub fn from_epi_h<T: Real>(t: &Tensor<T>, e: Extents) -> Result<LightField<T>> {
    from_slice(&SliceView { kind: SliceKind::EpiH, tensor: t.clone(), extents: e })
}

pub fn from_epi_v<T: Real>(t: &Tensor<T>, e: Extents) -> Result<LightField<T>> {
    from_slice(&SliceView { kind: SliceKind::EpiV, tensor: t.clone(), extents: e })
}

/// Interleaved `[U·H, V·W]` image: pixel `(h·U + u, w·V + v)` holds `L(u,v,h,w)`.
pub fn macpi_image<T: Real>(lf: &LightField<T>) -> Result<Tensor<T>> {
    let e = lf.extents();
    lf.to_4d()?.permute(&[2, 0, 3, 1])?.into_reshaped(&[e.h * e.u, e.w * e.v])
}

pub fn from_macpi_image<T: Real>(img: &Tensor<T>, e: Extents) -> Result<LightField<T>> {
    if img.shape() != [e.h * e.u, e.w * e.v] {
        return Err(Error::shape(format!("MacPI image {:?} for {e:?}", img.shape())));
    }
    let t = img.reshape(&[e.h, e.u, e.w, e.v])?.permute(&[1, 3, 0, 2])?;
    LightField::new(t)
}

/// Tape form of [`to_slice`] on a `[U,V,H,W,C]` feature.
pub fn slice_var<T: Real>(tape: &mut Tape<T>, x: Var, kind: SliceKind) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 5 {
        return Err(Error::shape(format!("light-field feature must be [U,V,H,W,C], got {s:?}")));
    }
    let e = Extents::new(s[0], s[1], s[2], s[3]);
    let [b, r, c] = kind.batch_dims(e);
    let p = if kind == SliceKind::Sai { x } else { tape.permute(x, &kind.axis_order())? };
    tape.reshape(p, &[b, r, c, s[4]])
}

/// Tape form of [`from_slice`].
pub fn unslice_var<T: Real>(tape: &mut Tape<T>, x: Var, kind: SliceKind, e: Extents) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let [b, r, c] = kind.batch_dims(e);
    if s.len() != 4 || s[..3] != [b, r, c] {
        return Err(Error::shape(format!("{kind:?} view of {e:?} cannot have shape {s:?}")));
    }
    let ext = e.as_array();
    let o = kind.axis_order();
    let split = tape.reshape(x, &[ext[o[0]], ext[o[1]], r, c, s[3]])?;
    if kind == SliceKind::Sai {
        Ok(split)
    } else {
        tape.permute(split, &kind.inverse_order())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(e: Extents, c: usize) -> LightField<f64> {
        let mut k = 0.0;
        LightField::from_fn(e, c, |_| {
            k += 1.0;
            k
        })
    }

    #[test]
    fn batch_shapes() {
        let lf = numbered(Extents::new(5, 5, 32, 32), 64);
        assert_eq!(to_sai(&lf).shape(), &[25, 32, 32, 64]);
        let lf = numbered(Extents::new(2, 3, 4, 5), 2);
        assert_eq!(to_macpi(&lf).shape(), &[20, 2, 3, 2]);
        assert_eq!(to_epi_h(&lf).shape(), &[15, 2, 4, 2]);
        assert_eq!(to_epi_v(&lf).shape(), &[8, 3, 5, 2]);
    }

    #[test]
    fn index_oracles() {
        let e = Extents::new(2, 3, 4, 5);
        let lf = numbered(e, 1);
        let (m, eh, ev) = (to_macpi(&lf), to_epi_h(&lf), to_epi_v(&lf));
        for u in 0..e.u {
            for v in 0..e.v {
                for h in 0..e.h {
                    for w in 0..e.w {
                        let x = lf.at(u, v, h, w, 0);
                        assert_eq!(m.at(&[h * e.w + w, u, v, 0]), x);
                        assert_eq!(eh.at(&[v * e.w + w, u, h, 0]), x);
                        assert_eq!(ev.at(&[u * e.h + h, v, w, 0]), x);
                    }
                }
            }
        }
    }

    #[test]
    fn round_trips() {
        let e = Extents::new(3, 2, 5, 1);
        let lf = numbered(e, 3);
        for kind in SliceKind::ALL {
            assert_eq!(from_slice(&to_slice(&lf, kind)).unwrap(), lf);
        }
        let g = numbered(e, 1);
        assert_eq!(from_macpi_image(&macpi_image(&g).unwrap(), e).unwrap(), g);
    }

    #[test]
    fn macpi_image_small_cases() {
        let lf = numbered(Extents::new(1, 1, 3, 2), 1);
        assert_eq!(macpi_image(&lf).unwrap(), lf.to_4d().unwrap().reshape(&[3, 2]).unwrap());
        let lf = numbered(Extents::new(2, 2, 1, 1), 1);
        assert_eq!(macpi_image(&lf).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn tape_slices_match_tensor_slices() {
        let e = Extents::new(2, 3, 2, 4);
        let lf = numbered(e, 2);
        let mut t = Tape::new();
        let x = t.constant(lf.tensor().clone());
        for kind in SliceKind::ALL {
            let s = slice_var(&mut t, x, kind).unwrap();
            assert_eq!(t.value(s), &to_slice(&lf, kind).tensor);
            let back = unslice_var(&mut t, s, kind, e).unwrap();
            assert_eq!(t.value(back), lf.tensor());
        }
    }

    #[test]
    fn inversion_checks_shape() {
        let lf = numbered(Extents::new(2, 2, 3, 3), 1);
        let mut v = to_slice(&lf, SliceKind::EpiH);
        v.extents = Extents::new(2, 2, 3, 4);
        assert!(from_slice(&v).is_err());
    }
}
