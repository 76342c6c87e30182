//! Joint spatial-angular flips and rotations, patch cropping, and the 8-fold
//! dihedral self-ensemble.
//!
//! A flip or rotation of the scene moves both the pixel grid and the camera
//! grid, so every transform acts on the `(h, w)` and `(u, v)` planes together.
//! This keeps the slope of every EPI line consistent with its disparity.

use rand::Rng;

use super::{Extents, LightField};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augment {
    /// Reverses `w` and `v`.
    FlipH,
    /// Reverses `h` and `u`.
    FlipV,
    /// Rotates both planes by 90°: `P'[i, j] = P[j, S − 1 − i]`. Needs `U = V`.
    Rot90,
}

pub fn augment<T: Real>(lf: &LightField<T>, op: Augment) -> Result<LightField<T>> {
    let e = lf.extents();
    let c = lf.channels();
    let t = lf.tensor();
    let out = match op {
        Augment::FlipH => Tensor::from_fn(t.shape(), |i| t.at(&[i[0], e.v - 1 - i[1], i[2], e.w - 1 - i[3], i[4]])),
        Augment::FlipV => Tensor::from_fn(t.shape(), |i| t.at(&[e.u - 1 - i[0], i[1], e.h - 1 - i[2], i[3], i[4]])),
        Augment::Rot90 => {
            if e.u != e.v {
                return Err(Error::domain(format!("rot90 needs a square angular grid, got {}x{}", e.u, e.v)));
            }
            Tensor::from_fn(&[e.v, e.u, e.w, e.h, c], |i| t.at(&[i[1], e.v - 1 - i[0], i[3], e.w - 1 - i[2], i[4]]))
        }
    };
    LightField::new(out)
}

/// Element of the dihedral group of order 8: an optional horizontal flip
/// followed by `rot` quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rot: 0 };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (k, d) in out.iter_mut().enumerate() {
            *d = Dihedral { flip: k >= 4, rot: (k % 4) as u8 };
        }
        out
    }

    pub fn random(rng: &mut impl Rng, allow_rot: bool) -> Self {
        Dihedral { flip: rng.gen(), rot: if allow_rot { rng.gen_range(0..4) } else { 2 * rng.gen_range(0..2) } }
    }

    pub fn apply<T: Real>(self, lf: &LightField<T>) -> Result<LightField<T>> {
        let flipped = if self.flip { augment(lf, Augment::FlipH)? } else { lf.clone() };
        quarter_turns(&flipped, self.rot)
    }

    pub fn invert<T: Real>(self, lf: &LightField<T>) -> Result<LightField<T>> {
        let back = quarter_turns(lf, (4 - self.rot) % 4)?;
        if self.flip {
            augment(&back, Augment::FlipH)
        } else {
            Ok(back)
        }
    }
}

/// `k` quarter turns. The half turn reverses all four axes, which also works
/// on non-square angular grids.
fn quarter_turns<T: Real>(lf: &LightField<T>, k: u8) -> Result<LightField<T>> {
    match k % 4 {
        0 => Ok(lf.clone()),
        2 => augment(&augment(lf, Augment::FlipH)?, Augment::FlipV),
        k => (0..k).try_fold(lf.clone(), |acc, _| augment(&acc, Augment::Rot90)),
    }
}

/// Runs `model` on all eight transformed copies, maps each result back, and
/// averages.
pub fn geometry_ensemble<T: Real>(
    lf: &LightField<T>,
    mut model: impl FnMut(&LightField<T>) -> Result<LightField<T>>,
) -> Result<LightField<T>> {
    let mut outs = Vec::with_capacity(8);
    for g in Dihedral::all() {
        outs.push(g.invert(&model(&g.apply(lf)?)?)?);
    }
    // pairwise tree so that eight equal inputs sum exactly
    while outs.len() > 1 {
        outs = outs.chunks(2).map(|p| LightField::new(p[0].tensor().zip_map(p[1].tensor(), |a, b| a + b)?)).collect::<Result<_>>()?;
    }
    let sum = outs.pop().unwrap();
    Ok(sum.map(|x| x * T::lit(0.125)))
}

/// All `size × size` spatial crops at the given stride, identical for every
/// view, in row-major window order.
pub fn extract_patches<T: Real>(lf: &LightField<T>, size: usize, stride: usize) -> Result<Vec<LightField<T>>> {
    let e = lf.extents();
    if size == 0 || stride == 0 {
        return Err(Error::domain("patch size and stride must be positive"));
    }
    if size > e.h || size > e.w {
        return Err(Error::domain(format!("patch {size} exceeds spatial extent {}x{}", e.h, e.w)));
    }
    let c = lf.channels();
    let t = lf.tensor();
    let mut out = Vec::new();
    for y in (0..=e.h - size).step_by(stride) {
        for x in (0..=e.w - size).step_by(stride) {
            let pe = Extents::new(e.u, e.v, size, size);
            out.push(LightField::from_fn(pe, c, |i| t.at(&[i[0], i[1], y + i[2], x + i[3], i[4]])));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{to_epi_h, Extents};

    fn field(e: Extents) -> LightField<f64> {
        let mut k = 0.0;
        LightField::from_fn(e, 1, |_| {
            k += 1.0;
            (k * 0.37f64).sin()
        })
    }

    #[test]
    fn group_relations() {
        let lf = field(Extents::new(3, 3, 4, 5));
        let twice = augment(&augment(&lf, Augment::FlipH).unwrap(), Augment::FlipH).unwrap();
        assert_eq!(twice, lf);
        let mut r = lf.clone();
        for _ in 0..4 {
            r = augment(&r, Augment::Rot90).unwrap();
        }
        assert_eq!(r, lf);
        let mut m = lf.clone();
        for _ in 0..2 {
            m = augment(&m, Augment::FlipH).unwrap();
            m = augment(&m, Augment::Rot90).unwrap();
        }
        assert_eq!(m, lf);
    }

    #[test]
    fn rot90_needs_square_angles() {
        let lf = field(Extents::new(2, 3, 2, 2));
        assert!(matches!(augment(&lf, Augment::Rot90), Err(Error::Domain(_))));
    }

    #[test]
    fn flip_v_reverses_epi_h_axes() {
        let e = Extents::new(3, 2, 4, 5);
        let lf = field(e);
        let a = to_epi_h(&augment(&lf, Augment::FlipV).unwrap());
        let b = to_epi_h(&lf);
        for bi in 0..e.v * e.w {
            for u in 0..e.u {
                for h in 0..e.h {
                    // batch index v·W + w is untouched by a vertical flip
                    assert_eq!(a.at(&[bi, u, h, 0]), b.at(&[bi, e.u - 1 - u, e.h - 1 - h, 0]));
                }
            }
        }
    }

    #[test]
    fn dihedral_inverse() {
        let lf = field(Extents::new(2, 2, 3, 4));
        for g in Dihedral::all() {
            assert_eq!(g.invert(&g.apply(&lf).unwrap()).unwrap(), lf, "{g:?}");
        }
    }

    #[test]
    fn ensemble_of_identity_is_exact() {
        let lf = field(Extents::new(3, 3, 4, 4));
        assert_eq!(geometry_ensemble(&lf, |x| Ok(x.clone())).unwrap(), lf);
    }

    #[test]
    fn ensemble_of_constant_model() {
        let lf = field(Extents::new(2, 2, 2, 3));
        let k = LightField::from_fn(Extents::new(2, 2, 2, 3), 1, |i| (i[2] * 3 + i[3]) as f64);
        let out = geometry_ensemble(&lf, |x| {
            // same constant in every orientation the model sees
            let e = x.extents();
            Ok(LightField::from_fn(e, 1, |i| (i[2] * e.w + i[3]) as f64))
        })
        .unwrap();
        let mut want = LightField::zeros(lf.extents(), 1);
        for g in Dihedral::all() {
            let e = g.apply(&lf).unwrap().extents();
            let c = LightField::from_fn(e, 1, |i| (i[2] * e.w + i[3]) as f64);
            let back = g.invert(&c).unwrap();
            for (w, b) in want.tensor_mut().data_mut().iter_mut().zip(back.tensor().data()) {
                *w += b / 8.0;
            }
        }
        assert!(out.tensor().max_abs_diff(want.tensor()) < 1e-12);
        assert_ne!(out, k);
    }

    #[test]
    fn tiling() {
        let lf = field(Extents::new(5, 5, 64, 64));
        let p = extract_patches(&lf, 32, 32).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[0].extents(), Extents::new(5, 5, 32, 32));
        assert_eq!(p[0].at(4, 3, 31, 0, 0), lf.at(4, 3, 31, 0, 0));
        assert_eq!(extract_patches(&field(Extents::new(1, 1, 7, 10)), 3, 3).unwrap().len(), 2 * 3);
        assert!(extract_patches(&lf, 65, 1).is_err());
    }
}
