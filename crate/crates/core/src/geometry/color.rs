//! Full-range BT.601 YCbCr with chroma centred at 0.5.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

pub fn rgb_to_ycbcr([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    let cb = 0.5 + (b - y) / (2.0 * (1.0 - KB));
    let cr = 0.5 + (r - y) / (2.0 * (1.0 - KR));
    [y, cb, cr]
}

/// Inverse of [`rgb_to_ycbcr`], clamped to `[0, 1]`.
pub fn ycbcr_to_rgb([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let r = y + 2.0 * (1.0 - KR) * (cr - 0.5);
    let b = y + 2.0 * (1.0 - KB) * (cb - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b].map(|c| c.clamp(0.0, 1.0))
}

fn convert<T: Real>(img: &Tensor<T>, f: fn([f64; 3]) -> [f64; 3]) -> Result<Tensor<T>> {
    if img.shape().last() != Some(&3) {
        return Err(Error::shape(format!("color conversion needs 3 trailing channels, got {:?}", img.shape())));
    }
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(3) {
        let c = f([px[0].to_f64_lossy(), px[1].to_f64_lossy(), px[2].to_f64_lossy()]);
        for (d, s) in px.iter_mut().zip(c) {
            *d = T::lit(s);
        }
    }
    Ok(out)
}

/// Converts every pixel of a `[..., 3]` tensor.
pub fn rgb_to_ycbcr_tensor<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    convert(img, rgb_to_ycbcr)
}

pub fn ycbcr_to_rgb_tensor<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    convert(img, ycbcr_to_rgb)
}
