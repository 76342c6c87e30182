//! Light-field files.
//!
//! A container is a directory of `view_{u}_{v}.png` images plus `meta.json`
//! with `{U, V, H, W, channels, bit_depth}`. Values are scaled to `[0, 1]`.
//!
//! The raw format stores one `[U, V, H, W, C]` tensor:
//! `"LFRT" | version u8 | dtype u8 | 5 × u32 extents | row-major scalars`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Reader;
use crate::error::{Error, Result};
use crate::geometry::{Extents, LightField};
use crate::tensor::{Real, Tensor};

pub const META_FILE: &str = "meta.json";
pub const RAW_MAGIC: &[u8; 4] = b"LFRT";
pub const RAW_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub channels: usize,
    pub bit_depth: u8,
}

impl Meta {
    pub fn extents(&self) -> Extents {
        Extents::new(self.u, self.v, self.h, self.w)
    }
}

pub fn view_path(dir: &Path, u: usize, v: usize) -> PathBuf {
    dir.join(format!("view_{u}_{v}.png"))
}

pub fn read_meta(dir: impl AsRef<Path>) -> Result<Meta> {
    let path = dir.as_ref().join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::format("meta.json", e.to_string()))?;
    if ![1, 3].contains(&meta.channels) || ![8, 16].contains(&meta.bit_depth) {
        return Err(Error::format("meta.json", format!("channels {} / bit depth {}", meta.channels, meta.bit_depth)));
    }
    if meta.extents().as_array().contains(&0) {
        return Err(Error::format("meta.json", "zero extent"));
    }
    Ok(meta)
}

/// Reads a container; the result has `meta.channels` channels.
pub fn read_lf_dir<T: Real>(dir: impl AsRef<Path>) -> Result<LightField<T>> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let e = meta.extents();
    let c = meta.channels;
    let mut lf = LightField::zeros(e, c);
    for u in 0..e.u {
        for v in 0..e.v {
            let path = view_path(dir, u, v);
            if !path.exists() {
                return Err(Error::Image { path, detail: "missing view".into() });
            }
            let img = image::open(&path).map_err(|err| Error::Image { path: path.clone(), detail: err.to_string() })?;
            if (img.height() as usize, img.width() as usize) != (e.h, e.w) {
                return Err(Error::Image { path, detail: format!("{}x{} but meta says {}x{}", img.height(), img.width(), e.h, e.w) });
            }
            let values: Vec<T> = match (c, meta.bit_depth) {
                (1, 8) => img.to_luma8().into_raw().into_iter().map(|p| T::lit(p as f64 / 255.0)).collect(),
                (1, _) => img.to_luma16().into_raw().into_iter().map(|p| T::lit(p as f64 / 65535.0)).collect(),
                (_, 8) => img.to_rgb8().into_raw().into_iter().map(|p| T::lit(p as f64 / 255.0)).collect(),
                (_, _) => img.to_rgb16().into_raw().into_iter().map(|p| T::lit(p as f64 / 65535.0)).collect(),
            };
            lf.set_view(u, v, &Tensor::new(vec![e.h, e.w, c], values)?)?;
        }
    }
    Ok(lf)
}

/// Writes a 1- or 3-channel field, clamping to `[0, 1]` and rounding.
pub fn write_lf_dir<T: Real>(lf: &LightField<T>, dir: impl AsRef<Path>, bit_depth: u8) -> Result<()> {
    let dir = dir.as_ref();
    let e = lf.extents();
    let c = lf.channels();
    if ![1, 3].contains(&c) || ![8, 16].contains(&bit_depth) {
        return Err(Error::domain(format!("cannot write {c} channels at {bit_depth} bits")));
    }
    fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    let meta = Meta { u: e.u, v: e.v, h: e.h, w: e.w, channels: c, bit_depth };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, json).map_err(|err| Error::io(&meta_path, err))?;
    let (w, h) = (e.w as u32, e.h as u32);
    for u in 0..e.u {
        for v in 0..e.v {
            let px = lf.view(u, v);
            let q = |max: f64| px.data().iter().map(move |&x| (x.to_f64_lossy().clamp(0.0, 1.0) * max).round());
            let img: DynamicImage = match (c, bit_depth) {
                (1, 8) => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, q(255.0).map(|x| x as u8).collect()).map(DynamicImage::ImageLuma8),
                (1, _) => {
                    ImageBuffer::<Luma<u16>, _>::from_raw(w, h, q(65535.0).map(|x| x as u16).collect()).map(DynamicImage::ImageLuma16)
                }
                (_, 8) => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, q(255.0).map(|x| x as u8).collect()).map(DynamicImage::ImageRgb8),
                (_, _) => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, q(65535.0).map(|x| x as u16).collect()).map(DynamicImage::ImageRgb16),
            }
            .expect("buffer size matches extents");
            let path = view_path(dir, u, v);
            img.save(&path).map_err(|err| Error::Image { path, detail: err.to_string() })?;
        }
    }
    Ok(())
}

/// Writes a single 2D image (`[H, W]` or `[H, W, 1|3]`) as 16-bit PNG.
pub fn write_png<T: Real>(img: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    let (h, w, c) = match s.len() {
        2 => (s[0], s[1], 1),
        3 if s[2] == 1 || s[2] == 3 => (s[0], s[1], s[2]),
        _ => return Err(Error::shape(format!("cannot write image of shape {s:?}"))),
    };
    let lf = LightField::new(img.reshape(&[1, 1, h, w, c])?)?;
    let data: Vec<u16> = lf.view(0, 0).data().iter().map(|x| (x.to_f64_lossy().clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let out = if c == 1 {
        ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data).map(DynamicImage::ImageLuma16)
    } else {
        ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, data).map(DynamicImage::ImageRgb16)
    }
    .expect("buffer size matches extents");
    out.save(path).map_err(|err| Error::Image { path: path.to_path_buf(), detail: err.to_string() })
}

pub fn encode_raw<T: Real>(lf: &LightField<T>) -> Vec<u8> {
    let t = lf.tensor();
    let mut out = Vec::with_capacity(26 + t.len() * std::mem::size_of::<T>());
    out.extend_from_slice(RAW_MAGIC);
    out.push(RAW_VERSION);
    out.push(T::DTYPE as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        x.push_le(&mut out);
    }
    out
}

pub fn decode_raw<T: Real>(bytes: &[u8]) -> Result<LightField<T>> {
    let mut r = Reader::new(bytes, "raw light field");
    r.expect_magic(RAW_MAGIC)?;
    let version = r.u8()?;
    if version != RAW_VERSION {
        return Err(Error::format("raw light field", format!("unsupported version {version}")));
    }
    let dtype = r.dtype()?;
    let shape = (0..5).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let data = r.scalars(dtype, shape.iter().product())?;
    r.finish()?;
    LightField::new(Tensor::new(shape, data)?)
}

pub fn write_raw<T: Real>(lf: &LightField<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw(lf)).map_err(|e| Error::io(path, e))
}

pub fn read_raw<T: Real>(path: impl AsRef<Path>) -> Result<LightField<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes)
}

/// Reads either a container directory or a raw file.
pub fn read_any<T: Real>(path: impl AsRef<Path>) -> Result<LightField<T>> {
    let path = path.as_ref();
    if path.is_dir() {
        read_lf_dir(path)
    } else {
        read_raw(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(c: usize) -> LightField<f64> {
        LightField::from_fn(Extents::new(2, 3, 4, 5), c, |i| ((i[0] + 2 * i[1] + 3 * i[2] + 5 * i[3] + i[4]) % 9) as f64 / 8.0)
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let lf = sample(2).map(|x| x * std::f64::consts::PI);
        assert_eq!(decode_raw::<f64>(&encode_raw(&lf)).unwrap(), lf);
        let bytes = encode_raw(&lf);
        assert!(matches!(decode_raw::<f64>(&bytes[..30]), Err(Error::Format { .. })));
    }

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (c, depth) in [(1, 8), (1, 16), (3, 8), (3, 16)] {
            let lf = sample(c);
            let sub = dir.path().join(format!("c{c}_{depth}"));
            write_lf_dir(&lf, &sub, depth).unwrap();
            let back: LightField<f64> = read_lf_dir(&sub).unwrap();
            // eighths are exact at both depths up to quantization
            let tol = if depth == 8 { 0.5 / 255.0 } else { 0.5 / 65535.0 };
            assert!(back.tensor().max_abs_diff(lf.tensor()) <= tol + 1e-12);
            assert_eq!(read_meta(&sub).unwrap().channels, c);
        }
    }

    #[test]
    fn missing_view_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_lf_dir(&sample(1), dir.path(), 8).unwrap();
        fs::remove_file(view_path(dir.path(), 1, 2)).unwrap();
        assert!(matches!(read_lf_dir::<f64>(dir.path()), Err(Error::Image { .. })));
    }
}
