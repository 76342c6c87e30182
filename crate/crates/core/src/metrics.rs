//! PSNR and SSIM on single-channel images, aggregated per light field over
//! its views and then over scenes.

use crate::error::{Error, Result};
use crate::geometry::LightField;
use crate::tensor::Real;

/// `10·log₁₀(peak² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr<T: Real>(a: &[T], b: &[T], peak: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "psnr on different sizes");
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-position separable Gaussian filter of an `h × w` image.
fn blur(img: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM of two `h × w` images with dynamic range `peak`,
/// averaged over all valid window positions.
pub fn ssim<T: Real>(a: &[T], b: &[T], h: usize, w: usize, peak: f64) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape(format!("ssim inputs of {} and {} values for {h}x{w}", a.len(), b.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::domain(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let x: Vec<f64> = a.iter().map(|v| v.to_f64_lossy()).collect();
    let y: Vec<f64> = b.iter().map(|v| v.to_f64_lossy()).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).collect::<Vec<_>>();
    let (mx, my) = (blur(&x, h, w, &g), blur(&y, h, w, &g));
    let (sxx, syy, sxy) = (blur(&prod(&x, &x), h, w, &g), blur(&prod(&y, &y), h, w, &g), blur(&prod(&x, &y), h, w, &g));
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetrics {
    /// `(psnr, ssim)` per view in `u·V + v` order.
    pub per_view: Vec<(f64, f64)>,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scenes: Vec<SceneMetrics>,
    pub psnr: f64,
    pub ssim: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Compares channel 0 of every view.
pub fn evaluate_scene<T: Real>(pred: &LightField<T>, truth: &LightField<T>) -> Result<SceneMetrics> {
    let e = truth.extents();
    if pred.extents() != e {
        return Err(Error::shape(format!("prediction {:?} vs ground truth {e:?}", pred.extents())));
    }
    let channel0 = |lf: &LightField<T>, u, v| -> Vec<T> { lf.view(u, v).data().iter().step_by(lf.channels()).copied().collect() };
    let mut per_view = Vec::with_capacity(e.views());
    for u in 0..e.u {
        for v in 0..e.v {
            let (p, t) = (channel0(pred, u, v), channel0(truth, u, v));
            per_view.push((psnr(&p, &t, 1.0), ssim(&p, &t, e.h, e.w, 1.0)?));
        }
    }
    Ok(SceneMetrics { psnr: mean(per_view.iter().map(|m| m.0)), ssim: mean(per_view.iter().map(|m| m.1)), per_view })
}

/// Views first, then scenes.
pub fn aggregate(scenes: Vec<SceneMetrics>) -> MetricReport {
    MetricReport { psnr: mean(scenes.iter().map(|s| s.psnr)), ssim: mean(scenes.iter().map(|s| s.ssim)), scenes }
}

/// Mean of per-scene means of `values[scene][view]`.
pub fn views_then_scenes(values: &[Vec<f64>]) -> f64 {
    mean(values.iter().map(|v| mean(v.iter().copied())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_goldens() {
        assert_eq!(psnr(&[0.3f64, 0.2], &[0.3, 0.2], 1.0), f64::INFINITY);
        let p = psnr(&[0.0f64], &[0.5], 1.0);
        assert!((p - 6.0206).abs() < 1e-3, "{p}");
        assert!((p - 10.0 * 4f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn psnr_of_uniform_noise() {
        // uniform on [−a, a] has variance a²/3
        let a: f64 = 0.05;
        let n = 200_000;
        let mut s = 12345u64;
        let x = vec![0.5f64; n];
        let y: Vec<f64> = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                0.5 + a * (2.0 * ((s >> 11) as f64 / (1u64 << 53) as f64) - 1.0)
            })
            .collect();
        let want = 10.0 * (3.0 / (a * a)).log10();
        assert!((psnr(&x, &y, 1.0) - want).abs() < 0.05);
    }

    #[test]
    fn ssim_identity_and_checkerboard() {
        let (h, w) = (16, 16);
        let img: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 17) as f64 / 16.0).collect();
        assert!((ssim(&img, &img, h, w, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let board: Vec<f64> = (0..h * w).map(|i| ((i / w + i % w) % 2) as f64).collect();
        let inv: Vec<f64> = board.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&board, &inv, h, w, 1.0).unwrap() < 0.1);
        assert!(matches!(ssim(&img[..100], &img[..100], 10, 10, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn ssim_constant_offset_is_luminance_term() {
        let (h, w) = (12, 13);
        let (m, d) = (0.4, 0.1);
        let a = vec![m; h * w];
        let b = vec![m + d; h * w];
        let c1 = (SSIM_K1 * 1.0f64).powi(2);
        let want = (2.0 * m * (m + d) + c1) / (m * m + (m + d) * (m + d) + c1);
        assert!((ssim(&a, &b, h, w, 1.0).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn aggregation_order_matters() {
        // scene 1 has one view, scene 2 has three
        let values = vec![vec![30.0], vec![20.0, 20.0, 20.0]];
        assert_eq!(views_then_scenes(&values), 25.0);
        let flat: f64 = values.iter().flatten().sum::<f64>() / 4.0;
        assert_eq!(flat, 22.5);
    }
}
