//! Synthetic light fields, the training loop, and the single-patch overfit
//! harness.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{bicubic_resize_lf, Dihedral, Extents, LightField};
use crate::metrics::{psnr, views_then_scenes};
use crate::net::{LfMamba, NetworkConfig};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub halve_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub augment: bool,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (`0` = only the last).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr0: 2e-4, halve_every: 15, epochs: 60, batch: 2, augment: true, seed: 0, checkpoint_every: 0 }
    }
}

impl TrainConfig {
    /// `lr0 · 0.5^⌊epoch / halve_every⌋`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * 0.5f64.powi((epoch / self.halve_every.max(1)) as i32)
    }
}

/// A low-resolution input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub lr: LightField<T>,
    pub hr: LightField<T>,
}

impl<T: Real> Sample<T> {
    /// Bicubic downsampling of `hr` by `scale`.
    pub fn from_hr(hr: LightField<T>, scale: usize) -> Result<Self> {
        let lr = bicubic_resize_lf(&hr, 1.0 / scale as f64)?;
        Ok(Sample { lr, hr })
    }

    pub fn transformed(&self, g: Dihedral) -> Result<Self> {
        Ok(Sample { lr: g.apply(&self.lr)?, hr: g.apply(&self.hr)? })
    }
}

/// One textured plane of a synthetic scene.
#[derive(Debug, Clone)]
struct Layer {
    /// Horizontal and vertical shift per view step, in pixels.
    disparity: f64,
    /// `(fy, fx, phase, amplitude)` gratings.
    waves: Vec<(f64, f64, f64, f64)>,
    base: f64,
    /// Axis-aligned box `(y0, x0, y1, x1)` the layer is clipped to; `None`
    /// covers the plane.
    bounds: Option<(f64, f64, f64, f64)>,
    /// Stripe period of a hard-edged pattern, if any.
    stripes: Option<(f64, f64)>,
}

impl Layer {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64, background: bool) -> Self {
        let waves = (0..3)
            .map(|_| {
                let f = rng.gen_range(0.15..1.1);
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                (f * theta.sin(), f * theta.cos(), rng.gen_range(0.0..6.3), rng.gen_range(0.04..0.12))
            })
            .collect();
        let bounds = (!background).then(|| {
            let (bh, bw) = (rng.gen_range(0.25..0.6) * h, rng.gen_range(0.25..0.6) * w);
            let (y0, x0) = (rng.gen_range(0.0..h - bh), rng.gen_range(0.0..w - bw));
            (y0, x0, y0 + bh, x0 + bw)
        });
        let stripes = rng.gen_bool(0.5).then(|| (rng.gen_range(3.0..7.0), rng.gen_range(0.1..0.25)));
        Layer { disparity: rng.gen_range(-1.0..1.0), waves, base: rng.gen_range(0.3..0.7), bounds, stripes }
    }

    fn sample(&self, y: f64, x: f64) -> Option<f64> {
        if let Some((y0, x0, y1, x1)) = self.bounds {
            if y < y0 || y >= y1 || x < x0 || x >= x1 {
                return None;
            }
        }
        let mut v = self.base;
        for &(fy, fx, p, a) in &self.waves {
            v += a * (fy * y + fx * x + p).sin();
        }
        if let Some((period, amp)) = self.stripes {
            v += if (x + 0.5 * y).rem_euclid(period) < period / 2.0 { amp } else { -amp };
        }
        Some(v.clamp(0.0, 1.0))
    }
}

/// A random layered scene rendered from every view: each layer shifts by its
/// own disparity between neighbouring views and nearer layers occlude farther
/// ones.
pub fn synthetic_light_field<T: Real>(rng: &mut ChaCha8Rng, e: Extents) -> LightField<T> {
    let (h, w) = (e.h as f64, e.w as f64);
    let mut layers = vec![Layer::random(rng, h, w, true)];
    for _ in 0..rng.gen_range(1..=2) {
        layers.push(Layer::random(rng, h, w, false));
    }
    let (uc, vc) = ((e.u as f64 - 1.0) / 2.0, (e.v as f64 - 1.0) / 2.0);
    LightField::from_fn(e, 1, |i| {
        let (du, dv) = (i[0] as f64 - uc, i[1] as f64 - vc);
        let value = layers
            .iter()
            .rev()
            .find_map(|l| l.sample(i[2] as f64 + 0.5 + l.disparity * du, i[3] as f64 + 0.5 + l.disparity * dv))
            .unwrap_or(0.0);
        T::lit(value)
    })
}

/// `n` samples of high-resolution extents `hr` downsampled by `scale`.
pub fn synthetic_dataset<T: Real>(n: usize, hr: Extents, scale: usize, seed: u64) -> Result<Vec<Sample<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Sample::from_hr(synthetic_light_field(&mut rng, hr), scale)).collect()
}

/// Mean L1 loss of the model over `batch`, recorded on `tape`.
fn batch_loss<T: Real>(tape: &mut Tape<T>, model: &LfMamba, store: &ParamStore<T>, batch: &[Sample<T>]) -> Result<Var> {
    let mut losses = Vec::with_capacity(batch.len());
    for s in batch {
        let x = tape.constant(s.lr.tensor().clone());
        let y = model.forward(tape, store, x)?;
        let t = tape.constant(s.hr.tensor().clone());
        losses.push(tape.l1_loss(y, t)?);
    }
    let total = tape.add_n(&losses)?;
    Ok(tape.scale(total, T::lit(1.0 / batch.len() as f64)))
}

/// One optimizer step on `batch`; returns the loss before the update.
pub fn train_step<T: Real>(model: &LfMamba, store: &mut ParamStore<T>, adam: &mut Adam<T>, batch: &[Sample<T>], lr: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = batch_loss(&mut tape, model, store, batch)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite { path: "loss".into() });
    }
    let grads = tape.backward(loss)?;
    store.accumulate(&grads);
    adam.step(store, lr);
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitConfig {
    pub lr: f64,
    /// Cosine decay from `lr` to `lr · final_fraction` over the run.
    pub final_fraction: f64,
    /// Linear ramp from zero over the first steps.
    pub warmup: usize,
    /// Stop as soon as the loss falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig { lr: 2e-3, final_fraction: 0.05, warmup: 100, stop_below: None }
    }
}

/// The fixed overfit instance: `C = 16`, one round of each stage, `5×5`
/// views of `16×16` upsampled to `32×32`.
pub fn overfit_toy() -> (NetworkConfig, Sample<f32>) {
    let cfg = NetworkConfig {
        channels: 16,
        angular: [5, 5],
        scale: 2,
        safl_rounds: 1,
        lsfl_rounds: 1,
        blocks_per_subspace: 1,
        state: 8,
        expansion: 1,
        dt_rank: 1,
        ife_convs: 2,
        seed: 1,
        ..NetworkConfig::default()
    };
    let hr = smooth_light_field(Extents::new(5, 5, 32, 32));
    (cfg, Sample::from_hr(hr, 2).expect("32 halves to 16"))
}

/// Desk-scale run: the overfit network trained on `samples` synthetic
/// `5×5×32×32` patches at ×2 and validated on `held_out` unseen ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskRun {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: Vec<Sample<f32>>,
    pub val: Vec<Sample<f32>>,
}

pub fn desk_run(samples: usize, held_out: usize) -> Result<DeskRun> {
    let hr = Extents::new(5, 5, 32, 32);
    Ok(DeskRun {
        network: overfit_toy().0,
        train: TrainConfig { lr0: 2e-3, halve_every: 30, epochs: 150, batch: 2, augment: true, seed: 5, checkpoint_every: 0 },
        data: synthetic_dataset(samples, hr, 2, 100)?,
        val: synthetic_dataset(held_out, hr, 2, 200)?,
    })
}

/// Two low-frequency planes at different depths joined by a soft diagonal
/// boundary.
fn smooth_light_field<T: Real>(e: Extents) -> LightField<T> {
    let (uc, vc) = ((e.u as f64 - 1.0) / 2.0, (e.v as f64 - 1.0) / 2.0);
    LightField::from_fn(e, 1, |i| {
        let (du, dv) = (i[0] as f64 - uc, i[1] as f64 - vc);
        let (y, x) = (i[2] as f64 + 0.5, i[3] as f64 + 0.5);
        let (yb, xb) = (y + 0.6 * du, x + 0.6 * dv);
        let (yf, xf) = (y - 0.4 * du, x - 0.4 * dv);
        let back = 0.5 + 0.12 * (0.61 * yb + 0.33 * xb).sin() + 0.08 * (0.29 * yb - 0.77 * xb + 1.0).cos();
        let front = 0.45 + 0.15 * (0.57 * xf + 0.5).sin() * (0.41 * yf).cos();
        let mask = 1.0 / (1.0 + (-(xf + 0.7 * yf - 26.0) / 1.0).exp());
        T::lit(back + mask * (front - back))
    })
}

/// Runs Adam on a single sample for `steps` updates. Entry `k` of the result
/// is the L1 loss after `k` updates, so a full run has `steps + 1` points;
/// with `stop_below` set the curve ends at the first loss under the target.
pub fn overfit_single_patch<T: Real>(
    model: &LfMamba,
    store: &mut ParamStore<T>,
    sample: &Sample<T>,
    steps: usize,
    cfg: OverfitConfig,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(store, AdamConfig::default());
    let batch = std::slice::from_ref(sample);
    let mut curve = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let ramp = ((k + 1) as f64 / cfg.warmup.max(1) as f64).min(1.0);
        let lr = ramp * cfg.lr * (cfg.final_fraction + (1.0 - cfg.final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
        let loss = train_step(model, store, &mut adam, batch, lr)?;
        if let Some(&initial) = curve.first() {
            if loss > 10.0 * initial {
                return Err(Error::Diverged { step: k, loss, initial });
            }
        }
        curve.push(loss);
        if cfg.stop_below.is_some_and(|t| loss < t) {
            return Ok(curve);
        }
    }
    let mut tape = Tape::new();
    let loss = batch_loss(&mut tape, model, store, batch)?;
    curve.push(tape.value(loss).data()[0].to_f64_lossy());
    Ok(curve)
}

/// PSNR of the model and of bicubic upsampling, averaged views-then-scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Validation {
    pub psnr: f64,
    pub bicubic_psnr: f64,
}

pub fn validate<T: Real>(model: &LfMamba, store: &ParamStore<T>, samples: &[Sample<T>]) -> Result<Validation> {
    let scale = model.config.scale as f64;
    let mut net = Vec::with_capacity(samples.len());
    let mut bic = Vec::with_capacity(samples.len());
    for s in samples {
        let y = model.infer(store, &s.lr)?;
        let b = bicubic_resize_lf(&s.lr, scale)?;
        let e = s.hr.extents();
        let per_view = |lf: &LightField<T>| -> Vec<f64> {
            (0..e.u)
                .flat_map(|u| (0..e.v).map(move |v| (u, v)))
                .map(|(u, v)| psnr(lf.view(u, v).data(), s.hr.view(u, v).data(), 1.0))
                .collect()
        };
        net.push(per_view(&y));
        bic.push(per_view(&b));
    }
    Ok(Validation { psnr: views_then_scenes(&net), bicubic_psnr: views_then_scenes(&bic) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub validation: Vec<Validation>,
    pub steps: usize,
}

/// Epoch loop: shuffled mini-batches, optional dihedral augmentation, step
/// schedule, one log line `epoch step lr loss psnr_val` per epoch, and
/// checkpoints under `checkpoints` when given. A non-finite loss restores
/// the parameters of the last finished epoch and returns an error.
pub fn train<T: Real>(
    model: &LfMamba,
    store: &mut ParamStore<T>,
    data: &[Sample<T>],
    val: &[Sample<T>],
    cfg: &TrainConfig,
    log: &mut dyn Write,
    checkpoints: Option<&Path>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::domain("empty training set"));
    }
    let batch = cfg.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(store, AdamConfig::default());
    let square = model.config.angular[0] == model.config.angular[1];
    let mut report = TrainReport { epoch_loss: Vec::new(), validation: Vec::new(), steps: 0 };
    let mut last_good = store.clone();
    let save = |store: &ParamStore<T>, name: &str| -> Result<()> {
        match checkpoints {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                model.save(store, dir.join(name))
            }
            None => Ok(()),
        }
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            let samples = chunk
                .iter()
                .map(|&i| if cfg.augment { data[i].transformed(Dihedral::random(&mut rng, square)) } else { Ok(data[i].clone()) })
                .collect::<Result<Vec<_>>>()?;
            match train_step(model, store, &mut adam, &samples, lr) {
                Ok(loss) => {
                    total += loss;
                    batches += 1;
                    report.steps += 1;
                }
                Err(err @ Error::NonFinite { .. }) => {
                    *store = last_good;
                    save(store, "last_good.lfmc")?;
                    return Err(err);
                }
                Err(err) => return Err(err),
            }
        }
        let mean = total / batches as f64;
        report.epoch_loss.push(mean);
        let psnr_val = if val.is_empty() {
            f64::NAN
        } else {
            let v = validate(model, store, val)?;
            report.validation.push(v);
            v.psnr
        };
        writeln!(log, "{epoch} {} {lr:e} {mean:.6e} {psnr_val:.4}", report.steps).map_err(|e| Error::io("training log", e))?;
        last_good = store.clone();
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            save(store, &format!("epoch_{epoch}.lfmc"))?;
        }
    }
    save(store, "last.lfmc")?;
    Ok(report)
}
