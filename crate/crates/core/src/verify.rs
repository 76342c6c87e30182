//! Self-checks runnable from a release build: each property is evaluated
//! against an independent reference and reported as a pass/fail line.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ScanOptions, ScanStrategy, Tape};
use crate::blocks::{
    ess2d_map, BasicSsmBlock, BlockConfig, EfficientS6, Ess2d, ScanDirection, ScanLayout, Ss2d, SubspaceBlock, SubspaceKind,
};
use crate::error::{Error, Result};
use crate::geometry::resize::bicubic_resize_lf;
use crate::geometry::{
    from_macpi_image, from_slice, geometry_ensemble, macpi_image, rgb_to_ycbcr, to_slice, ycbcr_to_rgb, Extents, LightField, SliceKind,
};
use crate::gradcheck::{check, GradCheckConfig, GradReport};
use crate::layers::{ChannelAttention, Conv2d, LayerNorm, Linear};
use crate::net::{count_params, LfMamba, NetworkConfig};
use crate::nn::ParamStore;
use crate::ssm::{
    conv_form, discretize_zoh, input_factor, parallel_scan, recurrence, selective_scan, DiagonalSsm, DiscreteSsm, Discretization,
    SelectiveLane, SsmConfig, SsmParams,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Ssm,
    Geometry,
    Blocks,
    Grads,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["ssm", "geometry", "blocks", "grads", "all"];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ssm" => Suite::Ssm,
            "geometry" => Suite::Geometry,
            "blocks" => Suite::Blocks,
            "grads" => Suite::Grads,
            "all" => Suite::All,
            _ => return Err(Error::domain(format!("unknown suite `{s}` ({})", Suite::NAMES.join(", ")))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}::{}  {}", self.suite, self.name, self.detail)
    }
}

struct Recorder {
    suite: &'static str,
    out: Vec<Check>,
}

impl Recorder {
    fn record(&mut self, name: &'static str, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.out.push(Check { suite: self.suite, name, passed, detail });
    }
}

pub fn run(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Ssm => ssm_suite(),
        Suite::Geometry => geometry_suite(),
        Suite::Blocks => blocks_suite(),
        Suite::Grads => grads_suite(),
        Suite::All => [ssm_suite(), geometry_suite(), blocks_suite(), grads_suite()].concat(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random stable diagonal system with `state` modes.
pub fn random_invariant(rng: &mut ChaCha8Rng, state: usize) -> Result<DiagonalSsm<f64>> {
    let a: Vec<f64> = (0..state).map(|_| -rng.gen_range(0.05..2.0)).collect();
    let b: Vec<f64> = (0..state).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..state).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let delta = rng.gen_range(0.01..0.5);
    let d = rng.gen_bool(0.5).then(|| rng.gen_range(-1.0..1.0));
    DiagonalSsm::from_continuous(&a, &b, &c, delta, d, Discretization::Zoh)
}

/// Random input-dependent lane of length `len`.
pub fn random_selective(rng: &mut ChaCha8Rng, len: usize, state: usize) -> Result<SelectiveLane<f64>> {
    let delta: Vec<f64> = (0..len).map(|_| rng.gen_range(0.001..0.5)).collect();
    let a: Vec<f64> = (0..state).map(|_| -rng.gen_range(0.05..2.0)).collect();
    let b: Vec<f64> = (0..len * state).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..len * state).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SelectiveLane::from_continuous(&delta, &a, &b, &c, Some(rng.gen_range(-1.0..1.0)), Discretization::Zoh)
}

fn ssm_suite() -> Vec<Check> {
    let mut r = Recorder { suite: "ssm", out: Vec::new() };
    r.record(
        "invariant_forms_agree",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut worst: f64 = 0.0;
            for i in 0..100 {
                let len = [1, 2, 3, 17, 256][i % 5];
                let ssm = DiscreteSsm::Invariant({
                    let n = rng.gen_range(1..=8);
                    random_invariant(&mut rng, n)?
                });
                let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let reference = recurrence(&ssm, &x)?;
                worst = worst.max(max_abs_diff(&reference, &conv_form(&ssm, &x)?));
                worst = worst.max(max_abs_diff(&reference, &parallel_scan(&ssm, &x)?));
            }
            Ok((worst < 1e-10, format!("100 instances, max |Δ| {worst:.2e}")))
        })(),
    );
    r.record(
        "selective_scan_matches_recurrence",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut worst: f64 = 0.0;
            for i in 0..50 {
                let len = [1, 2, 3, 17, 256][i % 5];
                let ssm = DiscreteSsm::Selective({
                    let n = rng.gen_range(1..=8);
                    random_selective(&mut rng, len, n)?
                });
                let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                worst = worst.max(max_abs_diff(&recurrence(&ssm, &x)?, &parallel_scan(&ssm, &x)?));
            }
            Ok((worst < 1e-10, format!("50 instances, max |Δ| {worst:.2e}")))
        })(),
    );
    r.record(
        "zoh_golden",
        (|| {
            let (a, b) = discretize_zoh(-1.0f64, 1.0, 0.5)?;
            let (ea, eb) = ((-0.5f64).exp(), 1.0 - (-0.5f64).exp());
            let err = (a - ea).abs().max((b - eb).abs());
            Ok((err < 1e-9, format!("Ā {a:.6} B̄ {b:.6}")))
        })(),
    );
    r.record("zoh_small_step_series", {
        // (e^z − 1)/A by its Taylor series, exact to rounding for |z| ≤ 1e-3
        let series = |d: f64, a: f64| {
            let z = d * a;
            let (mut term, mut sum) = (1.0, 0.0);
            for k in 1..12 {
                sum += term;
                term *= z / (k + 1) as f64;
            }
            d * sum
        };
        let mut worst: f64 = 0.0;
        for e in 3..=15 {
            for &a in &[-0.3, -1.0, -2.7] {
                let d = 10f64.powi(-e);
                let got = input_factor(d, a, Discretization::Zoh);
                worst = worst.max(((got - series(d, a)) / series(d, a)).abs());
            }
        }
        Ok((worst < 1e-12, format!("max rel err {worst:.2e}")))
    });
    r.record(
        "scan_strategies_agree",
        (|| {
            let run = |strategy| -> Result<Tensor<f64>> {
                let mut store = ParamStore::new();
                let cfg = SsmConfig { options: ScanOptions { strategy, discretization: Discretization::Zoh }, ..SsmConfig::new(6, 4) };
                let p = SsmParams::new(&mut store, "s", cfg, &mut ChaCha8Rng::seed_from_u64(4))?;
                let x = Tensor::from_fn(&[2, 33, 6], |i| ((i[0] * 7 + i[1] * 3 + i[2]) as f64 * 0.37).sin());
                selective_scan(&p, &store, &x)
            };
            let d = run(ScanStrategy::Sequential)?.max_abs_diff(&run(ScanStrategy::Blelloch)?);
            Ok((d < 1e-12, format!("max |Δ| {d:.2e}")))
        })(),
    );
    r.out
}

fn random_lf(rng: &mut ChaCha8Rng, e: Extents, c: usize) -> LightField<f64> {
    LightField::from_fn(e, c, |_| rng.gen_range(-1.0..1.0))
}

fn geometry_suite() -> Vec<Check> {
    let mut r = Recorder { suite: "geometry", out: Vec::new() };
    r.record(
        "slice_round_trips",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let sizes = [1, 2, 3, 5];
            let mut n = 0;
            for &u in &sizes {
                for &v in &sizes {
                    for &h in &sizes {
                        for &w in &sizes {
                            let lf = random_lf(&mut rng, Extents::new(u, v, h, w), 2);
                            for kind in SliceKind::ALL {
                                if from_slice(&to_slice(&lf, kind))? != lf {
                                    return Ok((false, format!("{} failed at {u}x{v}x{h}x{w}", kind.name())));
                                }
                                n += 1;
                            }
                            let mono = random_lf(&mut rng, Extents::new(u, v, h, w), 1);
                            if from_macpi_image(&macpi_image(&mono)?, mono.extents())? != mono {
                                return Ok((false, format!("macpi image failed at {u}x{v}x{h}x{w}")));
                            }
                        }
                    }
                }
            }
            Ok((true, format!("{n} slice round trips bit-exact")))
        })(),
    );
    r.record(
        "macpi_of_single_view_is_the_view",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let lf = random_lf(&mut rng, Extents::new(1, 1, 4, 6), 1);
            let img = macpi_image(&lf)?;
            Ok((img.data() == lf.view(0, 0).data(), "1×1 angular".into()))
        })(),
    );
    r.record("epi_slice_counts", {
        let e = Extents::new(5, 4, 7, 3);
        let (h, v) = (SliceKind::EpiH.batch_dims(e)[0], SliceKind::EpiV.batch_dims(e)[0]);
        Ok((h == e.v * e.w && v == e.u * e.h, format!("epih {h} epiv {v}")))
    });
    r.record(
        "ensemble_of_bicubic_is_bicubic",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let lf = random_lf(&mut rng, Extents::new(3, 3, 6, 6), 1);
            let single = bicubic_resize_lf(&lf, 2.0)?;
            let ens = geometry_ensemble(&lf, |x| bicubic_resize_lf(x, 2.0))?;
            Ok((ens == single, "8 dihedral copies, bit-exact".into()))
        })(),
    );
    r.record("ycbcr_round_trip", {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let back = ycbcr_to_rgb(rgb_to_ycbcr(rgb));
            worst = worst.max(max_abs_diff(&rgb, &back));
        }
        Ok((worst < 1e-12, format!("max |Δ| {worst:.2e}")))
    });
    r.out
}

/// Parameter count of the default model at `blocks` per subspace and `scale`.
pub fn budget(scale: usize, blocks: usize) -> usize {
    count_params(&NetworkConfig { blocks_per_subspace: blocks, ..NetworkConfig::sr(scale) })
}

pub fn within(value: usize, target: f64, tolerance: f64) -> bool {
    (value as f64 - target).abs() <= tolerance * target
}

fn blocks_suite() -> Vec<Check> {
    let mut r = Recorder { suite: "blocks", out: Vec::new() };
    r.record(
        "scan_layouts_invert",
        (|| {
            for (h, w) in [(1, 1), (2, 3), (4, 4), (5, 2)] {
                let x = Tensor::from_fn(&[2, h, w, 3], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64 + i[3] as f64 * 0.1);
                for d in ScanDirection::ALL {
                    let l = ScanLayout::new(d, h, w);
                    if l.unflatten(&l.flatten(&x)?)? != x {
                        return Ok((false, format!("{d:?} on {h}x{w}")));
                    }
                }
            }
            Ok((true, "4 directions".into()))
        })(),
    );
    r.record(
        "ess2d_identity",
        (|| {
            let x = Tensor::from_fn(&[2, 3, 5, 8], |i| ((i[0] + 2 * i[1] + 3 * i[2] + 5 * i[3]) as f64).sin());
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let y = ess2d_map(&mut t, xv, |_, _, s| Ok(s))?;
            Ok((t.value(y) == &x, "identity maps".into()))
        })(),
    );
    r.record("ess2d_scan_param_ratio", {
        let mut ratios = Vec::new();
        for (c, n, r) in [(64, 16, 4), (32, 8, 2), (8, 4, 1)] {
            let cfg = SsmConfig { dt_rank: r, ..SsmConfig::new(c, n) };
            let (e, s) = (Ess2d::scan_params(cfg), Ss2d::scan_params(cfg));
            ratios.push((4 * e == s, e as f64 / s as f64));
        }
        let ok = ratios.iter().all(|r| r.0);
        Ok((ok, format!("ratios {:?}", ratios.iter().map(|r| r.1).collect::<Vec<_>>())))
    });
    r.record(
        "analytic_count_matches_storage",
        (|| {
            let cfg = NetworkConfig::sr(4);
            let (_, store) = LfMamba::build::<f32>(cfg)?;
            Ok((store.num_scalars() == count_params(&cfg), format!("{} scalars", store.num_scalars())))
        })(),
    );
    r.record("parameter_budgets", {
        let (x4, x2) = (budget(4, 2), budget(2, 2));
        let (b1, b3) = (budget(4, 1), budget(4, 3));
        let ok = within(x4, 2.30e6, 0.15)
            && within(x2, 2.15e6, 0.15)
            && within(b1, 1.47e6, 0.15)
            && within(b3, 3.13e6, 0.15)
            && b1 < x4
            && x4 < b3;
        Ok((ok, format!("x4 {x4} x2 {x2} one-block {b1} three-block {b3}")))
    });
    r.out
}

fn grads_config() -> GradCheckConfig {
    GradCheckConfig::default()
}

fn wave(shape: &[usize], phase: f64) -> Tensor<f64> {
    let mut k = 0.0;
    Tensor::from_fn(shape, |_| {
        k += 1.0;
        (k * 0.613 + phase).sin()
    })
}

fn summary(report: GradReport) -> (bool, String) {
    (report.passed(), format!("{} partials, max rel err {:.2e} at {}", report.checked, report.max_rel_err, report.worst))
}

fn grads_suite() -> Vec<Check> {
    let mut r = Recorder { suite: "grads", out: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = wave(&[1, 3, 3, 8], 0.3);
    r.record(
        "linear",
        (|| {
            let mut s = ParamStore::new();
            let l = Linear::new(&mut s, "l", 8, 5, true, &mut rng)?;
            Ok(summary(check(&s, std::slice::from_ref(&x), grads_config(), |t, s, v| l.forward(t, s, v[0]))?))
        })(),
    );
    r.record(
        "conv3x3",
        (|| {
            let mut s = ParamStore::new();
            let l = Conv2d::same3(&mut s, "c", 8, 3, &mut rng)?;
            Ok(summary(check(&s, std::slice::from_ref(&x), grads_config(), |t, s, v| l.forward(t, s, v[0]))?))
        })(),
    );
    r.record(
        "layer_norm",
        (|| {
            let mut s = ParamStore::new();
            let l = LayerNorm::new(&mut s, "n", 8)?;
            for (i, g) in s.value_mut(l.gamma).data_mut().iter_mut().enumerate() {
                *g = 1.0 + 0.1 * i as f64;
            }
            Ok(summary(check(&s, std::slice::from_ref(&x), grads_config(), |t, s, v| l.forward(t, s, v[0]))?))
        })(),
    );
    r.record(
        "channel_attention",
        (|| {
            let mut s = ParamStore::new();
            let l = ChannelAttention::new(&mut s, "ca", 8, &mut rng)?;
            Ok(summary(check(&s, std::slice::from_ref(&x), grads_config(), |t, s, v| l.forward(t, s, v[0]))?))
        })(),
    );
    r.record(
        "selective_scan",
        (|| {
            let mut s = ParamStore::new();
            let p = SsmParams::new(&mut s, "s", SsmConfig::new(4, 3), &mut rng)?;
            let seq = wave(&[2, 5, 4], 0.1);
            Ok(summary(check(&s, &[seq], grads_config(), |t, s, v| p.forward(t, s, v[0]))?))
        })(),
    );
    let cfg = BlockConfig::new(8, 1, 4);
    r.record(
        "efficient_s6",
        (|| {
            let mut s = ParamStore::new();
            let b = EfficientS6::new(&mut s, "s6", &cfg, &mut rng)?;
            Ok(summary(check(&s, std::slice::from_ref(&x), grads_config(), |t, s, v| b.forward(t, s, v[0]))?))
        })(),
    );
    r.record(
        "basic_ssm_block",
        (|| {
            let mut s = ParamStore::new();
            let b = BasicSsmBlock::new(&mut s, "b", &cfg, &mut rng)?;
            Ok(summary(check(&s, std::slice::from_ref(&x), grads_config(), |t, s, v| b.forward(t, s, v[0]))?))
        })(),
    );
    for (name, kind) in [
        ("subspace_spatial", SubspaceKind::Spatial),
        ("subspace_angular", SubspaceKind::Angular),
        ("subspace_epi_h", SubspaceKind::EpiH),
        ("subspace_epi_v", SubspaceKind::EpiV),
    ] {
        r.record(
            name,
            (|| {
                let mut s = ParamStore::new();
                let b = SubspaceBlock::new(&mut s, "sub", &cfg, 1, &mut rng)?;
                let lf = wave(&[2, 2, 3, 3, 8], 0.7);
                Ok(summary(check(&s, &[lf], grads_config(), |t, s, v| b.forward(t, s, v[0], kind))?))
            })(),
        );
    }
    r.record("toy_network", (|| Ok(summary(toy_network_gradients()?)))());
    r.out
}

/// Finite-difference check of the whole toy network (`C = 8`, `2×2` views of
/// `4×4`, one round of each stage). The zero-initialized output conv is
/// re-randomized so every upstream parameter receives a gradient.
pub fn toy_network_gradients() -> Result<GradReport> {
    let (model, mut store) = LfMamba::build::<f64>(NetworkConfig::toy())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for id in model.head_output_ids() {
        for w in store.value_mut(id).data_mut() {
            *w = rng.gen_range(-0.2..0.2);
        }
    }
    let x = wave(&[2, 2, 4, 4, 1], 0.2).map(|v| 0.5 + 0.4 * v);
    check(&store, &[x], grads_config(), |t, s, v| model.forward(t, s, v[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert!(name.parse::<Suite>().is_ok());
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn fast_suites_pass() {
        for suite in [Suite::Ssm, Suite::Geometry] {
            for c in run(suite) {
                assert!(c.passed, "{c}");
            }
        }
    }
}
