//! The full light-field network.
//!
//! ```text
//! LR [U,V,h,w,1] ─ IFE ─ F_init ─ SAFL ─ F_sa ─ LSFL ─ F_struct
//!                          └────────────┴────────────┴─ fuse ─ head ─ HR
//! ```
//! SAFL alternates angular and spatial subspace blocks, LSFL alternates EPI-V
//! and EPI-H with one weight set per round. Both stages add their input back.
//! The SR head upsamples each view by `scale` and adds a bicubic upsample of
//! the input; the ASR head maps a `2×2` view grid to `7×7`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ScanOptions, Tape, Var};
use crate::blocks::{BlockConfig, SubspaceBlock, SubspaceKind};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::geometry::{slice_var, unslice_var, Extents, LightField, SliceKind};
use crate::layers::{ChannelAttention, Conv2d, Linear};
use crate::nn::{fan_in_uniform, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Concatenate `F_init, F_sa, F_struct` and project `3C → C`.
    #[default]
    Concat,
    Sum,
    /// `F_struct` alone.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Spatial super-resolution by `scale`.
    #[default]
    Sr,
    /// Angular super-resolution from `angular` views to `asr_target²`.
    Asr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub channels: usize,
    /// `[U, V]` of the input.
    pub angular: [usize; 2],
    pub scale: usize,
    pub safl_rounds: usize,
    pub lsfl_rounds: usize,
    pub blocks_per_subspace: usize,
    pub state: usize,
    pub expansion: usize,
    pub dt_rank: usize,
    pub d_skip: bool,
    /// Convolutions in the initial feature extractor (the first maps `1 → C`).
    pub ife_convs: usize,
    pub fusion: Fusion,
    pub bicubic_skip: bool,
    pub variant: Variant,
    pub asr_target: usize,
    pub asr_channels: usize,
    pub scan: ScanOptions,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            channels: 64,
            angular: [5, 5],
            scale: 4,
            safl_rounds: 3,
            lsfl_rounds: 3,
            blocks_per_subspace: 2,
            state: 16,
            expansion: 3,
            dt_rank: 4,
            d_skip: true,
            ife_convs: 4,
            fusion: Fusion::Concat,
            bicubic_skip: true,
            variant: Variant::Sr,
            asr_target: 7,
            asr_channels: 32,
            scan: ScanOptions::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn sr(scale: usize) -> Self {
        NetworkConfig { scale, ..Self::default() }
    }

    pub fn asr() -> Self {
        NetworkConfig { angular: [2, 2], variant: Variant::Asr, bicubic_skip: false, ..Self::default() }
    }

    /// `C = 8`, `2×2` views, one round of each stage, one block per subspace.
    pub fn toy() -> Self {
        NetworkConfig {
            channels: 8,
            angular: [2, 2],
            scale: 2,
            safl_rounds: 1,
            lsfl_rounds: 1,
            blocks_per_subspace: 1,
            state: 4,
            expansion: 1,
            dt_rank: 1,
            ife_convs: 2,
            asr_channels: 4,
            ..Self::default()
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            channels: self.channels,
            expansion: self.expansion,
            state: self.state,
            dt_rank: self.dt_rank,
            d_skip: self.d_skip,
            scan: self.scan,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block().validate()?;
        if self.ife_convs == 0 || self.blocks_per_subspace == 0 {
            return Err(Error::domain("ife_convs and blocks_per_subspace must be positive"));
        }
        if self.angular.contains(&0) {
            return Err(Error::domain("angular extents must be positive"));
        }
        match self.variant {
            Variant::Sr if ![2, 4].contains(&self.scale) => Err(Error::domain(format!("scale {} (expected 2 or 4)", self.scale))),
            Variant::Asr if self.asr_target == 0 || self.asr_channels == 0 => Err(Error::domain("empty ASR target")),
            _ => Ok(()),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format("network config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Output extents for an input of extents `e`.
    pub fn output_extents(&self, e: Extents) -> Extents {
        match self.variant {
            Variant::Sr => Extents::new(e.u, e.v, e.h * self.scale, e.w * self.scale),
            Variant::Asr => Extents::new(self.asr_target, self.asr_target, e.h, e.w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Head {
    Sr { up: Conv2d, out: Conv2d },
    Asr { angular_weight: ParamId, angular_bias: ParamId, expand: Linear, out: Conv2d },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfMamba {
    pub config: NetworkConfig,
    pub ife: Vec<Conv2d>,
    /// `(angular, spatial)` per round.
    pub safl: Vec<(SubspaceBlock, SubspaceBlock)>,
    /// One block set per round, applied as EPI-V then EPI-H.
    pub lsfl: Vec<SubspaceBlock>,
    pub fuse: Option<Linear>,
    pub head: Head,
}

pub const IFE_SLOPE: f64 = 0.2;

impl LfMamba {
    /// Registers every parameter in `store`, initialized from `config.seed`.
    pub fn new<T: Real>(config: NetworkConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.channels;
        let bc = config.block();
        let d = config.blocks_per_subspace;
        let mut ife = Vec::with_capacity(config.ife_convs);
        for i in 0..config.ife_convs {
            ife.push(Conv2d::same3(store, &format!("ife.{i}"), if i == 0 { 1 } else { c }, c, rng)?);
        }
        let safl = (0..config.safl_rounds)
            .map(|r| {
                Ok((
                    SubspaceBlock::new(store, &format!("safl.{r}.angular"), &bc, d, rng)?,
                    SubspaceBlock::new(store, &format!("safl.{r}.spatial"), &bc, d, rng)?,
                ))
            })
            .collect::<Result<_>>()?;
        let lsfl =
            (0..config.lsfl_rounds).map(|r| SubspaceBlock::new(store, &format!("lsfl.{r}.epi"), &bc, d, rng)).collect::<Result<_>>()?;
        let fuse = match config.fusion {
            Fusion::Concat => Some(Linear::new(store, "fuse", 3 * c, c, true, rng)?),
            _ => None,
        };
        let head = match config.variant {
            Variant::Sr => {
                let a = config.scale;
                let up = Conv2d::same3(store, "head.up", c, c * a * a, rng)?;
                let out = Conv2d::same3(store, "head.out", c, 1, rng)?;
                // the untrained model starts as plain bicubic upsampling
                store.value_mut(out.weight).data_mut().fill(T::zero());
                Head::Sr { up, out }
            }
            Variant::Asr => {
                let [u, v] = config.angular;
                let (t, cp) = (config.asr_target, config.asr_channels);
                let angular_weight = store.add("head.angular.weight", fan_in_uniform(&[u, v, c, c], u * v * c, rng))?;
                let angular_bias = store.add("head.angular.bias", Tensor::zeros(&[c]))?;
                Head::Asr {
                    angular_weight,
                    angular_bias,
                    expand: Linear::new(store, "head.expand", c, t * t * cp, true, rng)?,
                    out: Conv2d::same3(store, "head.out", cp, 1, rng)?,
                }
            }
        };
        Ok(LfMamba { config, ife, safl, lsfl, fuse, head })
    }

    pub fn build<T: Real>(config: NetworkConfig) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = Self::new(config, &mut store)?;
        Ok((model, store))
    }

    fn check_input(&self, s: &[usize]) -> Result<Extents> {
        let [u, v] = self.config.angular;
        if s.len() != 5 || s[4] != 1 || s[0] != u || s[1] != v {
            return Err(Error::shape(format!("model expects [{u},{v},h,w,1], got {s:?}")));
        }
        Ok(Extents::new(s[0], s[1], s[2], s[3]))
    }

    /// `[U, V, h, w, 1] → [U, V, h, w, C]`.
    pub fn ife<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let e = self.check_input(tape.shape(x))?;
        let mut f = tape.reshape(x, &[e.views(), e.h, e.w, 1])?;
        for (i, conv) in self.ife.iter().enumerate() {
            if i > 0 {
                f = tape.leaky_relu(f, T::lit(IFE_SLOPE));
            }
            f = conv.forward(tape, store, f)?;
        }
        tape.reshape(f, &[e.u, e.v, e.h, e.w, self.config.channels])
    }

    pub fn safl<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, f: Var) -> Result<Var> {
        let mut y = f;
        for (ang, spa) in &self.safl {
            y = ang.forward(tape, store, y, SubspaceKind::Angular)?;
            y = spa.forward(tape, store, y, SubspaceKind::Spatial)?;
        }
        tape.add(y, f)
    }

    pub fn lsfl<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, f: Var) -> Result<Var> {
        let mut y = f;
        for epi in &self.lsfl {
            y = epi.forward(tape, store, y, SubspaceKind::EpiV)?;
            y = epi.forward(tape, store, y, SubspaceKind::EpiH)?;
        }
        tape.add(y, f)
    }

    pub fn fuse<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, init: Var, sa: Var, st: Var) -> Result<Var> {
        match (self.config.fusion, &self.fuse) {
            (Fusion::Concat, Some(lin)) => {
                let cat = tape.concat_last(&[init, sa, st])?;
                lin.forward(tape, store, cat)
            }
            (Fusion::Sum, _) => tape.add_n(&[init, sa, st]),
            _ => Ok(st),
        }
    }

    /// Fused features `[U, V, h, w, C]`.
    pub fn features<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let init = self.ife(tape, store, x)?;
        let sa = self.safl(tape, store, init)?;
        let st = self.lsfl(tape, store, sa)?;
        self.fuse(tape, store, init, sa, st)
    }

    /// `[U, V, h, w, 1]` to the output light field `[U', V', H', W', 1]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let f = self.features(tape, store, x)?;
        self.head(tape, store, f, x)
    }

    /// Reconstruction from fused features `f` and the input `x`.
    pub fn head<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, f: Var, x: Var) -> Result<Var> {
        let e = self.check_input(tape.shape(x))?;
        match &self.head {
            Head::Sr { up, out } => self.reconstruct(tape, store, f, x, e, up, out),
            Head::Asr { angular_weight, angular_bias, expand, out } => {
                let (t, cp) = (self.config.asr_target, self.config.asr_channels);
                let m = slice_var(tape, f, SliceKind::MacPi)?;
                let (w, b) = (tape.param(store, *angular_weight), tape.param(store, *angular_bias));
                let a = tape.conv2d(m, w, Some(b), 1, 0)?;
                let z = expand.forward(tape, store, a)?;
                let z = tape.pixel_shuffle(z, t)?;
                let target = Extents::new(t, t, e.h, e.w);
                let g = unslice_var(tape, z, SliceKind::MacPi, target)?;
                let g = tape.reshape(g, &[t * t, e.h, e.w, cp])?;
                let y = out.forward(tape, store, g)?;
                tape.reshape(y, &[t, t, e.h, e.w, 1])
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn reconstruct<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        f: Var,
        x: Var,
        e: Extents,
        up: &Conv2d,
        out: &Conv2d,
    ) -> Result<Var> {
        let a = self.config.scale;
        let (oh, ow) = (e.h * a, e.w * a);
        let g = tape.reshape(f, &[e.views(), e.h, e.w, self.config.channels])?;
        let g = up.forward(tape, store, g)?;
        let g = tape.pixel_shuffle(g, a)?;
        let y = out.forward(tape, store, g)?;
        let y = if self.config.bicubic_skip {
            let lr = tape.reshape(x, &[e.views(), e.h, e.w, 1])?;
            let skip = tape.bicubic_resize(lr, oh, ow)?;
            tape.add(y, skip)?
        } else {
            y
        };
        tape.reshape(y, &[e.u, e.v, oh, ow, 1])
    }

    /// Forward pass on a single-channel light field without gradients.
    pub fn infer<T: Real>(&self, store: &ParamStore<T>, lf: &LightField<T>) -> Result<LightField<T>> {
        if lf.channels() != 1 {
            return Err(Error::shape(format!("model input must have one channel, got {}", lf.channels())));
        }
        self.check_input(lf.tensor().shape())?;
        // one tape per stage keeps peak memory at a single block's activations
        let stage = |inputs: &[&Tensor<T>], f: &dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>| -> Result<Tensor<T>> {
            let mut tape = Tape::inference();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.into_value(out))
        };
        let x = lf.tensor();
        let init = stage(&[x], &|t, v| self.ife(t, store, v[0]))?;
        let mut y = init.clone();
        for (ang, spa) in &self.safl {
            y = ang.infer(store, &y, SubspaceKind::Angular)?;
            y = spa.infer(store, &y, SubspaceKind::Spatial)?;
        }
        let sa = y.zip_map(&init, |a, b| a + b)?;
        let mut y = sa.clone();
        for epi in &self.lsfl {
            y = epi.infer(store, &y, SubspaceKind::EpiV)?;
            y = epi.infer(store, &y, SubspaceKind::EpiH)?;
        }
        let st = y.zip_map(&sa, |a, b| a + b)?;
        let fused = stage(&[&init, &sa, &st], &|t, v| self.fuse(t, store, v[0], v[1], v[2]))?;
        LightField::new(stage(&[&fused, x], &|t, v| self.head(t, store, v[0], v[1]))?)
    }

    /// Parameters of the final output conv, zero at init.
    pub fn head_output_ids(&self) -> Vec<ParamId> {
        match &self.head {
            Head::Sr { out, .. } | Head::Asr { out, .. } => out.ids(),
        }
    }

    /// Every parameter, each shared block counted once.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.ife.iter().flat_map(Conv2d::ids).collect();
        for (a, s) in &self.safl {
            ids.extend(a.ids());
            ids.extend(s.ids());
        }
        ids.extend(self.lsfl.iter().flat_map(SubspaceBlock::ids));
        ids.extend(self.fuse.iter().flat_map(Linear::ids));
        match &self.head {
            Head::Sr { up, out } => ids.extend(up.ids().into_iter().chain(out.ids())),
            Head::Asr { angular_weight, angular_bias, expand, out } => {
                ids.extend([*angular_weight, *angular_bias]);
                ids.extend(expand.ids().into_iter().chain(out.ids()));
            }
        }
        ids
    }

    pub fn save<T: Real>(&self, store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(store, path)?;
        let cfg = config_path(path);
        fs::write(&cfg, self.config.to_toml()).map_err(|e| Error::io(&cfg, e))
    }

    /// Rebuilds the model from the config next to `path`, then loads weights.
    pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<(Self, ParamStore<T>)> {
        let path = path.as_ref();
        let cfg = config_path(path);
        let text = fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
        let (model, mut store) = Self::build(NetworkConfig::from_toml(&text)?)?;
        checkpoint::load_into(&mut store, path)?;
        Ok((model, store))
    }
}

/// `model.ckpt` keeps its config in `model.toml`.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

/// Learnable scalars of a model built from `cfg`.
pub fn count_params(cfg: &NetworkConfig) -> usize {
    let c = cfg.channels;
    let ife = Conv2d::num_params(3, 1, c) + (cfg.ife_convs - 1) * Conv2d::num_params(3, c, c);
    let sub = SubspaceBlock::num_params(&cfg.block(), cfg.blocks_per_subspace);
    let stages = (2 * cfg.safl_rounds + cfg.lsfl_rounds) * sub;
    let fuse = if cfg.fusion == Fusion::Concat { Linear::num_params(3 * c, c, true) } else { 0 };
    let head = match cfg.variant {
        Variant::Sr => Conv2d::num_params(3, c, c * cfg.scale * cfg.scale) + Conv2d::num_params(3, c, 1),
        Variant::Asr => {
            let [u, v] = cfg.angular;
            let (t, cp) = (cfg.asr_target, cfg.asr_channels);
            u * v * c * c + c + Linear::num_params(c, t * t * cp, true) + Conv2d::num_params(3, cp, 1)
        }
    };
    ife + stages + fuse + head
}

/// Multiply-accumulate count of one forward pass; `flops = 2 · macs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    pub macs: u64,
    pub flops: u64,
}

/// MACs of one basic block over `px` feature positions split into `batches`
/// maps. Scan steps count `5N + 2r + 1` MACs per channel: the `B` and `C`
/// projections, the state update `Ā h + B̄ x`, the readout `C·h`, the `Δ`
/// projections and the skip.
fn block_macs(cfg: &BlockConfig, px: u64, batches: u64) -> u64 {
    let (c, e) = (cfg.channels as u64, cfg.inner() as u64);
    let (n, r) = (cfg.state as u64, cfg.dt_rank as u64);
    let s6 = 2 * px * c * e + px * 9 * e + px * e * (5 * n + 2 * r + 1) + px * e * c;
    let ca = batches * 2 * c * ChannelAttention::hidden(cfg.channels) as u64;
    s6 + px * 9 * c * c + ca
}

/// Analytic cost of a forward pass on an input of extents `e`. Elementwise
/// ops (norms, activations, residual adds) are not counted.
pub fn count_flops(cfg: &NetworkConfig, e: Extents) -> FlopCount {
    let c = cfg.channels as u64;
    let px = (e.views() * e.h * e.w) as u64;
    let ife = px * 9 * c + (cfg.ife_convs as u64 - 1) * px * 9 * c * c;
    let bc = cfg.block();
    let depth = cfg.blocks_per_subspace as u64;
    let sub = |kind: SubspaceKind| depth * block_macs(&bc, px, kind.slice().batch_dims(e)[0] as u64);
    let stages = cfg.safl_rounds as u64 * (sub(SubspaceKind::Angular) + sub(SubspaceKind::Spatial))
        + cfg.lsfl_rounds as u64 * (sub(SubspaceKind::EpiV) + sub(SubspaceKind::EpiH));
    let fuse = if cfg.fusion == Fusion::Concat { px * 3 * c * c } else { 0 };
    let head = match cfg.variant {
        Variant::Sr => {
            let a2 = (cfg.scale * cfg.scale) as u64;
            px * 9 * c * c * a2 + px * a2 * 9 * c
        }
        Variant::Asr => {
            let hw = (e.h * e.w) as u64;
            let (t2, cp) = ((cfg.asr_target * cfg.asr_target) as u64, cfg.asr_channels as u64);
            hw * e.views() as u64 * c * c + hw * c * t2 * cp + t2 * hw * 9 * cp
        }
    };
    let macs = ife + stages + fuse + head;
    FlopCount { macs, flops: 2 * macs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bicubic_resize_lf;
    use crate::gradcheck::{check, GradCheckConfig};

    fn lf(e: Extents, phase: f64) -> LightField<f64> {
        let mut k = 0.0;
        LightField::from_fn(e, 1, |_| {
            k += 1.0;
            0.5 + 0.4 * (k * 0.377 + phase).sin()
        })
    }

    fn toy_with(f: impl FnOnce(&mut NetworkConfig)) -> (LfMamba, ParamStore<f64>) {
        let mut cfg = NetworkConfig::toy();
        f(&mut cfg);
        LfMamba::build(cfg).unwrap()
    }

    #[test]
    fn analytic_count_matches_storage() {
        for cfg in [
            NetworkConfig::toy(),
            NetworkConfig { fusion: Fusion::Sum, variant: Variant::Asr, ..NetworkConfig::toy() },
            NetworkConfig { scale: 4, blocks_per_subspace: 2, ife_convs: 3, ..NetworkConfig::toy() },
            NetworkConfig::sr(4),
            NetworkConfig::asr(),
        ] {
            let (m, s) = LfMamba::build::<f32>(cfg).unwrap();
            assert_eq!(s.num_scalars(), count_params(&cfg));
            assert_eq!(s.num_scalars_of(&m.ids()), s.num_scalars());
        }
    }

    #[test]
    fn epi_weights_stored_once_per_round() {
        let cfg = NetworkConfig::toy();
        let (m, s) = LfMamba::build::<f64>(cfg).unwrap();
        let one_block_set = SubspaceBlock::num_params(&cfg.block(), cfg.blocks_per_subspace);
        let lsfl: usize = m.lsfl.iter().map(|b| s.num_scalars_of(&b.ids())).sum();
        assert_eq!(lsfl, cfg.lsfl_rounds * one_block_set);
        assert!(s.iter().all(|(_, p)| !p.name.contains("epi_h") && !p.name.contains("epi_v")));
    }

    #[test]
    fn zero_weights_give_bicubic() {
        let (m, mut s) = toy_with(|_| {});
        s.zero_values();
        let x = lf(Extents::new(2, 2, 4, 4), 0.0);
        let y = m.infer(&s, &x).unwrap();
        assert_eq!(y, bicubic_resize_lf(&x, 2.0).unwrap());
    }

    #[test]
    fn ife_of_zero_is_zero() {
        let (m, mut s) = toy_with(|_| {});
        let biases: Vec<ParamId> = s.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(i, _)| i).collect();
        for id in biases {
            s.value_mut(id).data_mut().fill(0.0);
        }
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 2, 4, 4, 1]));
        let f = m.ife(&mut t, &s, x).unwrap();
        assert_eq!(t.shape(f), &[2, 2, 4, 4, 8]);
        assert!(t.value(f).data().iter().all(|&v| v == 0.0));
    }

    /// Zero output projections and zero convolutions leave each basic block
    /// equal to its input.
    fn identity_blocks(m: &LfMamba, s: &mut ParamStore<f64>) {
        let subs = m.safl.iter().flat_map(|(a, b)| [a, b]).chain(&m.lsfl);
        for sub in subs {
            for b in &sub.blocks {
                s.value_mut(b.s6.out_proj.weight).data_mut().fill(0.0);
                s.value_mut(b.conv.weight).data_mut().fill(0.0);
            }
        }
    }

    #[test]
    fn identity_stages_double_their_input() {
        let (m, mut s) = toy_with(|_| {});
        identity_blocks(&m, &mut s);
        let mut t = Tape::new();
        let x = t.constant(lf(Extents::new(2, 2, 4, 4), 0.3).into_tensor());
        let f = m.ife(&mut t, &s, x).unwrap();
        let sa = m.safl(&mut t, &s, f).unwrap();
        let st = m.lsfl(&mut t, &s, sa).unwrap();
        assert_eq!(t.value(sa), &t.value(f).map(|v| 2.0 * v));
        assert_eq!(t.value(st), &t.value(sa).map(|v| 2.0 * v));
    }

    #[test]
    fn averaging_fusion() {
        let (m, mut s) = toy_with(|_| {});
        let lin = m.fuse.clone().unwrap();
        let w = Tensor::from_fn(&[24, 8], |i| if i[0] % 8 == i[1] { 1.0 / 3.0 } else { 0.0 });
        *s.value_mut(lin.weight) = w;
        let mut t = Tape::new();
        let e = Extents::new(2, 2, 3, 3);
        let parts: Vec<Var> =
            (0..3).map(|k| t.constant(Tensor::from_fn(&[2, 2, 3, 3, 8], |i| (i.iter().sum::<usize>() * (k + 1)) as f64))).collect();
        let y = m.fuse(&mut t, &s, parts[0], parts[1], parts[2]).unwrap();
        let want = Tensor::from_fn(&[e.u, e.v, e.h, e.w, 8], |i| 2.0 * i.iter().sum::<usize>() as f64);
        assert!(t.value(y).max_abs_diff(&want) < 1e-12);

        let (ms, ss) = toy_with(|c| c.fusion = Fusion::Sum);
        let y = ms.fuse(&mut t, &ss, parts[0], parts[1], parts[2]).unwrap();
        assert!(t.value(y).max_abs_diff(&want.map(|v| 3.0 * v)) < 1e-12);
        let (mn, sn) = toy_with(|c| c.fusion = Fusion::None);
        let y = mn.fuse(&mut t, &sn, parts[0], parts[1], parts[2]).unwrap();
        assert_eq!(y, parts[2]);
    }

    #[test]
    fn shapes_and_determinism() {
        let (m, s) = toy_with(|_| {});
        let x = lf(Extents::new(2, 2, 4, 5), 0.0);
        let a = m.infer(&s, &x).unwrap();
        assert_eq!(a.extents(), Extents::new(2, 2, 8, 10));
        assert_eq!(a, m.infer(&s, &x).unwrap());
        assert!(m.infer(&s, &lf(Extents::new(3, 2, 4, 4), 0.0)).is_err());

        let (m4, s4) = toy_with(|c| c.scale = 4);
        assert_eq!(m4.infer(&s4, &x).unwrap().extents(), Extents::new(2, 2, 16, 20));

        let (ma, sa) = toy_with(|c| c.variant = Variant::Asr);
        assert_eq!(ma.infer(&sa, &x).unwrap().extents(), Extents::new(7, 7, 4, 5));
    }

    #[test]
    fn epi_sharing_is_storage_sharing() {
        let (m, mut s) = toy_with(|_| {});
        for id in m.head_output_ids() {
            s.value_mut(id).data_mut().fill(0.1);
        }
        let x = lf(Extents::new(2, 2, 4, 4), 0.1);
        let before = m.infer(&s, &x).unwrap();
        let id = m.lsfl[0].blocks[0].conv.weight;
        s.value_mut(id).data_mut()[0] += 0.5;
        assert_ne!(before, m.infer(&s, &x).unwrap());
    }

    #[test]
    fn staged_inference_matches_forward() {
        let (m, mut s) = toy_with(|c| c.seed = 9);
        for id in m.head_output_ids() {
            s.value_mut(id).data_mut().fill(0.05);
        }
        let x = lf(Extents::new(2, 2, 4, 4), 0.3);
        let mut t = Tape::new();
        let xv = t.constant(x.tensor().clone());
        let y = m.forward(&mut t, &s, xv).unwrap();
        assert_eq!(m.infer(&s, &x).unwrap().tensor(), t.value(y));
    }

    #[test]
    fn save_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.lfmc");
        let (m, s) = toy_with(|c| c.seed = 7);
        let x = lf(Extents::new(2, 2, 4, 4), 0.2);
        m.save(&s, &path).unwrap();
        let (m2, s2) = LfMamba::load::<f64>(&path).unwrap();
        assert_eq!(m2.config, m.config);
        assert_eq!(m.infer(&s, &x).unwrap(), m2.infer(&s2, &x).unwrap());
    }

    #[test]
    fn config_toml_round_trip_and_defaults() {
        let cfg = NetworkConfig::asr();
        assert_eq!(NetworkConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = NetworkConfig::from_toml("channels = 16\nscale = 2\n").unwrap();
        assert_eq!(partial.channels, 16);
        assert_eq!(partial.state, 16);
        assert!(NetworkConfig::from_toml("scale = 3").is_err());
        assert!(NetworkConfig::from_toml("channels = 6\nexpansion = 1").is_err());
    }

    #[test]
    fn flops_scale_with_views() {
        let cfg = NetworkConfig::sr(4);
        let a = count_flops(&cfg, Extents::new(5, 5, 32, 32));
        let b = count_flops(&cfg, Extents::new(5, 5, 64, 64));
        assert_eq!(a.flops, 2 * a.macs);
        assert!(b.macs > 3 * a.macs && b.macs < 5 * a.macs);
    }

    #[test]
    fn untrained_sr_model_is_bicubic() {
        let (m, s) = toy_with(|_| {});
        let x = lf(Extents::new(2, 2, 4, 4), 0.4);
        assert_eq!(m.infer(&s, &x).unwrap(), bicubic_resize_lf(&x, 2.0).unwrap());
    }

    #[test]
    fn toy_network_gradients() {
        let (m, mut s) = toy_with(|c| c.seed = 3);
        if let Head::Sr { out, .. } = &m.head {
            *s.value_mut(out.weight) = Tensor::from_fn(&[3, 3, 8, 1], |i| ((i[0] + 2 * i[1] + 3 * i[2]) % 5) as f64 * 0.05 - 0.1);
        }
        let x = lf(Extents::new(2, 2, 4, 4), 0.0).into_tensor();
        let report = check(&s, &[x], GradCheckConfig::default(), |t, s, v| m.forward(t, s, v[0])).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn toy_asr_gradients() {
        let (m, s) = toy_with(|c| {
            c.variant = Variant::Asr;
            c.asr_target = 3;
        });
        let x = lf(Extents::new(2, 2, 3, 3), 0.5).into_tensor();
        let report = check(&s, &[x], GradCheckConfig::default(), |t, s, v| m.forward(t, s, v[0])).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
