//! Four-direction 2D scanning and the SSM blocks built on it.
//!
//! Feature maps are channel-last `[B, H, W, C]`. A [`ScanLayout`] turns the
//! `H×W` grid into a length-`H·W` sequence in one of four orders. The
//! reference [`Ss2d`] scans four full-width copies of the input; [`Ess2d`]
//! splits the channels into four contiguous quarters and scans quarter `g` in
//! direction `g` only.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ScanOptions, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{from_slice, slice_var, to_slice, unslice_var, Extents, LightField, SliceKind, SliceView};
use crate::layers::{ChannelAttention, Conv2d, DepthwiseConv, LayerNorm, Linear};
use crate::nn::{ParamId, ParamStore};
use crate::ssm::{default_dt_rank, SsmConfig, SsmParams};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanDirection {
    RowFwd,
    ColFwd,
    RowRev,
    ColRev,
}

impl ScanDirection {
    /// Also the channel-group order of [`Ess2d`].
    pub const ALL: [ScanDirection; 4] = [ScanDirection::RowFwd, ScanDirection::ColFwd, ScanDirection::RowRev, ScanDirection::ColRev];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanLayout {
    pub direction: ScanDirection,
    pub h: usize,
    pub w: usize,
}

impl ScanLayout {
    pub fn new(direction: ScanDirection, h: usize, w: usize) -> Self {
        ScanLayout { direction, h, w }
    }

    /// Sequence position `k` reads grid cell `order[k]` (row-major index).
    pub fn order(&self) -> Vec<usize> {
        let (h, w) = (self.h, self.w);
        let row: Vec<usize> = (0..h * w).collect();
        let col: Vec<usize> = (0..h * w).map(|k| (k % h) * w + k / h).collect();
        match self.direction {
            ScanDirection::RowFwd => row,
            ScanDirection::ColFwd => col,
            ScanDirection::RowRev => row.into_iter().rev().collect(),
            ScanDirection::ColRev => col.into_iter().rev().collect(),
        }
    }

    pub fn inverse_order(&self) -> Vec<usize> {
        let order = self.order();
        let mut inv = vec![0; order.len()];
        for (k, &o) in order.iter().enumerate() {
            inv[o] = k;
        }
        inv
    }

    fn check(&self, s: &[usize], grid: bool) -> Result<()> {
        let ok = if grid { s.len() == 4 && s[1] == self.h && s[2] == self.w } else { s.len() == 3 && s[1] == self.h * self.w };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("{:?} layout over {}x{} does not fit {s:?}", self.direction, self.h, self.w)))
        }
    }

    /// `[B, H, W, C] → [B, H·W, C]`.
    pub fn flatten<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x.shape(), true)?;
        let s = x.shape();
        gather_seq(x.data(), s[0], s[3], &self.order(), vec![s[0], self.h * self.w, s[3]])
    }

    /// `[B, H·W, C] → [B, H, W, C]`.
    pub fn unflatten<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x.shape(), false)?;
        let s = x.shape();
        gather_seq(x.data(), s[0], s[2], &self.inverse_order(), vec![s[0], self.h, self.w, s[2]])
    }

    pub fn flatten_var<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        self.check(&s, true)?;
        let seq = tape.reshape(x, &[s[0], self.h * self.w, s[3]])?;
        if self.direction == ScanDirection::RowFwd {
            return Ok(seq);
        }
        tape.permute_seq(seq, &self.order())
    }

    pub fn unflatten_var<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        self.check(&s, false)?;
        let grid = if self.direction == ScanDirection::RowFwd { x } else { tape.permute_seq(x, &self.inverse_order())? };
        tape.reshape(grid, &[s[0], self.h, self.w, s[2]])
    }
}

fn gather_seq<T: Real>(src: &[T], b: usize, c: usize, order: &[usize], shape: Vec<usize>) -> Result<Tensor<T>> {
    let l = order.len();
    let mut out = Vec::with_capacity(src.len());
    for bi in 0..b {
        for &o in order {
            let at = (bi * l + o) * c;
            out.extend_from_slice(&src[at..at + c]);
        }
    }
    Tensor::new(shape, out)
}

/// Hyperparameters shared by every SSM block of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    /// Inner width of the efficient S6 block is `expansion · channels`.
    pub expansion: usize,
    pub state: usize,
    pub dt_rank: usize,
    pub d_skip: bool,
    #[serde(default)]
    pub scan: ScanOptions,
}

impl BlockConfig {
    pub fn new(channels: usize, expansion: usize, state: usize) -> Self {
        BlockConfig { channels, expansion, state, dt_rank: default_dt_rank(channels), d_skip: true, scan: ScanOptions::default() }
    }

    pub fn inner(&self) -> usize {
        self.expansion * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.expansion == 0 || self.state == 0 || self.dt_rank == 0 {
            return Err(Error::domain(format!("degenerate block config {self:?}")));
        }
        if !self.inner().is_multiple_of(4) {
            return Err(Error::domain(format!("expansion·channels = {} is not divisible by 4", self.inner())));
        }
        Ok(())
    }

    /// Scan config of one [`Ess2d`] group.
    pub fn group_scan(&self) -> SsmConfig {
        self.scan_at(self.inner() / 4)
    }

    pub fn scan_at(&self, width: usize) -> SsmConfig {
        SsmConfig { width, state: self.state, dt_rank: self.dt_rank, d_skip: self.d_skip, options: self.scan }
    }
}

/// Four full-width scans of the same input, one per direction, summed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ss2d {
    pub scans: Vec<SsmParams>,
}

impl Ss2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, scan: SsmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let scans = ScanDirection::ALL
            .iter()
            .enumerate()
            .map(|(g, _)| SsmParams::new(store, &format!("{prefix}.dir{g}"), scan, rng))
            .collect::<Result<_>>()?;
        Ok(Ss2d { scans })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("ss2d expects [B,H,W,C], got {s:?}")));
        }
        let mut outs = Vec::with_capacity(4);
        for (dir, ssm) in ScanDirection::ALL.into_iter().zip(&self.scans) {
            let layout = ScanLayout::new(dir, s[1], s[2]);
            let seq = layout.flatten_var(tape, x)?;
            let y = ssm.forward(tape, store, seq)?;
            outs.push(layout.unflatten_var(tape, y)?);
        }
        tape.add_n(&outs)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.scans.iter().flat_map(SsmParams::ids).collect()
    }

    pub fn scan_params(scan: SsmConfig) -> usize {
        4 * scan.num_params()
    }
}

/// Channel quarter `g` scanned in direction `g`, quarters concatenated back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ess2d {
    pub groups: Vec<SsmParams>,
}

impl Ess2d {
    /// `group` is the scan config of one quarter (width `C/4`).
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, group: SsmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let groups = (0..4).map(|g| SsmParams::new(store, &format!("{prefix}.group{g}"), group, rng)).collect::<Result<_>>()?;
        Ok(Ess2d { groups })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        ess2d_map(tape, x, |tape, g, seq| self.groups[g].forward(tape, store, seq))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.groups.iter().flat_map(SsmParams::ids).collect()
    }

    /// Scan parameters at full width `C`, for comparison with
    /// [`Ss2d::scan_params`] on the same config.
    pub fn scan_params(full: SsmConfig) -> usize {
        4 * SsmConfig { width: full.width / 4, ..full }.num_params()
    }
}

/// The grouped scan with `map(tape, g, seq[B, L, C/4])` in place of the
/// learned group scans.
pub fn ess2d_map<T: Real>(tape: &mut Tape<T>, x: Var, mut map: impl FnMut(&mut Tape<T>, usize, Var) -> Result<Var>) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::shape(format!("ess2d expects [B,H,W,C], got {s:?}")));
    }
    if !s[3].is_multiple_of(4) {
        return Err(Error::shape(format!("ess2d needs channels divisible by 4, got {}", s[3])));
    }
    let q = s[3] / 4;
    let mut outs = Vec::with_capacity(4);
    for (g, dir) in ScanDirection::ALL.into_iter().enumerate() {
        let layout = ScanLayout::new(dir, s[1], s[2]);
        let part = tape.slice_last(x, g * q, q)?;
        let seq = layout.flatten_var(tape, part)?;
        let y = map(tape, g, seq)?;
        outs.push(layout.unflatten_var(tape, y)?);
    }
    tape.concat_last(&outs)
}

/// `Linear(SiLU(Linear)) ⊙ LN(ESS2D(SiLU(DWConv(Linear(x)))))` projected back
/// to `C` channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EfficientS6 {
    pub in_scan: Linear,
    pub in_gate: Linear,
    pub dwconv: DepthwiseConv,
    pub ess2d: Ess2d,
    pub out_norm: LayerNorm,
    pub out_proj: Linear,
}

impl EfficientS6 {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, e) = (cfg.channels, cfg.inner());
        Ok(EfficientS6 {
            in_scan: Linear::new(store, &format!("{prefix}.in_scan"), c, e, true, rng)?,
            in_gate: Linear::new(store, &format!("{prefix}.in_gate"), c, e, true, rng)?,
            dwconv: DepthwiseConv::new(store, &format!("{prefix}.dwconv"), e, rng)?,
            ess2d: Ess2d::new(store, &format!("{prefix}.ess2d"), cfg.group_scan(), rng)?,
            out_norm: LayerNorm::new(store, &format!("{prefix}.out_norm"), e)?,
            out_proj: Linear::new(store, &format!("{prefix}.out_proj"), e, c, true, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = self.in_scan.forward(tape, store, x)?;
        let s = self.dwconv.forward(tape, store, s)?;
        let s = tape.silu(s);
        let s = self.ess2d.forward(tape, store, s)?;
        let f1 = self.out_norm.forward(tape, store, s)?;
        let g = self.in_gate.forward(tape, store, x)?;
        let f2 = tape.silu(g);
        let f = tape.mul(f1, f2)?;
        self.out_proj.forward(tape, store, f)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.in_scan.ids(), self.in_gate.ids(), self.dwconv.ids(), self.ess2d.ids(), self.out_norm.ids(), self.out_proj.ids()].concat()
    }

    pub fn num_params(cfg: &BlockConfig) -> usize {
        let (c, e) = (cfg.channels, cfg.inner());
        2 * Linear::num_params(c, e, true)
            + DepthwiseConv::num_params(e)
            + 4 * cfg.group_scan().num_params()
            + LayerNorm::num_params(e)
            + Linear::num_params(e, c, true)
    }
}

/// `F̄ = S6(LN(x)) + s₁⊙x`, `out = CA(Conv(LN(F̄))) + s₂⊙F̄`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicSsmBlock {
    pub ln1: LayerNorm,
    pub s6: EfficientS6,
    pub s1: ParamId,
    pub ln2: LayerNorm,
    pub conv: Conv2d,
    pub ca: ChannelAttention,
    pub s2: ParamId,
}

impl BasicSsmBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = cfg.channels;
        Ok(BasicSsmBlock {
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), c)?,
            s6: EfficientS6::new(store, &format!("{prefix}.s6"), cfg, rng)?,
            s1: store.add(format!("{prefix}.s1"), Tensor::ones(&[c]))?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), c)?,
            conv: Conv2d::same3(store, &format!("{prefix}.conv"), c, c, rng)?,
            ca: ChannelAttention::new(store, &format!("{prefix}.ca"), c, rng)?,
            s2: store.add(format!("{prefix}.s2"), Tensor::ones(&[c]))?,
        })
    }

    /// `x[B, H, W, C]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = self.ln1.forward(tape, store, x)?;
        let y = self.s6.forward(tape, store, n)?;
        let s1 = tape.param(store, self.s1);
        let skip = tape.scale_channels(x, s1)?;
        let f = tape.add(y, skip)?;
        let n = self.ln2.forward(tape, store, f)?;
        let z = self.conv.forward(tape, store, n)?;
        let z = self.ca.forward(tape, store, z)?;
        let s2 = tape.param(store, self.s2);
        let skip = tape.scale_channels(f, s2)?;
        tape.add(z, skip)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.ln1.ids(), self.s6.ids(), vec![self.s1], self.ln2.ids(), self.conv.ids(), self.ca.ids(), vec![self.s2]].concat()
    }

    pub fn num_params(cfg: &BlockConfig) -> usize {
        let c = cfg.channels;
        2 * LayerNorm::num_params(c) + EfficientS6::num_params(cfg) + Conv2d::num_params(3, c, c) + ChannelAttention::num_params(c) + 2 * c
    }
}

/// Which 2D slice of the light field a subspace block scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceKind {
    /// `UV` batches of `H×W` sub-aperture images.
    Spatial,
    /// `HW` batches of `U×V` macro-pixels.
    Angular,
    EpiH,
    EpiV,
}

impl SubspaceKind {
    pub const ALL: [SubspaceKind; 4] = [SubspaceKind::Spatial, SubspaceKind::Angular, SubspaceKind::EpiH, SubspaceKind::EpiV];

    pub fn slice(self) -> SliceKind {
        match self {
            SubspaceKind::Spatial => SliceKind::Sai,
            SubspaceKind::Angular => SliceKind::MacPi,
            SubspaceKind::EpiH => SliceKind::EpiH,
            SubspaceKind::EpiV => SliceKind::EpiV,
        }
    }
}

/// A chain of basic blocks applied to one batch form of a `[U, V, H, W, C]`
/// feature. The kind is chosen per call so one set of weights can serve
/// several kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubspaceBlock {
    pub blocks: Vec<BasicSsmBlock>,
}

impl SubspaceBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, depth: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let blocks = (0..depth).map(|i| BasicSsmBlock::new(store, &format!("{prefix}.{i}"), cfg, rng)).collect::<Result<_>>()?;
        Ok(SubspaceBlock { blocks })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, kind: SubspaceKind) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 5 {
            return Err(Error::shape(format!("subspace block expects [U,V,H,W,C], got {s:?}")));
        }
        let e = Extents::new(s[0], s[1], s[2], s[3]);
        let mut y = slice_var(tape, x, kind.slice())?;
        for b in &self.blocks {
            y = b.forward(tape, store, y)?;
        }
        unslice_var(tape, y, kind.slice(), e)
    }

    /// [`Self::forward`] without gradients, one tape per basic block so only
    /// one block's activations are alive at a time.
    pub fn infer<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>, kind: SubspaceKind) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 5 {
            return Err(Error::shape(format!("subspace block expects [U,V,H,W,C], got {s:?}")));
        }
        let e = Extents::new(s[0], s[1], s[2], s[3]);
        let mut y = to_slice(&LightField::new(x.clone())?, kind.slice()).tensor;
        for b in &self.blocks {
            let mut tape = Tape::inference();
            let v = tape.constant(y);
            let out = b.forward(&mut tape, store, v)?;
            y = tape.into_value(out);
        }
        Ok(from_slice(&SliceView { kind: kind.slice(), tensor: y, extents: e })?.into_tensor())
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(BasicSsmBlock::ids).collect()
    }

    pub fn num_params(cfg: &BlockConfig, depth: usize) -> usize {
        depth * BasicSsmBlock::num_params(cfg)
    }
}
