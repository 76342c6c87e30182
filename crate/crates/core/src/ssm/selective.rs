//! Learnable selective SSM: per-step `B`, `C` and `Δ` projected from the input.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ScanOptions, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{fan_in_uniform, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmConfig {
    /// Channel count `D` of the scanned sequence.
    pub width: usize,
    /// State size `N`.
    pub state: usize,
    pub dt_rank: usize,
    pub d_skip: bool,
    #[serde(default)]
    pub options: ScanOptions,
}

impl SsmConfig {
    pub fn new(width: usize, state: usize) -> Self {
        SsmConfig { width, state, dt_rank: default_dt_rank(width), d_skip: true, options: ScanOptions::default() }
    }

    /// `D·(3N + 2r + 1)` plus `D` for the skip.
    pub fn num_params(&self) -> usize {
        let (d, n, r) = (self.width, self.state, self.dt_rank);
        d * (3 * n + 2 * r + 1) + if self.d_skip { d } else { 0 }
    }
}

/// `max(1, ⌈D/16⌉)`.
pub fn default_dt_rank(width: usize) -> usize {
    width.div_ceil(16).max(1)
}

/// Step sizes at init are log-uniform in this range.
pub const DT_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsmParams {
    pub config: SsmConfig,
    /// `[D, N]`
    pub b_proj: ParamId,
    /// `[D, N]`
    pub c_proj: ParamId,
    /// `[D, r]`
    pub dt_down: ParamId,
    /// `[r, D]`
    pub dt_up: ParamId,
    /// `[D]`
    pub dt_bias: ParamId,
    /// `[D, N]`, `A = −exp(A_log)`
    pub a_log: ParamId,
    /// `[D]`
    pub d_skip: Option<ParamId>,
}

impl SsmParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, config: SsmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let SsmConfig { width: d, state: n, dt_rank: r, .. } = config;
        if d == 0 || n == 0 || r == 0 {
            return Err(Error::shape(format!("degenerate scan config {config:?}")));
        }
        let b_proj = store.add(format!("{prefix}.b_proj"), fan_in_uniform(&[d, n], d, rng))?;
        let c_proj = store.add(format!("{prefix}.c_proj"), fan_in_uniform(&[d, n], d, rng))?;
        let dt_down = store.add(format!("{prefix}.dt_down"), fan_in_uniform(&[d, r], d, rng))?;
        let dt_up = store.add(format!("{prefix}.dt_up"), fan_in_uniform(&[r, d], r, rng))?;
        let (lo, hi) = (DT_INIT_RANGE.0.ln(), DT_INIT_RANGE.1.ln());
        let bias = Tensor::from_fn(&[d], |_| T::lit(inverse_softplus(rng.gen_range(lo..hi).exp())));
        let dt_bias = store.add(format!("{prefix}.dt_bias"), bias)?;
        let a_log = store.add(format!("{prefix}.a_log"), Tensor::from_fn(&[d, n], |i| T::lit(((i[1] + 1) as f64).ln())))?;
        let d_skip = if config.d_skip { Some(store.add(format!("{prefix}.d_skip"), Tensor::ones(&[d]))?) } else { None };
        Ok(SsmParams { config, b_proj, c_proj, dt_down, dt_up, dt_bias, a_log, d_skip })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.b_proj, self.c_proj, self.dt_down, self.dt_up, self.dt_bias, self.a_log];
        ids.extend(self.d_skip);
        ids
    }

    /// `x[B, L, D] → y[B, L, D]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let p = |tape: &mut Tape<T>, id| tape.param(store, id);
        let (wb, wc) = (p(tape, self.b_proj), p(tape, self.c_proj));
        let (wd, wu, bias) = (p(tape, self.dt_down), p(tape, self.dt_up), p(tape, self.dt_bias));
        let a_log = p(tape, self.a_log);
        let skip = self.d_skip.map(|id| p(tape, id));
        let bk = tape.linear(x, wb, None)?;
        let ck = tape.linear(x, wc, None)?;
        let low = tape.linear(x, wd, None)?;
        let dt = tape.linear(low, wu, Some(bias))?;
        let delta = tape.softplus(dt);
        tape.selective_scan(x, delta, a_log, bk, ck, skip, self.config.options)
    }
}

/// `x` with `softplus(x) = y`, for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Evaluates [`SsmParams::forward`] on a plain tensor.
pub fn selective_scan<T: Real>(params: &SsmParams, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = params.forward(&mut tape, store, xv)?;
    Ok(tape.value(y).clone())
}
