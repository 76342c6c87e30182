//! Central finite-difference checks of tape gradients.
//!
//! The checked function maps parameters (and optionally differentiable
//! inputs) to an output tensor; the harness contracts that output with fixed
//! random weights to get a scalar loss, then compares every analytic partial
//! derivative with `(f(θ+h) − f(θ−h)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: DEFAULT_STEP, tolerance: DEFAULT_TOLERANCE, seed: 0x9e37 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Path of the scalar with the largest error, e.g. `ife.0.weight[17]`.
    pub worst: String,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e−6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every learnable scalar of `store` and every scalar of `inputs`.
/// `build` receives the tape, the store, and the input vars and returns the
/// output to be contracted.
pub fn check<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], config: GradCheckConfig, build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let in_vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = build(&mut tape, store, &in_vars)?;
    let out_value = tape.value(out).clone();
    if !out_value.all_finite() {
        return Err(Error::NonFinite { path: "output".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = 1.0 / (out_value.len() as f64).sqrt();
    let weights = Tensor::from_fn(out_value.shape(), |_| rng.gen_range(-scale..scale));
    let loss = tape.dot_const(out, &weights)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>], path: &dyn Fn() -> String| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, store, &vars)?;
        let v: f64 = tape.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { path: path() })
        }
    };

    let mut report = GradReport { checked: 0, max_rel_err: 0.0, worst: String::new(), tolerance: config.tolerance };
    let h = config.step;
    let record = |report: &mut GradReport, analytic: f64, numeric: f64, path: &dyn Fn() -> String| {
        report.checked += 1;
        let rel = relative_error(analytic, numeric);
        if rel > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = path();
        }
    };

    let mut probe = store.clone();
    for (id, p) in store.iter() {
        if !p.learnable {
            continue;
        }
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        for i in 0..p.value.len() {
            let path = || format!("{}[{i}]", p.name);
            let orig = p.value.data()[i];
            probe.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe, inputs, &path)?;
            probe.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe, inputs, &path)?;
            probe.value_mut(id).data_mut()[i] = orig;
            record(&mut report, analytic.data()[i], (up - down) / (2.0 * h), &path);
        }
    }

    let mut probe_in: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, v) in in_vars.iter().enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let path = || format!("input{k}[{i}]");
            let orig = inputs[k].data()[i];
            probe_in[k].data_mut()[i] = orig + h;
            let up = eval(store, &probe_in, &path)?;
            probe_in[k].data_mut()[i] = orig - h;
            let down = eval(store, &probe_in, &path)?;
            probe_in[k].data_mut()[i] = orig;
            record(&mut report, analytic.data()[i], (up - down) / (2.0 * h), &path);
        }
    }
    Ok(report)
}
