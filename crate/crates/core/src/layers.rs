//! Parameterized layers: each registers its tensors in a [`ParamStore`] on
//! construction and records its forward pass on a [`Tape`].

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::nn::{fan_in_uniform, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    /// `[Cin, Cout]`
    pub weight: ParamId,
    /// `[Cout]`
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{prefix}.weight"), fan_in_uniform(&[cin, cout], cin, rng))?;
        let bias = if bias { Some(store.add(format!("{prefix}.bias"), Tensor::zeros(&[cout]))?) } else { None };
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        tape.linear(x, w, b)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn num_params(cin: usize, cout: usize, bias: bool) -> usize {
        cin * cout + if bias { cout } else { 0 }
    }
}

/// Square `k×k` convolution, stride 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    /// `[k, k, Cin, Cout]`
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        k: usize,
        cin: usize,
        cout: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{prefix}.weight"), fan_in_uniform(&[k, k, cin, cout], k * k * cin, rng))?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Conv2d { weight, bias, pad })
    }

    /// `[k, k, Cin, Cout]` 3×3 with padding 1.
    pub fn same3<T: Real>(store: &mut ParamStore<T>, prefix: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::new(store, prefix, 3, cin, cout, 1, rng)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b), 1, self.pad)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub fn num_params(k: usize, cin: usize, cout: usize) -> usize {
        k * k * cin * cout + cout
    }
}

/// Depthwise 3×3 convolution, padding 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthwiseConv {
    /// `[3, 3, C]`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, c: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = store.add(format!("{prefix}.weight"), fan_in_uniform(&[3, 3, c], 9, rng))?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[c]))?;
        Ok(DepthwiseConv { weight, bias })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.depthwise_conv2d(x, w, Some(b), 1)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub fn num_params(c: usize) -> usize {
        10 * c
    }
}

pub const LN_EPS: f64 = 1e-6;

/// Layer norm over the last axis with affine `γ = 1`, `β = 0` at init.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<Self> {
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::ones(&[c]))?;
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros(&[c]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, T::lit(LN_EPS))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }

    pub fn num_params(c: usize) -> usize {
        2 * c
    }
}

pub const CA_REDUCTION: usize = 16;

/// Squeeze-and-excitation gate: spatial mean, `C → C/r` with SiLU, `C/r → C`
/// with sigmoid, then per-channel rescaling of the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelAttention {
    pub down: Linear,
    pub up: Linear,
}

impl ChannelAttention {
    pub fn hidden(c: usize) -> usize {
        (c / CA_REDUCTION).max(1)
    }

    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, c: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let r = Self::hidden(c);
        Ok(ChannelAttention {
            down: Linear::new(store, &format!("{prefix}.down"), c, r, true, rng)?,
            up: Linear::new(store, &format!("{prefix}.up"), r, c, true, rng)?,
        })
    }

    /// `x[B, H, W, C]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let pooled = tape.mean_spatial(x)?;
        let h = self.down.forward(tape, store, pooled)?;
        let h = tape.silu(h);
        let g = self.up.forward(tape, store, h)?;
        let g = tape.sigmoid(g);
        tape.gate_spatial(x, g)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.down.ids(), self.up.ids()].concat()
    }

    pub fn num_params(c: usize) -> usize {
        let r = Self::hidden(c);
        Linear::num_params(c, r, true) + Linear::num_params(r, c, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn counts_match_storage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let l = Linear::new(&mut s, "l", 5, 7, true, &mut rng).unwrap();
        assert_eq!(s.num_scalars_of(&l.ids()), Linear::num_params(5, 7, true));
        let c = Conv2d::same3(&mut s, "c", 3, 4, &mut rng).unwrap();
        assert_eq!(s.num_scalars_of(&c.ids()), Conv2d::num_params(3, 3, 4));
        let d = DepthwiseConv::new(&mut s, "d", 6, &mut rng).unwrap();
        assert_eq!(s.num_scalars_of(&d.ids()), DepthwiseConv::num_params(6));
        let ca = ChannelAttention::new(&mut s, "ca", 64, &mut rng).unwrap();
        assert_eq!(s.num_scalars_of(&ca.ids()), 2 * 64 * 4 + 4 + 64);
        assert_eq!(ChannelAttention::hidden(8), 1);
    }

    #[test]
    fn channel_attention_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::<f64>::new();
        let ca = ChannelAttention::new(&mut s, "ca", 8, &mut rng).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 3, 3, 8]));
        let y = ca.forward(&mut t, &s, x).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_attention_gate_is_sigmoid_of_bias_when_weights_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f64>::new();
        let ca = ChannelAttention::new(&mut s, "ca", 4, &mut rng).unwrap();
        s.value_mut(ca.up.weight).data_mut().fill(0.0);
        s.value_mut(ca.up.bias.unwrap()).data_mut().copy_from_slice(&[0.0, 1.0, -1.0, 2.0]);
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[1, 2, 2, 4]));
        let y = ca.forward(&mut t, &s, x).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        for (i, &v) in t.value(y).data().iter().enumerate() {
            assert!((v - sig([0.0, 1.0, -1.0, 2.0][i % 4])).abs() < 1e-15);
        }
    }
}
