//! Diagonal state-space kernels: zero-order-hold discretization and the three
//! evaluation routes (sequential recurrence, causal convolution, associative
//! scan). Each channel is an independent single-input single-output system
//! with `N` diagonal states.

use crate::error::{Error, Result};
use crate::tensor::Real;

use super::blelloch::{blelloch_inclusive, Affine};

/// How the continuous input matrix is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `B̄ = (ΔA)⁻¹(exp(ΔA) − 1)·ΔB`.
    #[default]
    Zoh,
    /// `B̄ = Δ·B`.
    Euler,
}

/// Below this `|ΔA|` the exact ZOH factor switches to its series limit.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-8;

/// Input factor `φ` with `B̄ = φ·B`. For ZOH `φ = (exp(ΔA) − 1)/A`.
#[inline]
pub fn input_factor<T: Real>(delta: T, a: T, mode: Discretization) -> T {
    match mode {
        Discretization::Euler => delta,
        Discretization::Zoh => {
            let z = delta * a;
            if z.abs() < T::lit(ZOH_SERIES_THRESHOLD) {
                delta * (T::one() + z * T::lit(0.5))
            } else {
                delta * z.exp_m1() / z
            }
        }
    }
}

/// Partial derivatives `(∂φ/∂Δ, ∂φ/∂A)` of [`input_factor`].
#[inline]
pub fn input_factor_grad<T: Real>(delta: T, a: T, mode: Discretization) -> (T, T) {
    match mode {
        Discretization::Euler => (T::one(), T::zero()),
        Discretization::Zoh => {
            let z = delta * a;
            // (z·eᶻ − (eᶻ − 1))/z² = Σ_j (j+1) zʲ/(j+2)!
            let g = if z.abs() < T::lit(0.1) {
                let coeffs = [1.0 / 2.0, 2.0 / 6.0, 3.0 / 24.0, 4.0 / 120.0, 5.0 / 720.0, 6.0 / 5040.0, 7.0 / 40320.0, 8.0 / 362880.0];
                coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * z + T::lit(c))
            } else {
                (z * z.exp() - z.exp_m1()) / (z * z)
            };
            (z.exp(), delta * delta * g)
        }
    }
}

/// Zero-order hold for one diagonal entry: `(Ā, B̄) = (exp(ΔA), (exp(ΔA) − 1)/A · B)`.
pub fn discretize_zoh<T: Real>(a: T, b: T, delta: T) -> Result<(T, T)> {
    discretize(a, b, delta, Discretization::Zoh)
}

pub fn discretize<T: Real>(a: T, b: T, delta: T, mode: Discretization) -> Result<(T, T)> {
    if !(delta > T::zero()) {
        return Err(Error::domain(format!("step size must be positive, got {delta}")));
    }
    if a == T::zero() {
        return Err(Error::domain("diagonal state matrix entry is zero"));
    }
    Ok(((delta * a).exp(), input_factor(delta, a, mode) * b))
}

/// Time-invariant single-channel system with `N` diagonal states.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSsm<T> {
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Option<T>,
}

impl<T: Real> DiagonalSsm<T> {
    /// Discretizes continuous diagonal `a`, input `b` with step `delta`.
    pub fn from_continuous(a: &[T], b: &[T], c: &[T], delta: T, d_skip: Option<T>, mode: Discretization) -> Result<Self> {
        if a.len() != b.len() || a.len() != c.len() {
            return Err(Error::shape(format!("state sizes differ: A {}, B {}, C {}", a.len(), b.len(), c.len())));
        }
        let mut a_bar = Vec::with_capacity(a.len());
        let mut b_bar = Vec::with_capacity(a.len());
        for (&ai, &bi) in a.iter().zip(b) {
            let (ab, bb) = discretize(ai, bi, delta, mode)?;
            a_bar.push(ab);
            b_bar.push(bb);
        }
        Ok(DiagonalSsm { a_bar, b_bar, c: c.to_vec(), d_skip })
    }

    pub fn state_size(&self) -> usize {
        self.a_bar.len()
    }
}

/// Per-step parameters of one selective lane, each `[L × N]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveLane<T> {
    pub state: usize,
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Option<T>,
}

impl<T: Real> SelectiveLane<T> {
    /// Discretizes per-step `delta[L]`, continuous diagonal `a[N]`, and
    /// projected `b[L×N]`, `c[L×N]`.
    pub fn from_continuous(delta: &[T], a: &[T], b: &[T], c: &[T], d_skip: Option<T>, mode: Discretization) -> Result<Self> {
        let (l, n) = (delta.len(), a.len());
        if b.len() != l * n || c.len() != l * n {
            return Err(Error::shape(format!("per-step B/C must be {l}x{n}")));
        }
        let mut a_bar = Vec::with_capacity(l * n);
        let mut b_bar = Vec::with_capacity(l * n);
        for k in 0..l {
            for j in 0..n {
                let (ab, bb) = discretize(a[j], b[k * n + j], delta[k], mode)?;
                a_bar.push(ab);
                b_bar.push(bb);
            }
        }
        Ok(SelectiveLane { state: n, a_bar, b_bar, c: c.to_vec(), d_skip })
    }

    pub fn len(&self) -> usize {
        self.a_bar.len() / self.state.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.a_bar.is_empty()
    }
}

/// A discrete system ready for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscreteSsm<T> {
    Invariant(DiagonalSsm<T>),
    Selective(SelectiveLane<T>),
}

impl<T: Real> DiscreteSsm<T> {
    fn state(&self) -> usize {
        match self {
            DiscreteSsm::Invariant(s) => s.state_size(),
            DiscreteSsm::Selective(s) => s.state,
        }
    }

    /// `(Ā, B̄, C)` rows for step `k`.
    fn step(&self, k: usize) -> (&[T], &[T], &[T]) {
        match self {
            DiscreteSsm::Invariant(s) => (&s.a_bar, &s.b_bar, &s.c),
            DiscreteSsm::Selective(s) => {
                let r = k * s.state..(k + 1) * s.state;
                (&s.a_bar[r.clone()], &s.b_bar[r.clone()], &s.c[r])
            }
        }
    }

    fn d_skip(&self) -> Option<T> {
        match self {
            DiscreteSsm::Invariant(s) => s.d_skip,
            DiscreteSsm::Selective(s) => s.d_skip,
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        match self {
            DiscreteSsm::Selective(s) if s.len() != len => {
                Err(Error::shape(format!("input has {len} steps but the selective parameters cover {}", s.len())))
            }
            _ => Ok(()),
        }
    }
}

/// `h_k = Ā h_{k−1} + B̄ x_k`, `y_k = C h_k + D x_k`, from `h₀ = 0`.
pub fn recurrence<T: Real>(ssm: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    ssm.check_len(x.len())?;
    let mut h = vec![T::zero(); ssm.state()];
    let d = ssm.d_skip().unwrap_or(T::zero());
    let mut y = Vec::with_capacity(x.len());
    for (k, &xk) in x.iter().enumerate() {
        let (a, b, c) = ssm.step(k);
        let mut acc = T::zero();
        for j in 0..h.len() {
            h[j] = a[j] * h[j] + b[j] * xk;
            acc += c[j] * h[j];
        }
        y.push(acc + d * xk);
    }
    Ok(y)
}

/// `K̄ = (C B̄, C Ā B̄, …, C Ā^{L−1} B̄)`.
pub fn conv_kernel<T: Real>(ssm: &DiagonalSsm<T>, len: usize) -> Vec<T> {
    let mut power: Vec<T> = ssm.b_bar.clone();
    let mut kernel = Vec::with_capacity(len);
    for _ in 0..len {
        kernel.push(ssm.c.iter().zip(&power).map(|(&c, &p)| c * p).sum());
        for (p, &a) in power.iter_mut().zip(&ssm.a_bar) {
            *p *= a;
        }
    }
    kernel
}

/// Causal convolution `y = x * K̄` (plus skip). Time-invariant systems only.
pub fn conv_form<T: Real>(ssm: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    let DiscreteSsm::Invariant(s) = ssm else {
        return Err(Error::Mode("the convolution form needs time-invariant parameters".into()));
    };
    let kernel = conv_kernel(s, x.len());
    let d = s.d_skip.unwrap_or(T::zero());
    Ok((0..x.len())
        .map(|k| {
            let conv: T = (0..=k).map(|i| kernel[i] * x[k - i]).sum();
            conv + d * x[k]
        })
        .collect())
}

/// Same result as [`recurrence`], evaluated per state as an associative scan
/// over affine maps `h ↦ Ā h + B̄ x`.
pub fn parallel_scan<T: Real>(ssm: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    ssm.check_len(x.len())?;
    let (l, n) = (x.len(), ssm.state());
    let mut y = vec![T::zero(); l];
    let mut pairs = Vec::with_capacity(l);
    for j in 0..n {
        pairs.clear();
        pairs.extend(x.iter().enumerate().map(|(k, &xk)| {
            let (a, b, _) = ssm.step(k);
            Affine { a: a[j], b: b[j] * xk }
        }));
        blelloch_inclusive(&mut pairs);
        for (k, p) in pairs.iter().enumerate() {
            let (_, _, c) = ssm.step(k);
            y[k] += c[j] * p.b;
        }
    }
    // skip term last, matching the accumulation order of `recurrence`
    let d = ssm.d_skip().unwrap_or(T::zero());
    for (yk, &xk) in y.iter_mut().zip(x) {
        *yk += d * xk;
    }
    Ok(y)
}
