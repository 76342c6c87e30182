use super::{BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{check_permutation, gemm, numel, Real, ShufflePlan, Tensor};

fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, op: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(format!("{op}: {:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("rank >= 1")
}

impl<T: Real> Tape<T> {
    /// Elementwise map with derivative `df(x, y)` evaluated at input `x` and
    /// output `y`.
    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Var {
        let value = self.value(x).map(f);
        self.custom(
            &[x],
            value,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let x = ctx.inputs[0].data();
                let y = ctx.output.data();
                let g = ctx.grad.data();
                let data = (0..g.len()).map(|i| g[i] * df(x[i], y[i])).collect();
                vec![Some(Tensor::new(ctx.grad.shape().to_vec(), data).unwrap())]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.custom(&[x], value, Box::new(|ctx| vec![Some(ctx.grad.reshape(ctx.inputs[0].shape()).unwrap())])))
    }

    pub fn permute(&mut self, x: Var, order: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(order)?;
        let mut inverse = vec![0; order.len()];
        for (i, &o) in order.iter().enumerate() {
            inverse[o] = i;
        }
        Ok(self.custom(&[x], value, Box::new(move |ctx| vec![Some(ctx.grad.permute(&inverse).unwrap())])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.custom(&[a, b], value, Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.custom(&[a, b], value, Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))])))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(|ctx| {
                let ga = ctx.needs[0].then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y).unwrap());
                let gb = ctx.needs[1].then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x).unwrap());
                vec![ga, gb]
            }),
        ))
    }

    /// Sum of same-shaped values.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| Error::shape("add_n of nothing"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.custom(&[x], value, Box::new(move |ctx| vec![Some(ctx.grad.map(|g| g * c))]))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, |_, y| y)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, T::abs, |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, silu, |x, _| {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.zip_map(ctx.inputs[0], |g, x| if x > T::zero() { g } else { g * slope });
                vec![Some(g.unwrap())]
            }),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.custom(&[x], value, Box::new(|ctx| vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.data()[0]))]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// `Σ x ⊙ w` against a constant weight tensor; random projections make
    /// well-conditioned scalar losses for gradient checks.
    pub fn dot_const(&mut self, x: Var, w: &Tensor<T>) -> Result<Var> {
        if self.shape(x) != w.shape() {
            return Err(Error::shape(format!("dot_const: {:?} vs {:?}", self.shape(x), w.shape())));
        }
        let value = Tensor::scalar(self.value(x).data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum());
        let w = w.clone();
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data()[0];
                vec![Some(w.map(|v| v * g))]
            }),
        ))
    }

    /// Mean absolute error; gradient `sign(pred − target)/N` with ties → 0.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let a = self.abs(d);
        Ok(self.mean(a))
    }

    /// Affine map on the last axis: `x[..., Cin] · w[Cin, Cout] + b[Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || last_dim(&xs) != ws[0] {
            return Err(Error::shape(format!("linear: input {xs:?} against weight {ws:?}")));
        }
        let (cin, cout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape(format!("linear: bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let m = self.value(x).len() / cin;
        let mut out = vec![T::zero(); m * cout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bias);
            }
        }
        gemm(m, cin, cout, self.value(x).data(), false, self.value(w).data(), false, T::one(), &mut out);
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = cout;
        let value = Tensor::new(out_shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.custom(
            &inputs,
            value,
            Box::new(move |ctx| {
                let x = ctx.inputs[0];
                let w = ctx.inputs[1];
                let g = ctx.grad.data();
                let gx = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); m * cin];
                    gemm(m, cout, cin, g, false, w.data(), true, T::zero(), &mut d);
                    Tensor::new(x.shape().to_vec(), d).unwrap()
                });
                let gw = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); cin * cout];
                    gemm(cin, m, cout, x.data(), true, g, false, T::zero(), &mut d);
                    Tensor::new(vec![cin, cout], d).unwrap()
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| {
                        let mut d = vec![T::zero(); cout];
                        for row in g.chunks(cout) {
                            for (a, &v) in d.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::new(vec![cout], d).unwrap()
                    }));
                }
                grads
            }),
        ))
    }

    /// `x ⊙ s` with `s` of length `C` broadcast over all leading axes.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let c = last_dim(self.shape(x));
        if self.shape(s) != [c] {
            return Err(Error::shape(format!("scale_channels: {:?} by {:?}", self.shape(x), self.shape(s))));
        }
        let sv = self.value(s).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(c) {
            for (v, &k) in row.iter_mut().zip(&sv) {
                *v *= k;
            }
        }
        Ok(self.custom(
            &[x, s],
            value,
            Box::new(move |ctx| {
                let (x, s) = (ctx.inputs[0], ctx.inputs[1]);
                let g = ctx.grad;
                let gx = ctx.needs[0].then(|| {
                    let mut d = g.clone();
                    for row in d.data_mut().chunks_mut(c) {
                        for (v, &k) in row.iter_mut().zip(s.data()) {
                            *v *= k;
                        }
                    }
                    d
                });
                let gs = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); c];
                    for (grow, xrow) in g.data().chunks(c).zip(x.data().chunks(c)) {
                        for i in 0..c {
                            d[i] += grow[i] * xrow[i];
                        }
                    }
                    Tensor::new(vec![c], d).unwrap()
                });
                vec![gx, gs]
            }),
        ))
    }

    /// Normalizes each position over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let c = last_dim(self.shape(x));
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!("layer_norm: affine params must be [{c}]")));
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(c) {
            let (mean, rstd) = row_stats(row, eps);
            for i in 0..c {
                out.push((row[i] - mean) * rstd * gv[i] + bv[i]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.custom(
            &[x, gamma, beta],
            value,
            Box::new(move |ctx| {
                let (x, gamma) = (ctx.inputs[0], ctx.inputs[1].data());
                let g = ctx.grad.data();
                let cf = T::lit(c as f64);
                let mut gx = vec![T::zero(); x.len()];
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for (r, row) in x.data().chunks(c).enumerate() {
                    let (mean, rstd) = row_stats(row, eps);
                    let grow = &g[r * c..(r + 1) * c];
                    let mut sum_dxh = T::zero();
                    let mut sum_dxh_xh = T::zero();
                    for i in 0..c {
                        let xh = (row[i] - mean) * rstd;
                        let dxh = grow[i] * gamma[i];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        gg[i] += grow[i] * xh;
                        gb[i] += grow[i];
                    }
                    for i in 0..c {
                        let xh = (row[i] - mean) * rstd;
                        let dxh = grow[i] * gamma[i];
                        gx[r * c + i] = rstd * (dxh - sum_dxh / cf - xh * sum_dxh_xh / cf);
                    }
                }
                vec![
                    ctx.needs[0].then(|| Tensor::new(x.shape().to_vec(), gx).unwrap()),
                    ctx.needs[1].then(|| Tensor::new(vec![c], gg).unwrap()),
                    ctx.needs[2].then(|| Tensor::new(vec![c], gb).unwrap()),
                ]
            }),
        ))
    }

    /// `[B, H, W, C] → [B, C]` spatial mean.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("mean_spatial expects [B,H,W,C], got {s:?}")));
        }
        let (b, hw, c) = (s[0], s[1] * s[2], s[3]);
        let inv = T::one() / T::lit(hw as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * c];
        for bi in 0..b {
            for p in 0..hw {
                let row = &xv[(bi * hw + p) * c..(bi * hw + p + 1) * c];
                for ch in 0..c {
                    out[bi * c + ch] += row[ch];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); b * hw * c];
                for bi in 0..b {
                    for p in 0..hw {
                        for ch in 0..c {
                            d[(bi * hw + p) * c + ch] = g[bi * c + ch] * inv;
                        }
                    }
                }
                vec![Some(Tensor::new(s.clone(), d).unwrap())]
            }),
        ))
    }

    /// `x[B, H, W, C] ⊙ gate[B, C]`, gate broadcast over the spatial axes.
    pub fn gate_spatial(&mut self, x: Var, gate: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || self.shape(gate) != [s[0], s[3]] {
            return Err(Error::shape(format!("gate_spatial: {s:?} by {:?}", self.shape(gate))));
        }
        let (b, hw, c) = (s[0], s[1] * s[2], s[3]);
        let gv = self.value(gate).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, row) in value.data_mut().chunks_mut(c).enumerate() {
            let bi = i / hw;
            for ch in 0..c {
                row[ch] *= gv[bi * c + ch];
            }
        }
        Ok(self.custom(
            &[x, gate],
            value,
            Box::new(move |ctx| {
                let (x, gate) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let g = ctx.grad.data();
                let gx = ctx.needs[0].then(|| {
                    let mut d = g.to_vec();
                    for (i, row) in d.chunks_mut(c).enumerate() {
                        let bi = i / hw;
                        for ch in 0..c {
                            row[ch] *= gate[bi * c + ch];
                        }
                    }
                    Tensor::new(s.clone(), d).unwrap()
                });
                let gg = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); b * c];
                    for i in 0..b * hw {
                        let bi = i / hw;
                        for ch in 0..c {
                            d[bi * c + ch] += g[i * c + ch] * x[i * c + ch];
                        }
                    }
                    Tensor::new(vec![b, c], d).unwrap()
                });
                vec![gx, gg]
            }),
        ))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::shape("concat of nothing"))?).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape(format!("concat_last: {first:?} vs {s:?}")));
            }
            widths.push(last_dim(s));
        }
        let total: usize = widths.iter().sum();
        let rows = numel(lead);
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        let lead = lead.to_vec();
        Ok(self.custom(
            xs,
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (k, &w) in widths.iter().enumerate() {
                        grads[k].extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                grads
                    .into_iter()
                    .zip(&widths)
                    .map(|(d, &w)| {
                        let mut s = lead.clone();
                        s.push(w);
                        Some(Tensor::new(s, d).unwrap())
                    })
                    .collect()
            }),
        ))
    }

    /// Channels `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = last_dim(&s);
        if len == 0 || start + len > c {
            return Err(Error::shape(format!("slice_last {start}..{} of {c}", start + len)));
        }
        let rows = numel(&s) / c;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv[r * c + start..r * c + start + len]);
        }
        let mut shape = s.clone();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); rows * c];
                for r in 0..rows {
                    d[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![Some(Tensor::new(s.clone(), d).unwrap())]
            }),
        ))
    }

    /// Reorders the sequence axis of `[B, L, C]`: `out[:, k] = x[:, order[k]]`.
    pub fn permute_seq(&mut self, x: Var, order: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || order.len() != s[1] {
            return Err(Error::shape(format!("permute_seq: {s:?} with order of length {}", order.len())));
        }
        check_permutation(order, s[1])?;
        let (b, l, c) = (s[0], s[1], s[2]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xv.len());
        for bi in 0..b {
            for &src in order {
                let off = (bi * l + src) * c;
                out.extend_from_slice(&xv[off..off + c]);
            }
        }
        let value = Tensor::new(s.clone(), out)?;
        let order = order.to_vec();
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); g.len()];
                for bi in 0..b {
                    for (k, &src) in order.iter().enumerate() {
                        let (o, i) = ((bi * l + src) * c, (bi * l + k) * c);
                        d[o..o + c].copy_from_slice(&g[i..i + c]);
                    }
                }
                vec![Some(Tensor::new(s.clone(), d).unwrap())]
            }),
        ))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = self.value(x).pixel_shuffle(r)?;
        let in_shape = self.shape(x).to_vec();
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let plan = ShufflePlan::new(&in_shape, r).unwrap();
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); g.len()];
                plan.for_each(|src, dst| d[src] = g[dst]);
                vec![Some(Tensor::new(in_shape.clone(), d).unwrap())]
            }),
        ))
    }

    /// Broadcasts along a new leading axis of size `n`: `[..] → [n, ..]`.
    pub fn repeat_leading(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::shape("repeat_leading by 0"));
        }
        let s = self.shape(x).to_vec();
        let mut shape = vec![n];
        shape.extend_from_slice(&s);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xv.len() * n);
        for _ in 0..n {
            out.extend_from_slice(xv);
        }
        let value = Tensor::new(shape, out)?;
        let m = numel(&s);
        Ok(self.custom(
            &[x],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); m];
                for chunk in g.chunks(m) {
                    for (a, &v) in d.iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                vec![Some(Tensor::new(s.clone(), d).unwrap())]
            }),
        ))
    }
}

pub(crate) fn row_stats<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::lit(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else if x < T::lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
