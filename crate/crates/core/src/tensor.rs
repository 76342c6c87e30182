//! Dense row-major tensors and the shape-only operations (reshape, permute,
//! pixel shuffle) shared by the differentiable ops and the light-field views.
//!
//! Memory layout is channel-last throughout: images are `[B, H, W, C]` and
//! light fields `[U, V, H, W, C]`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar storage code used by the binary containers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point scalar usable as tensor element. Implemented for `f32`
/// (training) and `f64` (verification).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// Literal conversion; every call site passes a finite constant.
    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn push_le(self, out: &mut Vec<u8>);

    fn from_le(bytes: &[u8]) -> Self;

    /// # Safety
    /// Pointers and strides must describe matrices that fit the given
    /// extents; see `matrixmultiply::sgemm`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn lit(x: f64) -> Self {
        x as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn lit(x: f64) -> Self {
        x
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `c[m×n] = op(a)[m×k] · op(b)[k×n] + beta · c`.
///
/// `a` is stored `[m, k]` (or `[k, m]` when `trans_a`), `b` is stored
/// `[k, n]` (or `[n, k]` when `trans_b`), all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], trans_a: bool, b: &[T], trans_b: bool, beta: T, c: &mut [T]) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe in-bounds row-major views.
    unsafe {
        T::gemm_raw(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("len", &self.data.len()).finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape(format!("zero extent in {shape:?}")));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_extents(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!("shape {shape:?} holds {} elements, got {}", numel(&shape), data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        Tensor { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let n = numel(shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range {ext} on axis {i}");
            off = off * ext + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Row-major reinterpretation with a new shape of equal element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshaped(new_shape)
    }

    pub fn into_reshaped(mut self, new_shape: &[usize]) -> Result<Self> {
        check_extents(new_shape)?;
        if numel(new_shape) != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {new_shape:?}", self.shape)));
        }
        self.shape = new_shape.to_vec();
        Ok(self)
    }

    /// Materialized axis permutation: output axis `i` is input axis `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.rank())?;
        let out_shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides(&self.shape);
        let gather: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        permute_gather(&self.data, &out_shape, &gather, &mut data);
        Ok(Tensor { shape: out_shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Depth-to-space on `[B, H, W, C·r²]`: output `(b, h·r+i, w·r+j, c)` reads
    /// input channel `c·r² + i·r + j`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Self> {
        let plan = ShufflePlan::new(&self.shape, r)?;
        let mut out = vec![T::zero(); self.data.len()];
        plan.for_each(|src, dst| out[dst] = self.data[src]);
        Ok(Tensor { shape: plan.out_shape(), data: out })
    }

    /// Inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Self> {
        if self.rank() != 4 || r == 0 || !self.shape[1].is_multiple_of(r) || !self.shape[2].is_multiple_of(r) {
            return Err(Error::shape(format!("pixel_unshuffle needs [B,rH,rW,C] with r={r}, got {:?}", self.shape)));
        }
        let in_shape = [self.shape[0], self.shape[1] / r, self.shape[2] / r, self.shape[3] * r * r];
        let plan = ShufflePlan::new(&in_shape, r)?;
        let mut out = vec![T::zero(); self.data.len()];
        plan.for_each(|src, dst| out[src] = self.data[dst]);
        Ok(Tensor { shape: in_shape.to_vec(), data: out })
    }
}

pub(crate) fn check_permutation(order: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if order.len() != rank {
        return Err(Error::InvalidAxes(format!("{order:?} for rank {rank}")));
    }
    for &a in order {
        if a >= rank || seen[a] {
            return Err(Error::InvalidAxes(format!("{order:?} is not a permutation of 0..{rank}")));
        }
        seen[a] = true;
    }
    Ok(())
}

/// Walks `out_shape` in row-major order, reading `src` at the offset given by
/// `gather` strides.
pub(crate) fn permute_gather<T: Copy>(src: &[T], out_shape: &[usize], gather: &[usize], out: &mut Vec<T>) {
    let rank = out_shape.len();
    if rank == 0 {
        return;
    }
    let n = numel(out_shape);
    let inner = out_shape[rank - 1];
    let inner_stride = gather[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut done = 0;
    while done < n {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        }
        done += inner;
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            base += gather[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= gather[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) struct ShufflePlan {
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    r: usize,
}

impl ShufflePlan {
    pub(crate) fn new(in_shape: &[usize], r: usize) -> Result<Self> {
        if in_shape.len() != 4 || r == 0 || !in_shape[3].is_multiple_of(r * r) {
            return Err(Error::shape(format!("pixel_shuffle needs [B,H,W,C·r²] with r={r}, got {in_shape:?}")));
        }
        Ok(ShufflePlan { b: in_shape[0], h: in_shape[1], w: in_shape[2], c: in_shape[3] / (r * r), r })
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.b, self.h * self.r, self.w * self.r, self.c]
    }

    /// Calls `f(input_offset, output_offset)` for every element.
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let (r, c) = (self.r, self.c);
        let cin = c * r * r;
        let (ho, wo) = (self.h * r, self.w * r);
        for b in 0..self.b {
            for y in 0..self.h {
                for x in 0..self.w {
                    let src_base = ((b * self.h + y) * self.w + x) * cin;
                    for i in 0..r {
                        for j in 0..r {
                            let dst_base = ((b * ho + y * r + i) * wo + x * r + j) * c;
                            for ch in 0..c {
                                f(src_base + ch * r * r + i * r + j, dst_base + ch);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor<f64> {
        let n = numel(shape);
        Tensor::new(shape.to_vec(), (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn reshape_keeps_element_order() {
        let t = seq(&[2, 3]);
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert_eq!(r.reshape(&[2, 3]).unwrap(), t);
    }

    #[test]
    fn reshape_merges_angular_axes() {
        let t = Tensor::<f32>::zeros(&[5, 5, 4, 4, 64]);
        assert_eq!(t.reshape(&[25, 4, 4, 64]).unwrap().shape(), &[25, 4, 4, 64]);
    }

    #[test]
    fn reshape_rejects_mismatch() {
        assert!(matches!(seq(&[2, 3]).reshape(&[4, 2]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn permute_transposes() {
        let t = seq(&[2, 3]);
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn permute_rejects_non_permutation() {
        assert!(matches!(seq(&[2, 3]).permute(&[0, 0]), Err(Error::InvalidAxes(_))));
        assert!(matches!(seq(&[2, 3]).permute(&[0]), Err(Error::InvalidAxes(_))));
    }

    #[test]
    fn permute_4d_matches_index_arithmetic() {
        let shape = [2, 3, 4, 5];
        let t = seq(&shape);
        let order = [2, 0, 3, 1];
        let p = t.permute(&order).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    for d in 0..5 {
                        let src = [a, b, c, d];
                        let dst: Vec<usize> = order.iter().map(|&ax| src[ax]).collect();
                        assert_eq!(p.at(&dst), t.at(&src));
                    }
                }
            }
        }
        let mut inv = [0; 4];
        for (i, &o) in order.iter().enumerate() {
            inv[o] = i;
        }
        assert_eq!(p.permute(&inv).unwrap(), t);
    }

    #[test]
    fn pixel_shuffle_single_block() {
        let t = Tensor::new(vec![1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = t.pixel_shuffle(2).unwrap();
        assert_eq!(s.shape(), &[1, 2, 2, 1]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_is_bijective() {
        let t = seq(&[2, 3, 5, 16]);
        let s = t.pixel_shuffle(4).unwrap();
        assert_eq!(s.shape(), &[2, 12, 20, 1]);
        let mut a = t.data().to_vec();
        let mut b = s.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_eq!(s.pixel_unshuffle(4).unwrap(), t);
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible_channels() {
        assert!(seq(&[1, 2, 2, 6]).pixel_shuffle(2).is_err());
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
