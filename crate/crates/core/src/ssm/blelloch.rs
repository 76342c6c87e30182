//! Work-efficient (up-sweep / down-sweep) prefix scan over affine maps.
//!
//! The first-order recurrence `h_k = a_k h_{k−1} + b_k` is the prefix
//! composition of the maps `h ↦ a_k h + b_k`. Composing an earlier map `p`
//! with a later map `q` gives `(q.a·p.a, q.a·p.b + q.b)`, which is
//! associative, so the prefixes can be computed in `O(log L)` levels with
//! `O(L)` total work. Each level's combines are independent; long lanes run
//! them on the rayon pool.

use rayon::prelude::*;

use crate::tensor::Real;

/// The map `h ↦ a·h + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> Affine<T> {
    pub fn identity() -> Self {
        Affine { a: T::one(), b: T::zero() }
    }

    /// `later ∘ self`: apply `self` first, then `later`.
    #[inline]
    pub fn then(self, later: Self) -> Self {
        Affine { a: later.a * self.a, b: later.a * self.b + later.b }
    }
}

/// Lanes shorter than this run each level serially.
const PAR_LEVEL_MIN: usize = 1 << 14;

/// Replaces `items[k]` by `items[0].then(items[1])…then(items[k])`. Applied
/// to `h₀ = 0`, `items[k].b` is then the state `h_k`.
pub fn blelloch_inclusive<T: Real>(items: &mut [Affine<T>]) {
    let n = items.len();
    if n <= 1 {
        return;
    }
    let size = n.next_power_of_two();
    let mut tree: Vec<Affine<T>> = Vec::with_capacity(size);
    tree.extend_from_slice(items);
    tree.resize(size, Affine::identity());

    // up-sweep: tree[i] holds the composition of its subtree
    let mut stride = 1;
    while stride < size {
        let span = 2 * stride;
        let combine = |chunk: &mut [Affine<T>]| {
            let left = chunk[stride - 1];
            chunk[span - 1] = left.then(chunk[span - 1]);
        };
        if size / span >= 2 && size >= PAR_LEVEL_MIN {
            tree.par_chunks_mut(span).for_each(combine);
        } else {
            tree.chunks_mut(span).for_each(combine);
        }
        stride = span;
    }

    // down-sweep: exclusive prefixes
    tree[size - 1] = Affine::identity();
    let mut stride = size / 2;
    while stride >= 1 {
        let span = 2 * stride;
        let combine = |chunk: &mut [Affine<T>]| {
            let left = chunk[stride - 1];
            let prefix = chunk[span - 1];
            chunk[stride - 1] = prefix;
            chunk[span - 1] = prefix.then(left);
        };
        if size / span >= 2 && size >= PAR_LEVEL_MIN {
            tree.par_chunks_mut(span).for_each(combine);
        } else {
            tree.chunks_mut(span).for_each(combine);
        }
        stride /= 2;
    }

    for (item, prefix) in items.iter_mut().zip(&tree) {
        *item = prefix.then(*item);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sequential(items: &[Affine<f64>]) -> Vec<Affine<f64>> {
        let mut acc = Affine::identity();
        items
            .iter()
            .map(|&p| {
                acc = acc.then(p);
                acc
            })
            .collect()
    }

    #[test]
    fn matches_sequential_for_awkward_lengths() {
        for n in [1usize, 2, 3, 5, 7, 8, 17, 100] {
            let items: Vec<Affine<f64>> = (0..n).map(|k| Affine { a: 0.5 + 0.0049 * k as f64, b: (k as f64).sin() }).collect();
            let mut got = items.clone();
            blelloch_inclusive(&mut got);
            let want = sequential(&items);
            for (g, w) in got.iter().zip(&want) {
                let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs().max(1.0);
                assert!(close(g.a, w.a) && close(g.b, w.b), "n={n}");
            }
        }
    }

    #[test]
    fn composition_is_associative() {
        let p = Affine { a: 0.3f64, b: 1.2 };
        let q = Affine { a: -0.7, b: 0.4 };
        let r = Affine { a: 0.9, b: -2.5 };
        let left = p.then(q).then(r);
        let right = p.then(q.then(r));
        assert!((left.a - right.a).abs() < 1e-12);
        assert!((left.b - right.b).abs() < 1e-12);
    }

    #[test]
    fn parallel_levels_match_serial() {
        let n = PAR_LEVEL_MIN + 123;
        let items: Vec<Affine<f64>> = (0..n).map(|k| Affine { a: 0.999, b: ((k % 17) as f64) * 0.01 }).collect();
        let mut got = items.clone();
        blelloch_inclusive(&mut got);
        let want = sequential(&items);
        let worst = got.iter().zip(&want).map(|(g, w)| (g.b - w.b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }
}
