//! Evaluates one random diagonal SSM three ways (sequential recurrence,
//! causal convolution with the unrolled kernel, Blelloch scan) and a
//! selective lane two ways, printing the largest disagreement per length.

use lfmamba::ssm::{conv_form, parallel_scan, recurrence, DiscreteSsm};
use lfmamba::verify::{random_invariant, random_selective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> lfmamba::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    println!("{:>5}  {:>10}  {:>10}  {:>10}", "L", "conv", "blelloch", "selective");
    for len in [1, 2, 3, 17, 256, 4096] {
        let ssm = DiscreteSsm::Invariant(random_invariant(&mut rng, 8)?);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = recurrence(&ssm, &x)?;
        let conv = max_diff(&h, &conv_form(&ssm, &x)?);
        let scan = max_diff(&h, &parallel_scan(&ssm, &x)?);
        let lane = DiscreteSsm::Selective(random_selective(&mut rng, len, 8)?);
        let sel = max_diff(&recurrence(&lane, &x)?, &parallel_scan(&lane, &x)?);
        println!("{len:>5}  {conv:>10.2e}  {scan:>10.2e}  {sel:>10.2e}");
    }
    Ok(())
}
