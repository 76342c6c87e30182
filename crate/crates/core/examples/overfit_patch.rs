//! Overfits the fixed toy instance and prints the loss curve.
//!
//! `cargo run --release --example overfit_patch -- [steps] [lr]`

use std::time::Instant;

use lfmamba::net::{count_params, LfMamba};
use lfmamba::train::{overfit_single_patch, overfit_toy, OverfitConfig};

fn main() -> lfmamba::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: Option<f64> = std::env::args().nth(2).and_then(|s| s.parse().ok());
    let (cfg, sample) = overfit_toy();
    let (model, mut store) = LfMamba::build::<f32>(cfg)?;
    println!("params {}", count_params(&cfg));
    let start = Instant::now();
    let curve = overfit_single_patch(
        &model,
        &mut store,
        &sample,
        steps,
        OverfitConfig { lr: lr.unwrap_or(OverfitConfig::default().lr), ..OverfitConfig::default() },
    )?;
    let every = (steps / 20).max(1);
    for (k, loss) in curve.iter().enumerate().step_by(every) {
        println!("step {k:5}  l1 {loss:.3e}");
    }
    println!("final l1 {:.3e} after {steps} steps in {:.1?}", curve[curve.len() - 1], start.elapsed());
    Ok(())
}
