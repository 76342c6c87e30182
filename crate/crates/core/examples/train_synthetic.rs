//! Trains the small network on synthetic light fields at ×2 and compares the
//! held-out PSNR with bicubic upsampling.
//!
//! `cargo run --release --example train_synthetic -- [epochs] [lr] [batch] [halve_every]`

use std::time::Instant;

use lfmamba::net::LfMamba;
use lfmamba::train::{desk_run, train, validate};

fn main() -> lfmamba::Result<()> {
    let mut run = desk_run(20, 4)?;
    let mut args = std::env::args().skip(1);
    if let Some(e) = args.next().and_then(|s| s.parse().ok()) {
        run.train.epochs = e;
    }
    if let Some(lr) = args.next().and_then(|s| s.parse().ok()) {
        run.train.lr0 = lr;
    }
    if let Some(b) = args.next().and_then(|s| s.parse().ok()) {
        run.train.batch = b;
    }
    if let Some(h) = args.next().and_then(|s| s.parse().ok()) {
        run.train.halve_every = h;
    }
    let (model, mut store) = LfMamba::build::<f32>(run.network)?;
    let before = validate(&model, &store, &run.val)?;
    println!("bicubic {:.3} dB, untrained {:.3} dB", before.bicubic_psnr, before.psnr);
    println!("epoch step lr loss psnr_val");
    let start = Instant::now();
    let report = train(&model, &mut store, &run.data, &run.val, &run.train, &mut std::io::stdout(), None)?;
    let last = report.validation.last().copied().unwrap_or(before);
    println!(
        "held-out {:.3} dB vs bicubic {:.3} dB (gain {:+.3} dB) in {:.1?}",
        last.psnr,
        last.bicubic_psnr,
        last.psnr - last.bicubic_psnr,
        start.elapsed()
    );
    Ok(())
}
