//! Compares the four-direction scan over all channels with the grouped
//! variant that gives each channel quarter one direction.

use lfmamba::blocks::{BlockConfig, Ess2d, Ss2d};
use lfmamba::ssm::SsmConfig;

fn main() {
    println!("{:>4} {:>3} {:>3}  {:>9} {:>9}  ratio", "C", "N", "r", "ss2d", "ess2d");
    for (c, n) in [(16, 4), (64, 16), (128, 16), (192, 16)] {
        let cfg = BlockConfig::new(c, 1, n);
        let scan: SsmConfig = cfg.scan_at(c);
        let (full, grouped) = (Ss2d::scan_params(scan), Ess2d::scan_params(scan));
        println!("{c:>4} {n:>3} {:>3}  {full:>9} {grouped:>9}  {}", scan.dt_rank, grouped as f64 / full as f64);
    }
    // the grouped scan also does a quarter of the sequence work
    let (h, w, c) = (32usize, 32usize, 64usize);
    println!("scan steps per image: ss2d {}  ess2d {}", 4 * h * w * c, h * w * c);
}
