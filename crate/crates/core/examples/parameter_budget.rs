//! Parameter and FLOP counts of the standard configurations on a
//! `5×5×32×32` input.

use lfmamba::net::{count_flops, count_params, NetworkConfig};
use lfmamba::Extents;

fn main() {
    let e = Extents::new(5, 5, 32, 32);
    let rows = [
        ("x2", NetworkConfig::sr(2)),
        ("x4", NetworkConfig::sr(4)),
        ("x4, 1 block", NetworkConfig { blocks_per_subspace: 1, ..NetworkConfig::sr(4) }),
        ("x4, 3 blocks", NetworkConfig { blocks_per_subspace: 3, ..NetworkConfig::sr(4) }),
        ("angular 2x2 to 7x7", NetworkConfig::asr()),
    ];
    println!("{:<20} {:>10} {:>10} {:>10}", "config", "params", "GMACs", "GFLOPs");
    for (name, cfg) in rows {
        let input = if cfg.angular == [5, 5] { e } else { Extents::new(2, 2, 32, 32) };
        let f = count_flops(&cfg, input);
        println!("{name:<20} {:>9.3}M {:>10.2} {:>10.2}", count_params(&cfg) as f64 / 1e6, f.macs as f64 / 1e9, f.flops as f64 / 1e9);
    }
}
