//! Super-resolves a synthetic light field with a saved model (or a freshly
//! initialized one, which reproduces bicubic), with and without the
//! eight-fold geometric ensemble, and reports PSNR/SSIM per view.
//!
//! `cargo run --release --example super_resolve -- [model.lfmc]`

use lfmamba::geometry::{bicubic_resize_lf, geometry_ensemble};
use lfmamba::io::write_lf_dir;
use lfmamba::metrics::{aggregate, evaluate_scene};
use lfmamba::net::LfMamba;
use lfmamba::train::{overfit_toy, synthetic_light_field};
use lfmamba::Extents;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lfmamba::Result<()> {
    let (model, store) = match std::env::args().nth(1) {
        Some(path) => LfMamba::load::<f32>(path)?,
        None => LfMamba::build::<f32>(overfit_toy().0)?,
    };
    let scale = model.config.scale;
    let [u, v] = model.config.angular;
    let hr = synthetic_light_field::<f32>(&mut ChaCha8Rng::seed_from_u64(11), Extents::new(u, v, 32 * scale, 32 * scale));
    let lr = bicubic_resize_lf(&hr, 1.0 / scale as f64)?;

    let single = model.infer(&store, &lr)?;
    let ensemble = geometry_ensemble(&lr, |x| model.infer(&store, x))?;
    let bicubic = bicubic_resize_lf(&lr, scale as f64)?;
    for (name, out) in [("bicubic", &bicubic), ("model", &single), ("ensemble", &ensemble)] {
        let m = aggregate(vec![evaluate_scene(out, &hr)?]);
        let centre = m.scenes[0].per_view[(u / 2) * v + v / 2];
        println!("{name:<9} psnr {:.3} dB  ssim {:.4}  centre view {:.3} dB", m.psnr, m.ssim, centre.0);
    }
    let dir = std::env::temp_dir().join("lf_super_resolved");
    write_lf_dir(&single, &dir, 16)?;
    println!("wrote {}", dir.display());
    Ok(())
}
