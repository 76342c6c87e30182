//! Slices a synthetic light field into its four 2D batch forms, writes a few
//! of each as PNG, and checks every round trip.
//!
//! `cargo run --example light_field_slices -- [out_dir]`

use std::path::PathBuf;

use lfmamba::geometry::{from_slice, macpi_image, to_slice, Extents, SliceKind};
use lfmamba::io::write_png;
use lfmamba::train::synthetic_light_field;
use lfmamba::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lfmamba::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lf_slices"));
    std::fs::create_dir_all(&out).map_err(|e| lfmamba::Error::Io { path: out.clone(), source: e })?;
    let e = Extents::new(5, 5, 48, 48);
    let lf = synthetic_light_field::<f64>(&mut ChaCha8Rng::seed_from_u64(3), e);

    for kind in SliceKind::ALL {
        let view = to_slice(&lf, kind);
        let [n, rows, cols] = kind.batch_dims(e);
        for k in [0, n / 2] {
            let chunk = &view.tensor.data()[k * rows * cols..(k + 1) * rows * cols];
            write_png(&Tensor::new(vec![rows, cols], chunk.to_vec())?, out.join(format!("{}_{k}.png", kind.name())))?;
        }
        let exact = from_slice(&view)? == lf;
        println!("{:<6} {n:>5} slices of {rows:>2}x{cols:<2}  round trip exact: {exact}", kind.name());
    }
    let mac = macpi_image(&lf)?;
    write_png(&mac, out.join("macpi_image.png"))?;
    println!("macpi image {:?} written to {}", mac.shape(), out.display());
    Ok(())
}
