//! Angular super-resolution: synthesizes a `7×7` light field from its four
//! corner views with the angular head, and reports the shapes and the head's
//! share of the parameters.

use lfmamba::net::{count_params, Head, LfMamba, NetworkConfig};
use lfmamba::train::synthetic_light_field;
use lfmamba::Extents;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lfmamba::Result<()> {
    let full = NetworkConfig::asr();
    let (model, store) = LfMamba::build::<f32>(full)?;
    let head = match &model.head {
        Head::Asr { angular_weight, angular_bias, expand, out } => {
            store.num_scalars_of(&[*angular_weight, *angular_bias]) + store.num_scalars_of(&expand.ids()) + store.num_scalars_of(&out.ids())
        }
        Head::Sr { .. } => unreachable!("asr config builds an angular head"),
    };
    println!("angular model: {} params, head {head}", count_params(&full));

    // small spatial extent keeps the demo quick on one core
    let dense = synthetic_light_field::<f32>(&mut ChaCha8Rng::seed_from_u64(5), Extents::new(7, 7, 24, 24));
    let corners = lfmamba::LightField::from_fn(Extents::new(2, 2, 24, 24), 1, |i| dense.at(i[0] * 6, i[1] * 6, i[2], i[3], 0));
    let out = model.infer(&store, &corners)?;
    let e = out.extents();
    println!("input {:?} -> output {}x{}x{}x{}", corners.extents().as_array(), e.u, e.v, e.h, e.w);
    Ok(())
}
