//! Finite-difference check of the toy network, then of a deliberately broken
//! layer to show the harness notices.

use lfmamba::autograd::Tape;
use lfmamba::gradcheck::{check, GradCheckConfig};
use lfmamba::nn::ParamStore;
use lfmamba::verify::toy_network_gradients;
use lfmamba::Tensor;

fn main() -> lfmamba::Result<()> {
    let report = toy_network_gradients()?;
    println!("toy network: {} partials, max rel err {:.2e} ({}) -> {}", report.checked, report.max_rel_err, report.worst, report.passed());

    // y = x², with the backward pass scaled by 1.02
    let x = Tensor::from_fn(&[6], |i| i[0] as f64 * 0.3 - 0.7);
    let broken = check(&ParamStore::new(), &[x], GradCheckConfig::default(), |t: &mut Tape<f64>, _, v| {
        let sq = t.mul(v[0], v[0])?;
        let value = t.value(sq).clone();
        Ok(t.custom(&[sq], value, Box::new(|ctx| vec![Some(ctx.grad.map(|g| g * 1.02))])))
    })?;
    println!("2% adjoint error: max rel err {:.2e} -> {}", broken.max_rel_err, broken.passed());
    Ok(())
}
