//! Forward pass, backprop and forward-mode products on a small network, with
//! a finite-difference spot check.

use nghf::network::{Activation, Matrix, NetworkSpec};
use nghf::param::{dot, init_parameters, InitScheme};

fn main() -> nghf::Result<()> {
    let spec = NetworkSpec::new(4, vec![6, 5], 3, Activation::Sigmoid)?;
    let theta = init_parameters(spec.layout(), 7, InitScheme::UniformFanIn);
    let frames = Matrix::from_fn(5, 4, |t, j| ((t * 4 + j) as f64 * 0.37).sin());
    let (outputs, trace) = spec.forward(&theta, &frames)?;
    println!("{} parameters, outputs {}x{}", spec.num_parameters(), outputs.nrows(), outputs.ncols());

    // d/dθ of Σ outputs ⊙ w
    let w = Matrix::from_fn(5, 3, |t, s| (t as f64 - s as f64) * 0.1);
    let grad = trace.backprop(&w)?.values;

    let v = init_parameters(spec.layout(), 8, InitScheme::UniformFanIn);
    let jv = trace.jvp(&v)?;
    println!("<J v, w> = {:.12}", jv.component_mul(&w).sum());
    println!("<v, Jᵀw> = {:.12}", dot(&v, &grad)?);

    let h = 1e-6;
    let mut plus = theta.clone();
    plus.add_scaled(h, &v)?;
    let mut minus = theta.clone();
    minus.add_scaled(-h, &v)?;
    let fd = (spec.forward(&plus, &frames)?.0 - spec.forward(&minus, &frames)?.0).component_mul(&w).sum() / (2.0 * h);
    println!("central difference = {fd:.12}");
    Ok(())
}
