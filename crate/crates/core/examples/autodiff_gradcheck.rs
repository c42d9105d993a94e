//! Reverse-mode gradients of a small expression, checked against central
//! differences.

use flownmt::numcore::{grad_check, Tensor};

fn main() -> flownmt::Result<()> {
    let x = Tensor::param(vec![0.5, -1.0, 2.0], &[3])?;
    // f(x) = Σ tanh(x)² + log(1 + exp(x))
    let f = |x: &Tensor| -> flownmt::Result<Tensor> { Ok(x.tanh().square().add(&x.softplus())?.sum()) };
    let y = f(&x)?;
    let grads = y.backward()?;
    println!("f(x) = {:.6}", y.item());
    println!("df/dx = {:?}", grads.get_or_zeros(&x));
    let worst = grad_check(f, &[0.5, -1.0, 2.0], &[3], 1e-6)?;
    println!("max |analytic - finite difference| = {worst:.2e}");
    Ok(())
}
