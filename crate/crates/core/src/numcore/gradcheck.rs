//! Central-difference gradient checks against the reverse-mode graph.

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic - central difference|` for a scalar
/// function of one tensor.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_many(|xs| f(&xs[0]), &[(x.to_vec(), shape.to_vec())], eps)
}

/// Same as [`grad_check`] for a function of several tensors; every
/// coordinate of every input is perturbed.
pub fn grad_check_many<F>(f: F, inputs: &[(Vec<f64>, Vec<usize>)], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::BadStep(eps));
    }
    let leaves = inputs
        .iter()
        .map(|(v, s)| Tensor::param(v.clone(), s))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&leaves)?;
    check_finite(&out, "grad_check output")?;
    let grads = out.backward()?;

    let eval = |vals: &[Vec<f64>]| -> Result<f64> {
        let ts = vals
            .iter()
            .zip(inputs)
            .map(|(v, (_, s))| Tensor::new(v.clone(), s))
            .collect::<Result<Vec<_>>>()?;
        let y = f(&ts)?;
        check_finite(&y, "grad_check perturbed output")?;
        Ok(y.item())
    };

    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let mut worst: f64 = 0.0;
    for (t, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        for i in 0..analytic.len() {
            let orig = vals[t][i];
            vals[t][i] = orig + eps;
            let up = eval(&vals)?;
            vals[t][i] = orig - eps;
            let down = eval(&vals)?;
            vals[t][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max((analytic[i] - numeric).abs());
        }
    }
    Ok(worst)
}

/// Gradient check over every coordinate of every parameter in `store`.
/// `f` receives the store bound either as differentiable leaves or as
/// constants and must be deterministic.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<f64>
where
    F: Fn(&ParamStore, bool) -> Result<(Tensor, Vec<Tensor>)>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::BadStep(eps));
    }
    let (out, leaves) = f(store, true)?;
    check_finite(&out, "grad_check output")?;
    let grads = out.backward()?;
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for (p, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        for i in 0..analytic.len() {
            let orig = probe.values(p)[i];
            probe.values_mut(p)[i] = orig + eps;
            let up = f(&probe, false)?.0;
            probe.values_mut(p)[i] = orig - eps;
            let down = f(&probe, false)?.0;
            probe.values_mut(p)[i] = orig;
            check_finite(&up, "grad_check perturbed output")?;
            check_finite(&down, "grad_check perturbed output")?;
            let numeric = (up.item() - down.item()) / (2.0 * eps);
            worst = worst.max((analytic[i] - numeric).abs());
        }
    }
    Ok(worst)
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.values().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let dev = grad_check(|x| Ok(x.square().sum()), &[1.0, 2.0], &[2], 1e-5).unwrap();
        assert!(dev <= 1e-7, "{dev}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let r = grad_check(|x| Ok(x.sum()), &[1.0], &[1], 0.0);
        assert!(matches!(r, Err(Error::BadStep(_))));
    }

    #[test]
    fn non_finite_is_rejected() {
        let r = grad_check(|x| Ok(x.log().sum()), &[-1.0], &[1], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
