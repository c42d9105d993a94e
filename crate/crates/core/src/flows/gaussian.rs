use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

/// Diagonal Gaussian over the last axis; leading axes index independent
/// distributions (one per sentence in a batch).
#[derive(Clone, Debug)]
pub struct DiagGaussian {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl DiagGaussian {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        if mu.shape() != log_var.shape() || mu.rank() == 0 {
            return Err(Error::shape("DiagGaussian", mu.shape(), log_var.shape()));
        }
        Ok(Self { mu, log_var })
    }

    /// `N(0, I)` with the given shape.
    pub fn standard(shape: &[usize]) -> Self {
        Self {
            mu: Tensor::zeros(shape),
            log_var: Tensor::zeros(shape),
        }
    }

    pub fn dim(&self) -> usize {
        *self.mu.shape().last().expect("rank >= 1")
    }

    fn lead_shape(&self) -> Vec<usize> {
        self.mu.shape()[..self.mu.rank() - 1].to_vec()
    }

    /// `z = mu + exp(log_var / 2) * eps`.
    pub fn reparameterize(&self, eps: &Tensor) -> Result<Tensor> {
        self.mu.add(&self.log_var.scale(0.5).exp().mul(eps)?)
    }

    /// Log-density summed over the last axis.
    pub fn log_prob(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape() != self.mu.shape() {
            return Err(Error::shape("DiagGaussian::log_prob", self.mu.shape(), z.shape()));
        }
        let quad = z.sub(&self.mu)?.square().mul(&self.log_var.neg().exp())?;
        let per_dim = quad.add(&self.log_var)?.scale(-0.5).add_scalar(-0.5 * (2.0 * PI).ln());
        per_dim.sum_last()?.reshape(&self.lead_shape())
    }

    /// A reparameterised draw and its log-density under `self`.
    pub fn sample(&self, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        if self.mu.values().iter().chain(self.log_var.values()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian parameters".into()));
        }
        let eps = Tensor::new(rng.normals(self.mu.numel()), self.mu.shape())?;
        let z = self.reparameterize(&eps)?;
        let log_q = self.log_prob(&z)?;
        Ok((z, log_q))
    }

    /// Closed-form `KL(self || other)` per distribution.
    pub fn kl_divergence(&self, other: &DiagGaussian) -> Result<Tensor> {
        let var_ratio = self.log_var.sub(&other.log_var)?.exp();
        let mean_term = self.mu.sub(&other.mu)?.square().mul(&other.log_var.neg().exp())?;
        let per_dim = var_ratio
            .add(&mean_term)?
            .sub(&self.log_var.sub(&other.log_var)?)?
            .add_scalar(-1.0)
            .scale(0.5);
        per_dim.sum_last()?.reshape(&self.lead_shape())
    }
}

/// Standalone form of [`DiagGaussian::sample`].
pub fn gaussian_sample(g: &DiagGaussian, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    g.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_normal_at_mode_and_one_sigma() {
        let g = DiagGaussian::standard(&[1]);
        let at0 = g.log_prob(&Tensor::vector(&[0.0])).unwrap().item();
        assert_abs_diff_eq!(at0, -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(at0, -0.9189, epsilon = 1e-4);
        let at1 = g.log_prob(&Tensor::vector(&[1.0])).unwrap().item();
        assert_abs_diff_eq!(at1, -1.4189, epsilon = 1e-4);
    }

    #[test]
    fn two_dims_is_product_of_one_dim_densities() {
        let g2 = DiagGaussian::new(Tensor::vector(&[0.3, -1.2]), Tensor::vector(&[0.4, -0.7])).unwrap();
        let z = [1.1, -0.5];
        let joint = g2.log_prob(&Tensor::vector(&z)).unwrap().item();
        let mut sum = 0.0;
        for i in 0..2 {
            let g1 = DiagGaussian::new(
                Tensor::vector(&[g2.mu.values()[i]]),
                Tensor::vector(&[g2.log_var.values()[i]]),
            )
            .unwrap();
            sum += g1.log_prob(&Tensor::vector(&[z[i]])).unwrap().item();
        }
        assert_abs_diff_eq!(joint, sum, epsilon = 1e-14);
    }

    #[test]
    fn sample_is_differentiable_in_parameters() {
        let mu = Tensor::param(vec![0.5], &[1]).unwrap();
        let lv = Tensor::param(vec![0.2], &[1]).unwrap();
        let g = DiagGaussian::new(mu.clone(), lv.clone()).unwrap();
        let (z, _) = g.sample(&mut Rng::new(1, crate::numcore::Stream::Sampling)).unwrap();
        let grads = z.sum().backward().unwrap();
        assert_eq!(grads.get(&mu).unwrap(), &[1.0]);
        assert!(grads.get(&lv).is_some());
    }

    #[test]
    fn kl_of_identical_is_zero_and_shifted_mean_is_half() {
        let p = DiagGaussian::standard(&[1]);
        assert_eq!(p.kl_divergence(&p).unwrap().item(), 0.0);
        let q = DiagGaussian::new(Tensor::vector(&[1.0]), Tensor::vector(&[0.0])).unwrap();
        assert_abs_diff_eq!(q.kl_divergence(&p).unwrap().item(), 0.5, epsilon = 1e-15);
    }
}
