use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Bound on `|s|` after squashing.
pub const SCALE_BOUND: f64 = 4.0;

/// Which half of the latent vector passes through unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    FirstIdentity,
    SecondIdentity,
}

impl Parity {
    /// Halves alternate along the stack, starting with the first as identity.
    pub fn for_step(k: usize) -> Self {
        if k % 2 == 0 {
            Parity::FirstIdentity
        } else {
            Parity::SecondIdentity
        }
    }
}

/// Scale/shift for the transformed half, `[.., D/2]` each.
#[derive(Clone, Debug)]
pub struct CouplingParams {
    pub s: Tensor,
    pub t: Tensor,
    pub parity: Parity,
}

/// `SCALE_BOUND · tanh(raw / SCALE_BOUND)`: slope one at the origin, never
/// large enough to overflow `exp`.
pub fn squash_scale(raw: &Tensor) -> Tensor {
    raw.scale(1.0 / SCALE_BOUND).tanh().scale(SCALE_BOUND)
}

fn half_dim(z: &Tensor) -> Result<usize> {
    let d = *z.shape().last().ok_or_else(|| Error::Config("coupling flow needs a vector".into()))?;
    if d % 2 != 0 {
        return Err(Error::Config(format!("coupling flows need an even latent dimension, got {d}")));
    }
    Ok(d / 2)
}

/// `(identity half, transformed half)` of `z` for the given parity.
pub fn split(z: &Tensor, parity: Parity) -> Result<(Tensor, Tensor)> {
    let h = half_dim(z)?;
    let (first, second) = (z.narrow_last(0, h)?, z.narrow_last(h, h)?);
    Ok(match parity {
        Parity::FirstIdentity => (first, second),
        Parity::SecondIdentity => (second, first),
    })
}

fn join(identity: Tensor, transformed: Tensor, parity: Parity) -> Result<Tensor> {
    match parity {
        Parity::FirstIdentity => Tensor::cat_last(&[identity, transformed]),
        Parity::SecondIdentity => Tensor::cat_last(&[transformed, identity]),
    }
}

/// Identity on one half, `x ⊙ exp(s) + t` on the other; `log_det = Σ s`.
pub fn coupling_forward(z: &Tensor, p: &CouplingParams) -> Result<(Tensor, Tensor)> {
    let (keep, moved) = split(z, p.parity)?;
    if p.s.shape() != moved.shape() || p.t.shape() != moved.shape() {
        return Err(Error::shape("coupling_forward", moved.shape(), p.s.shape()));
    }
    let moved = moved.mul(&p.s.exp())?.add(&p.t)?;
    let log_det = p.s.sum_last()?.reshape(&z.shape()[..z.rank() - 1])?;
    Ok((join(keep, moved, p.parity)?, log_det))
}

/// Exact inverse of [`coupling_forward`] for the same parameters.
pub fn coupling_inverse(z: &Tensor, p: &CouplingParams) -> Result<Tensor> {
    let (keep, moved) = split(z, p.parity)?;
    if p.s.shape() != moved.shape() || p.t.shape() != moved.shape() {
        return Err(Error::shape("coupling_inverse", moved.shape(), p.s.shape()));
    }
    let moved = moved.sub(&p.t)?.mul(&p.s.neg().exp())?;
    join(keep, moved, p.parity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ln2_example() -> CouplingParams {
        let ln2 = 2f64.ln();
        CouplingParams {
            s: Tensor::vector(&[ln2, ln2]),
            t: Tensor::vector(&[0.0, 0.0]),
            parity: Parity::FirstIdentity,
        }
    }

    #[test]
    fn zero_scale_and_shift_is_identity() {
        let p = CouplingParams {
            s: Tensor::zeros(&[2]),
            t: Tensor::zeros(&[2]),
            parity: Parity::SecondIdentity,
        };
        let z = Tensor::vector(&[0.3, -0.1, 2.0, 5.0]);
        let (z2, ld) = coupling_forward(&z, &p).unwrap();
        assert_eq!(z2.values(), z.values());
        assert_eq!(ld.item(), 0.0);
        assert_eq!(coupling_inverse(&z, &p).unwrap().values(), z.values());
    }

    #[test]
    fn doubling_example_and_its_inverse() {
        let p = ln2_example();
        let (z2, ld) = coupling_forward(&Tensor::vector(&[1.0; 4]), &p).unwrap();
        for (a, b) in z2.values().iter().zip([1.0, 1.0, 2.0, 2.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(ld.item(), 1.3863, epsilon = 1e-4);
        let back = coupling_inverse(&z2, &p).unwrap();
        for v in back.values() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn odd_dimension_is_a_configuration_error() {
        let z = Tensor::vector(&[1.0, 2.0, 3.0]);
        assert!(matches!(split(&z, Parity::FirstIdentity), Err(Error::Config(_))));
    }

    #[test]
    fn parity_alternates() {
        assert_eq!(Parity::for_step(0), Parity::FirstIdentity);
        assert_eq!(Parity::for_step(1), Parity::SecondIdentity);
        assert_eq!(Parity::for_step(2), Parity::FirstIdentity);
    }

    #[test]
    fn squash_is_bounded() {
        let s = squash_scale(&Tensor::vector(&[-1e6, 0.0, 1e6]));
        assert_eq!(s.values(), &[-SCALE_BOUND, 0.0, SCALE_BOUND]);
    }
}
