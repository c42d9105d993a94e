use crate::error::{Error, Result};
use crate::numcore::{orthonormality_error, orthonormalize, Tensor};

/// Orthonormality slack accepted by [`sylvester_forward`].
pub const SYLVESTER_ORTHO_TOL: f64 = 1e-4;

/// Orthogonal Sylvester flow parameters: `A = Q·R1`, `B = R2·Qᵀ`.
///
/// Shapes: `q` `[.., D, M]`, `r1`/`r2` `[.., M, M]` upper triangular, `b` `[.., M]`.
#[derive(Clone, Debug)]
pub struct SylvesterParams {
    pub q: Tensor,
    pub r1: Tensor,
    pub r2: Tensor,
    pub b: Tensor,
}

impl SylvesterParams {
    pub fn new(q: Tensor, r1: Tensor, r2: Tensor, b: Tensor) -> Result<Self> {
        let r = q.rank();
        if r < 2 {
            return Err(Error::invalid_shape("SylvesterParams", q.shape(), "Q needs rank >= 2"));
        }
        let m = q.shape()[r - 1];
        let lead = &q.shape()[..r - 2];
        let mut square = lead.to_vec();
        square.extend([m, m]);
        let mut vec_shape = lead.to_vec();
        vec_shape.push(m);
        if r1.shape() != square.as_slice() {
            return Err(Error::shape("SylvesterParams R1", &square, r1.shape()));
        }
        if r2.shape() != square.as_slice() {
            return Err(Error::shape("SylvesterParams R2", &square, r2.shape()));
        }
        if b.shape() != vec_shape.as_slice() {
            return Err(Error::shape("SylvesterParams b", &vec_shape, b.shape()));
        }
        Ok(Self { q, r1, r2, b })
    }

    /// Build constrained parameters from unconstrained network outputs.
    ///
    /// `q_raw` is orthonormalised; the strict upper triangles of `r1_raw`,
    /// `r2_raw` are kept and their diagonals replaced by `tanh(diag*_raw)`,
    /// so every `1 + tanh'(·)·r1ᵢᵢ·r2ᵢᵢ` stays positive.
    pub fn from_raw(
        q_raw: &Tensor,
        r1_raw: &Tensor,
        r2_raw: &Tensor,
        diag1_raw: &Tensor,
        diag2_raw: &Tensor,
        b: Tensor,
    ) -> Result<Self> {
        let m = *q_raw.shape().last().unwrap_or(&0);
        let mut mask = vec![0.0; m * m];
        for i in 0..m {
            for j in i + 1..m {
                mask[i * m + j] = 1.0;
            }
        }
        let mask = Tensor::new(mask, &[m, m])?;
        let q = orthonormalize(q_raw)?;
        let r1 = r1_raw.mul(&mask)?.add(&diag1_raw.tanh().diag_embed()?)?;
        let r2 = r2_raw.mul(&mask)?.add(&diag2_raw.tanh().diag_embed()?)?;
        Self::new(q, r1, r2, b)
    }

    pub fn hidden_units(&self) -> usize {
        *self.q.shape().last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.q.shape()[self.q.rank() - 2]
    }

    fn batch(&self) -> usize {
        self.b.numel() / self.hidden_units()
    }
}

/// `z' = z + Q·R1·tanh(R2·Qᵀz + b)` with
/// `log_det = Σᵢ log|1 + tanh'((R2Qᵀz + b)ᵢ)·R1ᵢᵢ·R2ᵢᵢ|`.
pub fn sylvester_forward(z: &Tensor, p: &SylvesterParams) -> Result<(Tensor, Tensor)> {
    let dev = orthonormality_error(&p.q);
    if dev > SYLVESTER_ORTHO_TOL {
        return Err(Error::NotOrthonormal(dev));
    }
    let (d, m, batch) = (p.dim(), p.hidden_units(), p.batch());
    check_latent(z, d, batch, "sylvester_forward")?;
    let q = p.q.reshape(&[batch, d, m])?;
    let r1 = p.r1.reshape(&[batch, m, m])?;
    let r2 = p.r2.reshape(&[batch, m, m])?;
    let b = p.b.reshape(&[batch, 1, m])?;

    let z3 = z.reshape(&[batch, 1, d])?;
    let pre = z3.matmul(&q)?.matmul(&r2.transpose()?)?.add(&b)?;
    let h = pre.tanh();
    let delta = h.matmul(&r1.transpose()?)?.matmul(&q.transpose()?)?;
    let z_next = z3.add(&delta)?.reshape(z.shape())?;

    let slope = h.square().neg().add_scalar(1.0).reshape(&[batch, m])?;
    let diag = r1.diagonal()?.mul(&r2.diagonal()?)?;
    let log_det = slope.mul(&diag)?.add_scalar(1.0).abs().log().sum_last()?;
    let log_det = log_det.reshape(&z.shape()[..z.rank() - 1])?;
    finite(&z_next, &log_det, "sylvester flow")?;
    Ok((z_next, log_det))
}

/// General Sylvester transform `z + A·tanh(B·z + b)` with dense
/// `A` `[.., D, M]` and `B` `[.., M, D]`.
///
/// The log-determinant goes through `det(I_D + A·diag(h')·B) =
/// det(I_M + diag(h')·B·A)`, evaluated by LU on the `M×M` side.
pub fn sylvester_dense_forward(z: &Tensor, a: &Tensor, bmat: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let ra = a.rank();
    if ra < 2 || bmat.rank() != ra {
        return Err(Error::shape("sylvester_dense_forward", a.shape(), bmat.shape()));
    }
    let (d, m) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let batch = a.numel() / (d * m);
    if bmat.numel() != batch * m * d || bmat.shape()[ra - 2] != m || b.numel() != batch * m {
        return Err(Error::shape("sylvester_dense_forward", a.shape(), bmat.shape()));
    }
    check_latent(z, d, batch, "sylvester_dense_forward")?;
    let a3 = a.reshape(&[batch, d, m])?;
    let b3 = bmat.reshape(&[batch, m, d])?;
    let z3 = z.reshape(&[batch, 1, d])?;
    let pre = z3.matmul(&b3.transpose()?)?.add(&b.reshape(&[batch, 1, m])?)?;
    let h = pre.tanh();
    let z_next = z3.add(&h.matmul(&a3.transpose()?)?)?.reshape(z.shape())?;

    let slope = h.square().neg().add_scalar(1.0).reshape(&[batch, m, 1])?;
    let inner = slope.mul(&b3.matmul(&a3)?)?.add(&Tensor::eye(m))?;
    let log_det = inner.log_abs_det()?.reshape(&z.shape()[..z.rank() - 1])?;
    finite(&z_next, &log_det, "dense sylvester flow")?;
    Ok((z_next, log_det))
}

fn check_latent(z: &Tensor, d: usize, batch: usize, op: &'static str) -> Result<()> {
    if z.rank() == 0 || *z.shape().last().unwrap() != d || z.numel() != batch * d {
        return Err(Error::invalid_shape(op, z.shape(), format!("expected {batch} vector(s) of size {d}")));
    }
    Ok(())
}

fn finite(z: &Tensor, ld: &Tensor, what: &str) -> Result<()> {
    if z.values().iter().chain(ld.values()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Rng, Stream};
    use approx::assert_abs_diff_eq;

    fn random_params(d: usize, m: usize, seed: u64) -> SylvesterParams {
        let mut rng = Rng::new(seed, Stream::Init);
        let mut t = |shape: &[usize]| Tensor::new(rng.normals(shape.iter().product()), shape).unwrap();
        let (q, r1, r2, d1, d2, b) = (t(&[d, m]), t(&[m, m]), t(&[m, m]), t(&[m]), t(&[m]), t(&[m]));
        SylvesterParams::from_raw(&q, &r1, &r2, &d1, &d2, b).unwrap()
    }

    #[test]
    fn zero_r1_is_identity() {
        let p = random_params(4, 2, 1);
        let p = SylvesterParams::new(p.q, Tensor::zeros(&[2, 2]), p.r2, p.b).unwrap();
        let z = Tensor::vector(&[0.1, -0.4, 1.2, 0.3]);
        let (z2, ld) = sylvester_forward(&z, &p).unwrap();
        assert_eq!(z2.values(), z.values());
        assert_eq!(ld.item(), 0.0);
    }

    #[test]
    fn constructed_r_is_upper_triangular_with_bounded_diagonal() {
        let p = random_params(5, 3, 2);
        let r1 = p.r1.values();
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(r1[i * 3 + j], 0.0);
            }
            assert!(r1[i * 3 + i].abs() < 1.0);
        }
    }

    #[test]
    fn triangular_identity_matches_dense_determinant() {
        let p = random_params(4, 3, 9);
        let z = Tensor::vector(&[0.5, -0.2, 0.8, -1.1]);
        let (z_a, ld_a) = sylvester_forward(&z, &p).unwrap();
        let a = p.q.matmul(&p.r1).unwrap();
        let bmat = p.r2.matmul(&p.q.transpose().unwrap()).unwrap();
        let (z_b, ld_b) = sylvester_dense_forward(&z, &a, &bmat, &p.b).unwrap();
        for (x, y) in z_a.values().iter().zip(z_b.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(ld_a.item(), ld_b.item(), epsilon = 1e-12);
    }

    #[test]
    fn non_orthonormal_q_is_rejected() {
        let p = random_params(4, 2, 3);
        let bad = SylvesterParams::new(p.q.scale(1.1), p.r1, p.r2, p.b).unwrap();
        let z = Tensor::vector(&[0.0; 4]);
        assert!(matches!(sylvester_forward(&z, &bad), Err(Error::NotOrthonormal(_))));
    }
}
