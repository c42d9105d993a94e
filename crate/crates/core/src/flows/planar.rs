use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Lower bound margin on `ŵᵀû + 1` kept after reparameterisation.
pub const PLANAR_MARGIN: f64 = 1e-6;

/// Raw planar-flow parameters; `u` is reparameterised on use.
///
/// Shapes: `u`, `w` are `[.., D]`, `b` is `[.., 1]`.
#[derive(Clone, Debug)]
pub struct PlanarParams {
    pub u: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

impl PlanarParams {
    /// `b` may be given without its trailing unit axis.
    pub fn new(u: Tensor, w: Tensor, b: Tensor) -> Result<Self> {
        if u.shape() != w.shape() || u.rank() == 0 {
            return Err(Error::shape("PlanarParams", u.shape(), w.shape()));
        }
        let mut b_shape = u.shape()[..u.rank() - 1].to_vec();
        b_shape.push(1);
        let b = if b.shape() == b_shape.as_slice() {
            b
        } else {
            b.reshape(&b_shape)?
        };
        Ok(Self { u, w, b })
    }

    /// `û = u + (m(wᵀu) - wᵀu) w / |w|²` with `m(a) = -1 + softplus(a) + margin`,
    /// so that `wᵀû = m(wᵀu) > -1`.
    pub fn u_hat(&self) -> Result<Tensor> {
        let wu = self.w.mul(&self.u)?.sum_last()?;
        let m = wu.softplus().add_scalar(-1.0 + PLANAR_MARGIN);
        let w_norm2 = self.w.square().sum_last()?;
        let coef = m.sub(&wu)?.div(&w_norm2)?;
        self.u.add(&self.w.mul(&coef)?)
    }
}

/// `z' = z + û tanh(wᵀz + b)` and `log|1 + ûᵀw tanh'(wᵀz + b)|`.
pub fn planar_forward(z: &Tensor, p: &PlanarParams) -> Result<(Tensor, Tensor)> {
    let u_hat = p.u_hat()?;
    let pre = p.w.mul(z)?.sum_last()?.add(&p.b)?;
    let h = pre.tanh();
    let z_next = z.add(&u_hat.mul(&h)?)?;
    let slope = h.square().neg().add_scalar(1.0);
    let uw = u_hat.mul(&p.w)?.sum_last()?;
    let arg = uw.mul(&slope)?.add_scalar(1.0);
    let log_det = arg.abs().log();
    let lead = &log_det.shape()[..log_det.rank() - 1];
    let log_det = log_det.reshape(lead)?;
    if z_next.values().iter().chain(log_det.values()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("planar flow".into()));
    }
    Ok((z_next, log_det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_u_hat_is_identity() {
        // u = c·w with m(c|w|²) = 0, i.e. softplus(c|w|²) = 1 - margin.
        let w = [0.6, -0.8];
        let target = ((1.0 - PLANAR_MARGIN).exp() - 1.0).ln();
        let c = target / 1.0;
        let u = [c * w[0], c * w[1]];
        let p = PlanarParams::new(Tensor::vector(&u), Tensor::vector(&w), Tensor::scalar(0.3)).unwrap();
        let u_hat = p.u_hat().unwrap();
        for v in u_hat.values() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
        let z = Tensor::vector(&[0.7, -1.3]);
        let (z2, ld) = planar_forward(&z, &p).unwrap();
        for (a, b) in z2.values().iter().zip(z.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(ld.item(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn origin_in_one_dimension() {
        let p = PlanarParams::new(Tensor::vector(&[0.9]), Tensor::vector(&[1.0]), Tensor::scalar(0.0)).unwrap();
        let u_hat = p.u_hat().unwrap().item();
        let (z2, ld) = planar_forward(&Tensor::vector(&[0.0]), &p).unwrap();
        assert_eq!(z2.item(), 0.0);
        assert_abs_diff_eq!(ld.item(), (1.0 + u_hat).abs().ln(), epsilon = 1e-15);
    }

    #[test]
    fn batched_rows_are_independent() {
        let u = Tensor::new(vec![0.1, 0.2, -0.3, 0.4], &[2, 2]).unwrap();
        let w = Tensor::new(vec![1.0, -1.0, 0.5, 0.5], &[2, 2]).unwrap();
        let b = Tensor::new(vec![0.1, -0.2], &[2]).unwrap();
        let z = Tensor::new(vec![0.3, 0.1, -0.4, 0.9], &[2, 2]).unwrap();
        let (zb, ldb) = planar_forward(&z, &PlanarParams::new(u.clone(), w.clone(), b.clone()).unwrap()).unwrap();
        for r in 0..2 {
            let row = |t: &Tensor| Tensor::vector(&t.values()[r * 2..r * 2 + 2]);
            let p = PlanarParams::new(row(&u), row(&w), Tensor::scalar(b.values()[r])).unwrap();
            let (zr, ldr) = planar_forward(&row(&z), &p).unwrap();
            assert_eq!(zr.values(), &zb.values()[r * 2..r * 2 + 2]);
            assert_eq!(ldr.item(), ldb.values()[r]);
        }
    }
}
