//! Orthonormal columns and log-determinants for small matrices.

use super::Tensor;
use crate::error::{Error, Result};

/// Required orthonormality after [`orthonormalize`].
pub const ORTHO_TOL: f64 = 1e-6;
/// Full Gram–Schmidt sweeps before giving up.
pub const ORTHO_MAX_SWEEPS: usize = 50;
/// A column whose residual norm falls below this fraction of its original
/// norm is treated as linearly dependent on the previous ones.
const RANK_TOL: f64 = 1e-10;

/// Largest `|QᵀQ - I|` entry over every trailing `D×M` block of `q`.
pub fn orthonormality_error(q: &Tensor) -> f64 {
    let s = q.shape();
    if s.len() < 2 {
        return f64::INFINITY;
    }
    let (d, m) = (s[s.len() - 2], s[s.len() - 1]);
    let batch = q.numel() / (d * m).max(1);
    let v = q.values();
    let mut worst: f64 = 0.0;
    for b in 0..batch {
        let blk = &v[b * d * m..(b + 1) * d * m];
        for i in 0..m {
            for j in 0..m {
                let dot: f64 = (0..d).map(|r| blk[r * m + i] * blk[r * m + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
    }
    worst
}

/// Orthonormal columns spanning the columns of `raw` (`[.., D, M]`, `M <= D`).
///
/// Classical Gram–Schmidt with one re-orthogonalisation pass per column,
/// built from differentiable ops so gradients reach `raw`. Sweeps repeat
/// until `|QᵀQ - I| <= 1e-6`; an already orthonormal input is returned
/// unchanged up to rounding.
pub fn orthonormalize(raw: &Tensor) -> Result<Tensor> {
    let s = raw.shape().to_vec();
    if s.len() < 2 {
        return Err(Error::invalid_shape("orthonormalize", &s, "needs a [.., D, M] matrix"));
    }
    let (d, m) = (s[s.len() - 2], s[s.len() - 1]);
    if m > d || m == 0 {
        return Err(Error::invalid_shape("orthonormalize", &s, "needs 0 < M <= D"));
    }
    let batch = raw.numel() / (d * m);
    let mut q = raw.reshape(&[batch, d, m])?;
    for _ in 0..ORTHO_MAX_SWEEPS {
        q = gram_schmidt(&q, batch, d, m)?;
        if orthonormality_error(&q) <= ORTHO_TOL {
            return q.reshape(&s);
        }
    }
    Err(Error::NotOrthonormal(orthonormality_error(&q)))
}

fn gram_schmidt(x: &Tensor, batch: usize, d: usize, m: usize) -> Result<Tensor> {
    let mut cols: Vec<Tensor> = Vec::with_capacity(m);
    for j in 0..m {
        let a = x.narrow_last(j, 1)?;
        let mut v = a.clone();
        if j > 0 {
            let prev = Tensor::cat_last(&cols)?;
            let prev_t = prev.transpose()?;
            for _ in 0..2 {
                let coef = prev_t.matmul(&v)?;
                v = v.sub(&prev.matmul(&coef)?)?;
            }
        }
        let norm = v.square().sum_axis(1)?.sqrt();
        let a_sq = a.square().sum_axis(1)?;
        for b in 0..batch {
            let reference = a_sq.values()[b].sqrt();
            if !(norm.values()[b] > RANK_TOL * reference) || !norm.values()[b].is_finite() {
                return Err(Error::RankDeficient { column: j });
            }
        }
        cols.push(v.div(&norm)?);
    }
    debug_assert_eq!(cols[0].shape(), &[batch, d, 1]);
    Tensor::cat_last(&cols)
}

/// `log|det M|` for each trailing square matrix; errors when exactly singular.
pub fn log_abs_det(m: &Tensor) -> Result<Tensor> {
    m.log_abs_det()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Rng, Stream};
    use approx::assert_abs_diff_eq;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed, Stream::Init);
        Tensor::new(rng.normals(rows * cols), &[rows, cols]).unwrap()
    }

    fn matmul_tn(q: &Tensor) -> Vec<f64> {
        q.transpose().unwrap().matmul(q).unwrap().values().to_vec()
    }

    #[test]
    fn identity_block_is_a_fixed_point() {
        let mut data = vec![0.0; 5 * 3];
        for i in 0..3 {
            data[i * 3 + i] = 1.0;
        }
        let q0 = Tensor::new(data.clone(), &[5, 3]).unwrap();
        let q = orthonormalize(&q0).unwrap();
        for (a, b) in q.values().iter().zip(&data) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn random_8x4_seed_7_has_orthonormal_columns() {
        let q = orthonormalize(&random(8, 4, 7)).unwrap();
        let qtq = matmul_tn(&q);
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(qtq[i * 4 + j], target, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn idempotent_on_own_output() {
        for seed in 0..10 {
            let q1 = orthonormalize(&random(6, 4, seed)).unwrap();
            let q2 = orthonormalize(&q1).unwrap();
            for (a, b) in q1.values().iter().zip(q2.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn dependent_column_is_named() {
        let m = Tensor::new(vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0], &[3, 2]).unwrap();
        assert!(matches!(orthonormalize(&m), Err(Error::RankDeficient { column: 1 })));
    }

    #[test]
    fn rejects_wide_input() {
        assert!(orthonormalize(&random(2, 3, 1)).is_err());
    }

    #[test]
    fn log_abs_det_identity_and_diagonal() {
        assert_eq!(log_abs_det(&Tensor::eye(3)).unwrap().item(), 0.0);
        let m = Tensor::new(vec![2.0, 0.0, 0.0, 2.0], &[2, 2]).unwrap();
        assert_abs_diff_eq!(log_abs_det(&m).unwrap().item(), 2.0 * 2f64.ln(), epsilon = 1e-15);
    }

    fn cofactor_det(m: &[f64], n: usize) -> f64 {
        if n == 1 {
            return m[0];
        }
        let mut det = 0.0;
        for col in 0..n {
            let minor: Vec<f64> = (1..n)
                .flat_map(|r| (0..n).filter(move |&c| c != col).map(move |c| (r, c)))
                .map(|(r, c)| m[r * n + c])
                .collect();
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            det += sign * m[col] * cofactor_det(&minor, n - 1);
        }
        det
    }

    #[test]
    fn random_4x4_seed_3_matches_cofactor_expansion() {
        let m = random(4, 4, 3);
        let oracle = cofactor_det(m.values(), 4).abs().ln();
        assert_abs_diff_eq!(log_abs_det(&m).unwrap().item(), oracle, epsilon = 1e-8);
    }
}
