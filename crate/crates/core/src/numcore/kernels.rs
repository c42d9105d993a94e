//! Dense loops behind the tensor ops. Row-major everywhere.

use crate::error::{Error, Result};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Right-aligned broadcast of two shapes; `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every linear index of `out`, the linear index of the operand of
/// shape `src` it reads from under broadcasting.
pub(crate) fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let total = numel(out);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut lin = 0usize;
    for _ in 0..total {
        idx.push(lin);
        for d in (0..rank).rev() {
            counter[d] += 1;
            lin += strides[d];
            if counter[d] < out[d] {
                break;
            }
            lin -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

/// In-place LU factorisation with partial pivoting of an `n×n` matrix.
/// Returns the row permutation and the permutation parity (+1/-1).
pub(crate) fn lu_factor(a: &mut [f64], n: usize) -> Result<(Vec<usize>, f64)> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut parity = 1.0;
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return Err(Error::Singular);
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            perm.swap(col, pivot);
            parity = -parity;
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            a[row * n + col] = factor;
            for j in col + 1..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
        }
    }
    Ok((perm, parity))
}

/// Inverse of an `n×n` matrix through its LU factors.
pub(crate) fn inverse(m: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut lu = m.to_vec();
    let (perm, _) = lu_factor(&mut lu, n)?;
    let mut inv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = if perm[i] == j { 1.0 } else { 0.0 };
        }
        for i in 0..n {
            let mut s = col[i];
            for p in 0..i {
                s -= lu[i * n + p] * col[p];
            }
            col[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for p in i + 1..n {
                s -= lu[i * n + p] * col[p];
            }
            col[i] = s / lu[i * n + i];
        }
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 4]), Some(vec![2, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_index(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn inverse_of_permuted_matrix() {
        let m = [0.0, 2.0, 1.0, 0.0];
        let inv = inverse(&m, 2).unwrap();
        assert_eq!(inv, vec![0.0, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn singular_is_reported() {
        let mut m = [1.0, 2.0, 2.0, 4.0];
        assert!(matches!(lu_factor(&mut m, 2), Err(Error::Singular)));
    }
}
