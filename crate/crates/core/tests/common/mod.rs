//! Reference computations that share no code with the library: finite
//! differences, cofactor determinants, closed-form Gaussian KL.
#![allow(dead_code)]

use flownmt::flows::{CouplingNet, FlowStep, Parity, PlanarParams, SylvesterParams};
use flownmt::numcore::{Rng, Tensor};

/// Central-difference Jacobian of `f` at `z`, row-major `[out, in]`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, z: &[f64], h: f64) -> Vec<f64> {
    let d = z.len();
    let mut jac = vec![0.0; d * d];
    let mut x = z.to_vec();
    for j in 0..d {
        x[j] = z[j] + h;
        let up = f(&x);
        x[j] = z[j] - h;
        let down = f(&x);
        x[j] = z[j];
        for i in 0..d {
            jac[i * d + j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Determinant by Laplace expansion along the first row.
pub fn cofactor_det(m: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => (0..n)
            .map(|c| {
                let minor: Vec<f64> = (1..n)
                    .flat_map(|r| (0..n).filter(move |&k| k != c).map(move |k| m[r * n + k]))
                    .collect();
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[c] * cofactor_det(&minor, n - 1)
            })
            .sum(),
    }
}

/// `KL(N(mu_q, exp(lv_q)) || N(mu_p, exp(lv_p)))` for diagonal Gaussians.
pub fn kl_diag_gaussian(mu_q: &[f64], lv_q: &[f64], mu_p: &[f64], lv_p: &[f64]) -> f64 {
    (0..mu_q.len())
        .map(|i| {
            let diff = mu_q[i] - mu_p[i];
            0.5 * (lv_p[i] - lv_q[i] + (lv_q[i].exp() + diff * diff) / lv_p[i].exp() - 1.0)
        })
        .sum()
}

pub fn std_normal_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub fn normals(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.normal()).collect()
}

pub fn vector(v: &[f64]) -> Tensor {
    Tensor::vector(v)
}

pub fn matrix(v: Vec<f64>, rows: usize, cols: usize) -> Tensor {
    Tensor::new(v, &[rows, cols]).expect("matrix shape")
}

pub fn random_planar(rng: &mut Rng, d: usize) -> FlowStep {
    let p = PlanarParams::new(vector(&normals(rng, d, 1.0)), vector(&normals(rng, d, 1.0)), Tensor::scalar(rng.normal()))
        .expect("planar params");
    FlowStep::Planar(p)
}

pub fn random_sylvester(rng: &mut Rng, d: usize, m: usize) -> FlowStep {
    let p = SylvesterParams::from_raw(
        &matrix(normals(rng, d * m, 1.0), d, m),
        &matrix(normals(rng, m * m, 1.0), m, m),
        &matrix(normals(rng, m * m, 1.0), m, m),
        &vector(&normals(rng, m, 1.0)),
        &vector(&normals(rng, m, 1.0)),
        vector(&normals(rng, m, 1.0)),
    )
    .expect("sylvester params");
    FlowStep::Sylvester(p)
}

/// Coupling step whose scale and shift depend on the identity half and a
/// two-dimensional context.
pub fn random_coupling(rng: &mut Rng, d: usize, parity: Parity) -> FlowStep {
    let ctx = 2;
    FlowStep::ConditionedCoupling(CouplingNet {
        weight: matrix(normals(rng, (d / 2 + ctx) * d, 0.7), d / 2 + ctx, d),
        bias: vector(&normals(rng, d, 0.3)),
        context: vector(&normals(rng, ctx, 1.0)),
        parity,
    })
}

/// `f(z)` and the analytic log-determinant of one step on a single vector.
pub fn apply(step: &FlowStep, z: &[f64]) -> (Vec<f64>, f64) {
    let (out, log_det) = step.forward(&vector(z)).expect("flow step");
    (out.values().to_vec(), log_det.item())
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
