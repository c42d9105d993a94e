//! Push Gaussian samples through each flow family and compare the tracked
//! log-density with a finite-difference Jacobian.

use flownmt::flows::{
    stack_forward, CouplingNet, DiagGaussian, FlowStack, FlowStep, Parity, PlanarParams, SylvesterParams,
};
use flownmt::numcore::{Rng, Stream, Tensor};

fn random(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(rng.normals(n).into_iter().map(|v| v * std).collect(), shape).unwrap()
}

fn fd_log_det(stack: &FlowStack, z: &[f64]) -> f64 {
    let d = z.len();
    let f = |x: &[f64]| stack.transform(&Tensor::vector(x)).unwrap().0.values().to_vec();
    let h = 1e-5;
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let (mut up, mut down) = (z.to_vec(), z.to_vec());
        up[j] += h;
        down[j] -= h;
        let (fu, fd) = (f(&up), f(&down));
        for i in 0..d {
            jac[i * d + j] = (fu[i] - fd[i]) / (2.0 * h);
        }
    }
    Tensor::new(jac, &[d, d]).unwrap().log_abs_det().unwrap().item()
}

fn main() -> flownmt::Result<()> {
    let d = 4;
    let mut rng = Rng::new(7, Stream::Init);
    let planar = (0..4)
        .map(|_| {
            let p = PlanarParams::new(random(&mut rng, &[d], 1.0), random(&mut rng, &[d], 1.0), random(&mut rng, &[1], 1.0));
            p.map(FlowStep::Planar)
        })
        .collect::<flownmt::Result<Vec<_>>>()?;
    let sylvester = (0..4)
        .map(|_| {
            let (m, q) = (2, random(&mut rng, &[d, 2], 1.0));
            let (r1, r2) = (random(&mut rng, &[m, m], 1.0), random(&mut rng, &[m, m], 1.0));
            let (d1, d2, b) = (random(&mut rng, &[m], 1.0), random(&mut rng, &[m], 1.0), random(&mut rng, &[m], 1.0));
            SylvesterParams::from_raw(&q, &r1, &r2, &d1, &d2, b).map(FlowStep::Sylvester)
        })
        .collect::<flownmt::Result<Vec<_>>>()?;
    let coupling = (0..4)
        .map(|k| {
            FlowStep::ConditionedCoupling(CouplingNet {
                weight: random(&mut rng, &[d / 2 + 1, d], 0.5),
                bias: random(&mut rng, &[d], 0.1),
                context: random(&mut rng, &[1], 1.0),
                parity: Parity::for_step(k),
            })
        })
        .collect();

    let base = DiagGaussian::standard(&[d]);
    for (name, steps) in [("planar", planar), ("sylvester M=2", sylvester), ("coupling", coupling)] {
        let stack = FlowStack::new(steps)?;
        let (z0, log_q0) = base.sample(&mut rng)?;
        let draw = stack_forward(&z0, &log_q0, &stack)?;
        let fd = log_q0.item() - fd_log_det(&stack, z0.values());
        println!(
            "{name:<14} z_K = {:?}  log q = {:.6}  (finite differences {:.6})",
            draw.z_k.values().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            draw.log_q.item(),
            fd
        );
    }
    Ok(())
}
