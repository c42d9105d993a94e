//! Flow densities against finite-difference and closed-form references.

mod common;

use common::*;
use flownmt::flows::{coupling_forward, coupling_inverse, stack_forward, CouplingParams, DiagGaussian, FlowStack, Parity, PlanarParams, PLANAR_MARGIN};
use flownmt::numcore::{Rng, Stream, Tensor};
use proptest::prelude::*;

#[test]
fn stacked_log_q_matches_change_of_variables() {
    let mut rng = Rng::new(11, Stream::Init);
    for d in [2, 4] {
        let stacks = [
            FlowStack::new((0..3).map(|_| random_planar(&mut rng, d)).collect()).unwrap(),
            FlowStack::new((0..3).map(|_| random_sylvester(&mut rng, d, 2)).collect()).unwrap(),
            FlowStack::new((0..3).map(|k| random_coupling(&mut rng, d, Parity::for_step(k))).collect()).unwrap(),
        ];
        for stack in &stacks {
            let z0 = normals(&mut rng, d, 1.0);
            let log_q0: f64 = z0.iter().map(|&x| std_normal_log_pdf(x)).sum();
            let draw = stack_forward(&vector(&z0), &Tensor::scalar(log_q0), stack).unwrap();
            let jac = fd_jacobian(|x| stack.transform(&vector(x)).unwrap().0.values().to_vec(), &z0, 1e-5);
            let expected = log_q0 - cofactor_det(&jac, d).abs().ln();
            assert!((draw.log_q.item() - expected).abs() < 1e-6, "{:?}", stack.kind);
        }
    }
}

#[test]
fn empty_stack_is_the_base_gaussian() {
    let g = DiagGaussian::new(vector(&[0.5, -1.0]), vector(&[0.2, -0.4])).unwrap();
    let z = vector(&[0.1, 0.3]);
    let draw = stack_forward(&z, &g.log_prob(&z).unwrap(), &FlowStack::empty()).unwrap();
    let by_hand: f64 = [(0.1, 0.5, 0.2), (0.3, -1.0, -0.4)]
        .iter()
        .map(|&(x, m, lv): &(f64, f64, f64)| std_normal_log_pdf((x - m) / (0.5 * lv).exp()) - 0.5 * lv)
        .sum();
    assert!((draw.log_q.item() - by_hand).abs() < 1e-12);
    assert_eq!(draw.z_k.values(), z.values());
}

#[test]
fn kl_oracle_agrees_with_library_closed_form() {
    let q = DiagGaussian::new(vector(&[0.3, -0.2]), vector(&[0.1, -0.5])).unwrap();
    let p = DiagGaussian::new(vector(&[-0.4, 0.6]), vector(&[0.3, 0.2])).unwrap();
    let lib = q.kl_divergence(&p).unwrap().item();
    let oracle = kl_diag_gaussian(&[0.3, -0.2], &[0.1, -0.5], &[-0.4, 0.6], &[0.3, 0.2]);
    assert!((lib - oracle).abs() < 1e-12);
}

#[test]
fn cofactor_oracle_on_known_matrices() {
    assert_eq!(cofactor_det(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 4.0], 3), 24.0);
    assert_eq!(cofactor_det(&[1.0, 2.0, 3.0, 4.0], 2), -2.0);
    assert_eq!(cofactor_det(&[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 5.0], 3), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn planar_stays_invertible(u in prop::collection::vec(-5.0f64..5.0, 3), w in prop::collection::vec(-5.0f64..5.0, 3)) {
        prop_assume!(w.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let p = PlanarParams::new(vector(&u), vector(&w), Tensor::scalar(0.0)).unwrap();
        let u_hat = p.u_hat().unwrap();
        let wu: f64 = u_hat.values().iter().zip(&w).map(|(a, b)| a * b).sum();
        prop_assert!(wu >= -1.0 + PLANAR_MARGIN * 0.5);
    }

    #[test]
    fn coupling_round_trips(
        z in prop::collection::vec(-10.0f64..10.0, 4),
        s in prop::collection::vec(-3.0f64..3.0, 2),
        t in prop::collection::vec(-3.0f64..3.0, 2),
        first in any::<bool>(),
    ) {
        let parity = if first { Parity::FirstIdentity } else { Parity::SecondIdentity };
        let p = CouplingParams { s: vector(&s), t: vector(&t), parity };
        let (y, log_det) = coupling_forward(&vector(&z), &p).unwrap();
        let back = coupling_inverse(&y, &p).unwrap();
        for (a, b) in back.values().iter().zip(&z) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!((log_det.item() - s.iter().sum::<f64>()).abs() <= 1e-12);
    }
}
