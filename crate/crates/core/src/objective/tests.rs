use super::*;
use crate::flows::{FlowKind, FlowStack};
use crate::latentnmt::{Conditioning, ModelConfig};
use crate::numcore::Stream;

fn tiny(latent: LatentMode) -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ffn: 16,
        latent_dim: 4,
        latent,
        flow_kind: FlowKind::Planar,
        n_flows: 2,
        ortho_columns: 2,
        conditioning: Conditioning::SourceOnly,
    }
}

fn batch() -> Vec<Pair> {
    vec![
        Pair {
            src: vec![4, 5, 6, 2],
            tgt: vec![6, 5, 4, 2],
        },
        Pair {
            src: vec![7, 8, 2],
            tgt: vec![7, 8, 2],
        },
    ]
}

fn clean(beta: f64) -> TrainSchedule {
    TrainSchedule {
        beta,
        anneal_steps: 0,
        word_dropout: 0.0,
        ..TrainSchedule::default()
    }
}

#[test]
fn beta_c_examples() {
    let at = |kl: f64| beta_c_kl(&Tensor::scalar(kl), 1.0, 0.1).item();
    assert_eq!(at(0.1), 0.0);
    assert!((at(0.5) - 0.4).abs() < 1e-15);
    assert!((at(0.0) - 0.1).abs() < 1e-15);
    assert!(at(0.1 + 1e-9) > 0.0 && at(0.1 - 1e-9) > 0.0);
}

#[test]
fn annealing_is_a_linear_ramp() {
    let s = TrainSchedule {
        anneal_steps: 100,
        ..TrainSchedule::default()
    };
    assert_eq!(anneal_beta(0, &s), 0.0);
    assert_eq!(anneal_beta(50, &s), 0.5);
    assert_eq!(anneal_beta(100, &s), 1.0);
    assert_eq!(anneal_beta(10_000, &s), 1.0);
    let values: Vec<f64> = (0..150).map(|t| anneal_beta(t, &s)).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(anneal_beta(0, &clean(1.0)), 1.0);
}

#[test]
fn word_dropout_rates() {
    let mut rng = Rng::new(1, Stream::Dropout);
    let tokens = vec![1, 4, 5, 6, 2];
    assert_eq!(word_dropout(&tokens, 0.0, &mut rng), tokens);
    assert_eq!(word_dropout(&tokens, 1.0, &mut rng), vec![1, UNK, UNK, UNK, 2]);
    let long: Vec<usize> = (0..100_000).map(|i| 4 + i % 5).collect();
    let out = word_dropout(&long, 0.2, &mut rng);
    let frac = out.iter().filter(|&&t| t == UNK).count() as f64 / 1e5;
    assert!((frac - 0.2).abs() <= 0.005, "{frac}");
}

#[test]
fn schedule_validation() {
    assert!(TrainSchedule::default().validate().is_ok());
    let bad = TrainSchedule {
        word_dropout: 1.5,
        ..TrainSchedule::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainSchedule {
        samples: 0,
        ..TrainSchedule::default()
    };
    assert!(bad.validate().is_err());
}

fn kl_draws(q: &DiagGaussian, p: &DiagGaussian, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed, Stream::Sampling);
    let (z, lq) = q.sample(&mut rng).unwrap();
    let draw = stack_forward(&z, &lq, &FlowStack::empty()).unwrap();
    mc_kl_estimate(&[draw], p).unwrap().values().to_vec()
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn identical_gaussians_have_zero_kl() {
    let n = 100_000;
    let q = DiagGaussian::new(Tensor::full(&[n, 2], 0.3), Tensor::full(&[n, 2], -0.4)).unwrap();
    let v = kl_draws(&q, &q.clone(), 3);
    assert!(v.iter().all(|&x| x.abs() < 1e-12));
}

#[test]
fn unit_shift_has_half_nat() {
    let n = 100_000;
    let q = DiagGaussian::new(Tensor::full(&[n, 1], 1.0), Tensor::zeros(&[n, 1])).unwrap();
    let p = DiagGaussian::standard(&[n, 1]);
    let (m, se) = mean_and_se(&kl_draws(&q, &p, 4));
    assert!((m - 0.5).abs() <= 3.0 * se, "{m} ± {se}");
}

#[test]
fn more_samples_same_mean_less_spread() {
    let n = 2_000;
    let q = DiagGaussian::new(Tensor::full(&[n, 2], 0.5), Tensor::full(&[n, 2], 0.3)).unwrap();
    let p = DiagGaussian::standard(&[n, 2]);
    let one = kl_draws(&q, &p, 5);
    let mut rng = Rng::new(6, Stream::Sampling);
    let draws: Vec<LatentDraw> = (0..100)
        .map(|_| {
            let (z, lq) = q.sample(&mut rng).unwrap();
            stack_forward(&z, &lq, &FlowStack::empty()).unwrap()
        })
        .collect();
    let hundred = mc_kl_estimate(&draws, &p).unwrap().values().to_vec();
    let (m1, se1) = mean_and_se(&one);
    let (m100, se100) = mean_and_se(&hundred);
    let exact = q.kl_divergence(&p).unwrap().values()[0];
    assert!((m1 - exact).abs() <= 3.0 * se1);
    assert!((m100 - exact).abs() <= 3.0 * se100);
    assert!(se100 < se1 / 5.0);
}

fn run(model: &LatentNmt, schedule: &TrainSchedule, seed: u64) -> ElboTerms {
    let p = model.bind(true);
    let mut s = Rng::new(seed, Stream::Sampling);
    let mut d = Rng::new(seed, Stream::Dropout);
    elbo_loss(model, &p, &batch(), schedule, 10, &mut s, &mut d).unwrap()
}

#[test]
fn closed_gate_and_zero_beta_is_plain_cross_entropy() {
    let mut latent = LatentNmt::new(tiny(LatentMode::Variational), 12).unwrap();
    let plain = LatentNmt::new(tiny(LatentMode::Off), 12).unwrap();
    let gate = latent.gate_bias().unwrap();
    latent.params.get_mut(gate).fill(-1e6);
    let a = run(&latent, &clean(0.0), 1);
    let b = run(&plain, &clean(0.0), 1);
    assert!((a.loss.item() - b.loss.item()).abs() < 1e-12);
    assert_eq!(a.modified_kl, 0.0);
    assert!(a.mean_gate < 1e-12);
}

#[test]
fn posterior_equal_to_prior_costs_beta_c() {
    let cfg = ModelConfig {
        n_flows: 0,
        ..tiny(LatentMode::Variational)
    };
    let mut m = LatentNmt::new(cfg, 2).unwrap();
    for part in ["w", "b"] {
        let prior = m.params.find(&format!("prior.{part}")).unwrap();
        let post = m.params.find(&format!("posterior.{part}")).unwrap();
        let values = m.params.get(prior).to_vec();
        m.params.get_mut(post).copy_from_slice(&values);
    }
    let t = run(&m, &clean(1.0), 3);
    assert!(t.kl_est.abs() < 1e-12);
    assert!((t.modified_kl - 0.1).abs() < 1e-12);
    assert!((t.loss.item() - t.recon_nll - 0.1).abs() < 1e-12);
}

#[test]
fn loss_is_recon_plus_modified_kl() {
    let m = LatentNmt::new(tiny(LatentMode::Variational), 4).unwrap();
    let t = run(&m, &TrainSchedule::default(), 5);
    assert!(t.recon_nll >= 0.0);
    assert_eq!(t.beta_effective, anneal_beta(10, &TrainSchedule::default()));
    let expect = t.recon_nll + t.beta_effective * (t.kl_est - 0.1).abs();
    assert!((t.loss.item() - expect).abs() < 1e-12);
    assert_eq!(t.kl_per_sentence.len(), 2);
}

#[test]
fn zero_beta_sends_no_kl_gradient_to_inference_networks() {
    let mut m = LatentNmt::new(tiny(LatentMode::Variational), 4).unwrap();
    let gate = m.gate_bias().unwrap();
    m.params.get_mut(gate).fill(-1e6);
    let p = m.bind(true);
    let mut s = Rng::new(1, Stream::Sampling);
    let mut d = Rng::new(1, Stream::Dropout);
    let t = elbo_loss(&m, &p, &batch(), &clean(0.0), 0, &mut s, &mut d).unwrap();
    let grads = p.gradients(&t.loss.backward().unwrap());
    for (i, g) in grads.iter().enumerate() {
        let name = m.params.name(i);
        if name.starts_with("prior") || name.starts_with("posterior") || name.starts_with("flow") {
            assert!(g.iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn dropout_leaves_targets_alone() {
    let m = LatentNmt::new(tiny(LatentMode::Off), 4).unwrap();
    let b = batch();
    let before = b.clone();
    let s = TrainSchedule {
        word_dropout: 1.0,
        ..clean(1.0)
    };
    let p = m.bind(false);
    let mut rs = Rng::new(1, Stream::Sampling);
    let mut rd = Rng::new(1, Stream::Dropout);
    let dropped = elbo_loss(&m, &p, &b, &s, 0, &mut rs, &mut rd).unwrap();
    let kept = elbo_loss(&m, &p, &b, &clean(1.0), 0, &mut rs, &mut rd).unwrap();
    assert_eq!(b, before);
    assert_ne!(dropped.recon_nll, kept.recon_nll);
}

#[test]
fn held_out_bound_for_plain_model_is_exact_likelihood() {
    let m = LatentNmt::new(tiny(LatentMode::Off), 4).unwrap();
    let p = m.bind(false);
    let mut rng = Rng::new(0, Stream::Sampling);
    let h = held_out_elbo(&m, &p, &batch(), 4, 1, &mut rng).unwrap();
    let lp: f64 = batch().iter().map(|x| m.sequence_log_prob(&p, &x.src, &x.tgt).unwrap()).sum();
    assert!((h.elbo_per_token - lp / 7.0).abs() < 1e-12);
    assert_eq!(h.median_kl(), 0.0);
    assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
}
