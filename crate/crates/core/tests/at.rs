mod common;

use common::{analytic_worst, labeled, linear, random_linear};
use donas::at::{self, AttackConfig, AttackerConfig, ClassifierFinetuneConfig, ClassifierSearchConfig, Labeled, Perturbation};
use donas::diffnet::{self, Activation, CrossEntropy, Dense, MeanSquared, Network, Scaled};
use donas::gan::WeightedOutput;
use donas::metagame::MixedStrategy;
use donas::rng;
use donas::tensor::Matrix;
use rand::Rng as _;

#[test]
fn attacks_reach_the_linear_worst_case() {
    let mut r = rng::from_seed(31);
    for _ in 0..20 {
        let (w, b) = random_linear(&mut r);
        let net = linear(w, b);
        let data = labeled(32, &mut r);
        let eps = r.random_range(0.01..0.5);
        let expected = analytic_worst(&w, &b, &data, eps);
        let ce = CrossEntropy { labels: &data.y };

        let x = at::fgsm(&net, &data.x, &data.y, eps, None).unwrap();
        assert!((diffnet::loss(&net, &x, &ce).unwrap() - expected).abs() < 1e-6);

        let x = at::pgd(&net, &data.x, &data.y, &AttackConfig::pgd(eps, 10), &mut r).unwrap();
        assert!((diffnet::loss(&net, &x, &ce).unwrap() - expected).abs() < 1e-6);
        let worst = x.sub(&data.x).data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= eps + 1e-12);
    }
}

#[test]
fn attacker_budget_holds_after_every_hop() {
    let mut r = rng::from_seed(32);
    let nets: Vec<Network> = (0..2).map(|_| Network::mlp(&[2, 6, 2], Activation::Tanh, Activation::Identity, &mut r)).collect();
    let data = labeled(100, &mut r);
    let cfg = AttackerConfig {
        eps: 0.07,
        hops: 3,
        epochs: 2,
        batch: 16,
    };
    let mut hops = 0;
    at::attacker_oracle(&nets, &MixedStrategy::uniform(2), &data, &cfg, 1, &mut |p| {
        hops += 1;
        assert!(p.max_abs() <= cfg.eps);
    })
    .unwrap();
    assert_eq!(hops, 2 * 7 * 3);
}

/// Mean of `δ · sign(∂l/∂x)` under the first classifier, in units of ε.
fn alignment(p: &Perturbation, net: &Network, data: &Labeled) -> f64 {
    let g = at::input_grad(net, &data.x, &data.y).unwrap();
    let s: f64 = p.delta.data().iter().zip(g.data()).map(|(d, gi)| d * diffnet::sign(*gi)).sum();
    s / (p.delta.data().len() as f64 * p.eps)
}

#[test]
fn opposing_classifiers_cancel_perturbation_drift() {
    let mut r = rng::from_seed(33);
    let (w, b) = random_linear(&mut r);
    let neg = [[-w[0][0], -w[0][1]], [-w[1][0], -w[1][1]]];
    let nets = vec![linear(w, b), linear(neg, [-b[0], -b[1]])];
    let data = labeled(2000, &mut r);
    let cfg = AttackerConfig {
        eps: 0.1,
        hops: 5,
        epochs: 1,
        // One classifier is drawn per hop for the whole batch, so batches of
        // one keep the examples' walks independent.
        batch: 1,
    };
    let pure = at::attacker_oracle(&nets, &MixedStrategy::pure(2, 0), &data, &cfg, 2, &mut |_| {}).unwrap();
    assert!((alignment(&pure, &nets[0], &data) - 1.0).abs() < 1e-12);

    let mixed = at::attacker_oracle(&nets, &MixedStrategy::uniform(2), &data, &cfg, 2, &mut |_| {}).unwrap();
    // Entries are ±ε or 0 with zero mean; 2000 independent examples give SE ≤ 1/√2000.
    let a = alignment(&mixed, &nets[0], &data);
    assert!(a.abs() < 3.0 / (2000f64).sqrt(), "alignment {a}");
}

#[test]
fn regularizer_vanishes_for_linear_objectives() {
    let mut r = rng::from_seed(34);
    let (w, b) = random_linear(&mut r);
    let net = linear(w, b);
    let head = Network::new(vec![net.layers()[0].clone(), Dense::init(2, 1, Activation::Identity, &mut r)]).unwrap();
    let x = labeled(20, &mut r).x;
    let weights = vec![1.0; 20];
    let v = at::advrush_regularizer(&head, &x, &WeightedOutput { weights: &weights }, 0.05).unwrap();
    assert!(v.abs() < 1e-12);
}

#[test]
fn regularizer_is_step_invariant_for_quadratic_losses() {
    let mut r = rng::from_seed(35);
    let (w, b) = random_linear(&mut r);
    let net = linear(w, b);
    let data = labeled(20, &mut r);
    let targets = labeled(20, &mut r).x;
    let obj = MeanSquared { targets: &targets };
    let a = at::advrush_regularizer(&net, &data.x, &obj, 1e-3).unwrap();
    let b = at::advrush_regularizer(&net, &data.x, &obj, 0.3).unwrap();
    assert!((a - b).abs() < 1e-9 * a.max(1.0));

    let scaled = Scaled { factor: 2.5, inner: MeanSquared { targets: &targets } };
    let c = at::advrush_regularizer(&net, &data.x, &scaled, 1e-3).unwrap();
    assert!((c - 2.5 * a).abs() < 1e-9 * c.max(1.0));
}

fn moons(seed: u64) -> Labeled {
    let mut d = donas::harness::data::gen_two_moons(200, 0.1, &mut rng::from_seed(seed)).unwrap();
    donas::harness::data::normalize_moons(&mut d);
    d
}

#[test]
fn regularizer_off_before_warmup_matches_zero_weight() {
    let data = moons(36);
    let delta = vec![Perturbation::zeros(data.len(), 2, 0.1)];
    let sigma = MixedStrategy::pure(1, 0);
    let base = ClassifierSearchConfig {
        widths: vec![6],
        iterations: 30,
        batch: 16,
        ..ClassifierSearchConfig::default()
    };
    let trace = |cfg: &ClassifierSearchConfig| {
        let mut out = Vec::new();
        at::classifier_search(&delta, &sigma, &data, cfg, 4, &mut |_, a| out.push(a.to_vec())).unwrap();
        out
    };
    let never = ClassifierSearchConfig {
        warmup: usize::MAX,
        gamma_reg: 1.0,
        ..base.clone()
    };
    let zero = ClassifierSearchConfig {
        warmup: 0,
        gamma_reg: 0.0,
        ..base.clone()
    };
    assert_eq!(trace(&never), trace(&zero));
    let on = ClassifierSearchConfig {
        warmup: 0,
        gamma_reg: 1.0,
        ..base
    };
    assert_ne!(trace(&on), trace(&zero));
}

#[test]
fn zero_learning_rate_finetune_keeps_weights() {
    let data = moons(37);
    let mut r = rng::from_seed(37);
    let net = Network::mlp(&[2, 5, 2], Activation::Tanh, Activation::Identity, &mut r);
    let delta = vec![Perturbation::zeros(data.len(), 2, 0.1)];
    let cfg = ClassifierFinetuneConfig {
        lr: 0.0,
        ..ClassifierFinetuneConfig::default()
    };
    let out = at::finetune_classifier(&net, &delta, &MixedStrategy::pure(1, 0), &data, &cfg, 1).unwrap();
    assert_eq!(out.params(), net.params());
}

#[test]
fn uniform_classifier_payoff_is_log_classes() {
    let data = moons(38);
    let zero = Network::new(vec![Dense::new(Matrix::zeros(2, 2), vec![0.0; 2], Activation::Identity).unwrap()]).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let v = at::at_payoff(&zero, &Perturbation::zeros(data.len(), 2, 0.1), &data, &idx).unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn stronger_attacks_do_not_raise_accuracy() {
    let data = moons(39);
    let net = at::train_standard(&data, &[16], 1e-2, 32, 3000, 3).unwrap();
    let sigma = MixedStrategy::pure(1, 0);
    let acc = |a: at::Attack| at::evaluate_robust(std::slice::from_ref(&net), &sigma, &data, &a, 5).unwrap();
    let clean = acc(at::Attack::Clean);
    let fgsm = acc(at::Attack::Fgsm { eps: 0.3 });
    let pgd = acc(at::Attack::Pgd(AttackConfig::pgd(0.3, 40)));
    assert!(clean > 0.9, "clean {clean} fgsm {fgsm} pgd {pgd}");
    assert!(pgd <= fgsm + 0.01 && fgsm <= clean);
}
