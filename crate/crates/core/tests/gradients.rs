mod common;

use bdnn::hashnet::{Mode, NetConfig, NetParams};
use bdnn::objective::Lambdas;
use bdnn::sh_bdnn::{self, pairwise_label_matrix, ShHyperParams};
use bdnn::uh_bdnn::{self, UhHyperParams};
use common::*;
use rand::Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;
const FLOOR: f64 = 1e-3;

fn uh_error(config: &NetConfig, lambdas: Lambdas, m: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = uniform_mat(config.input_dim(), m, 1.0, &mut r);
    let b = random_codes(config.bits(), m, &mut r);
    let params = random_params(config, 1.0, &mut r);
    let h = UhHyperParams {
        lambdas,
        ..UhHyperParams::default()
    };
    let g = uh_bdnn::uh_gradients(&params, config, &x, &b, &h).unwrap();
    let f = |flat: &[f64]| {
        let p = NetParams::from_flat(config, flat).unwrap();
        uh_bdnn::uh_objective(&p, config, &x, &b, &h).unwrap()
    };
    finite_difference_error(f, &g.to_flat(), &params.to_flat(), STEP, FLOOR)
}

fn sh_error(config: &NetConfig, lambdas: Lambdas, m: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = uniform_mat(config.input_dim(), m, 1.0, &mut r);
    let b = random_codes(config.bits(), m, &mut r);
    let labels: Vec<u32> = (0..m).map(|_| r.random_range(0..3)).collect();
    let s = pairwise_label_matrix(&labels).unwrap();
    let params = random_params(config, 1.0, &mut r);
    let h = ShHyperParams {
        lambdas,
        ..ShHyperParams::default()
    };
    let g = sh_bdnn::sh_gradients(&params, config, &x, &s, &b, &h).unwrap();
    let f = |flat: &[f64]| {
        let p = NetParams::from_flat(config, flat).unwrap();
        sh_bdnn::sh_objective(&p, config, &x, &s, &b, &h).unwrap()
    };
    finite_difference_error(f, &g.to_flat(), &params.to_flat(), STEP, FLOOR)
}

#[test]
fn four_layer_unsupervised_example() {
    let config = NetConfig::unsupervised(vec![3, 4, 2, 3]).unwrap();
    for (i, l) in [
        Lambdas::new(0.1, 0.2, 0.3, 0.4),
        Lambdas::new(1e-5, 5e-2, 1e-2, 1e-6),
        Lambdas::zero(),
    ]
    .into_iter()
    .enumerate()
    {
        let e = uh_error(&config, l, 5, i as u64);
        assert!(e < TOL, "lambdas {l:?}: {e:e}");
    }
}

#[test]
fn each_penalty_alone() {
    let uh = NetConfig::unsupervised(vec![4, 3, 2, 4]).unwrap();
    let sh = NetConfig::supervised(vec![4, 3, 2]).unwrap();
    for k in 0..4 {
        let mut a = [0.0; 4];
        a[k] = 0.7;
        let l = Lambdas::new(a[0], a[1], a[2], a[3]);
        assert!(uh_error(&uh, l, 6, 10 + k as u64) < TOL, "uh term {k}");
        assert!(sh_error(&sh, l, 6, 20 + k as u64) < TOL, "sh term {k}");
    }
}

#[test]
fn random_architectures() {
    let mut r = rng(9);
    for t in 0..30 {
        let dim = r.random_range(1..=5);
        let bits = r.random_range(1..=3);
        let m = r.random_range(1..=8);
        let l = Lambdas::new(
            r.random_range(0.0..1.0),
            r.random_range(0.0..1.0),
            r.random_range(0.0..1.0),
            r.random_range(0.0..1.0),
        );
        let uh = random_config(Mode::Unsupervised, dim, bits, &mut r);
        let sh = random_config(Mode::Supervised, dim, bits, &mut r);
        assert!(uh_error(&uh, l, m, 100 + t) < TOL, "uh {:?}", uh.layer_sizes());
        assert!(sh_error(&sh, l, m, 200 + t) < TOL, "sh {:?}", sh.layer_sizes());
    }
}

#[test]
fn objective_terms_sum_to_total() {
    let config = NetConfig::unsupervised(vec![3, 4, 2, 3]).unwrap();
    let mut r = rng(4);
    let x = uniform_mat(3, 7, 1.0, &mut r);
    let b = random_codes(2, 7, &mut r);
    let params = random_params(&config, 1.0, &mut r);
    let h = UhHyperParams {
        lambdas: Lambdas::new(0.1, 0.2, 0.3, 0.4),
        ..UhHyperParams::default()
    };
    let t = uh_bdnn::uh_terms(&params, &config, &x, &b, &h).unwrap();
    let j = uh_bdnn::uh_objective(&params, &config, &x, &b, &h).unwrap();
    let sum = t.fit + t.decay + t.binary + t.independence + t.balance;
    assert!((sum - j).abs() <= 1e-12 * j.abs());
}
