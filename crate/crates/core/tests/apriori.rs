mod common;

use chaoslab_core::fvcalc::FVPath;
use chaoslab_core::scenario::{build_tree, DEFAULT_NODE_BUDGET};
use chaoslab_core::solver::apriori_verify;
use chaoslab_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn estimates_hold(seed in any::<u64>(), steps in 1usize..=3, p in 1usize..=2, n in 0usize..=1, d in 1usize..=2, zero_f in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, steps, p, n, 0.8);
        let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET).unwrap();
        let xi: Vec<f64> = (0..tree.width(steps) * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f: Vec<Vec<f64>> = (1..=steps)
            .map(|k| (0..tree.width(k) * d).map(|_| if zero_f { 0.0 } else { rng.gen_range(-3.0..3.0) }).collect())
            .collect();
        let phi = rng.gen_range(0.01..2.0);
        let jumps: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.001..=phi)).collect();
        let a = FVPath::pure_jump(model.times().to_vec(), jumps).unwrap();
        let beta = rng.gen_range(0.1..10.0);
        let gamma = rng.gen_range(0.01..=beta);
        let mut delta = rng.gen_range(0.01..=beta);
        if delta == gamma {
            delta *= 0.5;
        }
        let rep = apriori_verify(&tree, &xi, &f, d, &a, gamma, delta, phi).unwrap();
        prop_assert_eq!(rep.lines.len(), 6);
        for line in &rep.lines {
            prop_assert!(line.slack() >= -1e-10, "{}: {} > {}", line.name, line.lhs, line.rhs);
        }
    }
}

#[test]
fn zero_data_gives_zero_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = common::random_model(&mut rng, 2, 1, 1, 0.5);
    let tree = build_tree(&model, 1, 2, DEFAULT_NODE_BUDGET).unwrap();
    let a = FVPath::pure_jump(model.times().to_vec(), vec![0.2, 0.3]).unwrap();
    let f = vec![vec![0.0; tree.width(1)], vec![0.0; tree.width(2)]];
    let rep = apriori_verify(&tree, &vec![0.0; tree.width(2)], &f, 1, &a, 0.5, 1.0, 0.3).unwrap();
    assert!(rep.lines.iter().all(|l| l.lhs == 0.0 && l.rhs == 0.0));
}

#[test]
fn first_estimate_without_generator() {
    // with f = 0 the first bound reads ||alpha y||^2 <= 2 (1 + delta Phi) / delta ||xi||^2
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = common::random_model(&mut rng, 2, 1, 0, 1.0);
    let tree = build_tree(&model, 1, 2, DEFAULT_NODE_BUDGET).unwrap();
    let xi: Vec<f64> = (0..tree.width(2)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (phi, delta) = (0.4, 0.7);
    let a = FVPath::pure_jump(model.times().to_vec(), vec![0.4, 0.25]).unwrap();
    let f = vec![vec![0.0; tree.width(1)], vec![0.0; tree.width(2)]];
    let rep = apriori_verify(&tree, &xi, &f, 1, &a, 0.3, delta, phi).unwrap();
    let probs = tree.node_probs(2);
    // the terminal weight is the left limit E(delta A)_{T-}, so the last jump is excluded
    let xi_norm: f64 = (1.0 + delta * 0.4) * probs.iter().zip(&xi).map(|(p, x)| p * x * x).sum::<f64>();
    assert!((rep.lines[0].rhs - 2.0 * (1.0 + delta * phi) / delta * xi_norm).abs() < 1e-12);
    assert!(rep.lines[0].slack() >= 0.0);
}

#[test]
fn equal_exponents() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = common::random_model(&mut rng, 1, 1, 0, 1.0);
    let tree = build_tree(&model, 1, 1, DEFAULT_NODE_BUDGET).unwrap();
    let a = FVPath::pure_jump(model.times().to_vec(), vec![0.1]).unwrap();
    let f = vec![vec![0.0; tree.width(1)]];
    let err = apriori_verify(&tree, &vec![0.0; tree.width(1)], &f, 1, &a, 0.5, 0.5, 0.1).unwrap_err();
    assert_eq!(err, Error::EqualExponents(0.5));
}
