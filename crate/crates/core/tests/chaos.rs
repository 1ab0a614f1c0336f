mod common;

use chaoslab_core::chaos::*;
use chaoslab_core::driver::{lipschitz_to_a, DriverModel, IncrementLaw};
use chaoslab_core::generator::GeneratorSpec;
use chaoslab_core::scenario::{build_tree, DEFAULT_NODE_BUDGET};
use chaoslab_core::solver::{solve_mckean_vlasov, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn binary(steps: usize, sigma: f64) -> DriverModel {
    DriverModel::homogeneous(steps, 1.0, IncrementLaw::rademacher(sigma), IncrementLaw::point_mass_zero(0)).unwrap()
}

fn with_generator(gen: GeneratorSpec) -> ChaosConfig {
    let mut cfg = ChaosConfig::standard();
    cfg.generator = gen;
    cfg.beta_hat = cfg.suggested_beta().unwrap();
    cfg
}

#[test]
fn conservation_of_solutions() {
    let cfg = ChaosConfig::standard();
    for n in [2, 3, 4] {
        let r = conservation_check(&cfg, n, None).unwrap();
        assert!(r.holds, "N = {n}: {}", r.max_diff);
    }
    let bad = conservation_check(&cfg, 2, Some(1e-6)).unwrap();
    assert!(!bad.holds && bad.max_diff >= 1e-6 * 0.99);
    let zero = with_generator(GeneratorSpec::zero());
    assert!(conservation_check(&zero, 3, None).unwrap().max_diff < 1e-13);
}

#[test]
fn conservation_with_jumps() {
    let mut cfg = ChaosConfig::standard();
    cfg.model = DriverModel::homogeneous(2, 1.0, IncrementLaw::rademacher(0.05), IncrementLaw::trinomial(0.5, 0.05).unwrap()).unwrap();
    cfg.terminal = TerminalFamily::Random { seed: 4, scale: 1.0 };
    cfg.beta_hat = cfg.suggested_beta().unwrap();
    for n in [2, 3] {
        assert!(conservation_check(&cfg, n, None).unwrap().holds);
    }
}

#[test]
fn measure_free_generator_has_no_gap() {
    let mut cfg = with_generator(GeneratorSpec::linear(-0.5));
    cfg.terminal = TerminalFamily::Random { seed: 3, scale: 2.0 };
    let r = run_system_gap(&cfg, &[2, 3]).unwrap();
    for row in &r.rows {
        assert!(row.avg_gap < 1e-25, "{:?}", row);
    }
}

#[test]
fn constant_terminal_has_no_gap() {
    let mut cfg = ChaosConfig::standard();
    cfg.terminal = TerminalFamily::Constant { value: 1.5 };
    let r = run_system_gap(&cfg, &[2, 4]).unwrap();
    for row in &r.rows {
        assert!(row.avg_gap < 1e-25 && row.sup_w2_sq < 1e-25, "{:?}", row);
    }
    let rows = cor64_check(&cfg, &[2, 3], 1).unwrap();
    assert!(rows.iter().all(|r| r.value < 1e-25));
}

#[test]
fn gap_decreases_with_particles() {
    let cfg = ChaosConfig::standard();
    let r = run_system_gap(&cfg, &[2, 4, 8]).unwrap();
    assert!(r.modulus < 1.0);
    for w in r.rows.windows(2) {
        assert!(w[1].avg_gap <= w[0].avg_gap, "{:?}", r.rows);
    }
    assert!(r.rows[2].avg_gap < r.rows[0].avg_gap);
    assert!(r.slope.unwrap() < 0.0);
}

#[test]
fn particle_gaps_are_exchangeable() {
    let cfg = ChaosConfig::standard();
    let a = run_particle_gap(&cfg, 0, &[3]).unwrap();
    let b = run_particle_gap(&cfg, 2, &[3]).unwrap();
    let (ra, rb) = (&a.rows[0], &b.rows[0]);
    assert!((ra.particle_gap - rb.particle_gap).abs() <= 1e-9 * ra.particle_gap);
    assert!((ra.particle_gap - ra.avg_gap).abs() <= 1e-9 * ra.avg_gap);
    assert!(ra.particle_gap <= 3.0 * ra.avg_gap);
    assert!(run_particle_gap(&cfg, 3, &[3]).is_err());
}

#[test]
fn perturbation_bound() {
    let mut cfg = with_generator(GeneratorSpec::linear(0.5));
    cfg.eps = EpsFamily::InvN;
    let rows = perturbation_check(&cfg, &[2, 3, 4]).unwrap();
    for r in &rows {
        assert!(r.holds && r.r_n > 0.0, "{:?}", r);
    }
    assert!(perturbation_check(&ChaosConfig::standard(), &[2]).is_err());
}

#[test]
fn lambda_of_deterministic_solution() {
    let model = binary(2, 0.5f64.sqrt());
    let tree = build_tree(&model, 1, 2, DEFAULT_NODE_BUDGET).unwrap();
    let gen = GeneratorSpec::mean(1.0);
    let s = solve_mckean_vlasov(&tree, &[1.0; 4], 1, &gen, SolverOptions::with_beta(1.0)).unwrap();
    let w = lipschitz_to_a(&gen.lipschitz(2, 1), &model).unwrap();
    let beta = 3.0;
    let l = lambda_qt(&s.solutions[0], &tree, &w.a, beta, 6.0).unwrap();
    let da = w.a.jumps();
    let want = da[0] * 1.5 * 1.5 + (1.0 + beta * da[0]) * da[1];
    assert!((l.lambda - want).abs() < 1e-12);
    assert!((l.alpha_y - want).abs() < 1e-12);
    assert!(l.dominates());
    assert!(lambda_qt(&s.solutions[0], &tree, &w.a, beta, 2.0).is_err());
}

#[test]
fn lambda_dominates_alpha_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..50 {
        let steps = 1 + case % 3;
        let model = common::random_model(&mut rng, steps, 1, 1, 0.3);
        let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET).unwrap();
        let xi: Vec<f64> = (0..tree.width(steps)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gen = GeneratorSpec::mean(rng.gen_range(-1.0..1.0));
        let s = solve_mckean_vlasov(&tree, &xi, 1, &gen, SolverOptions::with_beta(50.0)).unwrap();
        let w = lipschitz_to_a(&gen.lipschitz(steps, 1), &model).unwrap();
        let q = rng.gen_range(2.5..8.0);
        let l = lambda_qt(&s.solutions[0], &tree, &w.a, 50.0, q).unwrap();
        assert!(l.dominates(), "case {case}: {:?}", l);
    }
}

#[test]
fn sampling_matches_node_law() {
    let lim = solve_limit(&ChaosConfig::standard()).unwrap();
    let k = 2;
    let probs = lim.tree.node_probs(k);
    let exact: f64 = probs.iter().zip(&lim.solution.y[k]).map(|(p, y)| p * y).sum();
    let second: f64 = probs.iter().zip(&lim.solution.y[k]).map(|(p, y)| p * y * y).sum();
    let n = 100_000;
    let draws = sample_mv_values(&lim.solution, &lim.tree, k, n, 5);
    let mean = draws.iter().map(|v| v[0]).sum::<f64>() / n as f64;
    let se = ((second - exact * exact) / n as f64).sqrt();
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn rate_experiment_degenerate_and_decaying() {
    let mut cfg = ChaosConfig::standard();
    cfg.terminal = TerminalFamily::Constant { value: 2.0 };
    let lim = solve_limit(&cfg).unwrap();
    let r = rate_experiment(&lim.solution, &lim.tree, 1, &[4, 8], 6.0, 1).unwrap();
    assert!(r.degenerate && r.slope.is_none() && r.envelope_c.is_none());

    let lim = solve_limit(&ChaosConfig::standard()).unwrap();
    let r = rate_experiment(&lim.solution, &lim.tree, 1, &[16, 64, 256], 6.0, 7).unwrap();
    assert!(!r.degenerate);
    assert!(r.slope.unwrap() < -0.4, "{:?}", r);
    let again = rate_experiment(&lim.solution, &lim.tree, 1, &[16, 64, 256], 6.0, 7).unwrap();
    assert_eq!(r, again);
}
