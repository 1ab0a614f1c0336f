mod common;

use chaoslab_core::driver::{lipschitz_to_a, DriverModel, IncrementLaw};
use chaoslab_core::fvcalc::{suggest_beta, TheoremId};
use chaoslab_core::generator::{GeneratorSpec, MeasureFunctional, Mode};
use chaoslab_core::scenario::{build_tree, ScenarioTree, DEFAULT_NODE_BUDGET};
use chaoslab_core::solver::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn binary(steps: usize, var: f64) -> DriverModel {
    DriverModel::homogeneous(steps, 1.0, IncrementLaw::rademacher(var.sqrt()), IncrementLaw::point_mass_zero(0)).unwrap()
}

/// `E[values | F_k]` by summing over the leaves below each depth-`k` node.
fn brute_cond_exp(tree: &ScenarioTree, leaf_values: &[f64], n: usize, d: usize, k: usize) -> Vec<f64> {
    let big_k = tree.steps();
    let probs = tree.node_probs(big_k);
    let kp = tree.node_probs(k);
    let mut out = vec![0.0; tree.width(k) * n * d];
    for (leaf, p) in probs.iter().enumerate() {
        let a = tree.ancestor(big_k, leaf, k);
        for j in 0..n * d {
            out[a * n * d + j] += p * leaf_values[leaf * n * d + j];
        }
    }
    for (a, q) in kp.iter().enumerate() {
        for j in 0..n * d {
            out[a * n * d + j] /= q;
        }
    }
    out
}

fn random_xi(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

#[test]
fn zero_generator_is_conditional_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40 {
        let steps = 1 + case % 3;
        let (p, nj, d) = (1 + case % 2, case % 2, 1 + case % 2);
        let model = common::random_model(&mut rng, steps, p, nj, 0.5);
        let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET).unwrap();
        let xi = random_xi(&mut rng, tree.width(steps) * d);
        let s = solve_standard(&tree, &xi, d, &GeneratorSpec::zero(), SolverOptions::with_beta(1.0)).unwrap();
        for k in 0..steps {
            let want = brute_cond_exp(&tree, &xi, 1, d, k);
            let got = &s.solutions[0].y[k];
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-13, "case {case} depth {k}: {a} vs {b}");
            }
        }
        assert!(s.solutions[0].identity_residual(&tree) < 1e-13);
    }
}

#[test]
fn constant_generator_shifts_by_compensator() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..30 {
        let steps = 1 + case % 4;
        let model = common::random_model(&mut rng, steps, 1, case % 2, 0.7);
        let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET).unwrap();
        let xi = random_xi(&mut rng, tree.width(steps));
        let kappa = rng.gen_range(-3.0..3.0);
        let s = solve_standard(&tree, &xi, 1, &GeneratorSpec::constant(kappa), SolverOptions::with_beta(1.0)).unwrap();
        let mean: f64 = tree.node_probs(steps).iter().zip(&xi).map(|(p, x)| p * x).sum();
        let want = mean + kappa * model.total_compensator();
        assert!((s.y0[0][0] - want).abs() < 1e-12, "{} vs {}", s.y0[0][0], want);
    }
}

#[test]
fn mean_interaction_closed_form() {
    let tree = build_tree(&binary(2, 0.5), 1, 2, DEFAULT_NODE_BUDGET).unwrap();
    let s = solve_mckean_vlasov(&tree, &[1.0; 4], 1, &GeneratorSpec::mean(1.0), SolverOptions::with_beta(1.0)).unwrap();
    assert!((s.y0[0][0] - 2.25).abs() < 1e-12);
    assert!(s.trace.converged);
}

/// Scalar single-particle backward recursion `Y_k = E[Y_{k+1} + dC f(Y_{k+1}, L(Y_{k+1}))]`
/// over an explicit list of binary paths.
fn scalar_recursion(model: &DriverModel, xi: &[f64], f: impl Fn(f64, &[f64], &[f64]) -> f64) -> f64 {
    let steps = model.steps();
    let mut level = xi.to_vec();
    for k in (0..steps).rev() {
        let law = model.step(k + 1);
        let b = law.diff.len();
        let probs: Vec<f64> = (0..level.len()).map(|j| path_prob(model, k + 1, j)).collect();
        let next: Vec<f64> = (0..level.len()).map(|j| level[j] + law.dc * f(level[j], &level, &probs)).collect();
        level = (0..level.len() / b).map(|idx| (0..b).map(|c| law.diff.weight(c) * next[idx * b + c]).sum()).collect();
    }
    level[0]
}

fn path_prob(model: &DriverModel, depth: usize, mut idx: usize) -> f64 {
    let mut p = 1.0;
    for s in (1..=depth).rev() {
        let law = &model.step(s).diff;
        p *= law.weight(idx % law.len());
        idx /= law.len();
    }
    p
}

#[test]
fn w2_reference_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for steps in 1..=4 {
        let model = binary(steps, 0.3);
        let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET).unwrap();
        let xi = random_xi(&mut rng, tree.width(steps));
        let s = solve_mckean_vlasov(&tree, &xi, 1, &GeneratorSpec::w2ref(), SolverOptions::with_beta(1.0)).unwrap();
        let want = scalar_recursion(&model, &xi, |_, ys, ps| ys.iter().zip(ps).map(|(y, p)| p * y * y).sum::<f64>().sqrt());
        assert!((s.y0[0][0] - want).abs() < 1e-12, "{} vs {}", s.y0[0][0], want);
        let lin = solve_mckean_vlasov(&tree, &xi, 1, &GeneratorSpec::linear(-0.7), SolverOptions::with_beta(1.0)).unwrap();
        let want = scalar_recursion(&model, &xi, |y, _, _| -0.7 * y);
        assert!((lin.y0[0][0] - want).abs() < 1e-12);
    }
}

#[test]
fn measure_free_generator_ignores_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..10 {
        let model = common::random_model(&mut rng, 3, 1, 1, 0.6);
        let tree = build_tree(&model, 1, 3, DEFAULT_NODE_BUDGET).unwrap();
        let xi = random_xi(&mut rng, tree.width(3));
        let mut gen = GeneratorSpec::linear(0.4);
        gen.c = vec![0.3];
        gen.g = vec![-0.2];
        gen.a = vec![0.1 * case as f64];
        let a = solve_standard(&tree, &xi, 1, &gen, SolverOptions::with_beta(4.0)).unwrap();
        let b = solve_mckean_vlasov(&tree, &xi, 1, &gen, SolverOptions::with_beta(4.0)).unwrap();
        for k in 0..3 {
            for (x, y) in a.solutions[0].y[k].iter().zip(&b.solutions[0].y[k]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn symmetric_mean_field_closed_form() {
    let tree = build_tree(&binary(2, 0.5), 2, 2, DEFAULT_NODE_BUDGET).unwrap();
    let term = Terminal::Table(vec![1.0; tree.width(2) * 2]);
    let s = solve_meanfield(&tree, &term, 1, &GeneratorSpec::mean(1.0), SolverOptions::with_beta(1.0)).unwrap();
    for y0 in &s.y0 {
        assert!((y0[0] - 2.25).abs() < 1e-12);
    }
}

fn own_phi(tree1: &ScenarioTree) -> impl Fn(&[usize]) -> Vec<f64> + '_ {
    move |path: &[usize]| {
        let x: f64 = path.iter().enumerate().map(|(j, &o)| tree1.diff_increment(j + 1, o)[0]).sum();
        vec![x * x + 2.0 * x]
    }
}

#[test]
fn zero_generator_decouples_particles() {
    let model = binary(3, 0.2);
    let tree = build_tree(&model, 2, 3, DEFAULT_NODE_BUDGET).unwrap();
    let tree1 = build_tree(&model, 1, 3, DEFAULT_NODE_BUDGET).unwrap();
    let term = Terminal::own_from_paths(&tree, 1, 0.0, own_phi(&tree1)).unwrap();
    let s = solve_meanfield(&tree, &term, 1, &GeneratorSpec::zero(), SolverOptions::with_beta(1.0)).unwrap();
    let xi1: Vec<f64> = (0..tree1.width(3))
        .map(|leaf| {
            let mut digits = vec![0; 3];
            let mut rest = leaf;
            for j in (0..3).rev() {
                digits[j] = rest % 2;
                rest /= 2;
            }
            own_phi(&tree1)(&digits)[0]
        })
        .collect();
    let single = solve_standard(&tree1, &xi1, 1, &GeneratorSpec::zero(), SolverOptions::with_beta(1.0)).unwrap();
    for k in 0..3 {
        let joint = s.node_values(k);
        for idx in 0..tree.width(k) {
            for i in 0..2 {
                let own = tree.own_index(k, idx, i);
                assert!((joint[idx * 2 + i] - single.solutions[0].y[k][own]).abs() < 1e-13);
            }
        }
    }
}

/// Node index at depth `k` after exchanging the two particles' outcomes.
fn swapped(tree: &ScenarioTree, k: usize, idx: usize) -> usize {
    let mut digits = Vec::new();
    let mut rest = idx;
    for j in (1..=k).rev() {
        let b = tree.joint_branching(j);
        let c = rest % b;
        let own = tree.own_branching(j);
        digits.push((c % own) * own + c / own);
        rest /= b;
    }
    digits.iter().rev().enumerate().fold(0, |acc, (pos, &c)| acc * tree.joint_branching(pos + 1) + c)
}

#[test]
fn exchanging_particles_permutes_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let model = common::random_model(&mut rng, 2, 1, 1, 0.4);
    let tree = build_tree(&model, 2, 2, DEFAULT_NODE_BUDGET).unwrap();
    let tree1 = build_tree(&model, 1, 2, DEFAULT_NODE_BUDGET).unwrap();
    let phi = |path: &[usize]| {
        let x: f64 = path.iter().enumerate().map(|(j, &o)| tree1.diff_increment(j + 1, o)[0] + tree1.jump_increment(j + 1, o).first().copied().unwrap_or(0.0)).sum();
        vec![x.sin() + 0.5]
    };
    let term = Terminal::own_from_paths(&tree, 1, 0.0, phi).unwrap();
    for gen in [GeneratorSpec::mean(0.8), GeneratorSpec::w2ref(), GeneratorSpec::saturating_mean()] {
        let s = solve_meanfield(&tree, &term, 1, &gen, SolverOptions::with_beta(2.0)).unwrap();
        assert!((s.y0[0][0] - s.y0[1][0]).abs() < 1e-13);
        for k in 1..2 {
            let v = s.node_values(k);
            for idx in 0..tree.width(k) {
                let sw = swapped(&tree, k, idx);
                assert!((v[idx * 2] - v[sw * 2 + 1]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn solutions_satisfy_their_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let model = common::random_model(&mut rng, 3, 2, 1, 0.5);
    let tree = build_tree(&model, 2, 3, DEFAULT_NODE_BUDGET).unwrap();
    let xi = random_xi(&mut rng, tree.width(3) * 2 * 2);
    let term = Terminal::Table(xi);
    let mut gen = GeneratorSpec::mean(0.5);
    gen.b = vec![0.3];
    gen.c = vec![0.2];
    gen.g = vec![0.1];
    let s = solve_meanfield(&tree, &term, 2, &gen, SolverOptions::with_beta(8.0)).unwrap();
    assert!(s.trace.converged);
    for sol in &s.solutions {
        assert!(sol.identity_residual(&tree) < 1e-12);
    }
    let sys = System::new(&tree, &gen, &term, MeasureSource::Empirical, 2, SolverOptions::with_beta(8.0), ProblemKind::MeanField).unwrap();
    assert!(sys.fixed_point_residual(&s) < 1e-10);
}

fn theorem_for(kind: ProblemKind, mode: Mode) -> TheoremId {
    match (kind, mode) {
        (ProblemKind::MeanField, Mode::Instant) => TheoremId::InstantMf,
        (ProblemKind::MeanField, Mode::Path) => TheoremId::PathMf,
        (_, Mode::Instant) => TheoremId::InstantMv,
        (_, Mode::Path) => TheoremId::PathMv,
    }
}

fn random_generator(rng: &mut ChaCha8Rng) -> GeneratorSpec {
    let mut gen = match rng.gen_range(0..5) {
        0 => GeneratorSpec::linear(rng.gen_range(-1.0..1.0)),
        1 => GeneratorSpec::mean(rng.gen_range(-1.0..1.0)),
        2 => GeneratorSpec::saturating_mean(),
        3 => GeneratorSpec::w2ref(),
        _ => GeneratorSpec::path_supmean(),
    };
    gen.a = vec![rng.gen_range(-0.5..0.5)];
    gen.b = vec![rng.gen_range(-0.5..0.5)];
    gen.c = vec![rng.gen_range(-0.5..0.5)];
    if rng.gen_bool(0.5) {
        gen.g = vec![rng.gen_range(-0.5..0.5)];
    }
    gen
}

#[test]
fn contraction_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for case in 0..30 {
        let steps = 2 + case % 2;
        let model = common::random_model(&mut rng, steps, 1, 1, 0.06);
        let gen = random_generator(&mut rng);
        let (kind, n) = if case % 3 == 0 { (ProblemKind::MeanField, 2) } else { (ProblemKind::McKeanVlasov, 1) };
        let theorem = theorem_for(kind, gen.mode);
        let w = lipschitz_to_a(&gen.lipschitz(steps, 1), &model).unwrap();
        let Some(beta) = suggest_beta(theorem, w.phi, |b| w.lambda_beta(b)) else { continue };
        let beta = beta * rng.gen_range(1.0..3.0);
        let check = standard_data_check(&model, &gen, 1, beta, theorem).unwrap();
        if !check.all_hold() {
            continue;
        }
        let tree = build_tree(&model, n, steps, DEFAULT_NODE_BUDGET).unwrap();
        let xi = random_xi(&mut rng, tree.width(steps) * n);
        let term = Terminal::Table(xi);
        let measure = if n == 1 { MeasureSource::LawOfIterate } else { MeasureSource::Empirical };
        let sys = System::new(&tree, &gen, &term, measure, 1, SolverOptions::with_beta(beta), kind).unwrap();
        let s = sys.solve().unwrap();
        assert!(s.trace.converged && s.trace.iterations <= 200, "case {case}");
        let modulus = check.contraction.modulus;
        assert!(s.trace.max_ratio() <= modulus * (1.0 + 1e-6), "case {case}: ratio {} modulus {}", s.trace.max_ratio(), modulus);
        assert!(uniqueness_gap(&sys).unwrap() < 1e-9, "case {case}");
        checked += 1;
    }
    assert!(checked >= 15, "only {checked} configurations passed the data check");
}

#[test]
fn data_check_flags_failures() {
    let model = binary(2, 0.0025);
    let ok = standard_data_check(&model, &GeneratorSpec::mean(1.0), 1, 400.0, TheoremId::InstantMv).unwrap();
    assert!(ok.all_hold());
    let weak = standard_data_check(&model, &GeneratorSpec::linear(50.0), 1, 1.0, TheoremId::InstantMv).unwrap();
    let cond = weak.conditions.iter().find(|c| c.name == "contraction").unwrap();
    assert!(!cond.holds);
    let konst = standard_data_check(&model, &GeneratorSpec::constant(1.0), 1, 10.0, TheoremId::InstantMv).unwrap();
    assert!(!konst.conditions.iter().find(|c| c.name == "generator-at-zero").unwrap().holds);
    let custom = GeneratorSpec {
        measure: MeasureFunctional::Custom { centers: vec![vec![0.0], vec![1.0]], lambdas: vec![0.5, 0.5] },
        ..GeneratorSpec::mean(1.0)
    };
    assert!(standard_data_check(&model, &custom, 1, 400.0, TheoremId::InstantMv).unwrap().all_hold());
}
