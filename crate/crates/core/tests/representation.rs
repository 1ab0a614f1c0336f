mod common;

use chaoslab_core::driver::{gamma_eval, tnorm_sq, JumpFunction, StepLaw};
use chaoslab_core::scenario::{build_tree, mart_repr, DEFAULT_NODE_BUDGET};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random `U` on the jump atoms, zero at the origin.
fn random_jump_function(rng: &mut ChaCha8Rng, law: &StepLaw, d: usize, size: f64) -> JumpFunction {
    let mut values = vec![0.0; law.jump.len() * d];
    for a in 0..law.jump.len() {
        if !law.jump.is_zero_atom(a) {
            for r in 0..d {
                values[a * d + r] = rng.gen_range(-size..size);
            }
        }
    }
    JumpFunction { d, values }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn decomposition_is_orthogonal(seed in any::<u64>(), steps in 1usize..=2, p in 1usize..=2, n in 0usize..=2, particles in 1usize..=2, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, steps, p, n, 0.7);
        let tree = build_tree(&model, particles, steps, DEFAULT_NODE_BUDGET).unwrap();
        let k = rng.gen_range(0..steps);
        let step = k + 1;
        let i = rng.gen_range(0..particles);
        let b = tree.joint_branching(step);
        let g: Vec<f64> = (0..b * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rep = mart_repr(&tree, k, &g, d, i).unwrap();
        let law = tree.step_law(step);
        let atoms = law.jump.len();
        let mut e_total = 0.0;
        let mut e_z = 0.0;
        let mut e_u = 0.0;
        let mut e_m = 0.0;
        let mut cross_x = vec![0.0; d * p];
        let mut by_jump = vec![0.0; atoms * d];
        let mut mean_m = vec![0.0; d];
        for c in 0..b {
            let pc = tree.child_prob(step, c);
            let o = tree.own_outcome(step, c, i);
            let (a, j, _) = tree.step_branching(step).outcomes[o];
            let x = law.diff.atom(a);
            let nonzero = !law.jump.is_zero_atom(j);
            for r in 0..d {
                let zx = dot(&rep.z[r * p..(r + 1) * p], x);
                let uj = if nonzero { rep.u[j * d + r] } else { 0.0 } - rep.uhat[r];
                let dm = rep.dm[c * d + r];
                let centred = g[c * d + r] - rep.gbar[r];
                prop_assert!((centred - zx - uj - dm).abs() < 1e-10);
                e_total += pc * centred * centred;
                e_z += pc * zx * zx;
                e_u += pc * uj * uj;
                e_m += pc * dm * dm;
                for l in 0..p {
                    cross_x[r * p + l] += pc * dm * x[l];
                }
                by_jump[j * d + r] += pc * dm;
                mean_m[r] += pc * dm;
            }
        }
        prop_assert!(cross_x.iter().all(|v| v.abs() < 1e-10), "{:?}", cross_x);
        prop_assert!(by_jump.iter().all(|v| v.abs() < 1e-10), "{:?}", by_jump);
        prop_assert!(mean_m.iter().all(|v| v.abs() < 1e-10));
        prop_assert!((e_total - e_z - e_u - e_m).abs() < 1e-10, "{} vs {}", e_total, e_z + e_u + e_m);
        prop_assert!((e_u - law.tnorm_sq(&rep.u, d) * law.dc).abs() < 1e-10);
    }

    #[test]
    fn jump_norm_identity(seed in any::<u64>(), n in 1usize..=2, d in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, 1, 1, n, 1.0);
        let law = model.step(1);
        let u = random_jump_function(&mut rng, law, d, 3.0);
        let uhat = chaoslab_core::driver::hat_u(&model, 1, &u);
        let mut direct = 0.0;
        for a in 0..law.jump.len() {
            let nonzero = !law.jump.is_zero_atom(a);
            let s: f64 = (0..d)
                .map(|r| (if nonzero { u.values[a * d + r] } else { 0.0 } - uhat[r]).powi(2))
                .sum();
            direct += law.jump.weight(a) * s;
        }
        prop_assert!((direct - tnorm_sq(&model, 1, &u) * law.dc).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gamma_is_lipschitz(seed in any::<u64>(), n in 1usize..=2, d in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = rng.gen_range(0.1..2.0);
        let model = common::random_model(&mut rng, 1, 1, n, scale);
        let law = model.step(1);
        let u1 = random_jump_function(&mut rng, law, d, 5.0);
        let u2 = random_jump_function(&mut rng, law, d, 5.0);
        let theta: Vec<f64> = (0..law.jump.len())
            .map(|a| {
                let bound = if law.jump.is_zero_atom(a) { 1.0 } else { dot(law.jump.atom(a), law.jump.atom(a)).sqrt() };
                bound * rng.gen_range(-1.0..=1.0)
            })
            .collect();
        let g1 = gamma_eval(&model, 1, &u1, &theta).unwrap();
        let g2 = gamma_eval(&model, 1, &u2, &theta).unwrap();
        let lhs: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum();
        let diff = JumpFunction { d, values: u1.values.iter().zip(&u2.values).map(|(a, b)| a - b).collect() };
        let rhs = 2.0 * tnorm_sq(&model, 1, &diff);
        prop_assert!(rhs - lhs >= -1e-12, "{} > {}", lhs, rhs);
    }
}
