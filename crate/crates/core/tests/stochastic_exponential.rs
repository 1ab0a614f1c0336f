use chaoslab_core::fvcalc::*;
use proptest::prelude::*;

fn path_strategy(jump_lo: f64, jump_hi: f64, drift_lo: f64, drift_hi: f64) -> impl Strategy<Value = FVPath> {
    (1usize..=8)
        .prop_flat_map(move |k| {
            (
                prop::collection::vec(0.05f64..1.0, k),
                -1.0f64..1.0,
                prop::collection::vec(drift_lo..=drift_hi, k),
                prop::collection::vec(jump_lo..=jump_hi, k),
            )
        })
        .prop_map(|(gaps, start, drift, jumps)| {
            let mut times = vec![0.0];
            for g in gaps {
                times.push(times.last().unwrap() + g);
            }
            FVPath::new(times, start, drift, jumps).unwrap()
        })
}

fn general() -> impl Strategy<Value = FVPath> {
    path_strategy(-0.9, 2.0, -1.0, 1.0)
}

/// Direct recursion `E_k = E_{k-1} e^{c_k} (1 + dA_k)`.
fn recursion(a: &FVPath) -> Vec<f64> {
    let mut out = vec![1.0];
    for (c, j) in a.drift().iter().zip(a.jumps()) {
        let prev = *out.last().unwrap();
        out.push(prev * c.exp() * (1.0 + j));
    }
    out
}

fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn values_match_recursion(a in general()) {
        let e = stoch_exp_values(&a);
        for (x, y) in e.iter().zip(recursion(&a)) {
            prop_assert!(close(*x, y));
        }
        prop_assert!(stoch_exp_sde_residual(&a) < 1e-12);
        prop_assert!(e.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn inverse_through_bar(a in general()) {
        let bar = bar_path(&a).unwrap();
        let e = stoch_exp_values(&a);
        let inv = stoch_exp_values(&bar.scale(-1.0));
        for (x, y) in e.iter().zip(&inv) {
            prop_assert!(close(x * y, 1.0), "{} * {}", x, y);
        }
    }

    #[test]
    fn bounded_by_exponential(a in path_strategy(-1.0, 2.0, -1.0, 1.0)) {
        let e = stoch_exp_values(&a);
        let v = a.values();
        for (k, x) in e.iter().enumerate() {
            prop_assert!(*x >= 0.0);
            prop_assert!(*x <= (v[k] - v[0]).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn monotone(up in path_strategy(0.0, 2.0, 0.0, 1.0), down in path_strategy(-1.0, 0.0, -1.0, 0.0)) {
        let e = stoch_exp_values(&up);
        prop_assert!(e.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-15)));
        let e = stoch_exp_values(&down);
        prop_assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-15)));
    }

    #[test]
    fn product_rule(a in general(), scale in -0.4f64..0.4, shift in -0.3f64..0.3) {
        let b = FVPath::new(
            a.times().to_vec(),
            shift,
            a.drift().iter().map(|c| c * scale + shift).collect(),
            a.jumps().iter().map(|j| (j * scale).clamp(-0.9, 2.0)).collect(),
        ).unwrap();
        prop_assert!(product_identity_check(&a, &b));
        let lhs: Vec<f64> = stoch_exp_values(&a).iter().zip(stoch_exp_values(&b)).map(|(x, y)| x * y).collect();
        let sum = a.add(&b).unwrap().add(&a.bracket(&b).unwrap()).unwrap();
        for (x, y) in lhs.iter().zip(recursion(&sum)) {
            prop_assert!(close(*x, y));
        }
    }

    #[test]
    fn bar_jumps_and_integral_form(a in general()) {
        let bar = bar_path(&a).unwrap();
        for (jb, j) in bar.jumps().iter().zip(a.jumps()) {
            prop_assert!(close(*jb, j / (1.0 + j)));
        }
        let alt = bar_path_integral(&a).unwrap();
        for (x, y) in bar.values().iter().zip(alt.values()) {
            prop_assert!(close(*x, y));
        }
    }

    #[test]
    fn tilde_quotient(a in path_strategy(0.0, 2.0, 0.0, 1.0), gamma in 0.0f64..3.0, delta in 0.0f64..3.0) {
        let t = tilde_path(&a, delta, gamma).unwrap();
        let ed = stoch_exp_values(&a.scale(delta));
        let eg = stoch_exp_values(&a.scale(gamma));
        let et = stoch_exp_values(&t);
        for k in 0..et.len() {
            prop_assert!(close(ed[k] / eg[k], et[k]));
        }
        for (jt, j) in t.jumps().iter().zip(a.jumps()) {
            prop_assert!(close(*jt, (delta - gamma) * j / (1.0 + gamma * j)));
            prop_assert!(*jt > -1.0);
        }
        for (ct, c) in t.drift().iter().zip(a.drift()) {
            prop_assert!(close(*ct, (delta - gamma) * c));
        }
    }
}

#[test]
fn jump_at_minus_one_is_rejected() {
    let a = FVPath::pure_jump(vec![0.0, 1.0, 2.0], vec![0.5, -1.0]).unwrap();
    assert!(matches!(bar_path(&a), Err(chaoslab_core::Error::JumpAtMinusOne(2))));
}
