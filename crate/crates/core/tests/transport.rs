use chaoslab_core::transport::*;
use proptest::prelude::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_w2(xs: &[Vec<f64>], ys: &[Vec<f64>], metric: Metric) -> f64 {
    let n = xs.len();
    permutations(n)
        .into_iter()
        .map(|s| (0..n).map(|i| metric.dist(&xs[i], &ys[s[i]]).powi(2)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn law_strategy(dim: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteLaw> {
    prop::collection::vec((prop::collection::vec(-3.0f64..3.0, dim), 0.05f64..1.0), 1..=max_atoms).prop_map(
        move |v| {
            let total: f64 = v.iter().map(|(_, w)| w).sum();
            let atoms: Vec<Vec<f64>> = v.iter().map(|(a, _)| a.clone()).collect();
            let mut weights: Vec<f64> = v.iter().map(|(_, w)| w / total).collect();
            let head: f64 = weights[..weights.len() - 1].iter().sum();
            *weights.last_mut().unwrap() = 1.0 - head;
            DiscreteLaw::new(dim, atoms, weights).unwrap()
        },
    )
}

fn points_strategy(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(prop_oneof![-2.0f64..2.0, Just(0.0), Just(1.0)], dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn simplex_matches_quantile_formula(p in law_strategy(1, 9), q in law_strategy(1, 9)) {
        let a = w2_discrete(&p, &q, Metric::Euclid).unwrap();
        let b = w2_1d(&p, &q).unwrap();
        prop_assert!((a * a - b * b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn assignment_matches_brute_force(n in 1usize..=6, seed in 0u64..1000) {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![((seed + 7 * i as u64) % 13) as f64 * 0.3, (i % 3) as f64]).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|i| vec![((seed * 3 + i as u64) % 11) as f64 * 0.25, ((i + 1) % 2) as f64]).collect();
        for metric in [Metric::Euclid, Metric::TruncatedSup { state_dim: 1 }] {
            let got = w2_empirical_equal(&xs, &ys, metric).unwrap();
            prop_assert!((got - brute_force_w2(&xs, &ys, metric)).abs() < 1e-10);
        }
    }

    #[test]
    fn assignment_random_points(n in 1usize..=6, xs in points_strategy(6, 2), ys in points_strategy(6, 2)) {
        let (xs, ys) = (&xs[..n], &ys[..n]);
        let got = w2_empirical_equal(xs, ys, Metric::Euclid).unwrap();
        prop_assert!((got - brute_force_w2(xs, ys, Metric::Euclid)).abs() < 1e-10);
        prop_assert!(empirical_coupling_bound_check(xs, ys, Metric::Euclid).unwrap());
    }

    #[test]
    fn uniform_laws_agree_with_assignment(n in 1usize..=6, xs in points_strategy(6, 2), ys in points_strategy(6, 2)) {
        let (xs, ys) = (&xs[..n], &ys[..n]);
        let p = DiscreteLaw::empirical(2, &xs.concat()).unwrap();
        let q = DiscreteLaw::empirical(2, &ys.concat()).unwrap();
        let a = w2_discrete(&p, &q, Metric::Euclid).unwrap();
        let b = w2_empirical_equal(xs, ys, Metric::Euclid).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn w2_triangle(p in law_strategy(2, 6), q in law_strategy(2, 6), r in law_strategy(2, 6)) {
        for metric in [Metric::Euclid, Metric::TruncatedSup { state_dim: 2 }] {
            let pq = w2_discrete(&p, &q, metric).unwrap();
            let qr = w2_discrete(&q, &r, metric).unwrap();
            let pr = w2_discrete(&p, &r, metric).unwrap();
            prop_assert!(pr <= pq + qr + 1e-10);
            prop_assert!((pq - w2_discrete(&q, &p, metric).unwrap()).abs() < 1e-10);
        }
        let capped = w2_discrete(&p, &q, Metric::TruncatedSup { state_dim: 1 }).unwrap();
        prop_assert!(capped <= 1.0 + 1e-12);
    }

    #[test]
    fn metric_axioms(x in prop::collection::vec(-2.0f64..2.0, 4), y in prop::collection::vec(-2.0f64..2.0, 4), z in prop::collection::vec(-2.0f64..2.0, 4)) {
        for m in [Metric::Euclid, Metric::TruncatedSup { state_dim: 1 }, Metric::TruncatedSup { state_dim: 2 }] {
            prop_assert_eq!(m.dist(&x, &y), m.dist(&y, &x));
            prop_assert!(m.dist(&x, &z) <= m.dist(&x, &y) + m.dist(&y, &z) + 1e-12);
            prop_assert_eq!(m.dist(&x, &x), 0.0);
            if x != y {
                prop_assert!(m.dist(&x, &y) > 0.0);
            }
        }
    }
}

#[test]
fn larger_laws_stay_optimal() {
    // many equal weights produce heavy degeneracy
    for n in [10usize, 40, 100] {
        let a: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 / n as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 11 + 3) % n) as f64 / n as f64 + 0.3).collect();
        let p = DiscreteLaw::empirical(1, &a).unwrap();
        let q = DiscreteLaw::empirical(1, &b).unwrap();
        let got = w2_discrete(&p, &q, Metric::Euclid).unwrap();
        assert!((got - w2_1d(&p, &q).unwrap()).abs() < 1e-10);
        let xs: Vec<Vec<f64>> = a.iter().map(|&x| vec![x]).collect();
        let ys: Vec<Vec<f64>> = b.iter().map(|&x| vec![x]).collect();
        assert!((w2_empirical_equal(&xs, &ys, Metric::Euclid).unwrap() - got).abs() < 1e-10);
    }
}
