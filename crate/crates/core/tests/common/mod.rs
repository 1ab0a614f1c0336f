#![allow(dead_code)]

use chaoslab_core::driver::{build_driver, DriverModel, IncrementLaw};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random zero-mean law with `atoms` points; with `zero_atom` the first atom
/// is the origin and the rest are centred.
pub fn random_law(rng: &mut ChaCha8Rng, dim: usize, atoms: usize, zero_atom: bool) -> IncrementLaw {
    if dim == 0 {
        return IncrementLaw::point_mass_zero(0);
    }
    let mut w: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let head: f64 = w[..atoms - 1].iter().sum();
    w[atoms - 1] = 1.0 - head;
    let mut pts: Vec<Vec<f64>> = (0..atoms).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let first = usize::from(zero_atom);
    if zero_atom {
        pts[0] = vec![0.0; dim];
    }
    let mass: f64 = w[first..].iter().sum();
    for r in 0..dim {
        let m: f64 = (first..atoms).map(|i| w[i] * pts[i][r]).sum::<f64>() / mass;
        for p in pts.iter_mut().skip(first) {
            p[r] -= m;
        }
    }
    IncrementLaw::new(dim, pts, w).expect("valid law")
}

/// Driver with independent random laws per step on a uniform grid of `[0, 1]`.
pub fn random_model(rng: &mut ChaCha8Rng, steps: usize, p: usize, n: usize, scale: f64) -> DriverModel {
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let mut diffs = Vec::new();
    let mut jumps = Vec::new();
    for _ in 0..steps {
        let a = rng.gen_range(2..=3);
        let d = random_law(rng, p, a, false);
        diffs.push(scaled(&d, scale));
        let zero = rng.gen_bool(0.5);
        let b = rng.gen_range(2..=3) + usize::from(zero);
        let j = random_law(rng, n, b, zero);
        jumps.push(scaled(&j, scale));
    }
    build_driver(times, diffs, jumps).expect("valid driver")
}

pub fn scaled(law: &IncrementLaw, s: f64) -> IncrementLaw {
    if law.dim() == 0 {
        return law.clone();
    }
    let pts = (0..law.len()).map(|i| law.atom(i).iter().map(|x| x * s).collect()).collect();
    IncrementLaw::new(law.dim(), pts, law.weights().to_vec()).expect("valid law")
}
