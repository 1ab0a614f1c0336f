//! Seeded invariant suites shared by `selftest` (small counts) and the
//! acceptance harness (full counts). Each suite compares library output with
//! an independent recomputation.

use chaoslab_core::chaos::{conservation_check, lambda_qt, rate_experiment, run_system_gap, solve_limit, envelope, ChaosConfig};
use chaoslab_core::driver::{build_driver, gamma_eval, hat_u, lipschitz_to_a, tnorm_sq, DriverModel, IncrementLaw, JumpFunction, StepLaw};
use chaoslab_core::fvcalc::*;
use chaoslab_core::generator::{GeneratorSpec, Mode};
use chaoslab_core::scenario::{build_tree, mart_repr, ScenarioTree, DEFAULT_NODE_BUDGET};
use chaoslab_core::solver::*;
use chaoslab_core::transport::{empirical_coupling_bound_check, w2_1d, w2_discrete, w2_empirical_equal, DiscreteLaw, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, failures: &[String], summary: String) -> Self {
        match failures.first() {
            None => Check { name, passed: true, detail: summary },
            Some(f) => Check { name, passed: false, detail: format!("{} failure(s), first: {f}", failures.len()) },
        }
    }

    fn from_result(name: &'static str, r: chaoslab_core::Result<Check>) -> Self {
        r.unwrap_or_else(|e| Check { name, passed: false, detail: format!("error: {e}") })
    }
}

fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
}

/// Zero-mean law; with `zero_atom` the first atom is the origin.
pub fn random_law(rng: &mut ChaCha8Rng, dim: usize, atoms: usize, zero_atom: bool, scale: f64) -> IncrementLaw {
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
            p[r] = (p[r] - m) * scale;
        }
    }
    IncrementLaw::new(dim, pts, w).expect("valid law")
}

/// Independent random laws per step on a uniform grid of `[0, 1]`.
pub fn random_model(rng: &mut ChaCha8Rng, steps: usize, p: usize, n: usize, scale: f64) -> DriverModel {
    let times = FVPath::uniform_grid(steps, 1.0);
    let mut diffs = Vec::new();
    let mut jumps = Vec::new();
    for _ in 0..steps {
        let a = rng.gen_range(2..=3);
        diffs.push(random_law(rng, p, a, false, scale));
        let zero = rng.gen_bool(0.5);
        let b = rng.gen_range(2..=3) + usize::from(zero);
        jumps.push(random_law(rng, n, b, zero, scale));
    }
    build_driver(times, diffs, jumps).expect("valid driver")
}

fn random_path(rng: &mut ChaCha8Rng, jumps: (f64, f64), drift: (f64, f64)) -> FVPath {
    let k = rng.gen_range(1..=8);
    let mut times = vec![0.0];
    for _ in 0..k {
        times.push(times.last().unwrap() + rng.gen_range(0.05..1.0));
    }
    let start = rng.gen_range(-1.0..1.0);
    let c = (0..k).map(|_| rng.gen_range(drift.0..=drift.1)).collect();
    let j = (0..k).map(|_| rng.gen_range(jumps.0..=jumps.1)).collect();
    FVPath::new(times, start, c, j).expect("valid path")
}

/// `E_k = E_{k-1} exp(c_k) (1 + dA_k)`.
fn exp_recursion(a: &FVPath) -> Vec<f64> {
    let mut out = vec![1.0];
    for (c, j) in a.drift().iter().zip(a.jumps()) {
        let prev = *out.last().unwrap();
        out.push(prev * c.exp() * (1.0 + j));
    }
    out
}

const M_STAR_1_0: f64 = 59.738_633_753_705_966;
const M_TILDE_1_0: f64 = 67.913_664_589_601_92;

/// Closed forms at `(1, 0)` and agreement with the grid oracle on a 5x5 grid.
pub fn constants(oracle_grid: usize) -> Check {
    let mut fails = Vec::new();
    let inject = if cfg!(feature = "fault-injection") { 1e-6 } else { 0.0 };
    let ms = m_star(1.0, 0.0) + inject;
    let mt = m_tilde(1.0, 0.0);
    if (ms - (6.0 * 17f64.sqrt() + 35.0)).abs() > 1e-9 || (ms - M_STAR_1_0).abs() > 1e-9 {
        fails.push(format!("m_star(1, 0) = {ms}"));
    }
    if (mt - (2.0 * 209f64.sqrt() + 39.0)).abs() > 1e-9 || (mt - M_TILDE_1_0).abs() > 1e-9 {
        fails.push(format!("m_tilde(1, 0) = {mt}"));
    }
    let mut worst = 0.0f64;
    for beta in [0.5, 1.0, 2.0, 10.0, 200.0] {
        for phi in [0.0, 1e-3, 0.05, 0.5, 2.0] {
            for (kind, exact) in [(ConstantKind::Star, m_star(beta, phi)), (ConstantKind::Tilde, m_tilde(beta, phi))] {
                let grid = minimize_over_gamma(kind, beta, phi, oracle_grid).value;
                let rel = (grid - exact).abs() / exact;
                worst = worst.max(rel);
                if rel > 1e-6 {
                    fails.push(format!("{kind:?} at ({beta}, {phi}): closed {exact} grid {grid}"));
                }
            }
        }
    }
    Check::new("constants", &fails, format!("25-point grid, worst relative gap {worst:.2e}"))
}

/// Identities of the stochastic exponential on random finite-variation paths.
pub fn stochastic_exponential(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let tol = 1e-12;
    for case in 0..cases {
        let a = random_path(&mut rng, (-0.9, 2.0), (-1.0, 1.0));
        let e = stoch_exp_values(&a);
        if !e.iter().zip(exp_recursion(&a)).all(|(x, y)| close(*x, y, tol)) || stoch_exp_sde_residual(&a) > tol {
            fails.push(format!("case {case}: recursion"));
        }
        let bar = bar_path(&a).expect("jumps above -1");
        let inv = stoch_exp_values(&bar.scale(-1.0));
        if !e.iter().zip(&inv).all(|(x, y)| close(x * y, 1.0, tol)) {
            fails.push(format!("case {case}: inverse"));
        }
        if !bar.jumps().iter().zip(a.jumps()).all(|(jb, j)| close(*jb, j / (1.0 + j), tol)) {
            fails.push(format!("case {case}: bar jumps"));
        }
        let alt = bar_path_integral(&a).expect("jumps above -1");
        if !bar.values().iter().zip(alt.values()).all(|(x, y)| close(*x, y, tol)) {
            fails.push(format!("case {case}: bar integral form"));
        }
        let v = a.values();
        if !e.iter().enumerate().all(|(k, x)| *x >= 0.0 && *x <= (v[k] - v[0]).exp() * (1.0 + tol)) {
            fails.push(format!("case {case}: exponential bound"));
        }
        let b = FVPath::new(
            a.times().to_vec(),
            0.1,
            a.drift().iter().map(|c| 0.3 * c - 0.1).collect(),
            a.jumps().iter().map(|j| (0.3 * j).clamp(-0.9, 2.0)).collect(),
        )
        .expect("valid path");
        let sum = a.add(&b).and_then(|s| s.add(&a.bracket(&b)?)).expect("same grid");
        let prod: Vec<f64> = e.iter().zip(stoch_exp_values(&b)).map(|(x, y)| x * y).collect();
        if !product_identity_check(&a, &b) || !prod.iter().zip(exp_recursion(&sum)).all(|(x, y)| close(*x, y, tol)) {
            fails.push(format!("case {case}: product rule"));
        }
        let up = random_path(&mut rng, (0.0, 2.0), (0.0, 1.0));
        let eu = stoch_exp_values(&up);
        if !eu.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-15)) {
            fails.push(format!("case {case}: monotone"));
        }
        let (gamma, delta) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
        let t = tilde_path(&up, delta, gamma).expect("non-negative jumps");
        let (ed, eg, et) = (stoch_exp_values(&up.scale(delta)), stoch_exp_values(&up.scale(gamma)), stoch_exp_values(&t));
        if !(0..et.len()).all(|k| close(ed[k] / eg[k], et[k], tol)) {
            fails.push(format!("case {case}: quotient"));
        }
    }
    Check::new("stochastic-exponential", &fails, format!("{cases} random paths"))
}

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

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonality of the martingale decomposition, the Pythagoras identity and
/// the jump-norm identity on one-step and multi-step trees.
pub fn representation(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let tol = 1e-10;
    for case in 0..cases {
        let steps = rng.gen_range(1..=2);
        let (p, n) = (rng.gen_range(1..=2), rng.gen_range(0..=2));
        let (particles, d) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let model = random_model(&mut rng, steps, p, n, 0.7);
        let tree = build_tree(&model, particles, steps, DEFAULT_NODE_BUDGET).expect("small tree");
        let k = rng.gen_range(0..steps);
        let step = k + 1;
        let i = rng.gen_range(0..particles);
        let b = tree.joint_branching(step);
        let g: Vec<f64> = (0..b * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rep = match mart_repr(&tree, k, &g, d, i) {
            Ok(r) => r,
            Err(e) => {
                fails.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let law = tree.step_law(step);
        let atoms = law.jump.len();
        let (mut e_total, mut e_z, mut e_u, mut e_m) = (0.0, 0.0, 0.0, 0.0);
        let mut cross = vec![0.0; d * p];
        let mut by_jump = vec![0.0; atoms * d];
        let mut mean_m = vec![0.0; d];
        let mut recon = 0.0f64;
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
                recon = recon.max((centred - zx - uj - dm).abs());
                e_total += pc * centred * centred;
                e_z += pc * zx * zx;
                e_u += pc * uj * uj;
                e_m += pc * dm * dm;
                for l in 0..p {
                    cross[r * p + l] += pc * dm * x[l];
                }
                by_jump[j * d + r] += pc * dm;
                mean_m[r] += pc * dm;
            }
        }
        let worst_orth = cross.iter().chain(&by_jump).chain(&mean_m).fold(0.0f64, |m, v| m.max(v.abs()));
        if recon > tol || worst_orth > tol {
            fails.push(format!("case {case}: reconstruction {recon:e}, orthogonality {worst_orth:e}"));
        }
        if (e_total - e_z - e_u - e_m).abs() > tol {
            fails.push(format!("case {case}: Pythagoras {e_total} vs {}", e_z + e_u + e_m));
        }
        if (e_u - law.tnorm_sq(&rep.u, d) * law.dc).abs() > tol {
            fails.push(format!("case {case}: jump norm identity"));
        }
        let u = random_jump_function(&mut rng, law, d, 3.0);
        let uhat = hat_u(&model, step, &u);
        let direct: f64 = (0..atoms)
            .map(|a| {
                let nonzero = !law.jump.is_zero_atom(a);
                law.jump.weight(a) * (0..d).map(|r| (if nonzero { u.values[a * d + r] } else { 0.0 } - uhat[r]).powi(2)).sum::<f64>()
            })
            .sum();
        if (direct - tnorm_sq(&model, step, &u) * law.dc).abs() > tol {
            fails.push(format!("case {case}: direct jump norm"));
        }
    }
    Check::new("representation", &fails, format!("{cases} random instances"))
}

/// `|Gamma(U1) - Gamma(U2)|^2 <= 2 [[U1 - U2]]^2`.
pub fn gamma_lipschitz(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let mut min_slack = f64::INFINITY;
    for case in 0..cases {
        let (n, d) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
        let scale = rng.gen_range(0.1..2.0);
        let model = random_model(&mut rng, 1, 1, n, scale);
        let law = model.step(1);
        let u1 = random_jump_function(&mut rng, law, d, 5.0);
        let u2 = random_jump_function(&mut rng, law, d, 5.0);
        let theta: Vec<f64> = (0..law.jump.len())
            .map(|a| {
                let bound = if law.jump.is_zero_atom(a) { 1.0 } else { dot(law.jump.atom(a), law.jump.atom(a)).sqrt() };
                bound * rng.gen_range(-1.0..=1.0)
            })
            .collect();
        let (g1, g2) = match (gamma_eval(&model, 1, &u1, &theta), gamma_eval(&model, 1, &u2, &theta)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                fails.push(format!("case {case}: theta rejected"));
                continue;
            }
        };
        let lhs: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum();
        let diff = JumpFunction { d, values: u1.values.iter().zip(&u2.values).map(|(a, b)| a - b).collect() };
        let slack = 2.0 * tnorm_sq(&model, 1, &diff) - lhs;
        min_slack = min_slack.min(slack);
        if slack < -1e-12 {
            fails.push(format!("case {case}: slack {slack:e}"));
        }
    }
    Check::new("gamma-lipschitz", &fails, format!("{cases} instances, min slack {min_slack:.3e}"))
}

/// The six a-priori inequalities on random data.
pub fn apriori(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let mut min_slack = f64::INFINITY;
    for case in 0..cases {
        let steps = rng.gen_range(1..=3);
        let (p, n, d) = (rng.gen_range(1..=2), rng.gen_range(0..=1), rng.gen_range(1..=2));
        let zero_f = rng.gen_bool(0.2);
        let model = random_model(&mut rng, steps, p, n, 0.8);
        let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET).expect("small tree");
        let xi: Vec<f64> = (0..tree.width(steps) * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f: Vec<Vec<f64>> = (1..=steps)
            .map(|k| (0..tree.width(k) * d).map(|_| if zero_f { 0.0 } else { rng.gen_range(-3.0..3.0) }).collect())
            .collect();
        let phi = rng.gen_range(0.01..2.0);
        let jumps: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.001..=phi)).collect();
        let a = FVPath::pure_jump(model.times().to_vec(), jumps).expect("valid path");
        let beta = rng.gen_range(0.1..10.0);
        let gamma = rng.gen_range(0.01..=beta);
        let mut delta = rng.gen_range(0.01..=beta);
        if delta == gamma {
            delta *= 0.5;
        }
        match apriori_verify(&tree, &xi, &f, d, &a, gamma, delta, phi) {
            Ok(rep) if rep.lines.len() == 6 => {
                for line in &rep.lines {
                    min_slack = min_slack.min(line.slack());
                    if line.slack() < -1e-10 {
                        fails.push(format!("case {case}, {}: {} > {}", line.name, line.lhs, line.rhs));
                    }
                }
            }
            Ok(rep) => fails.push(format!("case {case}: {} lines", rep.lines.len())),
            Err(e) => fails.push(format!("case {case}: {e}")),
        }
    }
    Check::new("a-priori", &fails, format!("{cases} instances, min slack {min_slack:.3e}"))
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

/// On configurations passing the standard-data check: observed Picard ratios
/// below the modulus, convergence, and agreement of two initialisations.
pub fn contraction(configs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for case in 0..configs {
        let steps = 2 + case % 2;
        let model = random_model(&mut rng, steps, 1, 1, 0.06);
        let gen = random_generator(&mut rng);
        let (kind, n) = if case % 3 == 0 { (ProblemKind::MeanField, 2) } else { (ProblemKind::McKeanVlasov, 1) };
        let theorem = match (kind, gen.mode) {
            (ProblemKind::MeanField, Mode::Instant) => TheoremId::InstantMf,
            (ProblemKind::MeanField, Mode::Path) => TheoremId::PathMf,
            (_, Mode::Instant) => TheoremId::InstantMv,
            (_, Mode::Path) => TheoremId::PathMv,
        };
        let Ok(w) = lipschitz_to_a(&gen.lipschitz(steps, 1), &model) else { continue };
        let Some(beta) = suggest_beta(theorem, w.phi, |b| w.lambda_beta(b)) else { continue };
        let beta = beta * rng.gen_range(1.0..3.0);
        let Ok(check) = standard_data_check(&model, &gen, 1, beta, theorem) else { continue };
        if !check.all_hold() {
            continue;
        }
        let tree = build_tree(&model, n, steps, DEFAULT_NODE_BUDGET).expect("small tree");
        let xi: Vec<f64> = (0..tree.width(steps) * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let term = Terminal::Table(xi);
        let measure = if n == 1 { MeasureSource::LawOfIterate } else { MeasureSource::Empirical };
        let run = || -> chaoslab_core::Result<(Solved, f64)> {
            let opts = SolverOptions { left_limit: case % 2 == 1, ..SolverOptions::with_beta(beta) };
            let sys = System::new(&tree, &gen, &term, measure.clone(), 1, opts, kind)?;
            Ok((sys.solve()?, uniqueness_gap(&sys)?))
        };
        checked += 1;
        match run() {
            Ok((s, gap)) => {
                let modulus = check.contraction.modulus;
                worst = worst.max(s.trace.max_ratio() / modulus);
                if !s.trace.converged || s.trace.iterations > 200 {
                    fails.push(format!("case {case}: not converged"));
                }
                if s.trace.max_ratio() > modulus * (1.0 + 1e-6) {
                    fails.push(format!("case {case}: ratio {} above modulus {modulus}", s.trace.max_ratio()));
                }
                if gap >= 1e-9 {
                    fails.push(format!("case {case}: initialisations differ by {gap:e}"));
                }
            }
            Err(e) => fails.push(format!("case {case}: {e}")),
        }
    }
    if checked == 0 {
        fails.push("no configuration satisfied the standard-data check".into());
    }
    Check::new("picard-contraction", &fails, format!("{checked} configurations, worst ratio/modulus {worst:.3e}"))
}

fn binary(steps: usize, var: f64) -> DriverModel {
    DriverModel::homogeneous(steps, 1.0, IncrementLaw::rademacher(var.sqrt()), IncrementLaw::point_mass_zero(0)).expect("valid driver")
}

/// `E[xi | F_k]` summed over the leaves below each node.
fn leaf_cond_exp(tree: &ScenarioTree, xi: &[f64], k: usize) -> Vec<f64> {
    let big_k = tree.steps();
    let kp = tree.node_probs(k);
    let mut out = vec![0.0; tree.width(k)];
    for (leaf, p) in tree.node_probs(big_k).iter().enumerate() {
        out[tree.ancestor(big_k, leaf, k)] += p * xi[leaf];
    }
    out.iter().zip(&kp).map(|(v, q)| v / q).collect()
}

/// Zero, constant and mean-interaction generators against closed forms.
pub fn closed_forms(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let mut run = || -> chaoslab_core::Result<()> {
        for case in 0..cases {
            let steps = 1 + case % 3;
            let model = random_model(&mut rng, steps, 1, case % 2, 0.6);
            let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET)?;
            let xi: Vec<f64> = (0..tree.width(steps)).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = solve_standard(&tree, &xi, 1, &GeneratorSpec::zero(), SolverOptions::with_beta(1.0))?;
            for k in 0..steps {
                let want = leaf_cond_exp(&tree, &xi, k);
                if !s.solutions[0].y[k].iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-13) {
                    fails.push(format!("case {case}: zero generator at depth {k}"));
                }
            }
            let kappa = rng.gen_range(-3.0..3.0);
            let s = solve_standard(&tree, &xi, 1, &GeneratorSpec::constant(kappa), SolverOptions::with_beta(1.0))?;
            let want = want_mean(&tree, &xi) + kappa * model.total_compensator();
            if (s.y0[0][0] - want).abs() > 1e-12 {
                fails.push(format!("case {case}: constant generator {} vs {want}", s.y0[0][0]));
            }
        }
        let tree = build_tree(&binary(2, 0.5), 1, 2, DEFAULT_NODE_BUDGET)?;
        let s = solve_mckean_vlasov(&tree, &[1.0; 4], 1, &GeneratorSpec::mean(1.0), SolverOptions::with_beta(1.0))?;
        if (s.y0[0][0] - 2.25).abs() > 1e-12 {
            fails.push(format!("mean interaction: Y0 = {}", s.y0[0][0]));
        }
        Ok(())
    };
    if let Err(e) = run() {
        fails.push(format!("error: {e}"));
    }
    Check::new("closed-forms", &fails, format!("{cases} random trees plus the mean-interaction example"))
}

fn want_mean(tree: &ScenarioTree, xi: &[f64]) -> f64 {
    tree.node_probs(tree.steps()).iter().zip(xi).map(|(p, x)| p * x).sum()
}

pub fn conservation(cfg: &ChaosConfig, ns: &[usize]) -> Check {
    let run = || -> chaoslab_core::Result<Check> {
        let mut fails = Vec::new();
        let mut worst = 0.0f64;
        for &n in ns {
            let r = conservation_check(cfg, n, None)?;
            worst = worst.max(r.max_diff);
            if !r.holds || r.max_diff > 1e-10 {
                fails.push(format!("N = {n}: {:e}", r.max_diff));
            }
        }
        Ok(Check::new("conservation", &fails, format!("N in {ns:?}, worst {worst:.2e}")))
    };
    Check::from_result("conservation", run())
}

pub fn chaos_gaps(cfg: &ChaosConfig, ns: &[usize]) -> Check {
    let run = || -> chaoslab_core::Result<Check> {
        let r = run_system_gap(cfg, ns)?;
        let mut fails = Vec::new();
        for w in r.rows.windows(2) {
            if w[1].avg_gap > w[0].avg_gap {
                fails.push(format!("gap({}) = {:e} > gap({}) = {:e}", w[1].n, w[1].avg_gap, w[0].n, w[0].avg_gap));
            }
        }
        let (first, last) = (&r.rows[0], &r.rows[r.rows.len() - 1]);
        if r.rows.len() > 1 && last.avg_gap >= first.avg_gap {
            fails.push(format!("gap({}) not below gap({})", last.n, first.n));
        }
        let gaps: Vec<String> = r.rows.iter().map(|g| format!("{}: {:.4e}", g.n, g.avg_gap)).collect();
        Ok(Check::new("propagation-of-chaos", &fails, gaps.join(", ")))
    };
    Check::from_result("propagation-of-chaos", run())
}

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

fn random_discrete(rng: &mut ChaCha8Rng, dim: usize, max_atoms: usize) -> DiscreteLaw {
    let m = rng.gen_range(1..=max_atoms);
    let atoms: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let mut w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let head: f64 = w[..m - 1].iter().sum();
    w[m - 1] = 1.0 - head;
    DiscreteLaw::new(dim, atoms, w).expect("valid law")
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| if rng.gen_bool(0.2) { rng.gen_range(0..3) as f64 } else { rng.gen_range(-2.0..2.0) }).collect()).collect()
}

/// Simplex against the quantile formula, assignment against brute force, the
/// empirical coupling bound and the triangle inequality.
pub fn wasserstein(pairs: usize, brute: usize, couplings: usize, triples: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let mut run = || -> chaoslab_core::Result<()> {
        for case in 0..pairs {
            let (p, q) = (random_discrete(&mut rng, 1, 9), random_discrete(&mut rng, 1, 9));
            let (a, b) = (w2_discrete(&p, &q, Metric::Euclid)?, w2_1d(&p, &q)?);
            if (a * a - b * b).abs() > 1e-10 {
                fails.push(format!("1-d pair {case}: {a} vs {b}"));
            }
        }
        for case in 0..brute {
            let n = 1 + case % 6;
            let (xs, ys) = (random_points(&mut rng, n, 2), random_points(&mut rng, n, 2));
            for metric in [Metric::Euclid, Metric::TruncatedSup { state_dim: 1 }] {
                let want = permutations(n)
                    .into_iter()
                    .map(|s| (0..n).map(|i| metric.dist(&xs[i], &ys[s[i]]).powi(2)).sum::<f64>() / n as f64)
                    .fold(f64::INFINITY, f64::min)
                    .sqrt();
                let got = w2_empirical_equal(&xs, &ys, metric)?;
                if (got - want).abs() > 1e-10 {
                    fails.push(format!("assignment {case}: {got} vs {want}"));
                }
            }
        }
        for case in 0..couplings {
            let n = rng.gen_range(1..=8);
            let (xs, ys) = (random_points(&mut rng, n, 2), random_points(&mut rng, n, 2));
            if !empirical_coupling_bound_check(&xs, &ys, Metric::Euclid)? {
                fails.push(format!("coupling {case}"));
            }
        }
        for case in 0..triples {
            let (p, q, r) = (random_discrete(&mut rng, 2, 6), random_discrete(&mut rng, 2, 6), random_discrete(&mut rng, 2, 6));
            let metric = if case % 2 == 0 { Metric::Euclid } else { Metric::TruncatedSup { state_dim: 2 } };
            let (pq, qr, pr) = (w2_discrete(&p, &q, metric)?, w2_discrete(&q, &r, metric)?, w2_discrete(&p, &r, metric)?);
            if pr > pq + qr + 1e-10 {
                fails.push(format!("triangle {case}: {pr} > {pq} + {qr}"));
            }
        }
        Ok(())
    };
    if let Err(e) = run() {
        fails.push(format!("error: {e}"));
    }
    Check::new("wasserstein", &fails, format!("{pairs} 1-d pairs, {brute} brute-force sets, {couplings} couplings, {triples} triples"))
}

/// Sampled empirical-measure rate at `t_1` of the limit solution.
pub fn rates(cfg: &ChaosConfig, ns: &[usize], q: f64, seed: u64) -> Check {
    let run = || -> chaoslab_core::Result<Check> {
        let lim = solve_limit(cfg)?;
        let r = rate_experiment(&lim.solution, &lim.tree, 1, ns, q, seed)?;
        let mut fails = Vec::new();
        let slope = r.slope.unwrap_or(f64::NAN);
        if !(slope <= -0.4) {
            fails.push(format!("slope {slope}"));
        }
        match r.envelope_c {
            Some(c) if c.is_finite() => {
                for row in &r.rows {
                    if row.mean > c * envelope(row.n as f64, cfg.d, q)? * (1.0 + 1e-12) {
                        fails.push(format!("N = {} above the envelope", row.n));
                    }
                }
            }
            _ => fails.push("no finite envelope constant".into()),
        }
        Ok(Check::new("rates", &fails, format!("slope {slope:.3}, C {:.3e}", r.envelope_c.unwrap_or(f64::NAN))))
    };
    Check::from_result("rates", run())
}

/// Exact `Lambda_{q,T}` on a deterministic solution and dominance of
/// `||alpha Y||^2` on random mean-interaction instances.
pub fn lambda(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let mut run = || -> chaoslab_core::Result<()> {
        let model = binary(2, 0.5);
        let tree = build_tree(&model, 1, 2, DEFAULT_NODE_BUDGET)?;
        let gen = GeneratorSpec::mean(1.0);
        let s = solve_mckean_vlasov(&tree, &[1.0; 4], 1, &gen, SolverOptions::with_beta(1.0))?;
        let w = lipschitz_to_a(&gen.lipschitz(2, 1), &model)?;
        let beta = 3.0;
        let l = lambda_qt(&s.solutions[0], &tree, &w.a, beta, 6.0)?;
        let da = w.a.jumps();
        let want = da[0] * 1.5 * 1.5 + (1.0 + beta * da[0]) * da[1];
        if (l.lambda - want).abs() > 1e-12 {
            fails.push(format!("deterministic: {} vs {want}", l.lambda));
        }
        for case in 0..cases {
            let steps = 1 + case % 3;
            let model = random_model(&mut rng, steps, 1, 1, 0.3);
            let tree = build_tree(&model, 1, steps, DEFAULT_NODE_BUDGET)?;
            let xi: Vec<f64> = (0..tree.width(steps)).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let gen = GeneratorSpec::mean(rng.gen_range(-1.0..1.0));
            let s = solve_mckean_vlasov(&tree, &xi, 1, &gen, SolverOptions::with_beta(50.0))?;
            let w = lipschitz_to_a(&gen.lipschitz(steps, 1), &model)?;
            let q = rng.gen_range(2.5..8.0);
            let l = lambda_qt(&s.solutions[0], &tree, &w.a, 50.0, q)?;
            if !l.dominates() {
                fails.push(format!("case {case}: {} > {}", l.alpha_y, l.lambda));
            }
        }
        Ok(())
    };
    if let Err(e) = run() {
        fails.push(format!("error: {e}"));
    }
    Check::new("lambda-qt", &fails, format!("exact example plus {cases} dominance instances"))
}
