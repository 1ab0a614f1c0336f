//! Propagation-of-chaos experiments: exact gaps between mean-field particle
//! systems and the McKean-Vlasov limit on joint trees, conservation checks,
//! and sampled empirical-measure rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{norm_sq, DriverModel, IncrementLaw};
use crate::error::{Error, Result};
use crate::fvcalc::{contraction_condition, suggest_beta, FVPath, TheoremId};
use crate::generator::{GeneratorSpec, Mode};
use crate::scenario::{build_tree, law_at, BsdeSolution, NormWeights, ScenarioTree, DEFAULT_NODE_BUDGET};
use crate::solver::{MeasureSource, ProblemKind, Solved, SolverOptions, System, Terminal};
use crate::transport::{w2_discrete, DiscreteLaw, Metric};

/// Terminal map `phi` applied to a particle's own driver path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerminalFamily {
    /// `phi = scale * sum_k dX^o_k`, coordinate `r` reading driver coordinate `r mod p`.
    OwnSum { scale: f64 },
    /// The same constant for every particle.
    Constant { value: f64 },
    /// Independent uniform values in `[-scale, scale]` on every own path.
    Random { seed: u64, scale: f64 },
}

/// Size of the terminal perturbation `xi^{i,N} = xi^i + eps(N) psi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsFamily {
    Zero,
    InvN,
    InvSqrtN,
}

impl EpsFamily {
    pub fn value(self, n: usize) -> f64 {
        match self {
            EpsFamily::Zero => 0.0,
            EpsFamily::InvN => 1.0 / n as f64,
            EpsFamily::InvSqrtN => 1.0 / (n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChaosConfig {
    pub model: DriverModel,
    pub generator: GeneratorSpec,
    pub terminal: TerminalFamily,
    pub eps: EpsFamily,
    pub beta_hat: f64,
    pub d: usize,
    pub left_limit: bool,
    pub budget: u128,
}

impl ChaosConfig {
    /// Binary diffusion with `sigma = 0.05`, two steps, no jumps, mean
    /// interaction and `xi^i = 20 * (own driver sum)`.
    pub fn standard() -> Self {
        let model = DriverModel::homogeneous(2, 1.0, IncrementLaw::rademacher(0.05), IncrementLaw::point_mass_zero(0))
            .expect("valid driver");
        let mut cfg = Self {
            model,
            generator: GeneratorSpec::mean(1.0),
            terminal: TerminalFamily::OwnSum { scale: 20.0 },
            eps: EpsFamily::Zero,
            beta_hat: 1.0,
            d: 1,
            left_limit: false,
            budget: DEFAULT_NODE_BUDGET,
        };
        cfg.beta_hat = cfg.suggested_beta().expect("contraction attainable");
        cfg
    }

    pub fn theorem(&self) -> TheoremId {
        match self.generator.mode {
            Mode::Instant => TheoremId::ChaosPc8,
            Mode::Path => TheoremId::ChaosPc9,
        }
    }

    /// Smallest grid value of `beta_hat` for which the chaos contraction holds.
    pub fn suggested_beta(&self) -> Option<f64> {
        let w = crate::driver::lipschitz_to_a(&self.generator.lipschitz(self.model.steps(), self.d), &self.model).ok()?;
        suggest_beta(self.theorem(), w.phi, |b| w.lambda_beta(b))
    }

    fn options(&self) -> SolverOptions {
        SolverOptions { left_limit: self.left_limit, ..SolverOptions::with_beta(self.beta_hat) }
    }

    /// `phi` tabulated on the leaves of the single-particle tree.
    pub fn phi_table(&self, tree1: &ScenarioTree) -> Result<Vec<f64>> {
        let d = self.d;
        let t = match &self.terminal {
            TerminalFamily::OwnSum { scale } => {
                let p = self.model.p();
                let model = &self.model;
                Terminal::own_from_paths(tree1, d, 0.0, |path| {
                    (0..d)
                        .map(|r| {
                            if p == 0 {
                                return 0.0;
                            }
                            let total: f64 = path
                                .iter()
                                .enumerate()
                                .map(|(k, &o)| {
                                    let (a, _, _) = tree1.step_branching(k + 1).outcomes[o];
                                    model.step(k + 1).diff.atom(a)[r % p]
                                })
                                .sum();
                            scale * total
                        })
                        .collect()
                })?
            }
            TerminalFamily::Constant { value } => Terminal::own_from_paths(tree1, d, 0.0, |_| vec![*value; d])?,
            TerminalFamily::Random { seed, scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let leaves = tree1.width(tree1.steps());
                let v: Vec<f64> = (0..leaves * d).map(|_| rng.gen_range(-*scale..=*scale)).collect();
                Terminal::Own { phi: v, eps: 0.0 }
            }
        };
        match t {
            Terminal::Own { phi, .. } => Ok(phi),
            Terminal::Table(v) => Ok(v),
        }
    }
}

/// Solved McKean-Vlasov limit on the single-particle tree.
pub struct Limit {
    pub tree: ScenarioTree,
    pub phi: Vec<f64>,
    pub solved: Solved,
    pub solution: BsdeSolution,
}

/// Solves the limit equation of a configuration.
pub fn solve_limit(cfg: &ChaosConfig) -> Result<Limit> {
    let tree = build_tree(&cfg.model, 1, cfg.model.steps(), cfg.budget)?;
    let phi = cfg.phi_table(&tree)?;
    let terminal = Terminal::Table(phi.clone());
    let solved = {
        let sys =
            System::new(&tree, &cfg.generator, &terminal, MeasureSource::LawOfIterate, cfg.d, cfg.options(), ProblemKind::McKeanVlasov)?;
        sys.solve()?
    };
    let solution = solved
        .solutions
        .first()
        .cloned()
        .ok_or_else(|| Error::InvalidInput("limit tree too large to materialise".into()))?;
    Ok(Limit { tree, phi, solved, solution })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    /// `(1/N) sum_i ||(Y^{i,N} - Y^i, ...)||^2_star`.
    pub avg_gap: f64,
    /// Gap of the tracked particle.
    pub particle_gap: f64,
    /// `max_k E[W_2^2(L^N(Y^N_{t_k}), L(Y_{t_k}))]` over interior grid times.
    pub sup_w2_sq: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosReport {
    pub rows: Vec<GapRow>,
    pub particle: usize,
    pub beta_hat: f64,
    pub modulus: f64,
    /// Least-squares slope of `log(avg_gap)` against `log(N)`.
    pub slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x` over positive points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn gap_rows(cfg: &ChaosConfig, ns: &[usize], particle: usize) -> Result<ChaosReport> {
    let limit = solve_limit(cfg)?;
    let k_max = cfg.model.steps();
    let laws: Vec<DiscreteLaw> =
        (0..k_max).map(|k| law_at(&limit.tree, &limit.solution.y[k], cfg.d, k)).collect::<Result<_>>()?;
    let contraction = contraction_condition(cfg.theorem(), cfg.beta_hat, limit.solved.trace.contraction.phi, limit.solved.trace.contraction.lambda_beta)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        if particle >= n {
            return Err(Error::InvalidInput(format!("particle {particle} out of range for N = {n}")));
        }
        let tree = build_tree(&cfg.model, n, k_max, cfg.budget)?;
        let terminal = Terminal::Own { phi: limit.phi.clone(), eps: cfg.eps.value(n) };
        let mut opts = cfg.options();
        opts.materialize_limit = 0;
        opts.solution_norms = false;
        let sys = System::new(&tree, &cfg.generator, &terminal, MeasureSource::Empirical, cfg.d, opts, ProblemKind::MeanField)?;
        let solved = sys.solve()?;
        let gaps: Vec<f64> = sys.gap_to_own(&solved, &limit.solution).iter().map(|r| r.star()).collect();
        let avg_gap = gaps.iter().sum::<f64>() / n as f64;
        let mut sup_w2_sq = 0.0f64;
        for (k, law) in laws.iter().enumerate() {
            sup_w2_sq = sup_w2_sq.max(expected_w2_sq(&tree, solved.node_values(k), cfg.d, k, law)?);
        }
        rows.push(GapRow { n, avg_gap, particle_gap: gaps[particle], sup_w2_sq, iterations: solved.trace.iterations });
    }
    let slope = loglog_slope(&rows.iter().map(|r| (r.n as f64, r.avg_gap)).collect::<Vec<_>>());
    Ok(ChaosReport { rows, particle, beta_hat: cfg.beta_hat, modulus: contraction.modulus, slope })
}

/// Exact averaged gaps between each mean-field system and the limit.
pub fn run_system_gap(cfg: &ChaosConfig, ns: &[usize]) -> Result<ChaosReport> {
    gap_rows(cfg, ns, 0)
}

/// As [`run_system_gap`], tracking particle `i`.
pub fn run_particle_gap(cfg: &ChaosConfig, i: usize, ns: &[usize]) -> Result<ChaosReport> {
    gap_rows(cfg, ns, i)
}

/// `E[W_2^2(empirical particle measure at a depth-k node, law)]` over the joint tree.
fn expected_w2_sq(tree: &ScenarioTree, values: &[f64], d: usize, k: usize, law: &DiscreteLaw) -> Result<f64> {
    let n = tree.particles();
    let probs = tree.node_probs(k);
    let parts: Vec<Result<f64>> = probs
        .par_iter()
        .enumerate()
        .map(|(idx, p)| {
            let emp = DiscreteLaw::empirical(d, &values[idx * n * d..(idx + 1) * n * d])?;
            Ok(p * w2_discrete(&emp, law, Metric::Euclid)?.powi(2))
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cor64Row {
    pub n: usize,
    pub k: usize,
    pub value: f64,
}

/// `E[W_2^2(L^N(Y^N_{t_k}), L(Y_{t_k}))]` computed exactly on joint trees, for
/// interior grid indices `k < K`.
pub fn cor64_check(cfg: &ChaosConfig, ns: &[usize], k: usize) -> Result<Vec<Cor64Row>> {
    let k_max = cfg.model.steps();
    if k >= k_max {
        return Err(Error::InvalidInput(format!("grid index {k} must be below {k_max}")));
    }
    let limit = solve_limit(cfg)?;
    let law = law_at(&limit.tree, &limit.solution.y[k], cfg.d, k)?;
    let mut rows = Vec::new();
    for &n in ns {
        let tree = build_tree(&cfg.model, n, k_max, cfg.budget)?;
        let terminal = Terminal::Own { phi: limit.phi.clone(), eps: cfg.eps.value(n) };
        let mut opts = cfg.options();
        opts.materialize_limit = 0;
        opts.solution_norms = false;
        let sys = System::new(&tree, &cfg.generator, &terminal, MeasureSource::Empirical, cfg.d, opts, ProblemKind::MeanField)?;
        let solved = sys.solve()?;
        rows.push(Cor64Row { n, k, value: expected_w2_sq(&tree, solved.node_values(k), cfg.d, k, &law)? });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub n: usize,
    /// Largest nodewise difference over `(Y, Z, U, U^, dM)` and all particles.
    pub max_diff: f64,
    pub holds: bool,
}

/// Compares the limit solution with each particle of the joint-space
/// McKean-Vlasov system whose measure argument is frozen at the limit law.
/// `corrupt` shifts the joint solution, as a negative control.
pub fn conservation_check(cfg: &ChaosConfig, n: usize, corrupt: Option<f64>) -> Result<ConservationReport> {
    let mut cfg = cfg.clone();
    cfg.eps = EpsFamily::Zero;
    let mut opts = cfg.options();
    opts.tol = 1e-13;
    let tree1 = build_tree(&cfg.model, 1, cfg.model.steps(), cfg.budget)?;
    let phi = cfg.phi_table(&tree1)?;
    let t1 = Terminal::Table(phi.clone());
    let sys1 = System::new(&tree1, &cfg.generator, &t1, MeasureSource::LawOfIterate, cfg.d, opts.clone(), ProblemKind::McKeanVlasov)?;
    let mv = sys1.solve()?;
    let mv_sol = mv.solutions.first().ok_or_else(|| Error::InvalidInput("limit tree too large".into()))?;
    let frozen = sys1.law_values_of(mv_sol);
    let tree = build_tree(&cfg.model, n, cfg.model.steps(), cfg.budget)?;
    let terminal = Terminal::Own { phi, eps: 0.0 };
    let mut sys = System::new(&tree, &cfg.generator, &terminal, MeasureSource::Fixed(frozen), cfg.d, opts, ProblemKind::McKeanVlasov)?;
    sys.corrupt = corrupt;
    let joint = sys.solve()?;
    if joint.solutions.len() != n {
        return Err(Error::InvalidInput("joint tree too large to materialise".into()));
    }
    let mut max_diff = 0.0f64;
    for (i, sol) in joint.solutions.iter().enumerate() {
        max_diff = max_diff.max(own_path_distance(&tree, sol, mv_sol, i));
    }
    Ok(ConservationReport { n, max_diff, holds: max_diff <= 1e-10 })
}

/// Sup-distance between a joint-tree solution of particle `i` and a
/// single-particle solution read along particle `i`'s own path.
pub fn own_path_distance(tree: &ScenarioTree, joint: &BsdeSolution, single: &BsdeSolution, i: usize) -> f64 {
    let d = joint.d;
    let p = joint.p;
    let mut worst = 0.0f64;
    let mut cmp = |a: &[f64], b: &[f64]| {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    };
    for k in 0..=tree.steps() {
        for idx in 0..tree.width(k) {
            let o = tree.own_index(k, idx, i);
            cmp(&joint.y[k][idx * d..(idx + 1) * d], &single.y[k][o * d..(o + 1) * d]);
            if k < tree.steps() {
                let atoms = tree.step_law(k + 1).jump.len();
                cmp(&joint.z[k][idx * d * p..(idx + 1) * d * p], &single.z[k][o * d * p..(o + 1) * d * p]);
                cmp(&joint.u[k][idx * atoms * d..(idx + 1) * atoms * d], &single.u[k][o * atoms * d..(o + 1) * atoms * d]);
                cmp(&joint.uhat[k][idx * d..(idx + 1) * d], &single.uhat[k][o * d..(o + 1) * d]);
            }
            if k > 0 {
                cmp(&joint.dm[k - 1][idx * d..(idx + 1) * d], &single.dm[k - 1][o * d..(o + 1) * d]);
            }
        }
    }
    worst
}

/// Key for the generator of cell `(seed, n, rep)`.
fn cell_rng(seed: u64, n: u64, rep: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&n.to_le_bytes());
    key[16..24].copy_from_slice(&rep.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn sample_with(sol: &BsdeSolution, tree: &ScenarioTree, k: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = sol.d;
    (0..n)
        .map(|_| {
            let mut node = 0;
            for step in 1..=k {
                let probs = &tree.step_branching(step).joint_prob;
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (c, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                node = node * probs.len() + pick;
            }
            sol.y[k][node * d..(node + 1) * d].to_vec()
        })
        .collect()
}

/// `n` independent draws of `Y_{t_k}` from a single-particle solution.
pub fn sample_mv_values(sol: &BsdeSolution, tree: &ScenarioTree, k: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(sol, tree, k, n, &mut rng)
}

/// Rate envelope for `E[W_2^2(L^N, L)]` with unit constant.
pub fn envelope(n: f64, d: usize, q: f64) -> Result<f64> {
    if q <= 2.0 {
        return Err(Error::QTooSmall(q));
    }
    if d <= 4 && q == 4.0 {
        return Err(Error::InvalidInput("the envelope excludes q = 4 for d <= 4".into()));
    }
    let tail = n.powf(-(q - 2.0) / q);
    Ok(match d {
        0..=3 => n.powf(-0.5) + tail,
        4 => n.powf(-0.5) * (1.0 + n).ln() + tail,
        _ => n.powf(-2.0 / d as f64) + tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub k: usize,
    pub q: f64,
    pub rows: Vec<RateRow>,
    /// Slope over all but the smallest `N`; `None` when degenerate.
    pub slope: Option<f64>,
    /// Smallest `C` with `mean <= C * envelope(N)` at every `N`.
    pub envelope_c: Option<f64>,
    pub degenerate: bool,
}

const REP_BATCH: usize = 8;
const MAX_REPS: usize = 64;

/// Sampled `E[W_2^2(L^N(Y~_{t_k}), L(Y_{t_k}))]` over `ns`, with replications
/// added until the standard error drops below 5% of the mean.
pub fn rate_experiment(sol: &BsdeSolution, tree: &ScenarioTree, k: usize, ns: &[usize], q: f64, seed: u64) -> Result<RateReport> {
    if q <= 2.0 {
        return Err(Error::QTooSmall(q));
    }
    let d = sol.d;
    let exact = law_at(tree, &sol.y[k], d, k)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut values: Vec<f64> = Vec::new();
        loop {
            let start = values.len();
            let batch: Vec<Result<f64>> = (start..start + REP_BATCH)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = cell_rng(seed, n as u64, rep as u64);
                    let pts = sample_with(sol, tree, k, n, &mut rng);
                    let emp = DiscreteLaw::empirical(d, &pts.concat())?;
                    Ok(w2_discrete(&emp, &exact, Metric::Euclid)?.powi(2))
                })
                .collect();
            for v in batch {
                values.push(v?);
            }
            let (mean, se) = mean_stderr(&values);
            if mean == 0.0 || se < 0.05 * mean || values.len() >= MAX_REPS {
                rows.push(RateRow { n, mean, stderr: se, reps: values.len() });
                break;
            }
        }
    }
    let degenerate = rows.iter().any(|r| r.mean == 0.0);
    let mut sorted = rows.clone();
    sorted.sort_by_key(|r| r.n);
    let fit: Vec<(f64, f64)> = sorted.iter().skip(1).map(|r| (r.n as f64, r.mean)).collect();
    let slope = if degenerate { None } else { loglog_slope(&fit) };
    let mut c = 0.0f64;
    for r in &rows {
        c = c.max(r.mean / envelope(r.n as f64, d, q)?);
    }
    Ok(RateReport { k, q, rows, slope, envelope_c: (!degenerate).then_some(c), degenerate })
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaQt {
    pub lambda: f64,
    /// `||alpha Y||^2` under the same weights.
    pub alpha_y: f64,
}

impl LambdaQt {
    pub fn dominates(&self) -> bool {
        self.alpha_y <= self.lambda * (1.0 + 1e-12) + 1e-15
    }
}

/// `(1/beta) int (E|Y_s|^q)^{2/q} dE(beta A)_s` on the grid, with the moments
/// taken under the exact node laws.
pub fn lambda_qt(sol: &BsdeSolution, tree: &ScenarioTree, a: &FVPath, beta_hat: f64, q: f64) -> Result<LambdaQt> {
    if q <= 2.0 {
        return Err(Error::QTooSmall(q));
    }
    let w = NormWeights::new(a, beta_hat)?;
    if w.steps() != tree.steps() {
        return Err(Error::SizeMismatch(w.steps(), tree.steps()));
    }
    let d = sol.d;
    let mut lambda = 0.0;
    let mut alpha_y = 0.0;
    for k in 1..=tree.steps() {
        let probs = tree.node_probs(k);
        let (mut mq, mut m2) = (0.0, 0.0);
        for (i, p) in probs.iter().enumerate() {
            let s = norm_sq(&sol.y[k][i * d..(i + 1) * d]);
            mq += p * s.powf(q / 2.0);
            m2 += p * s;
        }
        let weight = w.left[k] * w.da[k - 1];
        lambda += weight * mq.powf(2.0 / q);
        alpha_y += weight * m2;
    }
    Ok(LambdaQt { lambda, alpha_y })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRow {
    pub n: usize,
    pub avg_gap: f64,
    /// `(1/N) sum_i ||xi^{i,N} - xi^i||^2`.
    pub r_n: f64,
    pub bound: f64,
    pub holds: bool,
}

/// For a generator without measure argument, checks
/// `avg gap <= (26 + 2/b + (9b + 2) Phi) / (1 - modulus) * R(N)`.
pub fn perturbation_check(cfg: &ChaosConfig, ns: &[usize]) -> Result<Vec<PerturbationRow>> {
    if cfg.generator.uses_measure() {
        return Err(Error::InvalidInput("perturbation bound needs a generator without measure argument".into()));
    }
    let report = run_system_gap(cfg, ns)?;
    let limit_tree = build_tree(&cfg.model, 1, cfg.model.steps(), cfg.budget)?;
    let phi = cfg.phi_table(&limit_tree)?;
    let w = crate::driver::lipschitz_to_a(&cfg.generator.lipschitz(cfg.model.steps(), cfg.d), &cfg.model)?;
    let contraction = contraction_condition(TheoremId::ChaosPc8, cfg.beta_hat, w.phi, None)?;
    let b = cfg.beta_hat;
    let factor = if contraction.modulus < 1.0 {
        (26.0 + 2.0 / b + (9.0 * b + 2.0) * w.phi) / (1.0 - contraction.modulus)
    } else {
        f64::INFINITY
    };
    let weights = NormWeights::new(&w.a, b)?;
    let k_max = cfg.model.steps();
    let mut rows = Vec::new();
    for row in report.rows {
        let n = row.n;
        let tree = build_tree(&cfg.model, n, k_max, cfg.budget)?;
        let with = Terminal::Own { phi: phi.clone(), eps: cfg.eps.value(n) };
        let without = Terminal::Own { phi: phi.clone(), eps: 0.0 };
        let bsz = tree.joint_branching(k_max);
        let d = cfg.d;
        let probs = tree.node_probs(k_max - 1);
        let mut total = 0.0;
        let (mut a, mut c) = (vec![0.0; bsz * n * d], vec![0.0; bsz * n * d]);
        for (idx, p) in probs.iter().enumerate() {
            with.fill_children(&tree, d, idx, &mut a);
            without.fill_children(&tree, d, idx, &mut c);
            for ch in 0..bsz {
                let pc = p * tree.child_prob(k_max, ch);
                let s: f64 = (0..n * d).map(|j| (a[ch * n * d + j] - c[ch * n * d + j]).powi(2)).sum();
                total += pc * s;
            }
        }
        let r_n = weights.left[k_max] * total / n as f64;
        let bound = factor * r_n;
        rows.push(PerturbationRow { n, avg_gap: row.avg_gap, r_n, bound, holds: row.avg_gap <= bound + 1e-15 });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_value() {
        assert!((envelope(100.0, 1, 6.0).unwrap() - 0.146_415_888_336_127_8).abs() < 1e-12);
        assert_eq!(envelope(10.0, 1, 2.0).unwrap_err(), Error::QTooSmall(2.0));
        assert!(envelope(10.0, 5, 4.0).is_ok());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(-0.5))).collect();
        assert!((loglog_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(1.0, 0.0), (2.0, 0.0)]), None);
    }

    #[test]
    fn standard_config_contracts() {
        let cfg = ChaosConfig::standard();
        let w = crate::driver::lipschitz_to_a(&cfg.generator.lipschitz(2, 1), &cfg.model).unwrap();
        let r = contraction_condition(TheoremId::ChaosPc8, cfg.beta_hat, w.phi, None).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn deterministic_draws() {
        let cfg = ChaosConfig::standard();
        let lim = solve_limit(&cfg).unwrap();
        let a = sample_mv_values(&lim.solution, &lim.tree, 2, 50, 9);
        assert_eq!(a, sample_mv_values(&lim.solution, &lim.tree, 2, 50, 9));
        assert_ne!(a, sample_mv_values(&lim.solution, &lim.tree, 2, 50, 10));
    }
}
