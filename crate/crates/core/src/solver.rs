//! Global Picard solvers for standard, McKean-Vlasov and mean-field BSDEs on
//! scenario trees, plus the a-priori estimate verifier and the standard-data
//! condition report.
//!
//! One sweep of the Picard map runs backwards over the tree. At a depth-`k`
//! node it forms, for every particle and child,
//! `G = Y_new(child) + f(previous iterate) dC`, and represents `G` against the
//! particle's own increments. Leaves are never stored; terminal values are
//! produced on the fly, so trees with millions of leaves fit in memory.

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::{lipschitz_to_a, norm_sq, validate_driver_orthogonality, DriverModel, WeightProcess};
use crate::error::{Error, Result};
use crate::fvcalc::{contraction_condition, lambda_gdp, ContractionReport, FVPath, TheoremId};
use crate::generator::{GeneratorSpec, Mode};
use crate::scenario::{
    assemble, integrand_part, norm_s2, zc_norm_sq, BsdeSolution, NormReport, NormWeights, OwnMoments, ScenarioTree,
};

/// Terminal condition of every particle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Terminal {
    /// Values on the leaves of the tree, indexed `(leaf * N + i) * d`.
    Table(Vec<f64>),
    /// `xi^i = phi(own path of i) + eps * (1/N) sum_j phi(own path of j)`, with
    /// `phi` tabulated on the leaves of the single-particle tree.
    Own { phi: Vec<f64>, eps: f64 },
}

impl Terminal {
    /// Tabulates `phi` over single-particle paths given as own-outcome sequences.
    pub fn own_from_paths(tree: &ScenarioTree, d: usize, eps: f64, phi: impl Fn(&[usize]) -> Vec<f64>) -> Result<Self> {
        let k = tree.steps();
        let sizes: Vec<usize> = (1..=k).map(|j| tree.own_branching(j)).collect();
        let leaves: usize = sizes.iter().product();
        let mut table = Vec::with_capacity(leaves * d);
        let mut path = vec![0usize; k];
        for leaf in 0..leaves {
            let mut rest = leaf;
            for j in (0..k).rev() {
                path[j] = rest % sizes[j];
                rest /= sizes[j];
            }
            let v = phi(&path);
            if v.len() != d {
                return Err(Error::DimensionMismatch(v.len(), d));
            }
            table.extend(v);
        }
        Ok(Terminal::Own { phi: table, eps })
    }

    fn validate(&self, tree: &ScenarioTree, d: usize) -> Result<()> {
        let k = tree.steps();
        let expected = match self {
            Terminal::Table(_) => tree.width(k) * tree.particles() * d,
            Terminal::Own { .. } => (1..=k).map(|j| tree.own_branching(j)).product::<usize>() * d,
        };
        let got = match self {
            Terminal::Table(v) => v.len(),
            Terminal::Own { phi, .. } => phi.len(),
        };
        if got != expected {
            return Err(Error::SizeMismatch(got, expected));
        }
        Ok(())
    }

    /// Fills `out[(c * N + i) * d ..]` for the children of depth-`K-1` node `idx`.
    pub(crate) fn fill_children(&self, tree: &ScenarioTree, d: usize, idx: usize, out: &mut [f64]) {
        let k = tree.steps();
        let n = tree.particles();
        let b_joint = tree.joint_branching(k);
        match self {
            Terminal::Table(v) => {
                let start = idx * b_joint * n * d;
                out.copy_from_slice(&v[start..start + b_joint * n * d]);
            }
            Terminal::Own { phi, eps } => {
                let b = tree.own_branching(k);
                let base: Vec<usize> = (0..n).map(|i| tree.own_index(k - 1, idx, i) * b).collect();
                let mut digits = vec![0usize; n];
                let mut sorted = vec![0.0; n];
                for c in 0..b_joint {
                    for i in 0..n {
                        let leaf = base[i] + digits[i];
                        out[(c * n + i) * d..(c * n + i + 1) * d].copy_from_slice(&phi[leaf * d..(leaf + 1) * d]);
                    }
                    if *eps != 0.0 {
                        for r in 0..d {
                            for i in 0..n {
                                sorted[i] = out[(c * n + i) * d + r];
                            }
                            let psi = sorted_mean(&mut sorted);
                            for i in 0..n {
                                out[(c * n + i) * d + r] += eps * psi;
                            }
                        }
                    }
                    odometer(&mut digits, b);
                }
            }
        }
    }
}

fn odometer(digits: &mut [usize], base: usize) {
    for x in digits.iter_mut() {
        *x += 1;
        if *x < base {
            return;
        }
        *x = 0;
    }
}

/// Mean computed after sorting, so it does not depend on the order of inputs.
fn sorted_mean(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v.iter().sum::<f64>() / v.len() as f64
}

/// Where the generator's measure argument comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MeasureSource {
    None,
    /// Empirical measure of the `N` particle values at the current node.
    Empirical,
    /// Exact law of the previous iterate (single-particle trees only).
    LawOfIterate,
    /// Fixed functional values per depth `0..=K`.
    Fixed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Init {
    /// The zero quadruple, including `Y_T = 0`.
    Zero,
    /// `Y_t = E[xi | F_t]` with its martingale representation.
    Propagated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProblemKind {
    Standard,
    McKeanVlasov,
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions {
    pub beta_hat: f64,
    /// Stop once the contracted norm of successive differences is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Evaluate `f` at `Y_{t_k}` (left limits) rather than `Y_{t_{k+1}}`.
    pub left_limit: bool,
    pub init: Init,
    /// Materialise full solutions when `leaves * N * d` stays below this.
    pub materialize_limit: usize,
    /// Compute the norms of the final solution (one extra sweep when the
    /// solution is not materialised).
    pub solution_norms: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { beta_hat: 1.0, tol: 1e-10, max_iter: 200, left_limit: false, init: Init::Zero, materialize_limit: 4_000_000, solution_norms: true }
    }
}

impl SolverOptions {
    pub fn with_beta(beta_hat: f64) -> Self {
        Self { beta_hat, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardTrace {
    /// Squared contracted norm of `x^m - x^{m-1}`, `m = 1, 2, ...`.
    pub diffs: Vec<f64>,
    /// `diffs[m] / diffs[m-1]`.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub contraction: ContractionReport,
    pub warning: Option<String>,
}

impl PicardTrace {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Zero,
    Propagated,
    Picard,
}

/// Values of one Picard iterate on depths `0..K-1`, indexed `(idx * N + i)`.
#[derive(Debug, Clone)]
pub struct Iterate {
    terminal: bool,
    origin: Origin,
    y: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    uhat: Vec<Vec<f64>>,
    psum: Vec<Vec<f64>>,
    psup: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum MeasureVals {
    None,
    Empirical,
    PerDepth(Vec<Vec<f64>>),
}

struct Src<'a> {
    it: &'a Iterate,
    meas: &'a MeasureVals,
}

enum Reference<'a> {
    Zero,
    Iterate { it: &'a Iterate, src: Option<Src<'a>> },
    Own(&'a BsdeSolution),
}

struct NodeOut {
    y: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    uhat: Vec<f64>,
    acc: Vec<[f64; 3]>,
    g: Option<Vec<f64>>,
    dm: Option<Vec<f64>>,
}

struct SweepOut {
    it: Iterate,
    /// Per particle `(z, u, m)` parts of the difference norm.
    acc: Vec<[f64; 3]>,
    g: Option<Vec<Vec<f64>>>,
    dm: Option<Vec<Vec<f64>>>,
}

/// A fully specified BSDE system on a tree.
pub struct System<'a> {
    pub tree: &'a ScenarioTree,
    pub gen: &'a GeneratorSpec,
    pub terminal: &'a Terminal,
    pub measure: MeasureSource,
    pub d: usize,
    pub opts: SolverOptions,
    pub kind: ProblemKind,
    pub weight: WeightProcess,
    pub weights: NormWeights,
    theta: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    /// Hook that perturbs the materialised solution, for negative controls.
    pub corrupt: Option<f64>,
}

/// Outcome of a Picard solve.
#[derive(Debug, Clone)]
pub struct Solved {
    /// One materialised solution per particle, when the tree is small enough.
    pub solutions: Vec<BsdeSolution>,
    pub y0: Vec<Vec<f64>>,
    /// Norms of each particle's solution under `beta_hat`.
    pub norms: Vec<NormReport>,
    pub trace: PicardTrace,
    last: Iterate,
    src: Iterate,
    src_meas: MeasureVals,
}

impl Solved {
    /// Final iterate at depth `k < K`, indexed `(idx * N + i) * d`.
    pub fn node_values(&self, k: usize) -> &[f64] {
        &self.last.y[k]
    }
}

impl<'a> System<'a> {
    pub fn new(
        tree: &'a ScenarioTree,
        gen: &'a GeneratorSpec,
        terminal: &'a Terminal,
        measure: MeasureSource,
        d: usize,
        opts: SolverOptions,
        kind: ProblemKind,
    ) -> Result<Self> {
        let model = tree.model();
        if tree.steps() != model.steps() {
            return Err(Error::SizeMismatch(tree.steps(), model.steps()));
        }
        if d == 0 {
            return Err(Error::InvalidInput("state dimension must be positive".into()));
        }
        gen.validate(d)?;
        terminal.validate(tree, d)?;
        if !(opts.beta_hat > 0.0) {
            return Err(Error::InvalidInput(format!("beta_hat must be positive, got {}", opts.beta_hat)));
        }
        if let MeasureSource::LawOfIterate = measure {
            if tree.particles() != 1 {
                return Err(Error::InvalidInput("the law of the iterate needs a single-particle tree".into()));
            }
        }
        if let MeasureSource::Fixed(v) = &measure {
            if v.len() != tree.steps() + 1 {
                return Err(Error::SizeMismatch(v.len(), tree.steps() + 1));
            }
        }
        let weight = lipschitz_to_a(&gen.lipschitz(model.steps(), d), model)?;
        let weights = NormWeights::new(&weight.a, opts.beta_hat)?;
        let theta = model.theta_coordinate(gen.theta_coordinate)?;
        model.check_theta(&theta)?;
        let probs = (0..tree.steps()).map(|k| tree.node_probs(k)).collect();
        Ok(Self { tree, gen, terminal, measure, d, opts, kind, weight, weights, theta, probs, corrupt: None })
    }

    fn n(&self) -> usize {
        self.tree.particles()
    }

    fn k(&self) -> usize {
        self.tree.steps()
    }

    pub fn theorem(&self) -> TheoremId {
        match (self.kind, self.gen.mode) {
            (ProblemKind::MeanField, Mode::Instant) => TheoremId::InstantMf,
            (ProblemKind::MeanField, Mode::Path) => TheoremId::PathMf,
            (_, Mode::Instant) => TheoremId::InstantMv,
            (_, Mode::Path) => TheoremId::PathMv,
        }
    }

    pub fn contraction(&self) -> Result<ContractionReport> {
        contraction_condition(
            self.theorem(),
            self.opts.beta_hat,
            self.weight.phi,
            Some(self.weight.lambda_beta(self.opts.beta_hat)),
        )
    }

    fn materializable(&self) -> bool {
        self.tree.width(self.k()) * self.n() * self.d <= self.opts.materialize_limit
    }

    fn zero_iterate(&self) -> Iterate {
        let (n, d, p) = (self.n(), self.d, self.tree.model().p());
        let k = self.k();
        let atoms = |j: usize| self.tree.step_law(j + 1).jump.len();
        let w = |j: usize| self.tree.width(j) * n;
        Iterate {
            terminal: false,
            origin: Origin::Zero,
            y: (0..k).map(|j| vec![0.0; w(j) * d]).collect(),
            z: (0..k).map(|j| vec![0.0; w(j) * d * p]).collect(),
            u: (0..k).map(|j| vec![0.0; w(j) * atoms(j) * d]).collect(),
            uhat: (0..k).map(|j| vec![0.0; w(j) * d]).collect(),
            psum: (0..k).map(|j| vec![0.0; w(j) * d]).collect(),
            psup: (0..k).map(|j| vec![0.0; w(j)]).collect(),
        }
    }

    fn path_summaries(&self, it: &mut Iterate) {
        let (n, d) = (self.n(), self.d);
        for k in 0..self.k() {
            let width = self.tree.width(k);
            let mut psum = vec![0.0; width * n * d];
            let mut psup = vec![0.0; width * n];
            for idx in 0..width {
                let parent = if k == 0 { 0 } else { idx / self.tree.joint_branching(k) };
                for i in 0..n {
                    let at = idx * n + i;
                    let y = &it.y[k][at * d..(at + 1) * d];
                    let norm = norm_sq(y).sqrt();
                    let (ps, pm) = if k == 0 {
                        (vec![0.0; d], 0.0)
                    } else {
                        let pa = parent * n + i;
                        (it.psum[k - 1][pa * d..(pa + 1) * d].to_vec(), it.psup[k - 1][pa])
                    };
                    for r in 0..d {
                        psum[at * d + r] = ps[r] + y[r];
                    }
                    psup[at] = pm.max(norm);
                }
            }
            it.psum[k] = psum;
            it.psup[k] = psup;
        }
    }

    /// Probability of depth-`k` node `idx`.
    fn node_prob(&self, k: usize, idx: usize) -> f64 {
        self.probs[k][idx]
    }

    fn measure_vals(&self, it: &Iterate) -> MeasureVals {
        if !self.gen.uses_measure() {
            return MeasureVals::None;
        }
        match &self.measure {
            MeasureSource::None => MeasureVals::None,
            MeasureSource::Empirical => MeasureVals::Empirical,
            MeasureSource::Fixed(v) => MeasureVals::PerDepth(v.clone()),
            MeasureSource::LawOfIterate => MeasureVals::PerDepth(self.law_values(it)),
        }
    }

    /// Finished measure values of the law of a single-particle iterate at
    /// every depth, leaves included.
    fn law_values(&self, it: &Iterate) -> Vec<Vec<f64>> {
        let d = self.d;
        let k_max = self.k();
        let m = &self.gen.measure;
        let fd = m.feature_dim(d);
        let mut out = Vec::with_capacity(k_max + 1);
        let mut buf = vec![0.0; fd];
        for k in 0..k_max {
            let mut avg = vec![0.0; fd];
            for idx in 0..self.tree.width(k) {
                let y = &it.y[k][idx * d..(idx + 1) * d];
                let sup = self.state_sup(it.psup[k][idx], y, true);
                m.features(y, sup, &mut buf);
                let p = self.node_prob(k, idx);
                for (a, b) in avg.iter_mut().zip(&buf) {
                    *a += p * b;
                }
            }
            m.finish(&mut avg);
            out.push(avg);
        }
        let mut avg = vec![0.0; fd];
        let b = self.tree.joint_branching(k_max);
        let mut term = vec![0.0; b * d];
        let zeros = vec![0.0; d];
        for idx in 0..self.tree.width(k_max - 1) {
            if it.terminal {
                self.terminal.fill_children(self.tree, d, idx, &mut term);
            }
            let p = self.node_prob(k_max - 1, idx);
            for c in 0..b {
                let y = if it.terminal { &term[c * d..(c + 1) * d] } else { &zeros[..] };
                let sup = self.state_sup(it.psup[k_max - 1][idx], y, false);
                m.features(y, sup, &mut buf);
                let pc = p * self.tree.child_prob(k_max, c);
                for (a, v) in avg.iter_mut().zip(&buf) {
                    *a += pc * v;
                }
            }
        }
        m.finish(&mut avg);
        out.push(avg);
        out
    }

    /// Running supremum of `|y_s|` used by path functionals; `included` says
    /// whether `node_sup` already accounts for `y`.
    fn state_sup(&self, node_sup: f64, y: &[f64], included: bool) -> f64 {
        match self.gen.mode {
            Mode::Instant => norm_sq(y).sqrt(),
            Mode::Path if included => node_sup,
            Mode::Path => node_sup.max(norm_sq(y).sqrt()),
        }
    }

    /// Writes `f(src) dC` for every child and particle of node `(k, idx)` into
    /// `out[(c * N + i) * d ..]`. `child_y` returns the source iterate's value
    /// at a child.
    fn fill_f<'c>(&self, k: usize, idx: usize, src: &Src, child_y: &dyn Fn(usize, usize) -> &'c [f64], out: &mut [f64]) {
        let (n, d) = (self.n(), self.d);
        let step = k + 1;
        let law = self.tree.step_law(step);
        let p = law.p();
        let atoms = law.jump.len();
        let b = self.tree.joint_branching(step);
        let dc = law.dc;
        let it = src.it;
        // node-level arguments
        let mut zc0 = vec![0.0; n * d];
        let mut gamma = vec![0.0; n * d];
        for i in 0..n {
            let at = idx * n + i;
            let z = &it.z[k][at * d * p..(at + 1) * d * p];
            for r in 0..d {
                zc0[i * d + r] = (0..p).map(|l| z[r * p + l] * law.c[l * p]).sum();
            }
            law.gamma(&it.u[k][at * atoms * d..(at + 1) * atoms * d], &self.theta[k], d, &mut gamma[i * d..(i + 1) * d]);
        }
        let m_dim = self.gen.measure.feature_dim(d);
        let mut feat = vec![0.0; n * m_dim];
        let mut col = vec![0.0; n];
        let mut mval = vec![0.0; m_dim];
        let mut yterm = vec![0.0; d];
        let mut f = vec![0.0; d];
        let mut sum = vec![0.0; d];
        let fixed_depth = if self.opts.left_limit { k } else { k + 1 };
        let measure = &self.gen.measure;
        let empirical_value = |feature_of: &dyn Fn(usize, &mut [f64]), feat: &mut [f64], col: &mut [f64], mval: &mut [f64]| {
            for j in 0..n {
                feature_of(j, &mut feat[j * m_dim..(j + 1) * m_dim]);
            }
            for r in 0..m_dim {
                for j in 0..n {
                    col[j] = feat[j * m_dim + r];
                }
                mval[r] = sorted_mean(col);
            }
            measure.finish(mval);
        };
        let node_state = |j: usize, out: &mut [f64]| {
            let at = idx * n + j;
            let y = &it.y[k][at * d..(at + 1) * d];
            measure.features(y, self.state_sup(it.psup[k][at], y, true), out);
        };
        if self.opts.left_limit {
            match src.meas {
                MeasureVals::Empirical => empirical_value(&node_state, &mut feat, &mut col, &mut mval),
                MeasureVals::PerDepth(v) => mval.copy_from_slice(&v[fixed_depth]),
                MeasureVals::None => {}
            }
        }
        let m_active = !matches!(src.meas, MeasureVals::None);
        for c in 0..b {
            if !self.opts.left_limit {
                match src.meas {
                    MeasureVals::Empirical => {
                        let child_state = |j: usize, out: &mut [f64]| {
                            let y = child_y(c, j);
                            measure.features(y, self.state_sup(it.psup[k][idx * n + j], y, false), out);
                        };
                        empirical_value(&child_state, &mut feat, &mut col, &mut mval);
                    }
                    MeasureVals::PerDepth(v) => mval.copy_from_slice(&v[fixed_depth]),
                    MeasureVals::None => {}
                }
            }
            for i in 0..n {
                let at = idx * n + i;
                match (self.gen.mode, self.opts.left_limit) {
                    (Mode::Instant, false) => yterm.copy_from_slice(child_y(c, i)),
                    (Mode::Instant, true) => yterm.copy_from_slice(&it.y[k][at * d..(at + 1) * d]),
                    (Mode::Path, false) => {
                        let y = child_y(c, i);
                        for r in 0..d {
                            sum[r] = it.psum[k][at * d + r] + y[r];
                        }
                        GeneratorSpec::path_term(&sum, k + 2, &mut yterm);
                    }
                    (Mode::Path, true) => GeneratorSpec::path_term(&it.psum[k][at * d..(at + 1) * d], k + 1, &mut yterm),
                }
                let m: &[f64] = if m_active { &mval } else { &[] };
                self.gen.eval(step, &yterm, &zc0[i * d..(i + 1) * d], &gamma[i * d..(i + 1) * d], m, &mut f);
                for r in 0..d {
                    out[(c * n + i) * d + r] = f[r] * dc;
                }
            }
        }
    }

    /// One backward sweep producing `S(src)` (or the propagated start when
    /// `src` is `None`), with difference norms against `reference`.
    fn sweep(&self, src: Option<&Src>, reference: &Reference, materialize: bool) -> SweepOut {
        let (n, d) = (self.n(), self.d);
        let k_max = self.k();
        let p = self.tree.model().p();
        let mut it = self.zero_iterate();
        it.terminal = true;
        it.origin = if src.is_some() { Origin::Picard } else { Origin::Propagated };
        let mut acc = vec![[0.0; 3]; n];
        let mut g_all: Vec<Vec<f64>> = vec![Vec::new(); k_max];
        let mut dm_all: Vec<Vec<f64>> = vec![Vec::new(); k_max];
        for k in (0..k_max).rev() {
            let step = k + 1;
            let b = self.tree.joint_branching(step);
            let atoms = self.tree.step_law(step).jump.len();
            let next_new: Option<&[f64]> = if k + 1 < k_max { Some(&it.y[k + 1]) } else { None };
            let outs: Vec<NodeOut> = (0..self.tree.width(k))
                .into_par_iter()
                .map(|idx| self.node_kernel(k, idx, next_new, src, reference, materialize))
                .collect();
            let mut y = vec![0.0; self.tree.width(k) * n * d];
            let mut z = vec![0.0; self.tree.width(k) * n * d * p];
            let mut u = vec![0.0; self.tree.width(k) * n * atoms * d];
            let mut uhat = vec![0.0; self.tree.width(k) * n * d];
            let mut g = if materialize { vec![0.0; self.tree.width(k) * b * n * d] } else { Vec::new() };
            let mut dm = if materialize { vec![0.0; self.tree.width(k) * b * n * d] } else { Vec::new() };
            for (idx, o) in outs.into_iter().enumerate() {
                y[idx * n * d..(idx + 1) * n * d].copy_from_slice(&o.y);
                z[idx * n * d * p..(idx + 1) * n * d * p].copy_from_slice(&o.z);
                u[idx * n * atoms * d..(idx + 1) * n * atoms * d].copy_from_slice(&o.u);
                uhat[idx * n * d..(idx + 1) * n * d].copy_from_slice(&o.uhat);
                for i in 0..n {
                    for j in 0..3 {
                        acc[i][j] += o.acc[i][j];
                    }
                }
                if let (Some(og), Some(odm)) = (o.g, o.dm) {
                    let len = b * n * d;
                    g[idx * len..(idx + 1) * len].copy_from_slice(&og);
                    dm[idx * len..(idx + 1) * len].copy_from_slice(&odm);
                }
            }
            it.y[k] = y;
            it.z[k] = z;
            it.u[k] = u;
            it.uhat[k] = uhat;
            g_all[k] = g;
            dm_all[k] = dm;
        }
        self.path_summaries(&mut it);
        SweepOut { it, acc, g: materialize.then_some(g_all), dm: materialize.then_some(dm_all) }
    }

    #[allow(clippy::too_many_arguments)]
    fn node_kernel(
        &self,
        k: usize,
        idx: usize,
        next_new: Option<&[f64]>,
        src: Option<&Src>,
        reference: &Reference,
        materialize: bool,
    ) -> NodeOut {
        let (n, d) = (self.n(), self.d);
        let step = k + 1;
        let law = self.tree.step_law(step);
        let p = law.p();
        let atoms = law.jump.len();
        let b = self.tree.joint_branching(step);
        let own_b = self.tree.own_branching(step);
        let leaf_level = k + 1 == self.k();
        let zeros = vec![0.0; d];
        let mut term = Vec::new();
        if leaf_level {
            term = vec![0.0; b * n * d];
            self.terminal.fill_children(self.tree, d, idx, &mut term);
        }
        // the new iterate at the children
        let new_child = |c: usize, i: usize| -> &[f64] {
            match next_new {
                Some(arr) => &arr[((idx * b + c) * n + i) * d..((idx * b + c) * n + i + 1) * d],
                None => &term[(c * n + i) * d..(c * n + i + 1) * d],
            }
        };
        let mut g_new = vec![0.0; b * n * d];
        if let Some(s) = src {
            let cache: Vec<f64> = if k + 1 < self.k() || s.it.terminal {
                Vec::new()
            } else {
                vec![0.0; b * n * d]
            };
            let lookup = |c: usize, i: usize| -> &[f64] {
                if k + 1 < self.k() {
                    &s.it.y[k + 1][((idx * b + c) * n + i) * d..((idx * b + c) * n + i + 1) * d]
                } else if s.it.terminal {
                    &term[(c * n + i) * d..(c * n + i + 1) * d]
                } else {
                    &cache[(c * n + i) * d..(c * n + i + 1) * d]
                }
            };
            self.fill_f(k, idx, s, &lookup, &mut g_new);
        }
        let f_part = if materialize { Some(g_new.clone()) } else { None };
        for c in 0..b {
            for i in 0..n {
                let y = new_child(c, i);
                for r in 0..d {
                    g_new[(c * n + i) * d + r] += y[r];
                }
            }
        }
        // reference martingale increments
        let mut g_ref: Option<Vec<f64>> = None;
        if let Reference::Iterate { it: rit, src: rsrc } = reference {
            let mut gr = vec![0.0; b * n * d];
            if let Some(rs) = rsrc {
                let cache: Vec<f64> = if k + 1 < self.k() || rs.it.terminal { Vec::new() } else { vec![0.0; b * n * d] };
                let lookup = |c: usize, i: usize| -> &[f64] {
                    if k + 1 < self.k() {
                        &rs.it.y[k + 1][((idx * b + c) * n + i) * d..((idx * b + c) * n + i + 1) * d]
                    } else if rs.it.terminal {
                        &term[(c * n + i) * d..(c * n + i + 1) * d]
                    } else {
                        &cache[(c * n + i) * d..(c * n + i + 1) * d]
                    }
                };
                self.fill_f(k, idx, rs, &lookup, &mut gr);
            }
            for c in 0..b {
                for i in 0..n {
                    let y: &[f64] = if k + 1 < self.k() {
                        &rit.y[k + 1][((idx * b + c) * n + i) * d..((idx * b + c) * n + i + 1) * d]
                    } else if rit.terminal {
                        &term[(c * n + i) * d..(c * n + i + 1) * d]
                    } else {
                        &zeros
                    };
                    for r in 0..d {
                        gr[(c * n + i) * d + r] += y[r];
                    }
                }
            }
            g_ref = Some(gr);
        }
        let prob = self.node_prob(k, idx);
        let wl = self.weights.left[step];
        let mut out = NodeOut {
            y: vec![0.0; n * d],
            z: vec![0.0; n * d * p],
            u: vec![0.0; n * atoms * d],
            uhat: vec![0.0; n * d],
            acc: vec![[0.0; 3]; n],
            g: f_part,
            dm: if materialize { Some(vec![0.0; b * n * d]) } else { None },
        };
        let mut h = vec![0.0; own_b * d];
        let mut part = vec![0.0; d];
        let mut part_ref = vec![0.0; d];
        let mut zr = vec![0.0; d * p];
        let mut ur = vec![0.0; atoms * d];
        let mut uhr = vec![0.0; d];
        let mut yr = vec![0.0; d];
        let own_idx: Vec<usize> = match reference {
            Reference::Own(_) => (0..n).map(|i| self.tree.own_index(k, idx, i)).collect(),
            _ => Vec::new(),
        };
        for i in 0..n {
            // representation of G_new for particle i
            let gbar = &mut out.y[i * d..(i + 1) * d];
            for c in 0..b {
                let pc = self.tree.child_prob(step, c);
                for r in 0..d {
                    gbar[r] += pc * g_new[(c * n + i) * d + r];
                }
            }
            let gbar = gbar.to_vec();
            h.iter_mut().for_each(|x| *x = 0.0);
            let pow = own_b.pow(i as u32);
            for c in 0..b {
                let pc = self.tree.child_prob(step, c);
                let o = (c / pow) % own_b;
                for r in 0..d {
                    h[o * d + r] += pc * (g_new[(c * n + i) * d + r] - gbar[r]);
                }
            }
            let (zi, ui, uhi) = (
                &mut out.z[i * d * p..(i + 1) * d * p],
                &mut out.u[i * atoms * d..(i + 1) * atoms * d],
                &mut out.uhat[i * d..(i + 1) * d],
            );
            assemble(self.tree, step, d, &OwnMoments { h: h.clone() }, zi, ui, uhi);
            let (zi, ui, uhi) = (zi.to_vec(), ui.to_vec(), uhi.to_vec());
            // reference components at the node
            match reference {
                Reference::Zero => {
                    zr.iter_mut().for_each(|x| *x = 0.0);
                    ur.iter_mut().for_each(|x| *x = 0.0);
                    uhr.iter_mut().for_each(|x| *x = 0.0);
                    yr.iter_mut().for_each(|x| *x = 0.0);
                }
                Reference::Iterate { it: rit, .. } => {
                    let at = idx * n + i;
                    zr.copy_from_slice(&rit.z[k][at * d * p..(at + 1) * d * p]);
                    ur.copy_from_slice(&rit.u[k][at * atoms * d..(at + 1) * atoms * d]);
                    uhr.copy_from_slice(&rit.uhat[k][at * d..(at + 1) * d]);
                    yr.copy_from_slice(&rit.y[k][at * d..(at + 1) * d]);
                }
                Reference::Own(sol) => {
                    let o = own_idx[i];
                    zr.copy_from_slice(&sol.z[k][o * d * p..(o + 1) * d * p]);
                    ur.copy_from_slice(&sol.u[k][o * atoms * d..(o + 1) * atoms * d]);
                    uhr.copy_from_slice(&sol.uhat[k][o * d..(o + 1) * d]);
                    yr.copy_from_slice(&sol.y[k][o * d..(o + 1) * d]);
                }
            }
            let dz: Vec<f64> = zi.iter().zip(&zr).map(|(a, b)| a - b).collect();
            let du: Vec<f64> = ui.iter().zip(&ur).map(|(a, b)| a - b).collect();
            out.acc[i][0] += wl * prob * zc_norm_sq(&dz, &law.gram, d, p);
            out.acc[i][1] += wl * prob * law.tnorm_sq(&du, d) * law.dc;
            // integrand parts depend on the own outcome only
            let mut parts = vec![0.0; own_b * d];
            let mut parts_ref = vec![0.0; own_b * d];
            for o in 0..own_b {
                integrand_part(self.tree, step, o, d, &zi, &ui, &uhi, &mut part);
                parts[o * d..(o + 1) * d].copy_from_slice(&part);
                if let Reference::Iterate { .. } = reference {
                    integrand_part(self.tree, step, o, d, &zr, &ur, &uhr, &mut part_ref);
                    parts_ref[o * d..(o + 1) * d].copy_from_slice(&part_ref);
                }
            }
            let mut dm_new = vec![0.0; d];
            let mut em = 0.0;
            for c in 0..b {
                let pc = self.tree.child_prob(step, c);
                let o = (c / pow) % own_b;
                let at = (c * n + i) * d;
                for r in 0..d {
                    dm_new[r] = g_new[at + r] - gbar[r] - parts[o * d + r];
                }
                if let Some(dm) = out.dm.as_mut() {
                    dm[at..at + d].copy_from_slice(&dm_new);
                }
                let mut diff = 0.0;
                match reference {
                    Reference::Zero => diff = norm_sq(&dm_new),
                    Reference::Iterate { .. } => {
                        let gr = g_ref.as_ref().expect("reference increments");
                        for r in 0..d {
                            let dm_ref = gr[at + r] - yr[r] - parts_ref[o * d + r];
                            diff += (dm_new[r] - dm_ref).powi(2);
                        }
                    }
                    Reference::Own(sol) => {
                        let child_own = own_idx[i] * own_b + o;
                        for r in 0..d {
                            diff += (dm_new[r] - sol.dm[k][child_own * d + r]).powi(2);
                        }
                    }
                }
                em += pc * diff;
            }
            out.acc[i][2] += wl * prob * em;
        }
        out
    }

    /// `(S^2, ||alpha dy||^2)` per particle for the difference of two
    /// Y-processes, each given by an iterate or a single-particle solution.
    fn y_norms(&self, a: &Iterate, b_ref: &Reference) -> Vec<(f64, f64)> {
        let (n, d) = (self.n(), self.d);
        let k_max = self.k();
        let w = &self.weights;
        let ref_y = |k: usize, idx: usize, i: usize| -> Vec<f64> {
            match b_ref {
                Reference::Zero => vec![0.0; d],
                Reference::Iterate { it, .. } => it.y[k][(idx * n + i) * d..(idx * n + i + 1) * d].to_vec(),
                Reference::Own(sol) => {
                    let o = self.tree.own_index(k, idx, i);
                    sol.y[k][o * d..(o + 1) * d].to_vec()
                }
            }
        };
        let mut run: Vec<f64> = Vec::new();
        let mut alpha = vec![0.0; n];
        for k in 0..k_max {
            let width = self.tree.width(k);
            let mut next = vec![0.0; width * n];
            for idx in 0..width {
                let parent = if k == 0 { 0 } else { idx / self.tree.joint_branching(k) };
                for i in 0..n {
                    let at = idx * n + i;
                    let ya = &a.y[k][at * d..(at + 1) * d];
                    let yb = ref_y(k, idx, i);
                    let diff: f64 = ya.iter().zip(&yb).map(|(x, y)| (x - y) * (x - y)).sum();
                    let prev = if k == 0 { 0.0 } else { run[parent * n + i] };
                    next[at] = prev.max(w.sup[k] * diff);
                    if k > 0 {
                        alpha[i] += w.left[k] * w.da[k - 1] * self.node_prob(k, idx) * diff;
                    }
                }
            }
            run = next;
        }
        // leaves
        let b = self.tree.joint_branching(k_max);
        let leaf_same = match b_ref {
            Reference::Iterate { it, .. } => it.terminal == a.terminal,
            _ => false,
        };
        let mut s2 = vec![0.0; n];
        if leaf_same {
            for idx in 0..self.tree.width(k_max - 1) {
                for i in 0..n {
                    s2[i] += self.node_prob(k_max - 1, idx) * run[idx * n + i];
                }
            }
            return s2.into_iter().zip(alpha).collect();
        }
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..self.tree.width(k_max - 1))
            .into_par_iter()
            .map(|idx| {
                let mut term = vec![0.0; b * n * d];
                self.terminal.fill_children(self.tree, d, idx, &mut term);
                let pn = self.node_prob(k_max - 1, idx);
                let mut s = vec![0.0; n];
                let mut al = vec![0.0; n];
                let own_b = self.tree.own_branching(k_max);
                let own: Vec<usize> = match b_ref {
                    Reference::Own(_) => (0..n).map(|i| self.tree.own_index(k_max - 1, idx, i)).collect(),
                    _ => Vec::new(),
                };
                for c in 0..b {
                    let pc = pn * self.tree.child_prob(k_max, c);
                    for i in 0..n {
                        let t = &term[(c * n + i) * d..(c * n + i + 1) * d];
                        let diff: f64 = match b_ref {
                            Reference::Zero => {
                                if a.terminal {
                                    norm_sq(t)
                                } else {
                                    0.0
                                }
                            }
                            Reference::Iterate { it, .. } => {
                                // terminal flags differ: one side is xi, the other zero
                                let _ = it;
                                norm_sq(t)
                            }
                            Reference::Own(sol) => {
                                let leaf = own[i] * own_b + (c / own_b.pow(i as u32)) % own_b;
                                let ya: &[f64] = if a.terminal { t } else { &[] };
                                (0..d)
                                    .map(|r| (ya.get(r).copied().unwrap_or(0.0) - sol.y[k_max][leaf * d + r]).powi(2))
                                    .sum()
                            }
                        };
                        s[i] += pc * run[idx * n + i].max(w.sup[k_max] * diff);
                        al[i] += pc * diff;
                    }
                }
                (s, al)
            })
            .collect();
        for (s, al) in parts {
            for i in 0..n {
                s2[i] += s[i];
                alpha[i] += w.left[k_max] * w.da[k_max - 1] * al[i];
            }
        }
        s2.into_iter().zip(alpha).collect()
    }

    fn reports(&self, acc: &[[f64; 3]], y: &[(f64, f64)]) -> Vec<NormReport> {
        acc.iter()
            .zip(y)
            .map(|(a, (s2, al))| NormReport { s2: *s2, z: a[0], u: a[1], m: a[2], alpha_y: *al })
            .collect()
    }

    fn contracted(&self, r: &NormReport) -> f64 {
        match self.gen.mode {
            Mode::Instant => r.star() + r.alpha_y,
            Mode::Path => r.star(),
        }
    }

    /// Runs the Picard iteration to convergence.
    pub fn solve(&self) -> Result<Solved> {
        let contraction = self.contraction()?;
        let warning = (!contraction.holds).then(|| {
            format!(
                "sufficient contraction condition fails for {} (modulus {:.6}); iterating anyway",
                contraction.theorem_id, contraction.modulus
            )
        });
        let mut cur = match self.opts.init {
            Init::Zero => self.zero_iterate(),
            Init::Propagated => self.sweep(None, &Reference::Zero, false).it,
        };
        let mut cur_meas = self.measure_vals(&cur);
        let mut prev: Option<(Iterate, MeasureVals)> = None;
        let mut diffs = Vec::new();
        let mut ratios = Vec::new();
        let mut above_one = 0;
        let mut converged = false;
        let mut iterations = 0;
        for m in 1..=self.opts.max_iter + 1 {
            let src = Src { it: &cur, meas: &cur_meas };
            let rsrc = match (&prev, cur.origin) {
                (Some((pit, pm)), Origin::Picard) => Some(Src { it: pit, meas: pm }),
                _ => None,
            };
            let reference = Reference::Iterate { it: &cur, src: rsrc };
            let out = self.sweep(Some(&src), &reference, false);
            let yn = self.y_norms(&out.it, &reference);
            let total: f64 = self.reports(&out.acc, &yn).iter().map(|r| self.contracted(r)).sum();
            if let Some(&last) = diffs.last() {
                let ratio = if last > 0.0 { total / last } else { f64::NAN };
                ratios.push(ratio);
                if ratio > 1.0 {
                    above_one += 1;
                    if above_one >= 5 {
                        diffs.push(total);
                        return Err(Error::DivergenceDetected { iteration: m, ratio, diffs });
                    }
                } else {
                    above_one = 0;
                }
            }
            diffs.push(total);
            let new_meas = self.measure_vals(&out.it);
            prev = Some((cur, cur_meas));
            cur = out.it;
            cur_meas = new_meas;
            if total.sqrt() < self.opts.tol {
                converged = true;
                iterations = m - 1;
                break;
            }
        }
        if !converged {
            let last = diffs.last().copied().unwrap_or(f64::NAN).sqrt();
            return Err(Error::NotConverged { iterations: self.opts.max_iter, last, diffs });
        }
        let (src_it, src_meas) = prev.expect("at least one sweep");
        let trace = PicardTrace { diffs, ratios, converged, iterations, contraction, warning };
        self.finish(cur, src_it, src_meas, trace)
    }

    /// Re-runs the last sweep to materialise the solution and its norms.
    fn finish(&self, last: Iterate, src: Iterate, src_meas: MeasureVals, trace: PicardTrace) -> Result<Solved> {
        let (n, d) = (self.n(), self.d);
        let materialize = self.materializable();
        if !materialize && !self.opts.solution_norms {
            let y0 = (0..n).map(|i| last.y[0][i * d..(i + 1) * d].to_vec()).collect();
            return Ok(Solved { solutions: Vec::new(), y0, norms: Vec::new(), trace, last, src, src_meas });
        }
        let out = {
            let s = Src { it: &src, meas: &src_meas };
            self.sweep(Some(&s), &Reference::Zero, materialize)
        };
        let yn = self.y_norms(&out.it, &Reference::Zero);
        let norms = self.reports(&out.acc, &yn);
        let y0 = (0..n).map(|i| out.it.y[0][i * d..(i + 1) * d].to_vec()).collect();
        let mut solutions = Vec::new();
        if let (Some(g), Some(dm)) = (out.g.as_ref(), out.dm.as_ref()) {
            for i in 0..n {
                let mut sol = self.extract(&out.it, g, dm, i);
                if let Some(eps) = self.corrupt {
                    sol.y[0][0] += eps;
                }
                solutions.push(sol);
            }
        }
        Ok(Solved { solutions, y0, norms, trace, last, src, src_meas })
    }

    fn extract(&self, it: &Iterate, g: &[Vec<f64>], dm: &[Vec<f64>], i: usize) -> BsdeSolution {
        let (n, d) = (self.n(), self.d);
        let p = self.tree.model().p();
        let k_max = self.k();
        let mut sol = BsdeSolution::zeros(self.tree, d, i);
        let pick = |src: &[f64], stride: usize, width: usize| -> Vec<f64> {
            let mut v = Vec::with_capacity(width * stride);
            for idx in 0..width {
                let at = idx * n + i;
                v.extend_from_slice(&src[at * stride..(at + 1) * stride]);
            }
            v
        };
        for k in 0..k_max {
            let width = self.tree.width(k);
            let atoms = self.tree.step_law(k + 1).jump.len();
            sol.y[k] = pick(&it.y[k], d, width);
            sol.z[k] = pick(&it.z[k], d * p, width);
            sol.u[k] = pick(&it.u[k], atoms * d, width);
            sol.uhat[k] = pick(&it.uhat[k], d, width);
            sol.g[k] = pick(&g[k], d, self.tree.width(k + 1));
            sol.dm[k] = pick(&dm[k], d, self.tree.width(k + 1));
        }
        let b = self.tree.joint_branching(k_max);
        let mut leaves = vec![0.0; self.tree.width(k_max) * d];
        let mut term = vec![0.0; b * n * d];
        for idx in 0..self.tree.width(k_max - 1) {
            self.terminal.fill_children(self.tree, d, idx, &mut term);
            for c in 0..b {
                let leaf = idx * b + c;
                leaves[leaf * d..(leaf + 1) * d].copy_from_slice(&term[(c * n + i) * d..(c * n + i + 1) * d]);
            }
        }
        sol.y[k_max] = leaves;
        sol
    }

    /// Star-norm gap (with `||alpha dY||^2`) between each particle of a solved
    /// system and a single-particle solution read along the particle's own path.
    pub fn gap_to_own(&self, solved: &Solved, reference: &BsdeSolution) -> Vec<NormReport> {
        let s = Src { it: &solved.src, meas: &solved.src_meas };
        let r = Reference::Own(reference);
        let out = self.sweep(Some(&s), &r, false);
        let yn = self.y_norms(&out.it, &r);
        self.reports(&out.acc, &yn)
    }

    /// Finished measure values of the law of a single-particle solution.
    pub fn law_values_of(&self, sol: &BsdeSolution) -> Vec<Vec<f64>> {
        let mut it = self.zero_iterate();
        for k in 0..self.k() {
            it.y[k] = sol.y[k].clone();
        }
        it.terminal = true;
        self.path_summaries(&mut it);
        self.law_values(&it)
    }

    /// Largest nodewise residual of the BSDE identity with `f` re-evaluated at
    /// the returned solution itself.
    pub fn fixed_point_residual(&self, solved: &Solved) -> f64 {
        let s_meas = self.measure_vals(&solved.last);
        let s = Src { it: &solved.last, meas: &s_meas };
        let again = self.sweep(Some(&s), &Reference::Zero, false);
        let mut worst = 0.0f64;
        for k in 0..self.k() {
            for (a, b) in again.it.y[k].iter().zip(&solved.last.y[k]) {
                worst = worst.max((a - b).abs());
            }
            for (a, b) in again.it.z[k].iter().zip(&solved.last.z[k]) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

fn default_tree_check(tree: &ScenarioTree, xi: &[f64], d: usize) -> Result<()> {
    let expected = tree.width(tree.steps()) * tree.particles() * d;
    if xi.len() != expected {
        return Err(Error::SizeMismatch(xi.len(), expected));
    }
    Ok(())
}

/// Standard BSDE (no measure argument) on a single-particle tree.
pub fn solve_standard(tree: &ScenarioTree, xi: &[f64], d: usize, gen: &GeneratorSpec, opts: SolverOptions) -> Result<Solved> {
    if gen.uses_measure() {
        return Err(Error::InvalidInput("standard solve needs a generator without measure argument".into()));
    }
    default_tree_check(tree, xi, d)?;
    let terminal = Terminal::Table(xi.to_vec());
    System::new(tree, gen, &terminal, MeasureSource::None, d, opts, ProblemKind::Standard)?.solve()
}

/// McKean-Vlasov BSDE on a single-particle tree; the measure argument is the
/// exact law of the previous iterate.
pub fn solve_mckean_vlasov(tree: &ScenarioTree, xi: &[f64], d: usize, gen: &GeneratorSpec, opts: SolverOptions) -> Result<Solved> {
    default_tree_check(tree, xi, d)?;
    let terminal = Terminal::Table(xi.to_vec());
    System::new(tree, gen, &terminal, MeasureSource::LawOfIterate, d, opts, ProblemKind::McKeanVlasov)?.solve()
}

/// Mean-field system of `N` BSDEs on the joint tree; `terminal` gives every
/// particle's terminal condition.
pub fn solve_meanfield(tree: &ScenarioTree, terminal: &Terminal, d: usize, gen: &GeneratorSpec, opts: SolverOptions) -> Result<Solved> {
    System::new(tree, gen, terminal, MeasureSource::Empirical, d, opts, ProblemKind::MeanField)?.solve()
}

/// Two Picard runs from different starting points; returns the star distance
/// (with `||alpha dY||^2`) between the two limits, summed over particles.
pub fn uniqueness_gap(sys: &System) -> Result<f64> {
    let mut a = SystemOptionsGuard::new(sys, Init::Zero);
    let first = a.solve()?;
    a.set(Init::Propagated);
    let second = a.solve()?;
    let mut worst = 0.0;
    for (x, y) in first.solutions.iter().zip(&second.solutions) {
        let mut diff = x.clone();
        for (dst, src) in [(&mut diff.y, &y.y), (&mut diff.z, &y.z), (&mut diff.u, &y.u), (&mut diff.uhat, &y.uhat), (&mut diff.dm, &y.dm)] {
            for (dv, sv) in dst.iter_mut().zip(src) {
                for (a, b) in dv.iter_mut().zip(sv) {
                    *a -= b;
                }
            }
        }
        let w = &sys.weight.a;
        let r = crate::scenario::norm_star(sys.tree, &diff, w, sys.opts.beta_hat)?;
        worst += r.star() + r.alpha_y;
    }
    Ok(worst)
}

/// Re-targets a system at a different initialisation.
struct SystemOptionsGuard<'s, 'a> {
    base: &'s System<'a>,
    init: Init,
}

impl<'s, 'a> SystemOptionsGuard<'s, 'a> {
    fn new(base: &'s System<'a>, init: Init) -> Self {
        Self { base, init }
    }

    fn set(&mut self, init: Init) {
        self.init = init;
    }

    fn solve(&self) -> Result<Solved> {
        let mut opts = self.base.opts.clone();
        opts.init = self.init;
        let sys = System::new(
            self.base.tree,
            self.base.gen,
            self.base.terminal,
            self.base.measure.clone(),
            self.base.d,
            opts,
            self.base.kind,
        )?;
        sys.solve()
    }
}

/// One inequality of the a-priori estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriLine {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

impl AprioriLine {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    pub lines: Vec<AprioriLine>,
}

impl AprioriReport {
    pub fn min_slack(&self) -> f64 {
        self.lines.iter().map(|l| l.slack()).fold(f64::INFINITY, f64::min)
    }
}

/// Checks the a-priori estimates for `y_t = E[xi + int_t^T f dC | F_t]` on a
/// single-particle tree. `f[k-1]` holds `f_{t_k}` on the depth-`k` nodes
/// (stride `d`), and `A` is any pure-jump path with `dA <= phi`; `alpha^2`
/// is `dA / dC`.
pub fn apriori_verify(
    tree: &ScenarioTree,
    xi: &[f64],
    f: &[Vec<f64>],
    d: usize,
    a: &FVPath,
    gamma: f64,
    delta: f64,
    phi: f64,
) -> Result<AprioriReport> {
    if gamma == delta {
        return Err(Error::EqualExponents(gamma));
    }
    if !(gamma > 0.0 && delta > 0.0) {
        return Err(Error::InvalidInput("exponents must be positive".into()));
    }
    let k_max = tree.steps();
    if a.max_jump() > phi || a.jumps().iter().any(|&j| j < 0.0) {
        return Err(Error::InvalidInput("jumps of A must lie in [0, phi]".into()));
    }
    if f.len() != k_max {
        return Err(Error::SizeMismatch(f.len(), k_max));
    }
    if xi.len() != tree.width(k_max) * d {
        return Err(Error::SizeMismatch(xi.len(), tree.width(k_max) * d));
    }
    // backward conditional expectations and martingale increments
    let mut y: Vec<Vec<f64>> = (0..=k_max).map(|k| vec![0.0; tree.width(k) * d]).collect();
    y[k_max] = xi.to_vec();
    let mut eta: Vec<Vec<f64>> = (0..k_max).map(|k| vec![0.0; tree.width(k + 1) * d]).collect();
    for k in (0..k_max).rev() {
        let step = k + 1;
        let b = tree.joint_branching(step);
        let dc = tree.step_law(step).dc;
        for idx in 0..tree.width(k) {
            let mut mean = vec![0.0; d];
            for c in 0..b {
                let child = idx * b + c;
                for r in 0..d {
                    mean[r] += tree.child_prob(step, c) * (y[k + 1][child * d + r] + f[k][child * d + r] * dc);
                }
            }
            for c in 0..b {
                let child = idx * b + c;
                for r in 0..d {
                    eta[k][child * d + r] = y[k + 1][child * d + r] + f[k][child * d + r] * dc - mean[r];
                }
            }
            y[k][idx * d..(idx + 1) * d].copy_from_slice(&mean);
        }
    }
    let wd = NormWeights::new(a, delta)?;
    let wg = NormWeights::new(a, gamma.max(delta))?;
    let probs: Vec<Vec<f64>> = (0..=k_max).map(|k| tree.node_probs(k)).collect();
    let expect_sq = |k: usize, v: &[f64]| -> f64 { probs[k].iter().enumerate().map(|(i, p)| p * norm_sq(&v[i * d..(i + 1) * d])).sum() };
    let xi_norm = wd.left[k_max] * expect_sq(k_max, xi);
    let mut f_norm = 0.0;
    let mut alpha_y = 0.0;
    let mut eta_norm = 0.0;
    for k in 1..=k_max {
        let dc = tree.step_law(k).dc;
        let da = a.jumps()[k - 1];
        let ef = expect_sq(k, &f[k - 1]);
        if ef > 0.0 {
            f_norm += if da > 0.0 { wg.left[k] * ef * dc * dc / da } else { f64::INFINITY };
        }
        alpha_y += wd.left[k] * da * expect_sq(k, &y[k]);
        eta_norm += wd.left[k] * expect_sq(k, &eta[k - 1]);
    }
    let s2 = norm_s2(tree, &y, d, &wd);
    let lam = lambda_gdp(gamma, delta, phi)?;
    let gd = gamma.max(delta);
    let lines = vec![
        AprioriLine { name: "alpha-y", lhs: alpha_y, rhs: 2.0 * (1.0 + delta * phi) / delta * xi_norm + 2.0 * lam * f_norm },
        AprioriLine { name: "sup-y", lhs: s2, rhs: 8.0 * xi_norm + 8.0 * (1.0 + gamma * phi) / gamma * f_norm },
        AprioriLine {
            name: "martingale",
            lhs: eta_norm,
            rhs: 9.0 * (2.0 + delta * phi) * xi_norm + 9.0 * (1.0 / gd + delta * lam) * f_norm,
        },
        AprioriLine {
            name: "alpha-y+martingale",
            lhs: alpha_y + eta_norm,
            rhs: (18.0 + 2.0 / delta + (9.0 * delta + 2.0) * phi) * xi_norm + (9.0 / gd + (9.0 * delta + 2.0) * lam) * f_norm,
        },
        AprioriLine {
            name: "sup-y+martingale",
            lhs: s2 + eta_norm,
            rhs: (26.0 + 9.0 * delta * phi) * xi_norm
                + (8.0 / gamma + 8.0 * phi + 9.0 / gd + 9.0 * delta * lam) * f_norm,
        },
        AprioriLine {
            name: "all",
            lhs: alpha_y + s2 + eta_norm,
            rhs: (26.0 + 2.0 / delta + (9.0 * delta + 2.0) * phi) * xi_norm
                + (8.0 / gamma + 8.0 * phi + 9.0 / gd + (9.0 * delta + 2.0) * lam) * f_norm,
        },
    ];
    Ok(AprioriReport { lines })
}

/// One itemised assumption check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataCheck {
    pub contraction: ContractionReport,
    pub conditions: Vec<Condition>,
    pub phi: f64,
    pub lambda_beta: f64,
}

impl DataCheck {
    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }
}

/// Itemised standard-data report for a driver and generator under `beta_hat`.
pub fn standard_data_check(
    model: &DriverModel,
    gen: &GeneratorSpec,
    d: usize,
    beta_hat: f64,
    theorem: TheoremId,
) -> Result<DataCheck> {
    gen.validate(d)?;
    let k = model.steps();
    let weight = lipschitz_to_a(&gen.lipschitz(k, d), model)?;
    let lambda = weight.lambda_beta(beta_hat);
    let contraction = contraction_condition(theorem, beta_hat, weight.phi, Some(lambda))?;
    let mut conditions = Vec::new();
    let worst_mean = (1..=k)
        .flat_map(|j| {
            let s = model.step(j);
            s.diff.mean().into_iter().chain(s.jump.mean())
        })
        .fold(0.0f64, |a, m| a.max(m.abs()));
    conditions.push(Condition {
        name: "driver-zero-mean",
        holds: worst_mean <= 1e-12,
        detail: format!("largest increment mean {worst_mean:e}"),
    });
    conditions.push(Condition {
        name: "driver-orthogonality",
        holds: validate_driver_orthogonality(model),
        detail: "E[dX^o | dX^n = w] = 0 for w != 0".into(),
    });
    let theta = model.theta_coordinate(gen.theta_coordinate).and_then(|t| model.check_theta(&t));
    conditions.push(Condition {
        name: "theta-bound",
        holds: theta.is_ok(),
        detail: match theta {
            Ok(()) => format!("Theta(x) = x_{}", gen.theta_coordinate),
            Err(e) => e.to_string(),
        },
    });
    conditions.push(Condition {
        name: "jump-bound",
        holds: weight.phi.is_finite(),
        detail: format!("max dA = {:.6e}", weight.phi),
    });
    conditions.push(Condition {
        name: "exponential-bound",
        holds: lambda.is_finite(),
        detail: format!("E(beta A)_T = {lambda:.6e}"),
    });
    let f0 = gen.at_zero(k, d);
    let left = crate::fvcalc::stoch_exp_left(&weight.a.scale(beta_hat));
    let mut f0_norm = 0.0;
    for j in 1..=k {
        let v = norm_sq(&f0[j - 1]);
        if v > 0.0 {
            let a2 = weight.alpha_sq[j - 1];
            f0_norm += if a2 > 0.0 { left[j] * v / a2 * model.step(j).dc } else { f64::INFINITY };
        }
    }
    conditions.push(Condition {
        name: "generator-at-zero",
        holds: f0_norm.is_finite(),
        detail: format!("||f(.,0,0,0,delta_0)/alpha||^2 = {f0_norm:.6e}"),
    });
    conditions.push(Condition {
        name: "deterministic-compensator",
        holds: true,
        detail: "independent increments give deterministic C, K and A".into(),
    });
    conditions.push(Condition {
        name: "contraction",
        holds: contraction.holds,
        detail: format!("{} modulus {:.9}", contraction.theorem_id, contraction.modulus),
    });
    Ok(DataCheck { contraction, conditions, phi: weight.phi, lambda_beta: lambda })
}
