//! Exact finite probability space for `N` particles over `K` steps.
//!
//! The tree is implicit: a node at depth `k` is an index in `[0, W_k)` with
//! `W_k = prod_{j <= k} B_j`, and the children of `idx` at step `k+1` are
//! `idx * B_{k+1} + c` for joint outcomes `c` in `[0, B_{k+1})`. Particle `i`'s
//! own outcome within `c` is the base-`b` digit `(c / b^i) % b`, where `b` is
//! the single-particle branching.

use serde::Serialize;

use crate::driver::{norm_sq, sym_pinv, DriverModel, StepLaw};
use crate::error::{Error, Result};
use crate::fvcalc::{stoch_exp_left, stoch_exp_values, FVPath};
use crate::transport::DiscreteLaw;

pub const DEFAULT_NODE_BUDGET: u128 = 20_000_000;

/// Branching data of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBranching {
    /// Single-particle outcomes `(diff atom, jump atom, probability)`.
    pub outcomes: Vec<(usize, usize, f64)>,
    /// Joint outcome probabilities, length `b^N`.
    pub joint_prob: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioTree {
    model: DriverModel,
    particles: usize,
    branching: Vec<StepBranching>,
    widths: Vec<usize>,
}

/// Number of nodes of the full tree, saturating.
pub fn tree_node_count(model: &DriverModel, particles: usize, steps: usize) -> u128 {
    let mut width: u128 = 1;
    let mut total: u128 = 1;
    for k in 1..=steps {
        let s = model.step(k);
        let b = (s.diff.len() * s.jump.len()) as u128;
        let joint = (0..particles).fold(1u128, |acc, _| acc.saturating_mul(b));
        width = width.saturating_mul(joint);
        total = total.saturating_add(width);
    }
    total
}

pub fn build_tree(model: &DriverModel, particles: usize, steps: usize, budget: u128) -> Result<ScenarioTree> {
    if particles == 0 {
        return Err(Error::InvalidInput("need at least one particle".into()));
    }
    if steps == 0 || steps > model.steps() {
        return Err(Error::InvalidInput(format!("tree depth {steps} outside 1..={}", model.steps())));
    }
    let nodes = tree_node_count(model, particles, steps);
    if nodes > budget {
        return Err(Error::BudgetExceeded { nodes, budget });
    }
    let mut branching = Vec::with_capacity(steps);
    let mut widths = vec![1usize];
    for k in 1..=steps {
        let s = model.step(k);
        let mut outcomes = Vec::new();
        for a in 0..s.diff.len() {
            for j in 0..s.jump.len() {
                outcomes.push((a, j, s.diff.weight(a) * s.jump.weight(j)));
            }
        }
        let b = outcomes.len();
        let mut joint_prob = vec![1.0];
        for _ in 0..particles {
            // the new particle becomes the most significant digit
            let mut next = Vec::with_capacity(joint_prob.len() * b);
            for &(_, _, p) in &outcomes {
                next.extend(joint_prob.iter().map(|q| q * p));
            }
            joint_prob = next;
        }
        widths.push(widths[k - 1] * joint_prob.len());
        branching.push(StepBranching { outcomes, joint_prob });
    }
    Ok(ScenarioTree { model: model.clone(), particles, branching, widths })
}

impl ScenarioTree {
    pub fn model(&self) -> &DriverModel {
        &self.model
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn steps(&self) -> usize {
        self.branching.len()
    }

    /// Number of nodes at depth `k`.
    pub fn width(&self, k: usize) -> usize {
        self.widths[k]
    }

    pub fn node_count(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Law of step `k` in `1..=K`.
    pub fn step_law(&self, k: usize) -> &StepLaw {
        self.model.step(k)
    }

    pub fn step_branching(&self, k: usize) -> &StepBranching {
        &self.branching[k - 1]
    }

    /// Joint branching `B_k` of step `k`.
    pub fn joint_branching(&self, k: usize) -> usize {
        self.branching[k - 1].joint_prob.len()
    }

    /// Single-particle branching `b_k` of step `k`.
    pub fn own_branching(&self, k: usize) -> usize {
        self.branching[k - 1].outcomes.len()
    }

    pub fn child_prob(&self, k: usize, c: usize) -> f64 {
        self.branching[k - 1].joint_prob[c]
    }

    pub fn own_outcome(&self, k: usize, c: usize, particle: usize) -> usize {
        let b = self.own_branching(k);
        (c / b.pow(particle as u32)) % b
    }

    pub fn diff_increment(&self, k: usize, outcome: usize) -> &[f64] {
        let (a, _, _) = self.branching[k - 1].outcomes[outcome];
        self.model.step(k).diff.atom(a)
    }

    pub fn jump_atom(&self, k: usize, outcome: usize) -> usize {
        self.branching[k - 1].outcomes[outcome].1
    }

    pub fn jump_increment(&self, k: usize, outcome: usize) -> &[f64] {
        self.model.step(k).jump.atom(self.jump_atom(k, outcome))
    }

    /// Probabilities of all nodes at depth `k`.
    pub fn node_probs(&self, k: usize) -> Vec<f64> {
        let mut probs = vec![1.0];
        for j in 1..=k {
            let jp = &self.branching[j - 1].joint_prob;
            let mut next = Vec::with_capacity(probs.len() * jp.len());
            for p in &probs {
                next.extend(jp.iter().map(|q| p * q));
            }
            probs = next;
        }
        probs
    }

    /// Index of the ancestor at depth `j` of node `idx` at depth `k >= j`.
    pub fn ancestor(&self, k: usize, idx: usize, j: usize) -> usize {
        idx / (self.widths[k] / self.widths[j])
    }

    /// Index of particle `i`'s own path in the single-particle tree.
    pub fn own_index(&self, k: usize, idx: usize, particle: usize) -> usize {
        let mut digits = Vec::with_capacity(k);
        let mut rest = idx;
        for j in (1..=k).rev() {
            let b = self.joint_branching(j);
            digits.push(self.own_outcome(j, rest % b, particle));
            rest /= b;
        }
        digits.iter().rev().enumerate().fold(0, |acc, (pos, &o)| acc * self.own_branching(pos + 1) + o)
    }
}

/// Probability-weighted average of the children of `node` (depth `k`), where
/// `values` holds `dim` numbers for every node at depth `k+1`.
pub fn cond_exp(tree: &ScenarioTree, k: usize, values: &[f64], node: usize, dim: usize) -> Vec<f64> {
    let b = tree.joint_branching(k + 1);
    let mut out = vec![0.0; dim];
    for c in 0..b {
        let p = tree.child_prob(k + 1, c);
        let v = &values[(node * b + c) * dim..(node * b + c + 1) * dim];
        for (o, x) in out.iter_mut().zip(v) {
            *o += p * x;
        }
    }
    out
}

/// Orthogonal decomposition of one step's increment of a martingale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Representation {
    pub gbar: Vec<f64>,
    /// `d x p`, row-major.
    pub z: Vec<f64>,
    /// Jump function on the step's jump atoms, atom-major with stride `d`.
    pub u: Vec<f64>,
    pub uhat: Vec<f64>,
    /// Orthogonal residual per child.
    pub dm: Vec<f64>,
}

/// Aggregated per-outcome moments from which a representation is assembled.
pub(crate) struct OwnMoments {
    /// `sum_{c: o_i(c) = o} P(c) (G(c) - gbar)` per own outcome, stride `d`.
    pub h: Vec<f64>,
}

/// Computes `(Z, U, U^)` for particle `i` at step `k` from own-outcome moments.
pub(crate) fn assemble(tree: &ScenarioTree, k: usize, d: usize, moments: &OwnMoments, z: &mut [f64], u: &mut [f64], uhat: &mut [f64]) {
    let law = tree.step_law(k);
    let p = law.p();
    let br = tree.step_branching(k);
    // E[(G - gbar) dX^T]
    let mut cross = vec![0.0; d * p];
    for (o, &(a, _, _)) in br.outcomes.iter().enumerate() {
        let x = law.diff.atom(a);
        for r in 0..d {
            let hr = moments.h[o * d + r];
            for c in 0..p {
                cross[r * p + c] += hr * x[c];
            }
        }
    }
    let pinv = sym_pinv(&law.gram, p);
    for r in 0..d {
        for c in 0..p {
            z[r * p + c] = (0..p).map(|l| cross[r * p + l] * pinv[l * p + c]).sum();
        }
    }
    // h(w) = E[G - gbar | dX^n = w]
    let atoms = law.jump.len();
    let mut hw = vec![0.0; atoms * d];
    for (o, &(_, j, _)) in br.outcomes.iter().enumerate() {
        for r in 0..d {
            hw[j * d + r] += moments.h[o * d + r];
        }
    }
    for j in 0..atoms {
        let pw = law.jump.weight(j);
        for r in 0..d {
            hw[j * d + r] /= pw;
        }
    }
    match law.jump.zero_atom() {
        Some(z0) => {
            for r in 0..d {
                uhat[r] = -hw[z0 * d + r];
            }
            for j in 0..atoms {
                for r in 0..d {
                    u[j * d + r] = if j == z0 { 0.0 } else { hw[j * d + r] + uhat[r] };
                }
            }
        }
        None => {
            uhat.iter_mut().for_each(|x| *x = 0.0);
            u.copy_from_slice(&hw);
        }
    }
}

/// `Z dX^o + U(dX^n) 1_{dX^n != 0} - U^` for one own outcome.
pub(crate) fn integrand_part(tree: &ScenarioTree, k: usize, outcome: usize, d: usize, z: &[f64], u: &[f64], uhat: &[f64], out: &mut [f64]) {
    let law = tree.step_law(k);
    let p = law.p();
    let (a, j, _) = tree.step_branching(k).outcomes[outcome];
    let x = law.diff.atom(a);
    let nonzero = !law.jump.is_zero_atom(j);
    for r in 0..d {
        let zx: f64 = (0..p).map(|c| z[r * p + c] * x[c]).sum();
        let jump = if nonzero { u[j * d + r] } else { 0.0 };
        out[r] = zx + jump - uhat[r];
    }
}

/// Orthogonal representation of `G`, given on the children of a depth-`k`
/// node (`d` numbers each), against particle `particle`'s own increments.
pub fn mart_repr(tree: &ScenarioTree, k: usize, g: &[f64], d: usize, particle: usize) -> Result<Representation> {
    let step = k + 1;
    let b = tree.joint_branching(step);
    if g.len() != b * d {
        return Err(Error::SizeMismatch(g.len(), b * d));
    }
    if particle >= tree.particles() {
        return Err(Error::InvalidInput(format!("particle {particle} out of range")));
    }
    let mut gbar = vec![0.0; d];
    for c in 0..b {
        let pr = tree.child_prob(step, c);
        for r in 0..d {
            gbar[r] += pr * g[c * d + r];
        }
    }
    let mut h = vec![0.0; tree.own_branching(step) * d];
    for c in 0..b {
        let pr = tree.child_prob(step, c);
        let o = tree.own_outcome(step, c, particle);
        for r in 0..d {
            h[o * d + r] += pr * (g[c * d + r] - gbar[r]);
        }
    }
    let law = tree.step_law(step);
    let mut z = vec![0.0; d * law.p()];
    let mut u = vec![0.0; law.jump.len() * d];
    let mut uhat = vec![0.0; d];
    assemble(tree, step, d, &OwnMoments { h }, &mut z, &mut u, &mut uhat);
    let mut dm = vec![0.0; b * d];
    let mut part = vec![0.0; d];
    for c in 0..b {
        let o = tree.own_outcome(step, c, particle);
        integrand_part(tree, step, o, d, &z, &u, &uhat, &mut part);
        for r in 0..d {
            dm[c * d + r] = g[c * d + r] - gbar[r] - part[r];
        }
    }
    Ok(Representation { gbar, z, u, uhat, dm })
}

/// Weights derived from `E(beta A)` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormWeights {
    /// `E(beta A)_{t_k-}`, `k = 0..=K`.
    pub left: Vec<f64>,
    /// `E(beta A)_{t_k}`.
    pub value: Vec<f64>,
    /// Weight of `|Y_{t_k}|^2` inside the supremum of the `S^2` norm.
    pub sup: Vec<f64>,
    /// Jumps of `A` at `t_1..t_K`.
    pub da: Vec<f64>,
}

impl NormWeights {
    pub fn new(a: &FVPath, beta: f64) -> Result<Self> {
        if !a.is_pure_jump() {
            return Err(Error::InvalidInput("tree norms need a pure-jump A".into()));
        }
        let scaled = a.scale(beta);
        let left = stoch_exp_left(&scaled);
        let value = stoch_exp_values(&scaled);
        let k = a.steps();
        // Y is constant on [t_k, t_{k+1}), where the left limit of E runs from
        // E_{t_k-} (at t_k) to E_{t_k} (inside the interval)
        let mut sup: Vec<f64> = (0..k).map(|j| left[j].max(value[j])).collect();
        sup.push(left[k]);
        Ok(Self { left, value, sup, da: a.jumps().to_vec() })
    }

    pub fn steps(&self) -> usize {
        self.da.len()
    }
}

/// `E[E(beta A)_{T-} |xi|^2]` for leaf values `xi` (stride `d`).
pub fn norm_l2_beta(tree: &ScenarioTree, xi: &[f64], d: usize, a: &FVPath, beta: f64) -> Result<f64> {
    let k = tree.steps();
    let w = NormWeights::new(a, beta)?;
    let probs = tree.node_probs(k);
    if xi.len() != probs.len() * d {
        return Err(Error::SizeMismatch(xi.len(), probs.len() * d));
    }
    let m: f64 = probs.iter().enumerate().map(|(l, p)| p * norm_sq(&xi[l * d..(l + 1) * d])).sum();
    Ok(w.left[k] * m)
}

/// A solved BSDE for one particle, materialised on every node of the tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsdeSolution {
    pub particle: usize,
    pub d: usize,
    pub p: usize,
    /// `y[k]`: depth `k`, stride `d`, `k = 0..=K`.
    pub y: Vec<Vec<f64>>,
    /// `z[k]`: integrand of step `k+1` on depth-`k` nodes, stride `d * p`.
    pub z: Vec<Vec<f64>>,
    /// `u[k]`: jump function of step `k+1` on depth-`k` nodes, stride `atoms * d`.
    pub u: Vec<Vec<f64>>,
    pub uhat: Vec<Vec<f64>>,
    /// `g[k]`: `f dC` of step `k+1` on depth-`k+1` nodes, stride `d`.
    pub g: Vec<Vec<f64>>,
    /// `dm[k]`: orthogonal martingale increment of step `k+1` on depth-`k+1` nodes.
    pub dm: Vec<Vec<f64>>,
}

impl BsdeSolution {
    pub fn zeros(tree: &ScenarioTree, d: usize, particle: usize) -> Self {
        let k = tree.steps();
        let p = tree.model().p();
        let atoms = |j: usize| tree.step_law(j + 1).jump.len();
        Self {
            particle,
            d,
            p,
            y: (0..=k).map(|j| vec![0.0; tree.width(j) * d]).collect(),
            z: (0..k).map(|j| vec![0.0; tree.width(j) * d * p]).collect(),
            u: (0..k).map(|j| vec![0.0; tree.width(j) * atoms(j) * d]).collect(),
            uhat: (0..k).map(|j| vec![0.0; tree.width(j) * d]).collect(),
            g: (0..k).map(|j| vec![0.0; tree.width(j + 1) * d]).collect(),
            dm: (0..k).map(|j| vec![0.0; tree.width(j + 1) * d]).collect(),
        }
    }

    pub fn y0(&self) -> &[f64] {
        &self.y[0][..self.d]
    }

    /// Largest nodewise violation of
    /// `Y_k = Y_{k+1} + g - Z dX^o - (U 1_{!=0} - U^) - dM`.
    pub fn identity_residual(&self, tree: &ScenarioTree) -> f64 {
        let d = self.d;
        let mut worst = 0.0f64;
        let mut part = vec![0.0; d];
        for k in 0..tree.steps() {
            let step = k + 1;
            let b = tree.joint_branching(step);
            let atoms = tree.step_law(step).jump.len();
            for idx in 0..tree.width(k) {
                let z = &self.z[k][idx * d * self.p..(idx + 1) * d * self.p];
                let u = &self.u[k][idx * atoms * d..(idx + 1) * atoms * d];
                let uh = &self.uhat[k][idx * d..(idx + 1) * d];
                for c in 0..b {
                    let child = idx * b + c;
                    let o = tree.own_outcome(step, c, self.particle);
                    integrand_part(tree, step, o, d, z, u, uh, &mut part);
                    for r in 0..d {
                        let rhs = self.y[k + 1][child * d + r] + self.g[k][child * d + r]
                            - part[r]
                            - self.dm[k][child * d + r];
                        worst = worst.max((self.y[k][idx * d + r] - rhs).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Components of the weighted norm of a quadruple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct NormReport {
    pub s2: f64,
    pub z: f64,
    pub u: f64,
    pub m: f64,
    /// `||alpha Y||^2_{H^2}`, not part of the star norm.
    pub alpha_y: f64,
}

impl NormReport {
    pub fn star(&self) -> f64 {
        self.s2 + self.z + self.u + self.m
    }

    pub fn add(&self, other: &NormReport) -> NormReport {
        NormReport {
            s2: self.s2 + other.s2,
            z: self.z + other.z,
            u: self.u + other.u,
            m: self.m + other.m,
            alpha_y: self.alpha_y + other.alpha_y,
        }
    }

    pub fn scale(&self, s: f64) -> NormReport {
        NormReport { s2: s * self.s2, z: s * self.z, u: s * self.u, m: s * self.m, alpha_y: s * self.alpha_y }
    }
}

/// `E[sup_k w_k |y_k|^2]` with the supremum taken per path.
pub fn norm_s2(tree: &ScenarioTree, y: &[Vec<f64>], d: usize, w: &NormWeights) -> f64 {
    let k_max = tree.steps();
    let mut run: Vec<f64> = vec![w.sup[0] * norm_sq(&y[0][..d])];
    for k in 1..=k_max {
        let b = tree.joint_branching(k);
        let mut next = Vec::with_capacity(run.len() * b);
        for (idx, r) in run.iter().enumerate() {
            for c in 0..b {
                let child = idx * b + c;
                next.push(r.max(w.sup[k] * norm_sq(&y[k][child * d..(child + 1) * d])));
            }
        }
        run = next;
    }
    let probs = tree.node_probs(k_max);
    probs.iter().zip(&run).map(|(p, r)| p * r).sum()
}

/// `sum_k E[E_{t_k-} |y_k|^2] dA_k` over `k = 1..=K`.
pub fn norm_alpha_y(tree: &ScenarioTree, y: &[Vec<f64>], d: usize, w: &NormWeights) -> f64 {
    (1..=tree.steps())
        .map(|k| {
            let probs = tree.node_probs(k);
            let e: f64 = probs.iter().enumerate().map(|(i, p)| p * norm_sq(&y[k][i * d..(i + 1) * d])).sum();
            w.left[k] * w.da[k - 1] * e
        })
        .sum()
}

/// Weighted star-norm components of a materialised solution.
pub fn norm_star(tree: &ScenarioTree, sol: &BsdeSolution, a: &FVPath, beta: f64) -> Result<NormReport> {
    let w = NormWeights::new(a, beta)?;
    if w.steps() != tree.steps() {
        return Err(Error::SizeMismatch(w.steps(), tree.steps()));
    }
    let d = sol.d;
    let mut rep = NormReport { s2: norm_s2(tree, &sol.y, d, &w), alpha_y: norm_alpha_y(tree, &sol.y, d, &w), ..Default::default() };
    for k in 0..tree.steps() {
        let step = k + 1;
        let law = tree.step_law(step);
        let p = law.p();
        let atoms = law.jump.len();
        let b = tree.joint_branching(step);
        let probs = tree.node_probs(k);
        let (mut ez, mut eu, mut em) = (0.0, 0.0, 0.0);
        for (idx, pr) in probs.iter().enumerate() {
            ez += pr * zc_norm_sq(&sol.z[k][idx * d * p..(idx + 1) * d * p], &law.gram, d, p);
            eu += pr * law.tnorm_sq(&sol.u[k][idx * atoms * d..(idx + 1) * atoms * d], d) * law.dc;
            let mut cm = 0.0;
            for c in 0..b {
                let child = idx * b + c;
                cm += tree.child_prob(step, c) * norm_sq(&sol.dm[k][child * d..(child + 1) * d]);
            }
            em += pr * cm;
        }
        rep.z += w.left[step] * ez;
        rep.u += w.left[step] * eu;
        rep.m += w.left[step] * em;
    }
    Ok(rep)
}

/// `||Z c||^2 dC = tr(Z E[dX dX^T] Z^T)`.
pub(crate) fn zc_norm_sq(z: &[f64], gram: &[f64], d: usize, p: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..d {
        for a in 0..p {
            for b in 0..p {
                s += z[r * p + a] * gram[a * p + b] * z[r * p + b];
            }
        }
    }
    s
}

/// Marginal law of a node process at depth `k` (stride `d`).
pub fn law_at(tree: &ScenarioTree, values: &[f64], d: usize, k: usize) -> Result<DiscreteLaw> {
    let probs = tree.node_probs(k);
    if values.len() != probs.len() * d {
        return Err(Error::SizeMismatch(values.len(), probs.len() * d));
    }
    DiscreteLaw::from_flat(d, values, &normalized(probs))
}

/// Law of the stopped path `(y_0, ..., y_k)`; atoms are stored time-major.
pub fn path_law_at(tree: &ScenarioTree, values: &[Vec<f64>], d: usize, k: usize) -> Result<DiscreteLaw> {
    let probs = tree.node_probs(k);
    let mut atoms = Vec::with_capacity(probs.len() * d * (k + 1));
    for idx in 0..probs.len() {
        for j in 0..=k {
            let a = tree.ancestor(k, idx, j);
            atoms.extend_from_slice(&values[j][a * d..(a + 1) * d]);
        }
    }
    DiscreteLaw::from_flat(d * (k + 1), &atoms, &normalized(probs))
}

fn normalized(mut probs: Vec<f64>) -> Vec<f64> {
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::IncrementLaw;

    fn binary(steps: usize) -> DriverModel {
        DriverModel::homogeneous(steps, 1.0, IncrementLaw::rademacher(1.0), IncrementLaw::point_mass_zero(0)).unwrap()
    }

    #[test]
    fn node_counts() {
        let m = binary(2);
        assert_eq!(build_tree(&m, 1, 1, DEFAULT_NODE_BUDGET).unwrap().node_count(), 3);
        assert_eq!(build_tree(&m, 2, 2, DEFAULT_NODE_BUDGET).unwrap().node_count(), 21);
        let four = DriverModel::homogeneous(
            2,
            1.0,
            IncrementLaw::rademacher(1.0),
            IncrementLaw::new(1, vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        match build_tree(&four, 8, 2, DEFAULT_NODE_BUDGET) {
            Err(Error::BudgetExceeded { nodes, .. }) => assert_eq!(nodes, 1 + 65536 + 65536 * 65536),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let t = build_tree(&binary(2), 3, 2, DEFAULT_NODE_BUDGET).unwrap();
        for k in 1..=2 {
            let s: f64 = t.step_branching(k).joint_prob.iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        let s: f64 = t.node_probs(2).iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cond_exp_examples() {
        let t = build_tree(&binary(1), 1, 1, DEFAULT_NODE_BUDGET).unwrap();
        let x: Vec<f64> = (0..2).map(|o| t.diff_increment(1, o)[0]).collect();
        assert_eq!(cond_exp(&t, 0, &x, 0, 1), vec![0.0]);
        assert_eq!(cond_exp(&t, 0, &[5.0, 5.0], 0, 1), vec![5.0]);
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert_eq!(cond_exp(&t, 0, &sq, 0, 1), vec![1.0]);
    }

    #[test]
    fn repr_two_point() {
        let t = build_tree(&binary(1), 1, 1, DEFAULT_NODE_BUDGET).unwrap();
        let g: Vec<f64> = (0..2).map(|o| (3.0 * t.diff_increment(1, o)[0]).exp()).collect();
        let r = mart_repr(&t, 0, &g, 1, 0).unwrap();
        let (gm, gp) = if t.diff_increment(1, 0)[0] < 0.0 { (g[0], g[1]) } else { (g[1], g[0]) };
        assert!((r.z[0] - (gp - gm) / 2.0).abs() < 1e-14);
        assert!(r.u.iter().all(|&v| v == 0.0));
        assert!(r.dm.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn repr_jump_only() {
        let jl = IncrementLaw::trinomial(0.5, 1.0).unwrap();
        let m = DriverModel::homogeneous(1, 1.0, IncrementLaw::point_mass_zero(0), jl).unwrap();
        let t = build_tree(&m, 1, 1, DEFAULT_NODE_BUDGET).unwrap();
        let g: Vec<f64> = (0..3).map(|o| t.jump_increment(1, o)[0]).collect();
        let r = mart_repr(&t, 0, &g, 1, 0).unwrap();
        for o in 0..3 {
            let j = t.jump_atom(1, o);
            if !t.step_law(1).jump.is_zero_atom(j) {
                assert!((r.u[j] - t.jump_increment(1, o)[0]).abs() < 1e-15);
            }
        }
        assert_eq!(r.uhat, vec![0.0]);
        assert!(r.dm.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn repr_trinomial_diffusion() {
        let dl = IncrementLaw::trinomial(0.5, 1.0).unwrap();
        let m = DriverModel::homogeneous(1, 1.0, dl, IncrementLaw::point_mass_zero(0)).unwrap();
        let t = build_tree(&m, 1, 1, DEFAULT_NODE_BUDGET).unwrap();
        let g: Vec<f64> = (0..3).map(|o| t.diff_increment(1, o)[0].powi(2)).collect();
        let r = mart_repr(&t, 0, &g, 1, 0).unwrap();
        assert!(r.z[0].abs() < 1e-15);
        let mut second = 0.0;
        for o in 0..3 {
            assert!((r.dm[o] - (g[o] - 0.5)).abs() < 1e-15);
            second += t.child_prob(1, o) * r.dm[o] * r.dm[o];
        }
        assert!((second - 0.25).abs() < 1e-15);
    }

    #[test]
    fn l2_norm_examples() {
        let m = binary(2);
        let t = build_tree(&m, 1, 2, DEFAULT_NODE_BUDGET).unwrap();
        let a = FVPath::pure_jump(m.times().to_vec(), vec![0.5, 0.5]).unwrap();
        let xi: Vec<f64> = (0..4).map(|l| l as f64 - 1.0).collect();
        let plain = norm_l2_beta(&t, &xi, 1, &a, 0.0).unwrap();
        assert!((plain - 1.5).abs() < 1e-15);
        let ones = vec![1.0; 4];
        assert!((norm_l2_beta(&t, &ones, 1, &a, 2.0).unwrap() - 2.0).abs() < 1e-15);
        // direct summation: weight (1 + 2 * 0.5) on the single jump before T
        assert!((norm_l2_beta(&t, &xi, 1, &a, 2.0).unwrap() - 2.0 * plain).abs() < 1e-15);
    }

    #[test]
    fn laws() {
        let t = build_tree(&binary(1), 1, 1, DEFAULT_NODE_BUDGET).unwrap();
        let l = law_at(&t, &[2.0], 1, 0).unwrap();
        assert_eq!((l.len(), l.weight(0)), (1, 1.0));
        let x: Vec<f64> = (0..2).map(|o| t.diff_increment(1, o)[0]).collect();
        let l = law_at(&t, &x, 1, 1).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l.atom(0), &[-1.0]);
        assert_eq!(l.weight(0), 0.5);
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert_eq!(law_at(&t, &sq, 1, 1).unwrap().len(), 1);
        let pl = path_law_at(&t, &[vec![0.0], x.clone()], 1, 1).unwrap();
        assert_eq!(pl.len(), 2);
        assert_eq!(pl.dim(), 2);
        let flat = path_law_at(&t, &[vec![0.0], sq], 1, 1).unwrap();
        assert_eq!(flat.len(), 1);
    }

    #[test]
    fn own_index_matches_single_tree() {
        let m = binary(2);
        let t = build_tree(&m, 2, 2, DEFAULT_NODE_BUDGET).unwrap();
        for idx in 0..t.width(2) {
            let c2 = idx % 4;
            let c1 = idx / 4;
            for i in 0..2 {
                let expect = t.own_outcome(1, c1, i) * 2 + t.own_outcome(2, c2, i);
                assert_eq!(t.own_index(2, idx, i), expect);
            }
        }
    }
}
