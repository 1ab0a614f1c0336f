//! Finite-support independent-increment drivers and their deterministic
//! compensator data, plus the jump-side operators built from the kernel.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fvcalc::FVPath;

const MEAN_TOL: f64 = 1e-12;

/// Finite law on `R^dim` with strictly positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementLaw {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl IncrementLaw {
    pub fn new(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::SizeMismatch(atoms.len(), weights.len()));
        }
        if let Some(a) = atoms.iter().find(|a| a.len() != dim) {
            return Err(Error::DimensionMismatch(a.len(), dim));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("increment weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("increment weights sum to {total}")));
        }
        Ok(Self { dim, atoms: atoms.concat(), weights })
    }

    /// Dirac mass at the origin of `R^dim` (for `dim = 0`, the trivial law).
    pub fn point_mass_zero(dim: usize) -> Self {
        Self { dim, atoms: vec![0.0; dim], weights: vec![1.0] }
    }

    /// `+-sigma` with probability one half each.
    pub fn rademacher(sigma: f64) -> Self {
        Self { dim: 1, atoms: vec![-sigma, sigma], weights: vec![0.5, 0.5] }
    }

    /// `{-size, 0, size}` with mass `p0` at zero.
    pub fn trinomial(p0: f64, size: f64) -> Result<Self> {
        if !(0.0 < p0 && p0 < 1.0) {
            return Err(Error::InvalidInput(format!("trinomial mass at zero {p0} not in (0,1)")));
        }
        let side = (1.0 - p0) / 2.0;
        Self::new(1, vec![vec![-size], vec![0.0], vec![size]], vec![side, p0, side])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (mj, a) in m.iter_mut().zip(self.atom(i)) {
                *mj += self.weights[i] * a;
            }
        }
        m
    }

    pub fn second_moment(&self) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * norm_sq(self.atom(i))).sum()
    }

    /// `E[X X^T]`, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let d = self.dim;
        let mut g = vec![0.0; d * d];
        for i in 0..self.len() {
            let a = self.atom(i);
            for r in 0..d {
                for c in 0..d {
                    g[r * d + c] += self.weights[i] * a[r] * a[c];
                }
            }
        }
        g
    }

    pub fn is_zero_atom(&self, i: usize) -> bool {
        self.atom(i).iter().all(|&x| x == 0.0)
    }

    pub fn zero_atom(&self) -> Option<usize> {
        (0..self.len()).find(|&i| self.is_zero_atom(i))
    }
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Laws and derived compensator data for one step `(t_{k-1}, t_k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLaw {
    pub diff: IncrementLaw,
    pub jump: IncrementLaw,
    /// `dC_k = E|dX^o|^2 + E|dX^n|^2`.
    pub dc: f64,
    /// `E[dX^o dX^o^T]`, row-major `p x p`.
    pub gram: Vec<f64>,
    /// Symmetric square root of `gram / dC`.
    pub c: Vec<f64>,
    /// Kernel `K(w) = P(w) / dC` on the non-zero jump atoms, as `(atom, value)`.
    pub kernel: Vec<(usize, f64)>,
    /// Mass of the non-zero jump atoms.
    pub zeta: f64,
}

impl StepLaw {
    fn build(step: usize, diff: IncrementLaw, jump: IncrementLaw) -> Result<Self> {
        for law in [&diff, &jump] {
            let m = law.mean();
            if let Some(&bad) = m.iter().find(|v| v.abs() > MEAN_TOL) {
                return Err(Error::NonZeroMean { step, mean: bad });
            }
        }
        let dc = diff.second_moment() + jump.second_moment();
        if !(dc > 0.0) {
            return Err(Error::DegenerateStep(step));
        }
        let gram = diff.gram();
        let p = diff.dim();
        let c = sym_sqrt(&gram.iter().map(|g| g / dc).collect::<Vec<_>>(), p)
            .map_err(|eigenvalue| Error::NonPsd { step, eigenvalue })?;
        let mut kernel = Vec::new();
        let mut zeta = 0.0;
        for i in 0..jump.len() {
            if !jump.is_zero_atom(i) {
                kernel.push((i, jump.weight(i) / dc));
                zeta += jump.weight(i);
            }
        }
        Ok(Self { diff, jump, dc, gram, c, kernel, zeta })
    }

    pub fn p(&self) -> usize {
        self.diff.dim()
    }

    pub fn n(&self) -> usize {
        self.jump.dim()
    }

    /// `U-hat = sum_{w != 0} U(w) P(w)`; `u` is atom-major with stride `d`.
    pub fn hat(&self, u: &[f64], d: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(i, k) in &self.kernel {
            let w = k * self.dc;
            for j in 0..d {
                out[j] += w * u[i * d + j];
            }
        }
    }

    /// `Gamma(U) = int (U - U^)(Th - Th^) K + (1 - zeta) dC int U K int Th K`.
    pub fn gamma(&self, u: &[f64], theta: &[f64], d: usize, out: &mut [f64]) {
        let mut uh = vec![0.0; d];
        self.hat(u, d, &mut uh);
        let th: f64 = self.kernel.iter().map(|&(i, k)| k * self.dc * theta[i]).sum();
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(i, k) in &self.kernel {
            let tw = (theta[i] - th) * k;
            for j in 0..d {
                out[j] += (u[i * d + j] - uh[j]) * tw;
            }
        }
        let tail = (1.0 - self.zeta) / self.dc * th;
        for j in 0..d {
            out[j] += tail * uh[j];
        }
    }

    /// `[[U]]^2 = int |U - U^|^2 K + (1 - zeta) dC |int U K|^2`.
    pub fn tnorm_sq(&self, u: &[f64], d: usize) -> f64 {
        let mut uh = vec![0.0; d];
        self.hat(u, d, &mut uh);
        let mut s = 0.0;
        for &(i, k) in &self.kernel {
            for j in 0..d {
                s += k * (u[i * d + j] - uh[j]).powi(2);
            }
        }
        s + (1.0 - self.zeta) / self.dc * norm_sq(&uh)
    }

    /// `|Theta(w)| <= |w|` off zero and `<= 1` at the zero atom.
    pub fn check_theta(&self, step: usize, theta: &[f64]) -> Result<()> {
        if theta.len() != self.jump.len() {
            return Err(Error::SizeMismatch(theta.len(), self.jump.len()));
        }
        for (i, &t) in theta.iter().enumerate() {
            let bound = if self.jump.is_zero_atom(i) { 1.0 } else { norm_sq(self.jump.atom(i)).sqrt() };
            if t.abs() > bound * (1.0 + 1e-15) {
                return Err(Error::ThetaBoundViolated { step, atom: i });
            }
        }
        Ok(())
    }
}

/// Symmetric PSD square root; returns the offending eigenvalue on failure.
fn sym_sqrt(m: &[f64], p: usize) -> std::result::Result<Vec<f64>, f64> {
    if p == 0 {
        return Ok(Vec::new());
    }
    let eig = DMatrix::from_row_slice(p, p, m).symmetric_eigen();
    let mut root = DMatrix::<f64>::zeros(p, p);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-10 {
            return Err(lambda);
        }
        let s = if lambda < 1e-12 { 0.0 } else { lambda.sqrt() };
        let v = eig.eigenvectors.column(idx);
        root += s * v * v.transpose();
    }
    let mut out = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            out[r * p + c] = root[(r, c)];
        }
    }
    Ok(out)
}

/// Moore-Penrose inverse of a symmetric PSD matrix (row-major).
pub(crate) fn sym_pinv(m: &[f64], p: usize) -> Vec<f64> {
    if p == 0 {
        return Vec::new();
    }
    let eig = DMatrix::from_row_slice(p, p, m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut inv = DMatrix::<f64>::zeros(p, p);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > 1e-12 * top.max(1e-300) {
            let v = eig.eigenvectors.column(idx);
            inv += (1.0 / lambda) * v * v.transpose();
        }
    }
    let mut out = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            out[r * p + c] = inv[(r, c)];
        }
    }
    out
}

/// Driver with independent increments across steps and between the
/// continuous-martingale and jump parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriverModel {
    times: Vec<f64>,
    steps: Vec<StepLaw>,
}

pub fn build_driver(times: Vec<f64>, diff_laws: Vec<IncrementLaw>, jump_laws: Vec<IncrementLaw>) -> Result<DriverModel> {
    let k = times.len().saturating_sub(1);
    if k == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
    }
    if diff_laws.len() != k {
        return Err(Error::SizeMismatch(diff_laws.len(), k));
    }
    if jump_laws.len() != k {
        return Err(Error::SizeMismatch(jump_laws.len(), k));
    }
    let (p, n) = (diff_laws[0].dim(), jump_laws[0].dim());
    let mut steps = Vec::with_capacity(k);
    for (i, (dl, jl)) in diff_laws.into_iter().zip(jump_laws).enumerate() {
        if dl.dim() != p {
            return Err(Error::DimensionMismatch(dl.dim(), p));
        }
        if jl.dim() != n {
            return Err(Error::DimensionMismatch(jl.dim(), n));
        }
        steps.push(StepLaw::build(i + 1, dl, jl)?);
    }
    Ok(DriverModel { times, steps })
}

impl DriverModel {
    /// The same pair of laws at every step of a uniform grid on `[0, horizon]`.
    pub fn homogeneous(steps: usize, horizon: f64, diff: IncrementLaw, jump: IncrementLaw) -> Result<Self> {
        build_driver(FVPath::uniform_grid(steps, horizon), vec![diff; steps], vec![jump; steps])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    /// Law of step `k` in `1..=K`.
    pub fn step(&self, k: usize) -> &StepLaw {
        &self.steps[k - 1]
    }

    pub fn p(&self) -> usize {
        self.steps[0].p()
    }

    pub fn n(&self) -> usize {
        self.steps[0].n()
    }

    /// Compensator `C` as a pure-jump path.
    pub fn compensator(&self) -> FVPath {
        FVPath::pure_jump(self.times.clone(), self.steps.iter().map(|s| s.dc).collect()).expect("valid grid")
    }

    pub fn total_compensator(&self) -> f64 {
        self.steps.iter().map(|s| s.dc).sum()
    }

    /// `Theta(t, x) = x_j` on every step.
    pub fn theta_coordinate(&self, j: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.n();
        if n > 0 && j >= n {
            return Err(Error::DimensionMismatch(j, n));
        }
        Ok(self
            .steps
            .iter()
            .map(|s| (0..s.jump.len()).map(|i| if n == 0 { 0.0 } else { s.jump.atom(i)[j] }).collect())
            .collect())
    }

    pub fn check_theta(&self, theta: &[Vec<f64>]) -> Result<()> {
        if theta.len() != self.steps() {
            return Err(Error::SizeMismatch(theta.len(), self.steps()));
        }
        for (k, t) in theta.iter().enumerate() {
            self.steps[k].check_theta(k + 1, t)?;
        }
        Ok(())
    }
}

/// Jump function `U(t_k, w)` on the atoms of the step-`k` jump law, with
/// `U(t_k, 0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpFunction {
    pub d: usize,
    pub values: Vec<f64>,
}

impl JumpFunction {
    pub fn from_fn(step: &StepLaw, d: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut values = vec![0.0; step.jump.len() * d];
        for i in 0..step.jump.len() {
            if !step.jump.is_zero_atom(i) {
                values[i * d..(i + 1) * d].copy_from_slice(&f(step.jump.atom(i)));
            }
        }
        Self { d, values }
    }

    pub fn zero(step: &StepLaw, d: usize) -> Self {
        Self { d, values: vec![0.0; step.jump.len() * d] }
    }
}

pub fn hat_u(model: &DriverModel, k: usize, u: &JumpFunction) -> Vec<f64> {
    let mut out = vec![0.0; u.d];
    model.step(k).hat(&u.values, u.d, &mut out);
    out
}

pub fn gamma_eval(model: &DriverModel, k: usize, u: &JumpFunction, theta: &[f64]) -> Result<Vec<f64>> {
    let step = model.step(k);
    step.check_theta(k, theta)?;
    let mut out = vec![0.0; u.d];
    step.gamma(&u.values, theta, u.d, &mut out);
    Ok(out)
}

pub fn tnorm_sq(model: &DriverModel, k: usize, u: &JumpFunction) -> f64 {
    model.step(k).tnorm_sq(&u.values, u.d)
}

/// Joint law of one step's `(dX^o, dX^n)`, used to probe the orthogonality
/// requirement `E[dX^o | dX^n = w] = 0` for non-zero `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointIncrementLaw {
    pub outcomes: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl JointIncrementLaw {
    pub fn product(step: &StepLaw) -> Self {
        let mut outcomes = Vec::new();
        for a in 0..step.diff.len() {
            for b in 0..step.jump.len() {
                outcomes.push((
                    step.diff.atom(a).to_vec(),
                    step.jump.atom(b).to_vec(),
                    step.diff.weight(a) * step.jump.weight(b),
                ));
            }
        }
        Self { outcomes }
    }

    pub fn orthogonality_holds(&self) -> bool {
        let mut seen: Vec<&[f64]> = Vec::new();
        for (_, w, _) in &self.outcomes {
            if w.iter().all(|&x| x == 0.0) || seen.iter().any(|s| *s == w.as_slice()) {
                continue;
            }
            seen.push(w);
            let mut mass = 0.0;
            let mut moment: Vec<f64> = Vec::new();
            for (x, v, pr) in &self.outcomes {
                if v == w {
                    mass += pr;
                    if moment.is_empty() {
                        moment = vec![0.0; x.len()];
                    }
                    for (m, xi) in moment.iter_mut().zip(x) {
                        *m += pr * xi;
                    }
                }
            }
            if moment.iter().any(|m| (m / mass).abs() > 1e-12) {
                return false;
            }
        }
        true
    }
}

pub fn validate_driver_orthogonality(model: &DriverModel) -> bool {
    model.steps.iter().all(|s| JointIncrementLaw::product(s).orthogonality_holds())
}

/// Per-step Lipschitz coefficients `r, theta^o, theta^n, theta^*` of a generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzCoeffs {
    pub r: Vec<f64>,
    pub theta_o: Vec<f64>,
    pub theta_nat: Vec<f64>,
    pub theta_star: Vec<f64>,
}

impl LipschitzCoeffs {
    pub fn constant(steps: usize, r: f64, theta_o: f64, theta_nat: f64, theta_star: f64) -> Self {
        Self {
            r: vec![r; steps],
            theta_o: vec![theta_o; steps],
            theta_nat: vec![theta_nat; steps],
            theta_star: vec![theta_star; steps],
        }
    }

    /// `alpha^2 = max{sqrt r, theta^o, theta^n, sqrt theta^*}` at each step.
    pub fn alpha_sq(&self) -> Vec<f64> {
        (0..self.r.len())
            .map(|k| {
                self.r[k]
                    .sqrt()
                    .max(self.theta_o[k])
                    .max(self.theta_nat[k])
                    .max(self.theta_star[k].sqrt())
            })
            .collect()
    }
}

/// The process `A = int alpha^2 dC` with its jump bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightProcess {
    pub a: FVPath,
    pub phi: f64,
    pub alpha_sq: Vec<f64>,
}

impl WeightProcess {
    /// `E(beta A)_T`.
    pub fn lambda_beta(&self, beta: f64) -> f64 {
        self.a.jumps().iter().map(|j| 1.0 + beta * j).product()
    }
}

pub fn lipschitz_to_a(coeffs: &LipschitzCoeffs, model: &DriverModel) -> Result<WeightProcess> {
    let k = model.steps();
    for v in [&coeffs.r, &coeffs.theta_o, &coeffs.theta_nat, &coeffs.theta_star] {
        if v.len() != k {
            return Err(Error::SizeMismatch(v.len(), k));
        }
        if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("Lipschitz coefficients must be finite and non-negative".into()));
        }
    }
    let alpha_sq = coeffs.alpha_sq();
    let jumps: Vec<f64> = (0..k).map(|i| alpha_sq[i] * model.steps[i].dc).collect();
    let phi = jumps.iter().copied().fold(0.0, f64::max);
    let a = FVPath::pure_jump(model.times.clone(), jumps)?;
    Ok(WeightProcess { a, phi, alpha_sq })
}
