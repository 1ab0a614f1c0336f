//! Deterministic finite-variation paths on a time grid, their stochastic
//! exponentials, and the contraction constants built on top of them.

use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A finite-variation function sampled on a grid `t_0 = 0 < ... < t_K`.
///
/// `drift[k-1]` is the continuous increment over `(t_{k-1}, t_k]` (taken to be
/// linear in between) and `jumps[k-1]` is the jump at `t_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FVPath {
    times: Vec<f64>,
    start: f64,
    drift: Vec<f64>,
    jumps: Vec<f64>,
}

impl FVPath {
    pub fn new(times: Vec<f64>, start: f64, drift: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidInput("empty time grid".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
        }
        let k = times.len() - 1;
        if drift.len() != k {
            return Err(Error::SizeMismatch(drift.len(), k));
        }
        if jumps.len() != k {
            return Err(Error::SizeMismatch(jumps.len(), k));
        }
        if !start.is_finite() || drift.iter().chain(&jumps).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite path data".into()));
        }
        Ok(Self { times, start, drift, jumps })
    }

    pub fn pure_jump(times: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        let k = times.len().saturating_sub(1);
        Self::new(times, 0.0, vec![0.0; k], jumps)
    }

    pub fn zero(times: Vec<f64>) -> Result<Self> {
        let k = times.len().saturating_sub(1);
        Self::new(times, 0.0, vec![0.0; k], vec![0.0; k])
    }

    pub fn uniform_grid(steps: usize, horizon: f64) -> Vec<f64> {
        (0..=steps).map(|k| horizon * k as f64 / steps.max(1) as f64).collect()
    }

    pub fn steps(&self) -> usize {
        self.jumps.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn is_pure_jump(&self) -> bool {
        self.drift.iter().all(|&c| c == 0.0)
    }

    /// Values `A_{t_0}, ..., A_{t_K}`.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut acc = self.start;
        out.push(acc);
        for (c, j) in self.drift.iter().zip(&self.jumps) {
            acc += c + j;
            out.push(acc);
        }
        out
    }

    /// Left limits `A_{t_k-}`; at `t_0` this is the start value.
    pub fn left_limits(&self) -> Vec<f64> {
        let v = self.values();
        let mut out = Vec::with_capacity(v.len());
        out.push(v[0]);
        for k in 1..v.len() {
            out.push(v[k] - self.jumps[k - 1]);
        }
        out
    }

    /// Continuous part `A^c_{t_k} - A^c_0`.
    pub fn continuous_values(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut acc = 0.0;
        for c in &self.drift {
            acc += c;
            out.push(acc);
        }
        out
    }

    pub fn scale(&self, factor: f64) -> FVPath {
        FVPath {
            times: self.times.clone(),
            start: self.start * factor,
            drift: self.drift.iter().map(|c| c * factor).collect(),
            jumps: self.jumps.iter().map(|j| j * factor).collect(),
        }
    }

    pub fn add(&self, other: &FVPath) -> Result<FVPath> {
        self.check_grid(other)?;
        Ok(FVPath {
            times: self.times.clone(),
            start: self.start + other.start,
            drift: self.drift.iter().zip(&other.drift).map(|(a, b)| a + b).collect(),
            jumps: self.jumps.iter().zip(&other.jumps).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &FVPath) -> Result<FVPath> {
        self.add(&other.scale(-1.0))
    }

    /// Quadratic covariation `[A, B]`: the sum of products of simultaneous jumps.
    pub fn bracket(&self, other: &FVPath) -> Result<FVPath> {
        self.check_grid(other)?;
        Ok(FVPath {
            times: self.times.clone(),
            start: 0.0,
            drift: vec![0.0; self.steps()],
            jumps: self.jumps.iter().zip(&other.jumps).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.drift.iter().chain(&self.jumps).all(|&x| x >= 0.0)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.drift.iter().chain(&self.jumps).all(|&x| x <= 0.0)
    }

    pub fn max_jump(&self) -> f64 {
        self.jumps.iter().copied().fold(0.0, f64::max)
    }

    fn check_grid(&self, other: &FVPath) -> Result<()> {
        if self.times != other.times {
            return Err(Error::InvalidInput("paths live on different grids".into()));
        }
        Ok(())
    }
}

/// `E(A)_{t_k} = exp(A^c_{t_k}) * prod_{j <= k} (1 + dA_j)` at every grid point.
pub fn stoch_exp_values(a: &FVPath) -> Vec<f64> {
    let cont = a.continuous_values();
    let mut prod = 1.0;
    let mut out = Vec::with_capacity(cont.len());
    out.push(cont[0].exp());
    for k in 1..cont.len() {
        prod *= 1.0 + a.jumps[k - 1];
        out.push(cont[k].exp() * prod);
    }
    out
}

/// Left limits `E(A)_{t_k-}`, with `E(A)_{0-} = 1`.
pub fn stoch_exp_left(a: &FVPath) -> Vec<f64> {
    let e = stoch_exp_values(a);
    let mut out = Vec::with_capacity(e.len());
    out.push(1.0);
    for k in 1..e.len() {
        out.push(e[k - 1] * a.drift[k - 1].exp());
    }
    out
}

/// The stochastic exponential as a path: value 1 at the origin, continuous
/// increments `E_{k-1}(e^{c_k} - 1)` and jumps `E_{t_k-} dA_k`.
pub fn stoch_exp(a: &FVPath) -> FVPath {
    let e = stoch_exp_values(a);
    let left = stoch_exp_left(a);
    let k = a.steps();
    let drift = (0..k).map(|j| left[j + 1] - e[j]).collect();
    let jumps = (0..k).map(|j| left[j + 1] * a.jumps[j]).collect();
    FVPath { times: a.times.clone(), start: 1.0, drift, jumps }
}

/// Largest deviation from `E_t = 1 + int_(0,t] E_{s-} dA_s` on the grid,
/// relative once `|E_t|` exceeds one.
pub fn stoch_exp_sde_residual(a: &FVPath) -> f64 {
    let e = stoch_exp_values(a);
    let mut integral = 0.0;
    let mut worst = (e[0] - 1.0).abs();
    for k in 1..e.len() {
        let c = a.drift[k - 1];
        // the continuous part grows like E_{k-1} e^{c s} on the interval
        integral += e[k - 1] * c.exp_m1();
        integral += e[k - 1] * c.exp() * a.jumps[k - 1];
        worst = worst.max((e[k] - 1.0 - integral).abs() / e[k].abs().max(1.0));
    }
    worst
}

/// `A-bar = A - sum (dA)^2 / (1 + dA)`, so that `E(A) E(-A-bar) = 1`.
pub fn bar_path(a: &FVPath) -> Result<FVPath> {
    let mut jumps = Vec::with_capacity(a.steps());
    for (k, &j) in a.jumps.iter().enumerate() {
        if j == -1.0 {
            return Err(Error::JumpAtMinusOne(k + 1));
        }
        jumps.push(j - j * j / (1.0 + j));
    }
    Ok(FVPath { times: a.times.clone(), start: a.start, drift: a.drift.clone(), jumps })
}

/// `A_0 + int 1/(1 + dA) dA`, an alternative route to `A-bar`.
pub fn bar_path_integral(a: &FVPath) -> Result<FVPath> {
    let mut jumps = Vec::with_capacity(a.steps());
    for (k, &j) in a.jumps.iter().enumerate() {
        if j == -1.0 {
            return Err(Error::JumpAtMinusOne(k + 1));
        }
        jumps.push(j / (1.0 + j));
    }
    Ok(FVPath { times: a.times.clone(), start: a.start, drift: a.drift.clone(), jumps })
}

/// `A-tilde = delta A - bar(gamma A) - [delta A, bar(gamma A)]`, which satisfies
/// `E(delta A) / E(gamma A) = E(A-tilde)`.
pub fn tilde_path(a: &FVPath, delta: f64, gamma: f64) -> Result<FVPath> {
    let da = a.scale(delta);
    let ga_bar = bar_path(&a.scale(gamma))?;
    let br = da.bracket(&ga_bar)?;
    let mut out = da.sub(&ga_bar)?.sub(&br)?;
    out.start = 0.0;
    Ok(out)
}

/// Checks `E(A) E(B) = E(A + B + [A, B])` on the grid.
pub fn product_identity_check(a: &FVPath, b: &FVPath) -> bool {
    let Ok(sum) = a.add(b).and_then(|s| s.add(&a.bracket(b)?)) else {
        return false;
    };
    let ea = stoch_exp_values(a);
    let eb = stoch_exp_values(b);
    let es = stoch_exp_values(&sum);
    ea.iter().zip(&eb).zip(&es).all(|((x, y), z)| approx_eq(x * y, *z))
}

/// Grid comparison: absolute 1e-12 below magnitude one, relative 1e-12 above.
pub fn approx_eq(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
}

/// `(1 + gamma Phi)^2 / (gamma |delta - gamma|)`.
pub fn lambda_gdp(gamma: f64, delta: f64, phi: f64) -> Result<f64> {
    if gamma == delta {
        return Err(Error::EqualExponents(gamma));
    }
    if !(gamma > 0.0 && delta > 0.0 && phi >= 0.0) {
        return Err(Error::InvalidInput("need gamma, delta > 0 and phi >= 0".into()));
    }
    Ok((1.0 + gamma * phi).powi(2) / (gamma * (delta - gamma).abs()))
}

pub fn m_star(beta: f64, phi: f64) -> f64 {
    let r = 6.0 * 17f64.sqrt();
    (r + 35.0) / beta + (r + 26.0) * phi
}

pub fn m_tilde(beta: f64, phi: f64) -> f64 {
    let ib = 2.0 / beta;
    let s = 2.0 * (ib + 9.0).sqrt() * (ib + 17.0).sqrt();
    (s + 2.0 * ib + 35.0) / beta + (s + 2.0 * ib + 26.0) * phi
}

/// Objective whose infimum over `gamma in (0, beta)` is `m_star`.
pub fn g1(beta: f64, phi: f64, gamma: f64) -> f64 {
    let q = 1.0 + gamma * phi;
    9.0 / beta + 8.0 * q / gamma + 9.0 * beta / (beta - gamma) * q * q / gamma
}

/// Objective whose infimum over `gamma in (0, beta)` is `m_tilde`.
pub fn g2(beta: f64, phi: f64, gamma: f64) -> f64 {
    let q = 1.0 + gamma * phi;
    9.0 / beta + 8.0 * q / gamma + (2.0 + 9.0 * beta) / (beta - gamma) * q * q / gamma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstantKind {
    Star,
    Tilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaMinimum {
    pub value: f64,
    pub gamma: f64,
}

/// Grid search over `(0, beta)` followed by golden-section refinement inside
/// the best cell and its neighbours.
pub fn minimize_over_gamma(kind: ConstantKind, beta: f64, phi: f64, grid_size: usize) -> GammaMinimum {
    let g = |x: f64| match kind {
        ConstantKind::Star => g1(beta, phi, x),
        ConstantKind::Tilde => g2(beta, phi, x),
    };
    let n = grid_size.max(3);
    let h = beta / n as f64;
    let point = |i: usize| h * (i as f64 + 0.5);
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..n {
        let v = g(point(i));
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let lo = if best == 0 { point(0) * 1e-6 } else { point(best - 1) };
    let hi = if best + 1 == n { beta - (beta - point(best)) * 1e-6 } else { point(best + 1) };
    let (gamma, value) = golden_section(g, lo, hi);
    if value < best_val {
        GammaMinimum { value, gamma }
    } else {
        GammaMinimum { value: best_val, gamma: point(best) }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Closed-form minimiser of `g1`, from `1/gamma + Phi = lambda (1/beta + Phi)`
/// with `lambda = 1 + 3/sqrt(17)`.
pub fn m_star_minimizer(beta: f64, phi: f64) -> f64 {
    let lambda = 1.0 + 3.0 / 17f64.sqrt();
    1.0 / (lambda * (1.0 / beta + phi) - phi)
}

/// Closed-form minimiser of `g2`.
pub fn m_tilde_minimizer(beta: f64, phi: f64) -> f64 {
    let ib = 2.0 / beta;
    let lambda = 1.0 + (ib + 9.0).sqrt() / (ib + 17.0).sqrt();
    1.0 / (lambda * (1.0 / beta + phi) - phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TheoremId {
    #[serde(rename = "path-MV")]
    PathMv,
    #[serde(rename = "instant-MV")]
    InstantMv,
    #[serde(rename = "path-MF")]
    PathMf,
    #[serde(rename = "instant-MF")]
    InstantMf,
    #[serde(rename = "chaos-PC9")]
    ChaosPc9,
    #[serde(rename = "chaos-PC8'")]
    ChaosPc8,
}

impl TheoremId {
    pub const ALL: [TheoremId; 6] = [
        TheoremId::PathMv,
        TheoremId::InstantMv,
        TheoremId::PathMf,
        TheoremId::InstantMf,
        TheoremId::ChaosPc9,
        TheoremId::ChaosPc8,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TheoremId::PathMv => "path-MV",
            TheoremId::InstantMv => "instant-MV",
            TheoremId::PathMf => "path-MF",
            TheoremId::InstantMf => "instant-MF",
            TheoremId::ChaosPc9 => "chaos-PC9",
            TheoremId::ChaosPc8 => "chaos-PC8'",
        }
    }

    /// Path-dependent results need the terminal exponential bound.
    pub fn needs_lambda(self) -> bool {
        matches!(self, TheoremId::PathMv | TheoremId::PathMf | TheoremId::ChaosPc9)
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TheoremId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TheoremId::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownTheorem(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub theorem_id: TheoremId,
    pub beta_hat: f64,
    pub phi: f64,
    pub lambda_beta: Option<f64>,
    pub modulus: f64,
    pub holds: bool,
}

pub fn contraction_condition(
    theorem: TheoremId,
    beta_hat: f64,
    phi: f64,
    lambda_beta: Option<f64>,
) -> Result<ContractionReport> {
    if !(beta_hat > 0.0) || !(phi >= 0.0) || !phi.is_finite() {
        return Err(Error::InvalidInput(format!("beta_hat = {beta_hat}, phi = {phi}")));
    }
    let lam = if theorem.needs_lambda() {
        let l = lambda_beta.ok_or_else(|| {
            Error::InvalidInput(format!("{theorem} needs the terminal exponential bound"))
        })?;
        if !(l >= 1.0) {
            return Err(Error::InvalidInput(format!("exponential bound {l} below 1")));
        }
        Some(l)
    } else {
        lambda_beta
    };
    let modulus = match theorem {
        TheoremId::PathMv | TheoremId::PathMf => {
            f64::max(2.0, 2.0 * lam.unwrap() / beta_hat) * m_star(beta_hat, phi)
        }
        TheoremId::InstantMv | TheoremId::InstantMf => 2.0 * m_tilde(beta_hat, phi),
        TheoremId::ChaosPc9 => f64::max(2.0, 3.0 * lam.unwrap() / beta_hat) * m_star(beta_hat, phi),
        TheoremId::ChaosPc8 => 3.0 * m_tilde(beta_hat, phi),
    };
    Ok(ContractionReport {
        theorem_id: theorem,
        beta_hat,
        phi,
        lambda_beta: lam,
        modulus,
        holds: modulus < 1.0,
    })
}

/// Smallest `beta_hat` on a log grid (100 points per decade, 1e-3 to 1e6) at
/// which the condition holds.
pub fn suggest_beta(theorem: TheoremId, phi: f64, lambda_of_beta: impl Fn(f64) -> f64) -> Option<f64> {
    (0..=900).map(|i| 10f64.powf(-3.0 + i as f64 / 100.0)).find(|&b| {
        contraction_condition(theorem, b, phi, Some(lambda_of_beta(b)))
            .map(|r| r.holds)
            .unwrap_or(false)
    })
}
