//! Parametric generators `f(t, y, Zc, Gamma(U), mu)` and their declared
//! Lipschitz data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{norm_sq, DriverModel, LipschitzCoeffs};
use crate::error::{Error, Result};
use crate::transport::{w2_discrete, DiscreteLaw, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `f` sees `Y_t` and `L(Y_t)`.
    Instant,
    /// `f` sees the stopped path `Y|[0,t]` and its law.
    Path,
}

/// Functional through which `f` reads its measure argument. Every variant is
/// `phi(int h dmu)` for a feature map `h`, so empirical and exact laws are
/// handled by averaging features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasureFunctional {
    None,
    /// `int x dmu`, a `d`-vector.
    Mean,
    /// `W_2(mu, delta_0) = sqrt(int |x|^2 dmu)`.
    W2Ref,
    /// `sum_j lambda_j int min(|x - c_j|, 1) dmu`.
    Custom { centers: Vec<Vec<f64>>, lambdas: Vec<f64> },
    /// `int min(sup_s |x_s|, 1) dmu`; on states the supremum is `|x|`.
    PathSupMean,
}

impl MeasureFunctional {
    pub fn feature_dim(&self, d: usize) -> usize {
        match self {
            MeasureFunctional::None => 0,
            MeasureFunctional::Mean => d,
            _ => 1,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, MeasureFunctional::None)
    }

    /// Features of one state `y`, given the running supremum of `|y_s|`.
    pub fn features(&self, y: &[f64], path_sup: f64, out: &mut [f64]) {
        match self {
            MeasureFunctional::None => {}
            MeasureFunctional::Mean => out.copy_from_slice(y),
            MeasureFunctional::W2Ref => out[0] = norm_sq(y),
            MeasureFunctional::Custom { centers, lambdas } => {
                out[0] = centers
                    .iter()
                    .zip(lambdas)
                    .map(|(c, l)| {
                        let dist: f64 = y.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                        l * dist.min(1.0)
                    })
                    .sum()
            }
            MeasureFunctional::PathSupMean => out[0] = path_sup.min(1.0),
        }
    }

    /// Maps averaged features to the value seen by the generator.
    pub fn finish(&self, avg: &mut [f64]) {
        if let MeasureFunctional::W2Ref = self {
            avg[0] = avg[0].max(0.0).sqrt();
        }
    }

    /// Lipschitz constant of the functional with respect to `W_2`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            MeasureFunctional::None => 0.0,
            MeasureFunctional::Custom { lambdas, .. } => lambdas.iter().map(|l| l.abs()).sum(),
            _ => 1.0,
        }
    }

    /// Value on a law of states (`mode = Instant`) or of time-major stopped
    /// paths with states in `R^d` (`mode = Path`).
    pub fn of_law(&self, law: &DiscreteLaw, d: usize, mode: Mode) -> Vec<f64> {
        let fd = self.feature_dim(d);
        let mut avg = vec![0.0; fd];
        let mut buf = vec![0.0; fd];
        for i in 0..law.len() {
            let atom = law.atom(i);
            let (state, sup) = match mode {
                Mode::Instant => (atom, norm_sq(atom).sqrt()),
                Mode::Path => (&atom[atom.len() - d..], path_sup(atom, d)),
            };
            self.features(state, sup, &mut buf);
            for (a, b) in avg.iter_mut().zip(&buf) {
                *a += law.weight(i) * b;
            }
        }
        self.finish(&mut avg);
        avg
    }
}

fn path_sup(path: &[f64], d: usize) -> f64 {
    path.chunks(d).map(|s| norm_sq(s).sqrt()).fold(0.0, f64::max)
}

/// `f = a + b s(y) + c s((Zc)_{.,0}) + g s(Gamma(U)) + e s(m(mu))`, applied
/// coordinatewise with `s` the identity or `tanh`. A scalar measure value is
/// broadcast to every coordinate. In path mode the `y` argument is the running
/// average of the stopped path clamped to `[-1, 1]`, which keeps the map
/// Lipschitz for the bounded path metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub mode: Mode,
    /// Each coefficient holds one value (constant in time) or one per step.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub g: Vec<f64>,
    pub e: Vec<f64>,
    #[serde(default)]
    pub bounded: bool,
    pub measure: MeasureFunctional,
    /// Jump coordinate used as `Theta(x) = x_j`.
    #[serde(default)]
    pub theta_coordinate: usize,
}

fn coef(v: &[f64], step: usize) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => v[(step - 1).min(n - 1)],
    }
}

impl GeneratorSpec {
    fn with(mode: Mode, a: f64, b: f64, c: f64, g: f64, e: f64, bounded: bool, measure: MeasureFunctional) -> Self {
        Self { mode, a: vec![a], b: vec![b], c: vec![c], g: vec![g], e: vec![e], bounded, measure, theta_coordinate: 0 }
    }

    pub fn zero() -> Self {
        Self::with(Mode::Instant, 0.0, 0.0, 0.0, 0.0, 0.0, false, MeasureFunctional::None)
    }

    pub fn constant(kappa: f64) -> Self {
        Self::with(Mode::Instant, kappa, 0.0, 0.0, 0.0, 0.0, false, MeasureFunctional::None)
    }

    pub fn linear(b: f64) -> Self {
        Self::with(Mode::Instant, 0.0, b, 0.0, 0.0, 0.0, false, MeasureFunctional::None)
    }

    pub fn mean(e: f64) -> Self {
        Self::with(Mode::Instant, 0.0, 0.0, 0.0, 0.0, e, false, MeasureFunctional::Mean)
    }

    pub fn saturating_mean() -> Self {
        Self::with(Mode::Instant, 0.0, 0.0, 0.0, 0.0, 1.0, true, MeasureFunctional::Mean)
    }

    pub fn w2ref() -> Self {
        Self::with(Mode::Instant, 0.0, 0.0, 0.0, 0.0, 1.0, false, MeasureFunctional::W2Ref)
    }

    pub fn path_supmean() -> Self {
        Self::with(Mode::Path, 0.0, 0.0, 0.0, 0.0, 1.0, false, MeasureFunctional::PathSupMean)
    }

    /// Parses `zero`, `constant(k)`, `linear(b)`, `mean(e)`, `saturating-mean`,
    /// `w2ref` or `path-supmean`.
    pub fn preset(name: &str) -> Result<Self> {
        let name = name.trim();
        let arg = |prefix: &str| -> Option<Result<f64>> {
            let inner = name.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            Some(inner.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number in `{name}`"))))
        };
        if let Some(v) = arg("constant") {
            return Ok(Self::constant(v?));
        }
        if let Some(v) = arg("linear") {
            return Ok(Self::linear(v?));
        }
        if let Some(v) = arg("mean") {
            return Ok(Self::mean(v?));
        }
        match name {
            "zero" => Ok(Self::zero()),
            "saturating-mean" => Ok(Self::saturating_mean()),
            "w2ref" => Ok(Self::w2ref()),
            "path-supmean" => Ok(Self::path_supmean()),
            _ => Err(Error::InvalidInput(format!("unknown generator preset `{name}`"))),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.mode == Mode::Path && !matches!(self.measure, MeasureFunctional::None | MeasureFunctional::PathSupMean) {
            return Err(Error::InvalidInput("path mode supports only the path-supmean measure functional".into()));
        }
        if let MeasureFunctional::Custom { centers, lambdas } = &self.measure {
            if centers.len() != lambdas.len() {
                return Err(Error::SizeMismatch(centers.len(), lambdas.len()));
            }
            if let Some(c) = centers.iter().find(|c| c.len() != d) {
                return Err(Error::DimensionMismatch(c.len(), d));
            }
        }
        let all = [&self.a, &self.b, &self.c, &self.g, &self.e];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("non-finite generator coefficient".into()));
        }
        Ok(())
    }

    pub fn uses_measure(&self) -> bool {
        !self.measure.is_none() && self.e.iter().any(|&e| e != 0.0)
    }

    #[inline]
    fn s(&self, x: f64) -> f64 {
        if self.bounded {
            x.tanh()
        } else {
            x
        }
    }

    /// Path-mode `y` argument.
    pub fn path_term(sum: &[f64], count: usize, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(sum) {
            *o = (s / count as f64).clamp(-1.0, 1.0);
        }
    }

    /// Evaluates `f` at step `step` (`1..=K`).
    pub fn eval(&self, step: usize, y: &[f64], zc0: &[f64], gamma: &[f64], m: &[f64], out: &mut [f64]) {
        let (a, b, c, g, e) =
            (coef(&self.a, step), coef(&self.b, step), coef(&self.c, step), coef(&self.g, step), coef(&self.e, step));
        for r in 0..out.len() {
            let mut v = a;
            if b != 0.0 {
                v += b * self.s(y[r]);
            }
            if c != 0.0 {
                v += c * self.s(zc0[r]);
            }
            if g != 0.0 {
                v += g * self.s(gamma[r]);
            }
            if e != 0.0 && !m.is_empty() {
                v += e * self.s(if m.len() == 1 { m[0] } else { m[r] });
            }
            out[r] = v;
        }
    }

    /// Coefficients `(r, theta^o, theta^n, theta^*)` valid for this generator:
    /// the squared sum of the active terms is bounded by their count times the
    /// sum of squares.
    pub fn lipschitz(&self, steps: usize, d: usize) -> LipschitzCoeffs {
        let mut out = LipschitzCoeffs::constant(steps, 0.0, 0.0, 0.0, 0.0);
        let broadcast = if self.measure.feature_dim(d) == 1 && !self.measure.is_none() { d as f64 } else { 1.0 };
        let y_factor = match self.mode {
            Mode::Instant => 1.0,
            Mode::Path => 4.0 * d as f64,
        };
        for k in 1..=steps {
            let (b, c, g) = (coef(&self.b, k), coef(&self.c, k), coef(&self.g, k));
            let e = if self.measure.is_none() { 0.0 } else { coef(&self.e, k) };
            let active = [b, c, g, e].iter().filter(|x| **x != 0.0).count() as f64;
            out.r[k - 1] = active * b * b * y_factor;
            out.theta_o[k - 1] = active * c * c;
            out.theta_nat[k - 1] = active * g * g;
            out.theta_star[k - 1] = active * e * e * self.measure.lipschitz().powi(2) * broadcast;
        }
        out
    }

    /// `f(t_k, 0, 0, 0, delta_0)` for every step.
    pub fn at_zero(&self, steps: usize, d: usize) -> Vec<Vec<f64>> {
        let fd = self.measure.feature_dim(d);
        let mut m = vec![0.0; fd];
        self.measure.features(&vec![0.0; d], 0.0, &mut m);
        self.measure.finish(&mut m);
        let zeros = vec![0.0; d];
        (1..=steps)
            .map(|k| {
                let mut out = vec![0.0; d];
                self.eval(k, &zeros, &zeros, &zeros, &m, &mut out);
                out
            })
            .collect()
    }

    /// Randomised check of the declared Lipschitz bound directly in the
    /// argument space `(y, Zc, Gamma, mu)`.
    pub fn probe_lipschitz(&self, model: &DriverModel, d: usize, probes: usize, seed: u64) -> ProbeReport {
        self.probe_against(&self.lipschitz(model.steps(), d), model, d, probes, seed)
    }

    /// As [`GeneratorSpec::probe_lipschitz`] with explicitly given coefficients.
    pub fn probe_against(&self, coeffs: &LipschitzCoeffs, model: &DriverModel, d: usize, probes: usize, seed: u64) -> ProbeReport {
        let steps = model.steps();
        let p = model.p().max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut failures = 0;
        let metric = match self.mode {
            Mode::Instant => Metric::Euclid,
            Mode::Path => Metric::TruncatedSup { state_dim: d },
        };
        for _ in 0..probes {
            let k = rng.gen_range(1..=steps);
            let len = match self.mode {
                Mode::Instant => 1,
                Mode::Path => rng.gen_range(1..=4),
            };
            let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect() };
            let (y1, y2) = (draw(len * d, &mut rng), draw(len * d, &mut rng));
            let (z1, z2) = (draw(d * p, &mut rng), draw(d * p, &mut rng));
            let (g1, g2) = (draw(d, &mut rng), draw(d, &mut rng));
            let law = |rng: &mut ChaCha8Rng| {
                let atoms = rng.gen_range(1..=4);
                let pts = draw(atoms * len * d, rng);
                let mut w: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.1..1.0)).collect();
                let t: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= t);
                let head: f64 = w[..atoms - 1].iter().sum();
                w[atoms - 1] = 1.0 - head;
                DiscreteLaw::from_flat(len * d, &pts, &w).expect("valid law")
            };
            let (mu1, mu2) = (law(&mut rng), law(&mut rng));
            let arg = |y: &[f64]| -> Vec<f64> {
                match self.mode {
                    Mode::Instant => y.to_vec(),
                    Mode::Path => {
                        let mut sum = vec![0.0; d];
                        for s in y.chunks(d) {
                            for (a, b) in sum.iter_mut().zip(s) {
                                *a += b;
                            }
                        }
                        let mut out = vec![0.0; d];
                        Self::path_term(&sum, len, &mut out);
                        out
                    }
                }
            };
            let col0 = |z: &[f64]| (0..d).map(|r| z[r * p]).collect::<Vec<f64>>();
            let (m1, m2) = (self.measure.of_law(&mu1, d, self.mode), self.measure.of_law(&mu2, d, self.mode));
            let mut f1 = vec![0.0; d];
            let mut f2 = vec![0.0; d];
            self.eval(k, &arg(&y1), &col0(&z1), &g1, &m1, &mut f1);
            self.eval(k, &arg(&y2), &col0(&z2), &g2, &m2, &mut f2);
            let lhs: f64 = f1.iter().zip(&f2).map(|(a, b)| (a - b) * (a - b)).sum();
            let dy = metric.dist(&y1, &y2);
            let dz: f64 = z1.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum();
            let dg: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = w2_discrete(&mu1, &mu2, metric).expect("same space");
            let rhs = coeffs.r[k - 1] * dy * dy
                + coeffs.theta_o[k - 1] * dz
                + coeffs.theta_nat[k - 1] * dg
                + coeffs.theta_star[k - 1] * w * w;
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            }
            if lhs > 1.001 * rhs + 1e-14 {
                failures += 1;
            }
        }
        ProbeReport { probes, failures, worst_ratio: worst }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeReport {
    pub probes: usize,
    pub failures: usize,
    /// Largest observed `|df|^2 / bound`.
    pub worst_ratio: f64,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}
