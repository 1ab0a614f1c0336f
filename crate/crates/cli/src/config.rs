//! JSON experiment configuration. The schema lives in
//! `schema/experiment-config.schema.json`.

use std::path::Path;

use chaoslab_core::chaos::{ChaosConfig, EpsFamily, TerminalFamily};
use chaoslab_core::driver::{build_driver, lipschitz_to_a, DriverModel, IncrementLaw};
use chaoslab_core::fvcalc::{suggest_beta, FVPath, TheoremId};
use chaoslab_core::generator::{GeneratorSpec, Mode};
use chaoslab_core::scenario::DEFAULT_NODE_BUDGET;
use chaoslab_core::solver::{Init, ProblemKind, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const BUDGET_ENV: &str = "CHAOSLAB_NODE_BUDGET";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub driver: DriverBlock,
    pub generator: GeneratorBlock,
    pub terminal: TerminalFamily,
    #[serde(default)]
    pub solver: SolverBlock,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Homogeneous driver: the same increment laws at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverBlock {
    pub steps: usize,
    #[serde(default = "unit")]
    pub horizon: f64,
    /// Explicit grid `t_0 < ... < t_K`; overrides `horizon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    pub diffusion: LawBlock,
    #[serde(default)]
    pub jump: LawBlock,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LawBlock {
    /// Point mass at the origin of `R^dim`.
    None {
        #[serde(default)]
        dim: usize,
    },
    Rademacher {
        sigma: f64,
    },
    /// `0` with probability `p0`, `+-size` otherwise.
    Trinomial {
        p0: f64,
        size: f64,
    },
    Atoms {
        dim: usize,
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl Default for LawBlock {
    fn default() -> Self {
        LawBlock::None { dim: 0 }
    }
}

impl LawBlock {
    pub fn build(&self) -> Result<IncrementLaw> {
        Ok(match self {
            LawBlock::None { dim } => IncrementLaw::point_mass_zero(*dim),
            LawBlock::Rademacher { sigma } => {
                if !(*sigma > 0.0) || !sigma.is_finite() {
                    return Err(CliError::Config(format!("rademacher sigma must be positive, got {sigma}")));
                }
                IncrementLaw::rademacher(*sigma)
            }
            LawBlock::Trinomial { p0, size } => IncrementLaw::trinomial(*p0, *size)?,
            LawBlock::Atoms { dim, atoms, weights } => IncrementLaw::new(*dim, atoms.clone(), weights.clone())?,
        })
    }
}

impl DriverBlock {
    pub fn build(&self) -> Result<DriverModel> {
        if self.steps == 0 {
            return Err(CliError::Config("driver.steps must be at least 1".into()));
        }
        let times = match &self.times {
            Some(t) => {
                if t.len() != self.steps + 1 {
                    return Err(CliError::Config(format!("driver.times needs {} entries, got {}", self.steps + 1, t.len())));
                }
                t.clone()
            }
            None => {
                if !(self.horizon > 0.0) || !self.horizon.is_finite() {
                    return Err(CliError::Config(format!("driver.horizon must be positive, got {}", self.horizon)));
                }
                FVPath::uniform_grid(self.steps, self.horizon)
            }
        };
        let diff = self.diffusion.build()?;
        let jump = self.jump.build()?;
        Ok(build_driver(times, vec![diff; self.steps], vec![jump; self.steps])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorBlock {
    /// One of `zero`, `constant(k)`, `linear(b)`, `mean(e)`, `saturating-mean`,
    /// `w2ref`, `path-supmean`.
    Preset(String),
    Custom(GeneratorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Standard,
    MckeanVlasov,
    MeanField,
}

impl From<Problem> for ProblemKind {
    fn from(p: Problem) -> Self {
        match p {
            Problem::Standard => ProblemKind::Standard,
            Problem::MckeanVlasov => ProblemKind::McKeanVlasov,
            Problem::MeanField => ProblemKind::MeanField,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitBlock {
    Zero,
    Propagated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    /// `None` picks the smallest grid value satisfying the contraction condition.
    #[serde(default)]
    pub beta_hat: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Overrides the generator's own mode.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub left_limit: bool,
    #[serde(default = "default_problem")]
    pub problem: Problem,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_init")]
    pub init: InitBlock,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    200
}

fn default_problem() -> Problem {
    Problem::MckeanVlasov
}

fn default_particles() -> usize {
    1
}

fn default_d() -> usize {
    1
}

fn default_init() -> InitBlock {
    InitBlock::Zero
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            beta_hat: None,
            tol: default_tol(),
            max_iter: default_max_iter(),
            mode: None,
            left_limit: false,
            problem: default_problem(),
            particles: default_particles(),
            d: default_d(),
            init: default_init(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Constants,
    Validate,
    Solve,
    Chaos,
    Rates,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Constants => "constants",
            ExperimentKind::Validate => "validate",
            ExperimentKind::Solve => "solve",
            ExperimentKind::Chaos => "chaos",
            ExperimentKind::Rates => "rates",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsBlock {
    pub beta: f64,
    pub phi: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub ns: Vec<usize>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub t_indices: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Tracked particle in chaos experiments.
    #[serde(default)]
    pub particle: usize,
    #[serde(default = "default_eps")]
    pub eps: EpsFamily,
    /// Theorem targeted by `validate`, e.g. `instant-MV` or `chaos-PC8'`.
    #[serde(default)]
    pub theorem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsBlock>,
}

fn default_eps() -> EpsFamily {
    EpsFamily::Zero
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
    /// Write every node of the solved quadruple to `nodes.json`.
    #[serde(default)]
    pub dump_nodes: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn generator(&self) -> Result<GeneratorSpec> {
        let gen = match &self.generator {
            GeneratorBlock::Preset(name) => GeneratorSpec::preset(name)?,
            GeneratorBlock::Custom(spec) => spec.clone(),
        };
        let gen = match self.solver.mode {
            Some(mode) => gen.with_mode(mode),
            None => gen,
        };
        gen.validate(self.solver.d)?;
        Ok(gen)
    }

    /// Checks everything that does not depend on command-line overrides.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let model = self.driver.build()?;
        let gen = self.generator()?;
        let s = &self.solver;
        if s.d == 0 {
            return bad("solver.d must be at least 1".into());
        }
        if s.particles == 0 {
            return bad("solver.particles must be at least 1".into());
        }
        if let Some(b) = s.beta_hat {
            if !(b > 0.0) || !b.is_finite() {
                return bad(format!("solver.beta_hat must be positive, got {b}"));
            }
        }
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return bad("solver.tol must be positive and solver.max_iter at least 1".into());
        }
        match s.problem {
            Problem::Standard if gen.uses_measure() => {
                return bad("a standard problem needs a generator without measure argument".into())
            }
            Problem::Standard | Problem::MckeanVlasov if s.particles != 1 => {
                return bad(format!("{:?} problems use a single particle", s.problem))
            }
            _ => {}
        }
        let e = &self.experiment;
        if let Some(t) = &e.theorem {
            t.parse::<TheoremId>()?;
        }
        match e.kind {
            ExperimentKind::Constants if e.constants.is_none() => {
                return bad("constants experiments need an `experiment.constants` block".into())
            }
            ExperimentKind::Chaos | ExperimentKind::Rates if e.ns.is_empty() => {
                return bad(format!("{} experiments need a non-empty `experiment.ns`", e.kind.as_str()))
            }
            _ => {}
        }
        if e.ns.contains(&0) {
            return bad("particle counts must be positive".into());
        }
        if e.kind == ExperimentKind::Chaos && e.ns.iter().any(|&n| e.particle >= n) {
            return bad(format!("tracked particle {} is out of range for some N", e.particle));
        }
        if e.kind == ExperimentKind::Rates && !matches!(e.q, Some(q) if q > 2.0) {
            return bad("rates experiments need q > 2".into());
        }
        let limit = if e.kind == ExperimentKind::Rates { model.steps() } else { model.steps() - 1 };
        if let Some(&k) = e.t_indices.iter().find(|&&k| k > limit) {
            return bad(format!("time index {k} exceeds {limit}"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<DriverModel> {
        self.driver.build()
    }

    /// Theorem whose condition `validate` reports on.
    pub fn theorem(&self) -> Result<TheoremId> {
        if let Some(t) = &self.experiment.theorem {
            return Ok(t.parse()?);
        }
        let mode = self.generator()?.mode;
        Ok(match (self.experiment.kind, self.solver.problem, mode) {
            (ExperimentKind::Chaos | ExperimentKind::Rates, _, Mode::Instant) => TheoremId::ChaosPc8,
            (ExperimentKind::Chaos | ExperimentKind::Rates, _, Mode::Path) => TheoremId::ChaosPc9,
            (_, Problem::MeanField, Mode::Instant) => TheoremId::InstantMf,
            (_, Problem::MeanField, Mode::Path) => TheoremId::PathMf,
            (_, _, Mode::Instant) => TheoremId::InstantMv,
            (_, _, Mode::Path) => TheoremId::PathMv,
        })
    }

    /// Configured `beta_hat`, or the smallest grid value at which the
    /// condition of `theorem` holds.
    pub fn beta_hat(&self, theorem: TheoremId) -> Result<f64> {
        if let Some(b) = self.solver.beta_hat {
            return Ok(b);
        }
        let model = self.model()?;
        let gen = self.generator()?;
        let w = lipschitz_to_a(&gen.lipschitz(model.steps(), self.solver.d), &model)?;
        suggest_beta(theorem, w.phi, |b| w.lambda_beta(b)).ok_or_else(|| {
            CliError::Condition(format!("no beta_hat in [1e-3, 1e6] satisfies the {theorem} condition (phi = {:e})", w.phi))
        })
    }

    pub fn solver_options(&self, beta_hat: f64) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            tol: s.tol,
            max_iter: s.max_iter,
            left_limit: s.left_limit,
            init: match s.init {
                InitBlock::Zero => Init::Zero,
                InitBlock::Propagated => Init::Propagated,
            },
            ..SolverOptions::with_beta(beta_hat)
        }
    }

    pub fn chaos_config(&self, budget: u128) -> Result<ChaosConfig> {
        let theorem = self.theorem()?;
        Ok(ChaosConfig {
            model: self.model()?,
            generator: self.generator()?,
            terminal: self.terminal.clone(),
            eps: self.experiment.eps,
            beta_hat: self.beta_hat(theorem)?,
            d: self.solver.d,
            left_limit: self.solver.left_limit,
            budget,
        })
    }
}

/// Tree budget from `CHAOSLAB_NODE_BUDGET`, or the library default.
pub fn node_budget() -> Result<u128> {
    match std::env::var(BUDGET_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{BUDGET_ENV} must be an unsigned integer, got `{v}`"))),
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_NODE_BUDGET),
        Err(e) => Err(CliError::Config(format!("{BUDGET_ENV}: {e}"))),
    }
}
