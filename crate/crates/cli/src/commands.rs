use chaoslab_core::chaos::{cor64_check, rate_experiment, run_particle_gap, solve_limit, ChaosConfig, Cor64Row, GapRow, RateReport};
use chaoslab_core::fvcalc::{
    lambda_gdp, m_star, m_star_minimizer, m_tilde, m_tilde_minimizer, minimize_over_gamma, ConstantKind, ContractionReport, TheoremId,
};
use chaoslab_core::scenario::{build_tree, BsdeSolution, NormReport};
use chaoslab_core::solver::{standard_data_check, Condition, MeasureSource, System, Terminal};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, Problem};
use crate::error::{CliError, Result, EXIT_CONDITION, EXIT_OK};
use crate::output::{csv_text, num, Output};

const ORACLE_GRID: usize = 2000;

#[derive(Debug, Serialize)]
struct ConstantsSummary {
    beta: f64,
    phi: f64,
    m_star: f64,
    m_star_grid: f64,
    m_star_gamma: f64,
    m_tilde: f64,
    m_tilde_grid: f64,
    m_tilde_gamma: f64,
    lambda: Option<f64>,
}

pub fn cmd_constants(beta: f64, phi: f64, gamma: Option<f64>, delta: Option<f64>) -> Result<Output> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(CliError::Config(format!("beta must be positive, got {beta}")));
    }
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(CliError::Config(format!("phi must be non-negative, got {phi}")));
    }
    let lambda = match (gamma, delta) {
        (Some(g), Some(d)) => Some(lambda_gdp(g, d, phi)?),
        (None, None) => None,
        _ => return Err(CliError::Config("gamma and delta go together".into())),
    };
    let star = minimize_over_gamma(ConstantKind::Star, beta, phi, ORACLE_GRID);
    let tilde = minimize_over_gamma(ConstantKind::Tilde, beta, phi, ORACLE_GRID);
    let s = ConstantsSummary {
        beta,
        phi,
        m_star: m_star(beta, phi),
        m_star_grid: star.value,
        m_star_gamma: m_star_minimizer(beta, phi),
        m_tilde: m_tilde(beta, phi),
        m_tilde_grid: tilde.value,
        m_tilde_gamma: m_tilde_minimizer(beta, phi),
        lambda,
    };
    let mut out = Output::default();
    out.line(format!("{:<10}{:>24}{:>24}{:>14}", "constant", "closed form", "grid oracle", "rel. delta"));
    for (name, exact, grid) in [("M_star", s.m_star, s.m_star_grid), ("M_tilde", s.m_tilde, s.m_tilde_grid)] {
        out.line(format!("{:<10}{:>24.15e}{:>24.15e}{:>14.3e}", name, exact, grid, (grid - exact).abs() / exact));
    }
    if let Some(l) = lambda {
        out.line(format!("{:<10}{:>24.15e}", "Lambda", l));
    }
    out.json("constants.json", &s)?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ValidateSummary<'a> {
    theorem: TheoremId,
    beta_hat: f64,
    phi: f64,
    lambda_beta: f64,
    modulus: f64,
    holds: bool,
    conditions: &'a [Condition],
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<Output> {
    let theorem = cfg.theorem()?;
    let beta = cfg.beta_hat(theorem)?;
    let model = cfg.model()?;
    let gen = cfg.generator()?;
    let check = standard_data_check(&model, &gen, cfg.solver.d, beta, theorem)?;
    let holds = check.all_hold();
    let mut out = Output::default();
    out.line(format!("theorem {theorem}, beta_hat {}, phi {}", num(beta), num(check.phi)));
    for c in &check.conditions {
        out.line(format!("{} {:<26} {}", if c.holds { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    out.line(if holds { "standard data: yes" } else { "standard data: no" });
    out.json(
        "validate.json",
        &ValidateSummary {
            theorem,
            beta_hat: beta,
            phi: check.phi,
            lambda_beta: check.lambda_beta,
            modulus: check.contraction.modulus,
            holds,
            conditions: &check.conditions,
        },
    )?;
    out.code = if holds { EXIT_OK } else { EXIT_CONDITION };
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SolveSummary<'a> {
    theorem: TheoremId,
    beta_hat: f64,
    particles: usize,
    contraction: &'a ContractionReport,
    warning: &'a Option<String>,
    converged: bool,
    iterations: usize,
    max_ratio: f64,
    y0: &'a [Vec<f64>],
    norms: &'a [NormReport],
}

fn chaos_like(cfg: &ExperimentConfig, beta_hat: f64, budget: u128) -> Result<ChaosConfig> {
    Ok(ChaosConfig {
        model: cfg.model()?,
        generator: cfg.generator()?,
        terminal: cfg.terminal.clone(),
        eps: cfg.experiment.eps,
        beta_hat,
        d: cfg.solver.d,
        left_limit: cfg.solver.left_limit,
        budget,
    })
}

pub fn cmd_solve(cfg: &ExperimentConfig, budget: u128) -> Result<Output> {
    let theorem = cfg.theorem()?;
    let beta = cfg.beta_hat(theorem)?;
    let cc = chaos_like(cfg, beta, budget)?;
    let (n, d) = (cfg.solver.particles, cfg.solver.d);
    let steps = cc.model.steps();
    let tree1 = build_tree(&cc.model, 1, steps, budget)?;
    let phi = cc.phi_table(&tree1)?;
    let tree = if n == 1 { tree1 } else { build_tree(&cc.model, n, steps, budget)? };
    let terminal = if n == 1 { Terminal::Table(phi) } else { Terminal::Own { phi, eps: cfg.experiment.eps.value(n) } };
    let measure = match cfg.solver.problem {
        Problem::Standard => MeasureSource::None,
        Problem::MckeanVlasov => MeasureSource::LawOfIterate,
        Problem::MeanField => MeasureSource::Empirical,
    };
    let sys = System::new(&tree, &cc.generator, &terminal, measure, d, cfg.solver_options(beta), cfg.solver.problem.into())?;
    let solved = sys.solve()?;
    let t = &solved.trace;
    let mut out = Output::default();
    out.line(format!("theorem {theorem}, beta_hat {}, modulus {}", num(beta), num(t.contraction.modulus)));
    if let Some(w) = &t.warning {
        out.line(format!("warning: {w}"));
    }
    out.line(format!("converged after {} iterations, max ratio {}", t.iterations, num(t.max_ratio())));
    for (i, y0) in solved.y0.iter().enumerate() {
        let vals: Vec<String> = y0.iter().map(|v| num(*v)).collect();
        out.line(format!("Y0[{i}] = [{}]", vals.join(", ")));
    }
    for (i, r) in solved.norms.iter().enumerate() {
        out.line(format!("norms[{i}]: S2 {} Z {} U {} M {} alphaY {}", num(r.s2), num(r.z), num(r.u), num(r.m), num(r.alpha_y)));
    }
    let rows: Vec<Vec<String>> = t
        .diffs
        .iter()
        .enumerate()
        .map(|(m, diff)| {
            let ratio = if m == 0 { String::new() } else { num(t.ratios[m - 1]) };
            vec![(m + 1).to_string(), num(*diff), ratio]
        })
        .collect();
    out.file("picard.csv", csv_text(&["iteration", "sq_difference", "ratio"], &rows)?);
    out.json(
        "solve.json",
        &SolveSummary {
            theorem,
            beta_hat: beta,
            particles: n,
            contraction: &t.contraction,
            warning: &t.warning,
            converged: t.converged,
            iterations: t.iterations,
            max_ratio: t.max_ratio(),
            y0: &solved.y0,
            norms: &solved.norms,
        },
    )?;
    if cfg.output.dump_nodes {
        if solved.solutions.is_empty() {
            return Err(CliError::Config("tree too large to materialise for `output.dump_nodes`".into()));
        }
        out.json::<Vec<BsdeSolution>>("nodes.json", &solved.solutions)?;
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ChaosSummary<'a> {
    theorem: TheoremId,
    beta_hat: f64,
    modulus: f64,
    particle: usize,
    slope: Option<f64>,
    non_increasing: bool,
    rows: &'a [GapRow],
    cor64: &'a [Cor64Row],
}

pub fn cmd_chaos(cfg: &ExperimentConfig, budget: u128) -> Result<Output> {
    let cc = cfg.chaos_config(budget)?;
    let e = &cfg.experiment;
    let report = run_particle_gap(&cc, e.particle, &e.ns)?;
    let mut cor = Vec::new();
    for &k in &e.t_indices {
        cor.extend(cor64_check(&cc, &e.ns, k)?);
    }
    let non_increasing = report.rows.windows(2).all(|w| w[1].avg_gap <= w[0].avg_gap);
    let mut out = Output::default();
    out.line(format!("theorem {}, beta_hat {}, modulus {}", cc.theorem(), num(cc.beta_hat), num(report.modulus)));
    for r in &report.rows {
        out.line(format!("N {:>4}  avg gap {}  particle {} gap {}", r.n, num(r.avg_gap), report.particle, num(r.particle_gap)));
    }
    out.line(format!("non-increasing: {non_increasing}"));
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.n.to_string(), num(r.avg_gap), num(r.particle_gap), num(r.sup_w2_sq), r.iterations.to_string()])
        .collect();
    out.file("chaos.csv", csv_text(&["n", "avg_gap", "particle_gap", "sup_w2_sq", "iterations"], &rows)?);
    if !cor.is_empty() {
        let rows: Vec<Vec<String>> = cor.iter().map(|r| vec![r.n.to_string(), r.k.to_string(), num(r.value)]).collect();
        out.file("cor64.csv", csv_text(&["n", "k", "expected_w2_sq"], &rows)?);
    }
    out.json(
        "chaos.json",
        &ChaosSummary {
            theorem: cc.theorem(),
            beta_hat: cc.beta_hat,
            modulus: report.modulus,
            particle: report.particle,
            slope: report.slope,
            non_increasing,
            rows: &report.rows,
            cor64: &cor,
        },
    )?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct RatesSummary<'a> {
    seed: u64,
    q: f64,
    beta_hat: f64,
    reports: &'a [RateReport],
}

pub fn cmd_rates(cfg: &ExperimentConfig, seed: Option<u64>, budget: u128) -> Result<Output> {
    let e = &cfg.experiment;
    let seed = seed
        .or(e.seed)
        .ok_or_else(|| CliError::Config("sampling experiments need a seed (`experiment.seed` or --seed)".into()))?;
    let q = e.q.ok_or_else(|| CliError::Config("rates experiments need q".into()))?;
    let cc = cfg.chaos_config(budget)?;
    let limit = solve_limit(&cc)?;
    let ks = if e.t_indices.is_empty() { vec![1] } else { e.t_indices.clone() };
    let mut reports = Vec::new();
    for k in ks {
        reports.push(rate_experiment(&limit.solution, &limit.tree, k, &e.ns, q, seed)?);
    }
    let mut out = Output::default();
    let mut rows = Vec::new();
    for r in &reports {
        let slope = r.slope.map(num).unwrap_or_else(|| "none".into());
        let c = r.envelope_c.map(num).unwrap_or_else(|| "none".into());
        out.line(format!("k {}: slope {slope}, envelope constant {c}, degenerate {}", r.k, r.degenerate));
        for row in &r.rows {
            let env = chaoslab_core::chaos::envelope(row.n as f64, cc.d, q)?;
            rows.push(vec![r.k.to_string(), row.n.to_string(), num(row.mean), num(row.stderr), row.reps.to_string(), num(env)]);
        }
    }
    out.file("rates.csv", csv_text(&["k", "n", "mean_w2_sq", "stderr", "reps", "envelope"], &rows)?);
    out.json("rates.json", &RatesSummary { seed, q, beta_hat: cc.beta_hat, reports: &reports })?;
    Ok(out)
}

/// Rejects a config whose experiment block targets a different subcommand.
pub fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.experiment.kind != kind {
        return Err(CliError::Config(format!(
            "config describes a `{}` experiment, not `{}`",
            cfg.experiment.kind.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}
