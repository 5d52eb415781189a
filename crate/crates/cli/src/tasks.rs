//! Builds core problems from a [`RunConfig`] and runs the analytic or Monte
//! Carlo side of a task.

use areaflux::diffusion::{AreaWeight, Boundary, Coefficient, DiffusionSpec, StateSpace};
use areaflux::drawdown::{
    ay_expected_area, drawdown_transform, tax_expected_ruin_area, tax_expected_ruin_time, Contour, DrawdownProblem,
    Expectation, TaxModel,
};
use areaflux::first_passage::{area_laplace, area_moments, ExitProblem, Side};
use areaflux::monte_carlo::{
    simulate_ay, simulate_drawdown, simulate_exit_functionals, simulate_occupation_laplace, simulate_tax_ruin,
    ExitFunctional, McConfig, McEstimate, TaxFunctional,
};
use areaflux::omega::{occupation_transform, OmegaProblem};
use areaflux::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BoundaryName, Engine, ExprOrNumber, Grid, ModelConfig, RunConfig, SideName, Task};

#[derive(Debug)]
pub enum CliError {
    /// Exit code 1; the message names the offending field.
    Config(String),
    /// Exit code 2.
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

type Res<T> = Result<T, CliError>;

fn config_err(field: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{field}: {e}"))
}

/// Errors raised while computing: problem-shape errors are still the
/// config's fault, everything else is numeric.
fn compute_err(e: Error) -> CliError {
    match e {
        Error::InvalidProblem(_) | Error::InvalidSpec(_) | Error::Syntax(_) => CliError::Config(e.to_string()),
        other => CliError::Numeric(other.to_string()),
    }
}

fn require<T: Clone>(v: &Option<T>, field: &str, task: Task) -> Res<T> {
    v.clone()
        .ok_or_else(|| CliError::Config(format!("{field} is required for task {}", task.name())))
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub input: f64,
    /// `null` when infinite.
    pub value: f64,
    pub std_error: Option<f64>,
    pub diagnostics: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskOutput {
    pub task: &'static str,
    pub engine: Engine,
    /// Name of the swept or reported input.
    pub input: &'static str,
    pub sweep: bool,
    pub rows: Vec<Row>,
}

pub fn build_spec(m: &ModelConfig) -> Res<DiffusionSpec<f64>> {
    let spec = match &m.builtin {
        Some(name) => {
            if m.mu.is_some() || m.sigma.is_some() {
                return Err(CliError::Config("model.mu/model.sigma cannot be combined with model.builtin".into()));
            }
            let names: &[&str] = match name.as_str() {
                "bm_drift" | "gbm" | "scaled_bessel" => &["mu", "sigma"],
                "ou" => &["kappa", "theta", "sigma"],
                "quad_drift" => &["mu"],
                other => {
                    return Err(CliError::Config(format!(
                        "model.builtin: unknown model {other:?} (bm_drift, gbm, ou, quad_drift, scaled_bessel)"
                    )))
                }
            };
            for k in m.params.keys() {
                if !names.contains(&k.as_str()) {
                    return Err(CliError::Config(format!("model.params.{k} is not a parameter of {name}")));
                }
            }
            let mut vals = vec![];
            for k in names {
                vals.push(*m.params.get(*k).ok_or_else(|| {
                    CliError::Config(format!("model.params.{k} is required for {name}"))
                })?);
            }
            let f = config_err("model");
            let spec = match name.as_str() {
                "bm_drift" => DiffusionSpec::bm_drift(vals[0], vals[1]),
                "gbm" => DiffusionSpec::gbm(vals[0], vals[1]),
                "scaled_bessel" => DiffusionSpec::scaled_bessel(vals[0], vals[1]),
                "ou" => DiffusionSpec::ou(vals[0], vals[1], vals[2]),
                _ => DiffusionSpec::quad_drift(vals[0]),
            }
            .map_err(f)?;
            match m.ref_point {
                Some(r) => spec.with_ref_point(r).map_err(config_err("model.ref_point"))?,
                None => spec,
            }
        }
        None => {
            let mu = m.mu.as_ref().ok_or_else(|| CliError::Config("model.mu is required without model.builtin".into()))?;
            let sigma = m
                .sigma
                .as_ref()
                .ok_or_else(|| CliError::Config("model.sigma is required without model.builtin".into()))?;
            let boundary = |b: BoundaryName| match b {
                BoundaryName::Natural => Boundary::NaturalInfinite,
                BoundaryName::Absorbing => Boundary::Absorbing,
                BoundaryName::Truncated => Boundary::Truncated,
            };
            let space = StateSpace::new(
                m.lower.unwrap_or(f64::NEG_INFINITY),
                m.upper.unwrap_or(f64::INFINITY),
                boundary(m.lower_boundary),
                boundary(m.upper_boundary),
            )
            .map_err(config_err("model.lower/model.upper"))?;
            DiffusionSpec::new(
                coefficient(mu, "model.mu")?,
                coefficient(sigma, "model.sigma")?,
                space,
                m.ref_point,
                m.sigma_zeros.clone(),
            )
            .map_err(config_err("model"))?
        }
    };
    Ok(if m.closed_forms { spec } else { spec.without_catalog() })
}

fn coefficient(e: &ExprOrNumber, field: &str) -> Res<Coefficient<f64>> {
    match e {
        ExprOrNumber::Number(x) => Ok(Coefficient::constant(*x)),
        ExprOrNumber::Expr(s) => Coefficient::expression(s).map_err(config_err(field)),
    }
}

fn call_arg(s: &str, name: &str) -> Option<Result<f64, String>> {
    let rest = s.strip_prefix(name)?.trim();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.trim().parse::<f64>().map_err(|e| e.to_string()))
}

/// `unit`, `square`, `square_negative`, `constant(eta)`,
/// `const_negative(eta)`, a number, or an expression in `x`.
pub fn build_weight(e: &ExprOrNumber, field: &str) -> Res<AreaWeight<f64>> {
    let s = match e {
        ExprOrNumber::Number(x) => return AreaWeight::constant(*x).map_err(config_err(field)),
        ExprOrNumber::Expr(s) => s.trim(),
    };
    match s {
        "unit" | "1" => return Ok(AreaWeight::unit()),
        "square" | "x^2" => return Ok(AreaWeight::square()),
        "square_negative" => return Ok(AreaWeight::square_negative()),
        _ => {}
    }
    for (name, ctor) in [
        ("constant", AreaWeight::constant as fn(f64) -> areaflux::Result<AreaWeight<f64>>),
        ("const_negative", AreaWeight::const_negative),
    ] {
        if let Some(arg) = call_arg(s, name) {
            let v = arg.map_err(|m| CliError::Config(format!("{field}: {m}")))?;
            return ctor(v).map_err(config_err(field));
        }
    }
    AreaWeight::expression(s).map_err(config_err(field))
}

fn side(s: SideName) -> Side {
    match s {
        SideName::Lower => Side::Lower,
        SideName::Upper => Side::Upper,
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Sweep axis: at most one of the listed grids may be a list.
fn axis(cfg: &RunConfig, grids: &[(&'static str, &Option<Grid>)], default: &'static str) -> Res<(&'static str, bool)> {
    let sweeps: Vec<&str> = grids
        .iter()
        .filter(|(_, g)| g.as_ref().is_some_and(|g| g.is_sweep()))
        .map(|(n, _)| *n)
        .collect();
    match sweeps.len() {
        0 => Ok((default, false)),
        1 => Ok((grids.iter().find(|(n, _)| *n == sweeps[0]).unwrap().0, true)),
        _ => Err(CliError::Config(format!(
            "only one of {} may be a list for task {}",
            sweeps.iter().map(|s| format!("params.{s}")).collect::<Vec<_>>().join(", "),
            cfg.task.name()
        ))),
    }
}

fn scalar(g: &Option<Grid>, field: &str, task: Task) -> Res<f64> {
    match require(g, field, task)? {
        Grid::One(x) => Ok(x),
        Grid::Many(_) => Err(CliError::Config(format!("{field} must be a single number for task {}", task.name()))),
    }
}

fn mc_row(input: f64, e: &McEstimate) -> Row {
    Row {
        input,
        value: e.mean,
        std_error: Some(e.std_error),
        diagnostics: json!({
            "paths": e.paths_used,
            "final_horizon": e.diagnostics.final_horizon,
            "horizon_doublings": e.diagnostics.doublings,
            "censored": e.diagnostics.censored,
            "lower_hits": e.diagnostics.lower_hits,
            "upper_hits": e.diagnostics.upper_hits,
            "boundary_hits": e.diagnostics.boundary_hits,
            "truncation_warning": e.diagnostics.truncation_warning,
        }),
    }
}

fn expectation_row(input: f64, e: &Expectation<f64>) -> Row {
    Row {
        input,
        value: e.value,
        std_error: None,
        diagnostics: json!({
            "diverged": e.diverged,
            "reach": num(e.reach),
            "survival": num(e.survival),
            "windows": e.increments.len(),
        }),
    }
}

/// The task actually computed (the mirror for `simulate`) and the engine.
pub fn resolve(cfg: &RunConfig) -> Res<(Task, Engine)> {
    if cfg.task == Task::Simulate {
        let m = require(&cfg.params.mirror, "params.mirror", Task::Simulate)?;
        if m == Task::Simulate {
            return Err(CliError::Config("params.mirror cannot be simulate".into()));
        }
        Ok((m, Engine::Mc))
    } else {
        Ok((cfg.task, cfg.engine))
    }
}

pub fn run_task(cfg: &RunConfig, task: Task, engine: Engine) -> Res<TaskOutput> {
    let spec = build_spec(&cfg.model)?;
    let p = &cfg.params;
    let sl = cfg.numerics.sturm_liouville.options();
    let mc: McConfig = cfg.mc.config();
    let is_mc = engine == Engine::Mc;
    let weight = || build_weight(&cfg.weight, "weight");
    let v0s = || require(&p.v0, "params.v0", task).map(|g| g.values());
    let mut rows = vec![];
    let (input, sweep) = match task {
        Task::FpaLaplace => {
            let (axis_name, sweep) = axis(cfg, &[("lambda", &p.lambda), ("v0", &p.v0)], "lambda")?;
            let (a, c) = (require(&p.a, "params.a", task)?, require(&p.c, "params.c", task)?);
            let lambdas = require(&p.lambda, "params.lambda", task)?.values();
            let w = weight()?;
            let sd = side(p.side);
            for v0 in v0s()? {
                if !(v0 < c) {
                    return Err(CliError::Config(format!("params.c must exceed params.v0 (c = {c}, v0 = {v0})")));
                }
                if !(a < v0) {
                    return Err(CliError::Config(format!("params.a must be below params.v0 (a = {a}, v0 = {v0})")));
                }
                let prob = ExitProblem::new(spec.clone(), w.clone(), a, v0, c).map_err(config_err("params"))?;
                let pick = |l: f64| if axis_name == "v0" { v0 } else { l };
                if is_mc {
                    let fs: Vec<ExitFunctional> =
                        lambdas.iter().map(|&l| ExitFunctional::ExpNegLambdaArea { lambda: l, side: sd }).collect();
                    let est = simulate_exit_functionals(&prob, &fs, &mc).map_err(compute_err)?;
                    for (l, e) in lambdas.iter().zip(&est) {
                        rows.push(mc_row(pick(*l), e));
                    }
                } else {
                    for &l in &lambdas {
                        let v = area_laplace(&prob, l, sd, &sl).map_err(compute_err)?;
                        rows.push(Row { input: pick(l), value: v, std_error: None, diagnostics: json!({"v0": v0, "lambda": l}) });
                    }
                }
            }
            (axis_name, sweep)
        }
        Task::FpaMoments => {
            let (a, c) = (require(&p.a, "params.a", task)?, require(&p.c, "params.c", task)?);
            let v0 = scalar(&p.v0, "params.v0", task)?;
            let n = require(&p.n, "params.n", task)?;
            if n == 0 {
                return Err(CliError::Config("params.n must be at least 1".into()));
            }
            if !(a < v0 && v0 < c) {
                return Err(CliError::Config(format!("params must satisfy a < v0 < c (a = {a}, v0 = {v0}, c = {c})")));
            }
            let prob = ExitProblem::new(spec, weight()?, a, v0, c).map_err(config_err("params"))?;
            if is_mc {
                let fs: Vec<ExitFunctional> = (1..=n).map(|k| ExitFunctional::AreaMoment(k as u32)).collect();
                let est = simulate_exit_functionals(&prob, &fs, &mc).map_err(compute_err)?;
                for (k, e) in est.iter().enumerate() {
                    rows.push(mc_row((k + 1) as f64, e));
                }
            } else {
                let t = area_moments(&prob, n, &cfg.numerics.moments.options()).map_err(compute_err)?;
                for k in 1..=n {
                    let v = t.at_v0(k).map_err(compute_err)?;
                    rows.push(Row { input: k as f64, value: v, std_error: None, diagnostics: json!({"nodes": t.grid().len()}) });
                }
            }
            ("order", false)
        }
        Task::OmegaProb | Task::OmegaLaplace => {
            let omega_src = require(&cfg.omega, "omega", task)?;
            let omega = build_weight(&omega_src, "omega")?;
            let (axis_name, sweep, lambdas) = if task == Task::OmegaProb {
                let (n, s) = axis(cfg, &[("v0", &p.v0)], "v0")?;
                (n, s, vec![1.0])
            } else {
                let (n, s) = axis(cfg, &[("lambda", &p.lambda), ("v0", &p.v0)], "lambda")?;
                (n, s, require(&p.lambda, "params.lambda", task)?.values())
            };
            for v0 in v0s()? {
                let mut prob = OmegaProblem::new(spec.clone(), omega.clone(), v0).map_err(config_err("omega"))?;
                if let Some(d) = p.declared_finite_scale {
                    prob = prob.with_declared_scale(d);
                }
                let clock = omega.negative_side_extension();
                for &l in &lambdas {
                    let input = if axis_name == "v0" { v0 } else { l };
                    let flip = |x: f64| if task == Task::OmegaProb { 1.0 - x } else { x };
                    if is_mc {
                        let e = simulate_occupation_laplace(&prob, l, Some(&clock), &mc).map_err(compute_err)?;
                        let mut r = mc_row(input, &e);
                        r.value = flip(e.mean);
                        rows.push(r);
                    } else {
                        let t = occupation_transform(&prob, l, &sl).map_err(compute_err)?;
                        rows.push(Row {
                            input,
                            value: flip(t.value),
                            std_error: None,
                            diagnostics: json!({
                                "branch": format!("{:?}", t.branch),
                                "psi_plus": num(t.psi_plus),
                                "psi_minus_zero": num(t.psi_minus_zero),
                                "g_ratio": t.g_ratio.map(num),
                                "scale_tail": format!("{:?}", t.scale.verdict),
                                "scale_tail_value": t.scale.tail.map(num),
                                "scale_tail_evidence": format!("{:?}", t.scale.evidence),
                                "pair_source": t.source.as_ref().map(|s| format!("{s:?}")),
                            }),
                        });
                    }
                }
            }
            (axis_name, sweep)
        }
        Task::DrawdownLaplace => {
            let (axis_name, sweep) = axis(cfg, &[("v0", &p.v0)], "v0")?;
            let a_units = require(&p.a_units, "params.a_units", task)?;
            let w = weight()?;
            for v0 in v0s()? {
                let prob = DrawdownProblem::new(spec.clone(), w.clone(), a_units, v0, p.alpha, p.beta)
                    .map_err(config_err("params"))?;
                if is_mc {
                    let e = simulate_drawdown(&prob, &mc).map_err(compute_err)?;
                    rows.push(mc_row(v0, &e));
                } else {
                    let t = drawdown_transform(&prob, &cfg.numerics.drawdown.options()).map_err(compute_err)?;
                    rows.push(Row {
                        input: v0,
                        value: t.value,
                        std_error: None,
                        diagnostics: json!({"tail_bound": num(t.tail_bound), "reach": num(t.reach)}),
                    });
                }
            }
            (axis_name, sweep)
        }
        Task::AyTime => {
            let (axis_name, sweep) = axis(cfg, &[("v0", &p.v0)], "v0")?;
            let g = coefficient(&require(&p.contour, "params.contour", task)?, "params.contour")?;
            let contour = Contour::Function(g);
            let w = weight()?;
            for v0 in v0s()? {
                let s = p.s.unwrap_or(v0);
                if !(v0 <= s) {
                    return Err(CliError::Config(format!("params.s must be at least params.v0 (s = {s}, v0 = {v0})")));
                }
                if is_mc {
                    let e = simulate_ay(&spec, &w, &contour, v0, s, TaxFunctional::RuinArea, &mc).map_err(compute_err)?;
                    rows.push(mc_row(v0, &e));
                } else {
                    let e = ay_expected_area(&spec, &w, &contour, v0, s, &cfg.numerics.expectation.options())
                        .map_err(compute_err)?;
                    rows.push(expectation_row(v0, &e));
                }
            }
            (axis_name, sweep)
        }
        Task::TaxRuinTime | Task::TaxRuinArea => {
            let (axis_name, sweep) = axis(cfg, &[("v0", &p.v0)], "v0")?;
            let gamma = coefficient(&require(&cfg.gamma, "gamma", task)?, "gamma")?;
            let a = require(&p.a, "params.a", task)?;
            let w = if task == Task::TaxRuinArea { weight()? } else { AreaWeight::unit() };
            let f = if task == Task::TaxRuinArea { TaxFunctional::RuinArea } else { TaxFunctional::RuinTime };
            for v0 in v0s()? {
                let m = TaxModel::new(spec.clone(), gamma.clone(), a, v0).map_err(config_err("params/gamma"))?;
                if is_mc {
                    let e = simulate_tax_ruin(&m, &w, f, &mc).map_err(compute_err)?;
                    rows.push(mc_row(v0, &e));
                } else {
                    let o = cfg.numerics.expectation.options();
                    let e = if task == Task::TaxRuinArea {
                        tax_expected_ruin_area(&m, &w, &o)
                    } else {
                        tax_expected_ruin_time(&m, &o)
                    }
                    .map_err(compute_err)?;
                    rows.push(expectation_row(v0, &e));
                }
            }
            (axis_name, sweep)
        }
        Task::Simulate => unreachable!("resolved before dispatch"),
    };
    Ok(TaskOutput {
        task: task.name(),
        engine,
        input,
        sweep,
        rows,
    })
}

pub fn model_diagnostics(cfg: &RunConfig) -> Value {
    match build_spec(&cfg.model) {
        Ok(spec) => json!({
            "catalog": spec.catalog().map(|c| c.name()),
            "ref_point": spec.ref_point(),
            "lower": num(spec.space().lower),
            "upper": num(spec.space().upper),
        }),
        Err(_) => Value::Null,
    }
}
