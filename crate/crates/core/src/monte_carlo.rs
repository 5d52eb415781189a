//! Euler-Maruyama path simulation used as an independent check of the
//! analytic modules.
//!
//! Path `i` draws from a ChaCha8 stream `(seed, i)`, paths are mapped in
//! parallel and collected in index order, and sums are pairwise over that
//! order, so estimates do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;

use crate::diffusion::{AreaWeight, DiffusionSpec};
use crate::drawdown::{Contour, DrawdownProblem, TaxModel};
use crate::error::{Error, Result};
use crate::first_passage::{ExitProblem, Side};
use crate::omega::OmegaProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    EulerMaruyama,
    Milstein,
}

/// How barrier crossings between grid points are detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// Only at grid points, located by linear interpolation.
    Interpolated,
    /// Also between grid points, with the Brownian-bridge crossing
    /// probability and an exactly sampled bridge maximum for running maxima.
    BridgeCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Fixed(f64),
    /// Double from `initial` until the estimate moves by less than one
    /// standard error, or `max` is reached.
    Adaptive { initial: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub paths: usize,
    pub dt: f64,
    pub horizon: Horizon,
    pub seed: u64,
    pub scheme: Scheme,
    pub crossing: Crossing,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            dt: 1e-3,
            horizon: Horizon::Adaptive {
                initial: 8.0,
                max: 1024.0,
            },
            seed: 0,
            scheme: Scheme::EulerMaruyama,
            crossing: Crossing::Interpolated,
            threads: None,
        }
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.paths < 100 {
            return Err(Error::InvalidProblem("need at least 100 paths".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidProblem("dt must be positive".into()));
        }
        match self.horizon {
            Horizon::Fixed(h) if !(h > 0.0) => Err(Error::InvalidProblem("horizon must be positive".into())),
            Horizon::Adaptive { initial, max } if !(initial > 0.0 && max >= initial) => {
                Err(Error::InvalidProblem("adaptive horizon needs 0 < initial <= max".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct McDiagnostics {
    pub final_horizon: f64,
    pub doublings: usize,
    /// Paths still running at the final horizon.
    pub censored: usize,
    pub lower_hits: usize,
    pub upper_hits: usize,
    /// Paths absorbed at a boundary of the state interval.
    pub boundary_hits: usize,
    /// The last horizon doubling still moved the estimate by more than one
    /// standard error.
    pub truncation_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths_used: usize,
    pub diagnostics: McDiagnostics,
}

impl McEstimate {
    /// `mean +- 3 std_error`.
    pub fn ci(&self) -> (f64, f64) {
        (self.mean - 3.0 * self.std_error, self.mean + 3.0 * self.std_error)
    }

    pub fn within(&self, x: f64, k: f64) -> bool {
        (self.mean - x).abs() <= k * self.std_error
    }
}

/// Whether two estimates agree within `k` combined standard errors.
pub fn agree(a: &McEstimate, b: &McEstimate, k: f64) -> bool {
    (a.mean - b.mean).abs() <= k * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
}

pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let (l, r) = v.split_at(v.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

/// Coefficients evaluated as plain `f64` closures.
struct Stepper<'a> {
    spec: &'a DiffusionSpec<f64>,
    dt: f64,
    sqdt: f64,
    scheme: Scheme,
    crossing: Crossing,
    lower: f64,
    upper: f64,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a DiffusionSpec<f64>, cfg: &McConfig) -> Self {
        Self {
            spec,
            dt: cfg.dt,
            sqdt: cfg.dt.sqrt(),
            scheme: cfg.scheme,
            crossing: cfg.crossing,
            lower: spec.space().lower,
            upper: spec.space().upper,
        }
    }

    fn sigma(&self, x: f64) -> Result<f64> {
        self.spec.volatility(x)
    }

    /// One step of length `h` from `x`; returns `(x_new, sigma(x))`.
    fn step(&self, x: f64, h: f64, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let z: f64 = rng.sample(StandardNormal);
        let dw = z * if h == self.dt { self.sqdt } else { h.sqrt() };
        let mu = self.spec.drift(x)?;
        let sig = self.sigma(x)?;
        let mut xn = x + mu * h + sig * dw;
        if self.scheme == Scheme::Milstein {
            let e = 1e-6 * (1.0 + x.abs());
            let ds = (self.sigma(x + e)? - self.sigma(x - e)?) / (2.0 * e);
            xn += 0.5 * sig * ds * (dw * dw - h);
        }
        Ok((xn, sig))
    }

    fn outside(&self, x: f64) -> bool {
        !(x > self.lower && x < self.upper)
    }

    /// Probability that a bridge from `x` to `xn` with volatility `sig`
    /// touched `b` given both ends are on the same side.
    fn bridge_prob(&self, x: f64, xn: f64, b: f64, sig: f64, h: f64) -> f64 {
        if self.crossing != Crossing::BridgeCorrected || sig == 0.0 {
            return 0.0;
        }
        (-2.0 * (x - b) * (xn - b) / (sig * sig * h)).exp()
    }

    /// Maximum over the step: exact bridge sample or the larger endpoint.
    fn step_max(&self, x: f64, xn: f64, sig: f64, h: f64, rng: &mut ChaCha8Rng) -> f64 {
        if self.crossing != Crossing::BridgeCorrected || sig == 0.0 {
            return x.max(xn);
        }
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let d = xn - x;
        0.5 * (x + xn + (d * d - 2.0 * sig * sig * h * u.ln()).sqrt())
    }
}

/// Generic driver: `advance` moves a path to the horizon, `value` maps the
/// state to the functional, `status` returns 0 (running), 1 (lower), 2
/// (upper or event), 3 (absorbed at a boundary).
fn drive<S, I, A, V, St>(cfg: &McConfig, init: I, advance: A, value: V, status: St) -> Result<McEstimate>
where
    S: Send + Sync,
    I: Fn(usize) -> S + Sync,
    A: Fn(&mut S, f64) -> Result<()> + Sync,
    V: Fn(&S) -> f64 + Sync,
    St: Fn(&S) -> u8 + Sync,
{
    cfg.validate()?;
    let work = || -> Result<McEstimate> {
        let mut states: Vec<S> = (0..cfg.paths).into_par_iter().map(&init).collect();
        let (mut h, max, adaptive) = match cfg.horizon {
            Horizon::Fixed(h) => (h, h, false),
            Horizon::Adaptive { initial, max } => (initial, max, true),
        };
        let mut doublings = 0usize;
        let mut last: Option<(f64, f64)> = None;
        loop {
            states
                .par_iter_mut()
                .map(|s| advance(s, h))
                .collect::<Result<Vec<()>>>()?;
            let vals: Vec<f64> = states.par_iter().map(&value).collect();
            let (m, se) = mean_se(&vals);
            let running = states.par_iter().filter(|s| status(s) == 0).count();
            let settled = match last {
                Some((pm, _)) => (m - pm).abs() <= se,
                None => false,
            };
            if !adaptive || running == 0 || settled || h >= max {
                let warn = adaptive && running > 0 && !settled;
                let tags: Vec<u8> = states.par_iter().map(&status).collect();
                return Ok(McEstimate {
                    mean: m,
                    std_error: se,
                    paths_used: cfg.paths,
                    diagnostics: McDiagnostics {
                        final_horizon: h,
                        doublings,
                        censored: tags.iter().filter(|&&t| t == 0).count(),
                        lower_hits: tags.iter().filter(|&&t| t == 1).count(),
                        upper_hits: tags.iter().filter(|&&t| t == 2).count(),
                        boundary_hits: tags.iter().filter(|&&t| t == 3).count(),
                        truncation_warning: warn,
                    },
                });
            }
            last = Some((m, se));
            h = (h * 2.0).min(max);
            doublings += 1;
        }
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidProblem(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitFunctional {
    /// `E[exp(-lambda A_tau); side]`.
    ExpNegLambdaArea { lambda: f64, side: Side },
    /// `E[A_tau^n]`.
    AreaMoment(u32),
    /// `P(side)`.
    ExitProb(Side),
}

struct ExitPath {
    x: f64,
    t: f64,
    area: f64,
    /// 0 running, 1 lower, 2 upper, 3 absorbed.
    status: u8,
    rng: ChaCha8Rng,
}

fn advance_exit(st: &Stepper<'_>, w: &AreaWeight<f64>, a: f64, c: f64, p: &mut ExitPath, horizon: f64) -> Result<()> {
    let dt = st.dt;
    while p.status == 0 && p.t < horizon {
        let (xn, sig) = st.step(p.x, dt, &mut p.rng)?;
        let fx = w.b2(p.x)?;
        if xn <= a || xn >= c {
            let (b, tag) = if xn <= a { (a, 1) } else { (c, 2) };
            let th = (p.x - b) / (p.x - xn);
            p.area += th * dt * 0.5 * (fx + w.b2(b)?);
            p.t += th * dt;
            p.x = b;
            p.status = tag;
            return Ok(());
        }
        if st.crossing == Crossing::BridgeCorrected {
            let pa = st.bridge_prob(p.x, xn, a, sig, dt);
            let pc = st.bridge_prob(p.x, xn, c, sig, dt);
            if pa + pc > 0.0 {
                let u: f64 = p.rng.gen();
                if u < pa + pc {
                    let (b, tag) = if u < pa { (a, 1) } else { (c, 2) };
                    p.area += 0.5 * dt * 0.5 * (fx + w.b2(b)?);
                    p.t += 0.5 * dt;
                    p.x = b;
                    p.status = tag;
                    return Ok(());
                }
            }
        }
        p.area += dt * 0.5 * (fx + w.b2(xn)?);
        p.t += dt;
        p.x = xn;
    }
    Ok(())
}

fn exit_samples(p: &ExitProblem<f64>, cfg: &McConfig) -> Result<(Vec<(f64, u8)>, McDiagnostics)> {
    cfg.validate()?;
    let st = Stepper::new(&p.spec, cfg);
    let (a, c) = (p.a, p.c);
    let w = &p.weight;
    let max = match cfg.horizon {
        Horizon::Fixed(h) => h,
        Horizon::Adaptive { max, .. } => max,
    };
    let work = || -> Result<Vec<(f64, u8)>> {
        (0..cfg.paths)
            .into_par_iter()
            .map(|i| {
                let mut s = ExitPath {
                    x: p.v0,
                    t: 0.0,
                    area: 0.0,
                    status: 0,
                    rng: path_rng(cfg.seed, i),
                };
                advance_exit(&st, w, a, c, &mut s, max)?;
                Ok((s.area, s.status))
            })
            .collect()
    };
    let out = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidProblem(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let diag = McDiagnostics {
        final_horizon: max,
        doublings: 0,
        censored: out.iter().filter(|v| v.1 == 0).count(),
        lower_hits: out.iter().filter(|v| v.1 == 1).count(),
        upper_hits: out.iter().filter(|v| v.1 == 2).count(),
        boundary_hits: 0,
        truncation_warning: false,
    };
    Ok((out, diag))
}

fn exit_value(f: ExitFunctional, area: f64, tag: u8) -> f64 {
    let hit = |side: Side| matches!((side, tag), (Side::Lower, 1) | (Side::Upper, 2));
    match f {
        ExitFunctional::ExpNegLambdaArea { lambda, side } => {
            if hit(side) {
                (-lambda * area).exp()
            } else {
                0.0
            }
        }
        ExitFunctional::AreaMoment(n) => area.powi(n as i32),
        ExitFunctional::ExitProb(side) => {
            if hit(side) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Estimates a functional of `(tau, A_tau)` for the two-sided exit.
pub fn simulate_exit_area(p: &ExitProblem<f64>, f: ExitFunctional, cfg: &McConfig) -> Result<McEstimate> {
    Ok(simulate_exit_functionals(p, &[f], cfg)?.remove(0))
}

/// Several functionals from one set of paths.
pub fn simulate_exit_functionals(p: &ExitProblem<f64>, fs: &[ExitFunctional], cfg: &McConfig) -> Result<Vec<McEstimate>> {
    let (samples, diag) = exit_samples(p, cfg)?;
    Ok(fs
        .iter()
        .map(|&f| {
            let vals: Vec<f64> = samples.iter().map(|&(area, tag)| exit_value(f, area, tag)).collect();
            let (mean, std_error) = mean_se(&vals);
            McEstimate {
                mean,
                std_error,
                paths_used: cfg.paths,
                diagnostics: diag.clone(),
            }
        })
        .collect())
}

/// The areas `A_tau` themselves (censored paths report `+inf`).
pub fn sample_exit_areas(p: &ExitProblem<f64>, cfg: &McConfig) -> Result<Vec<f64>> {
    let (samples, _) = exit_samples(p, cfg)?;
    Ok(samples
        .into_iter()
        .map(|(a, tag)| if tag == 0 { f64::INFINITY } else { a })
        .collect())
}

struct OccPath {
    x: f64,
    t: f64,
    exposure: f64,
    status: u8,
    rng: ChaCha8Rng,
    /// Exponential horizon, when the clock is simulated.
    stop: f64,
}

/// Exposure above which `exp(-exposure)` is treated as 0.
const EXPOSURE_CAP: f64 = 50.0;

/// Simulation target for the Omega model: either `V` itself or the process
/// time-changed by `clock` (any positive extension of `omega`), along which
/// the exposure accumulates at rate `omega / clock`.
fn occupation_setup(p: &OmegaProblem<f64>, clock: Option<&AreaWeight<f64>>) -> Result<(DiffusionSpec<f64>, AreaWeight<f64>, Option<AreaWeight<f64>>)> {
    match clock {
        Some(w) => Ok((p.spec.time_change(w)?, p.omega.clone(), Some(w.clone()))),
        None => Ok((p.spec.clone(), p.omega.clone(), None)),
    }
}

fn advance_occ(
    st: &Stepper<'_>,
    omega: &AreaWeight<f64>,
    clock: Option<&AreaWeight<f64>>,
    cap: f64,
    p: &mut OccPath,
    horizon: f64,
) -> Result<()> {
    let rate = |x: f64| -> Result<f64> {
        if x >= 0.0 {
            return Ok(0.0);
        }
        let om = omega.b2(x)?;
        Ok(match clock {
            Some(w) => om / w.b2(x)?,
            None => om,
        })
    };
    let end = horizon.min(p.stop);
    while p.status == 0 && p.t < end {
        let h = st.dt.min(end - p.t);
        let (xn, _) = st.step(p.x, h, &mut p.rng)?;
        if st.outside(xn) {
            p.status = 3;
            return Ok(());
        }
        p.exposure += rate(0.5 * (p.x + xn))? * h;
        p.t += h;
        p.x = xn;
        if p.exposure > cap {
            p.status = 2;
            return Ok(());
        }
        if p.t >= p.stop {
            p.status = 1;
        }
    }
    Ok(())
}

/// Estimates `E[exp(-exposure)]` (so the bankruptcy probability is one minus
/// the mean). With `clock = Some(w)` the time-changed process is simulated.
pub fn simulate_occupation(p: &OmegaProblem<f64>, clock: Option<&AreaWeight<f64>>, cfg: &McConfig) -> Result<McEstimate> {
    simulate_occupation_laplace(p, 1.0, clock, cfg)
}

/// Estimates `E[exp(-lambda exposure)]`.
pub fn simulate_occupation_laplace(
    p: &OmegaProblem<f64>,
    lambda: f64,
    clock: Option<&AreaWeight<f64>>,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain("lambda must be finite and >= 0".into()));
    }
    let (spec, omega, clock) = occupation_setup(p, clock)?;
    let cap = if lambda > 0.0 { EXPOSURE_CAP / lambda } else { f64::INFINITY };
    let st = Stepper::new(&spec, cfg);
    drive(
        cfg,
        |i| OccPath {
            x: p.v0,
            t: 0.0,
            exposure: 0.0,
            status: 0,
            rng: path_rng(cfg.seed, i),
            stop: f64::INFINITY,
        },
        |s, h| advance_occ(&st, &omega, clock.as_ref(), cap, s, h),
        |s| if s.status == 2 { 0.0 } else { (-lambda * s.exposure).exp() },
        |s| s.status,
    )
}

/// Estimates `E[exp(-lambda tau_omega)] = 1 - E[exp(-int_0^{e_lambda}
/// omega(V) ds)]` by drawing the exponential time per path.
pub fn simulate_bankruptcy_time(p: &OmegaProblem<f64>, lambda: f64, cfg: &McConfig) -> Result<McEstimate> {
    if !(lambda > 0.0) {
        return Err(Error::Domain("lambda must be positive".into()));
    }
    let st = Stepper::new(&p.spec, cfg);
    let exp = Exp::new(lambda).map_err(|e| Error::Domain(e.to_string()))?;
    let cfg2 = McConfig {
        horizon: Horizon::Fixed(match cfg.horizon {
            Horizon::Fixed(h) => h,
            Horizon::Adaptive { max, .. } => max,
        }),
        ..cfg.clone()
    };
    drive(
        &cfg2,
        |i| {
            let mut rng = path_rng(cfg.seed, i);
            let stop = rng.sample(exp);
            OccPath {
                x: p.v0,
                t: 0.0,
                exposure: 0.0,
                status: 0,
                rng,
                stop,
            }
        },
        |s, h| advance_occ(&st, &p.omega, None, EXPOSURE_CAP, s, h),
        |s| if s.status == 2 { 1.0 } else { 1.0 - (-s.exposure).exp() },
        |s| s.status,
    )
}

struct MaxPath {
    x: f64,
    t: f64,
    area: f64,
    max: f64,
    /// Current barrier `g(max)` for Azema-Yor stopping.
    gbar: f64,
    status: u8,
    rng: ChaCha8Rng,
}

/// Estimates `E[exp(-alpha (M_tau - v0) - beta A_tau)]` at the first
/// drawdown of size `a_units`.
pub fn simulate_drawdown(p: &DrawdownProblem<f64>, cfg: &McConfig) -> Result<McEstimate> {
    let st = Stepper::new(&p.spec, cfg);
    let a = p.a_units;
    let w = &p.weight;
    drive(
        cfg,
        |i| MaxPath {
            x: p.v0,
            t: 0.0,
            area: 0.0,
            max: p.v0,
            gbar: 0.0,
            status: 0,
            rng: path_rng(cfg.seed, i),
        },
        |s, horizon| {
            let dt = st.dt;
            while s.status == 0 && s.t < horizon {
                let (xn, sig) = st.step(s.x, dt, &mut s.rng)?;
                if st.outside(xn) {
                    s.status = 3;
                    return Ok(());
                }
                let m = s.max.max(st.step_max(s.x, xn, sig, dt, &mut s.rng));
                let fx = w.b2(s.x)?;
                let b = m - a;
                if xn <= b {
                    let th = ((s.x - b) / (s.x - xn)).clamp(0.0, 1.0);
                    s.area += th * dt * 0.5 * (fx + w.b2(b)?);
                    s.t += th * dt;
                    s.max = m;
                    s.status = 1;
                    return Ok(());
                }
                let pb = st.bridge_prob(s.x, xn, b, sig, dt);
                if pb > 0.0 && s.rng.gen::<f64>() < pb {
                    s.area += 0.5 * dt * 0.5 * (fx + w.b2(b)?);
                    s.t += 0.5 * dt;
                    s.max = m;
                    s.status = 1;
                    return Ok(());
                }
                s.area += dt * 0.5 * (fx + w.b2(xn)?);
                s.t += dt;
                s.x = xn;
                s.max = m;
            }
            Ok(())
        },
        |s| (-p.alpha * (s.max - p.v0) - p.beta * s.area).exp(),
        |s| s.status,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaxFunctional {
    RuinTime,
    RuinArea,
}

/// Estimates `E[T]` or `E[int_0^T b^2(V) ds]` for the ruin time `T` of the
/// taxed surplus `U = V - M + gbar(M)`.
pub fn simulate_tax_ruin(m: &TaxModel<f64>, w: &AreaWeight<f64>, f: TaxFunctional, cfg: &McConfig) -> Result<McEstimate> {
    let contour = Contour::Tax {
        gamma: m.gamma.clone(),
        a: m.a,
        v0: m.v0,
    };
    simulate_ay(&m.spec, w, &contour, m.v0, m.s, f, cfg)
}

/// Estimates `E[tau]` or `E[A_tau]` for `tau = inf{t : V_t <= g(M_t)}` with
/// `M_0 = s`.
pub fn simulate_ay(
    spec: &DiffusionSpec<f64>,
    w: &AreaWeight<f64>,
    contour: &Contour<f64>,
    v0: f64,
    s0: f64,
    f: TaxFunctional,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if !(v0 <= s0) {
        return Err(Error::InvalidProblem("need v0 <= s".into()));
    }
    let st = Stepper::new(spec, cfg);
    // running value of g(M), advanced incrementally for the tax contour
    let g_at = |m: f64| -> Result<f64> {
        match contour {
            Contour::Function(g) => g.eval(m),
            Contour::Tax { .. } => Ok(f64::NAN),
        }
    };
    let g0 = match contour {
        Contour::Function(g) => g.eval(s0)?,
        Contour::Tax { gamma, a, v0: base } => {
            let n = 256;
            let h = (s0 - base) / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                acc += gamma.eval(base + (i as f64 + 0.5) * h)? * h;
            }
            a + acc
        }
    };
    drive(
        cfg,
        |i| MaxPath {
            x: v0,
            t: 0.0,
            area: 0.0,
            max: s0,
            gbar: g0,
            status: if v0 <= g0 { 1 } else { 0 },
            rng: path_rng(cfg.seed, i),
        },
        |s, horizon| {
            let dt = st.dt;
            while s.status == 0 && s.t < horizon {
                let (xn, sig) = st.step(s.x, dt, &mut s.rng)?;
                if st.outside(xn) {
                    s.status = 3;
                    return Ok(());
                }
                let mnew = s.max.max(st.step_max(s.x, xn, sig, dt, &mut s.rng));
                if mnew > s.max {
                    s.gbar = match contour {
                        Contour::Function(_) => g_at(mnew)?,
                        Contour::Tax { gamma, .. } => s.gbar + gamma.eval(0.5 * (s.max + mnew))? * (mnew - s.max),
                    };
                    s.max = mnew;
                }
                let b = s.gbar;
                let fx = w.b2(s.x)?;
                if xn <= b {
                    let th = ((s.x - b) / (s.x - xn)).clamp(0.0, 1.0);
                    s.area += th * dt * 0.5 * (fx + w.b2(b)?);
                    s.t += th * dt;
                    s.status = 1;
                    return Ok(());
                }
                let pb = st.bridge_prob(s.x, xn, b, sig, dt);
                if pb > 0.0 && s.rng.gen::<f64>() < pb {
                    s.area += 0.5 * dt * 0.5 * (fx + w.b2(b)?);
                    s.t += 0.5 * dt;
                    s.status = 1;
                    return Ok(());
                }
                s.area += dt * 0.5 * (fx + w.b2(xn)?);
                s.t += dt;
                s.x = xn;
            }
            Ok(())
        },
        |s| match f {
            TaxFunctional::RuinTime => s.t,
            TaxFunctional::RuinArea => s.area,
        },
        |s| s.status,
    )
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> KsResult {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(|p, q| p.total_cmp(q));
    b.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut q = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lam * lam).exp();
        q += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    KsResult {
        statistic: d,
        p_value: q.clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Coefficient;

    fn cfg(paths: usize, dt: f64) -> McConfig {
        McConfig {
            paths,
            dt,
            seed: 7,
            ..McConfig::default()
        }
    }

    fn bm_exit() -> ExitProblem<f64> {
        ExitProblem::new(DiffusionSpec::bm_drift(0.0, 1.0).unwrap(), AreaWeight::unit(), 0.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn bm_exit_probability_and_mean_time() {
        let c = McConfig { crossing: Crossing::BridgeCorrected, ..cfg(10_000, 1e-3) };
        let p = simulate_exit_area(&bm_exit(), ExitFunctional::ExitProb(Side::Lower), &c).unwrap();
        assert!(p.within(0.5, 3.0), "{p:?}");
        let t = simulate_exit_area(&bm_exit(), ExitFunctional::AreaMoment(1), &c).unwrap();
        assert!(t.within(0.25, 3.0), "{t:?}");
        assert_eq!(t.diagnostics.censored, 0);
    }

    #[test]
    fn deterministic_across_threads() {
        let c1 = McConfig { threads: Some(1), ..cfg(500, 1e-2) };
        let c3 = McConfig { threads: Some(3), ..c1.clone() };
        let f = ExitFunctional::ExpNegLambdaArea { lambda: 1.0, side: Side::Lower };
        let a = simulate_exit_area(&bm_exit(), f, &c1).unwrap();
        let b = simulate_exit_area(&bm_exit(), f, &c3).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let o = OmegaProblem::new(DiffusionSpec::quad_drift(1.0).unwrap(), AreaWeight::square_negative(), 0.0).unwrap();
        let clock = AreaWeight::square();
        let x = simulate_occupation(&o, Some(&clock), &McConfig { horizon: Horizon::Adaptive { initial: 2.0, max: 8.0 }, ..c1.clone() }).unwrap();
        let y = simulate_occupation(&o, Some(&clock), &McConfig { horizon: Horizon::Adaptive { initial: 2.0, max: 8.0 }, ..c3 }).unwrap();
        assert_eq!(x.mean.to_bits(), y.mean.to_bits());
    }

    #[test]
    fn zero_rate_means_no_exposure() {
        let o = OmegaProblem::new(DiffusionSpec::bm_drift(0.5, 1.0).unwrap(), AreaWeight::const_negative(0.0).unwrap(), 0.2).unwrap();
        let e = simulate_occupation(&o, None, &McConfig { horizon: Horizon::Fixed(2.0), ..cfg(200, 1e-2) }).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn drawdown_trivial_and_degenerate() {
        let spec = DiffusionSpec::bm_drift(0.0, 1.0).unwrap();
        let p = DrawdownProblem::new(spec, AreaWeight::unit(), 1.0, 0.0, 0.0, 0.0).unwrap();
        let e = simulate_drawdown(&p, &cfg(200, 1e-2)).unwrap();
        assert_eq!(e.mean, 1.0);
        let det = DiffusionSpec::bm_drift(-0.5, 1e-6).unwrap();
        let q = DrawdownProblem::new(det, AreaWeight::unit(), 1.0, 0.0, 0.0, 0.7).unwrap();
        let e = simulate_drawdown(&q, &cfg(200, 1e-3)).unwrap();
        assert!((e.mean - (-0.7f64 * 2.0).exp()).abs() < 1e-3, "{e:?}");
    }

    #[test]
    fn wald_for_untaxed_ruin() {
        let m = TaxModel::new(DiffusionSpec::bm_drift(-0.5, 1.0).unwrap(), Coefficient::constant(0.0), 0.0, 1.0).unwrap();
        let c = McConfig { crossing: Crossing::BridgeCorrected, ..cfg(10_000, 1e-3) };
        let e = simulate_tax_ruin(&m, &AreaWeight::unit(), TaxFunctional::RuinTime, &c).unwrap();
        assert!(e.within(2.0, 3.0), "{e:?}");
    }

    #[test]
    fn ks_detects_shift() {
        let mut r = path_rng(1, 0);
        let x: Vec<f64> = (0..2000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..2000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let z: Vec<f64> = y.iter().map(|v| v + 0.3).collect();
        assert!(ks_two_sample(&x, &y).p_value > 0.01);
        assert!(ks_two_sample(&x, &z).p_value < 1e-6);
    }
}
