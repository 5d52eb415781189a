//! Drawdown transforms, expected Azema-Yor times and ruin under a
//! surplus-dependent tax.
//!
//! For the drawdown transform the kernel at `x` only needs the solution `u`
//! of the (weighted) equation with `u(x - a) = 0`, `u'(x - a) = 1`:
//! `d(x) = u'(x) / u(x)` and `c(x) = s(x) / (s(x - a) u(x))`. Both are
//! basis-free. Since `u'/s` is nondecreasing, `c <= d`, so the remaining
//! mass beyond `U` is at most `exp(-alpha U - D(U))`.

use crate::diffusion::{AreaWeight, Coefficient, DiffusionSpec, ScaleTable};
use crate::error::{Error, Result};
use crate::ode::{integrate_to_points, OdeOptions};
use crate::quadrature::{integrate, QuadOptions};
use crate::real::{lit, to_f64, Real};
use crate::sturm_liouville::{closed_form_point, Killing};

#[derive(Debug, Clone)]
pub struct DrawdownProblem<T> {
    pub spec: DiffusionSpec<T>,
    pub weight: AreaWeight<T>,
    pub a_units: T,
    pub v0: T,
    /// Acts on the rise of the running maximum above `v0`.
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> DrawdownProblem<T> {
    pub fn new(spec: DiffusionSpec<T>, weight: AreaWeight<T>, a_units: T, v0: T, alpha: T, beta: T) -> Result<Self> {
        if !(a_units > T::zero()) || !a_units.is_finite() {
            return Err(Error::InvalidProblem("drawdown size must be positive".into()));
        }
        if !(alpha >= T::zero()) || !(beta >= T::zero()) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidProblem("alpha and beta must be finite and >= 0".into()));
        }
        if !spec.space().contains_open(v0) || !spec.space().contains_open(v0 - a_units) {
            return Err(Error::InvalidProblem(
                "v0 and v0 - a must lie inside the state interval".into(),
            ));
        }
        Ok(Self {
            spec,
            weight,
            a_units,
            v0,
            alpha,
            beta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawdownOptions<T> {
    /// Stop once `exp(-alpha U - D(U))` falls below this.
    pub tail_tol: T,
    pub max_windows: usize,
    pub ode: OdeOptions<T>,
}

impl<T: Real> Default for DrawdownOptions<T> {
    fn default() -> Self {
        Self {
            tail_tol: lit(1e-12),
            max_windows: 40,
            ode: OdeOptions {
                rel_tol: lit(1e-10),
                abs_tol: lit(1e-14),
                ..OdeOptions::default()
            },
        }
    }
}

/// `(d, c)` from raw values of an arbitrary pair `(g, h)` at `x - a` and
/// `x`, as literally defined.
pub fn drawdown_kernel_from_basis<T: Real>(g_xa: T, h_xa: T, g_x: T, h_x: T, dg_x: T, dh_x: T) -> (T, T) {
    let den = g_xa * h_x - g_x * h_xa;
    let d = (g_xa * dh_x - h_xa * dg_x) / den;
    let c = (g_x * dh_x - dg_x * h_x) / den;
    (d, c)
}

struct Kernel<'a, T> {
    base: DiffusionSpec<T>,
    weight: AreaWeight<T>,
    tc: DiffusionSpec<T>,
    p: &'a DrawdownProblem<T>,
    ode: OdeOptions<T>,
}

impl<'a, T: Real> Kernel<'a, T> {
    fn new(p: &'a DrawdownProblem<T>, ode: OdeOptions<T>) -> Result<Self> {
        let tc = p.spec.time_change(&p.weight)?;
        let (base, weight) = tc.killing_form();
        Ok(Self { base, weight, tc, p, ode })
    }

    fn closed(&self, x: T) -> Result<Option<(T, T)>> {
        let a = self.p.a_units;
        let beta = self.p.beta;
        let Some(cat) = self.tc.catalog() else {
            return Ok(None);
        };
        if beta == T::zero() {
            if matches!(cat.name(), "bm_drift" | "gbm" | "quad_drift" | "scaled_bessel") {
                let spec = &self.tc;
                let span = spec.scale_function(x)? - spec.scale_function(x - a)?;
                let d = spec.scale_density(x)? / span;
                return Ok(Some((d, d)));
            }
            return Ok(None);
        }
        let (Some(lo), Some(hi)) = (closed_form_point(cat, beta, x - a)?, closed_form_point(cat, beta, x)?) else {
            return Ok(None);
        };
        if hi.dlog_plus == hi.dlog_minus {
            return Ok(None);
        }
        // R = g+(x-a) g-(x) / (g-(x-a) g+(x)) in (0, 1)
        let r = (lo.ln_g_plus + hi.ln_g_minus - lo.ln_g_minus - hi.ln_g_plus).exp();
        let one_m = T::one() - r;
        let d = (hi.dlog_plus - r * hi.dlog_minus) / one_m;
        let c = (hi.ln_g_minus - lo.ln_g_minus).exp() * (hi.dlog_plus - hi.dlog_minus) / one_m;
        Ok(Some((d, c)))
    }

    fn at(&self, x: T) -> Result<(T, T)> {
        if let Some(v) = self.closed(x)? {
            return Ok(v);
        }
        let a = self.p.a_units;
        let kill = Killing::new(&self.base, &self.weight, self.p.beta);
        let base = &self.base;
        let mut out = (T::zero(), T::zero());
        integrate_to_points(
            |y, st: &[T; 3]| Ok([st[1], kill.second(y, st[0], st[1])?, -base.drift_ratio(y)?]),
            x - a,
            [T::zero(), T::one(), T::zero()],
            &[x],
            &self.ode,
            |_, _, st| {
                if !(st[0] > T::zero()) {
                    return Err(Error::Domain("vanishing solution is not positive".into()));
                }
                out = (st[1] / st[0], st[2].exp() / st[0]);
                Ok(())
            },
        )?;
        Ok(out)
    }
}

/// `(d(x), c(x))` for the problem's equation at `x` (original coordinates).
pub fn drawdown_kernel<T: Real>(p: &DrawdownProblem<T>, x: T) -> Result<(T, T)> {
    Kernel::new(p, DrawdownOptions::default().ode)?.at(x)
}

/// Result of the drawdown transform with its tail diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawdownTransform<T> {
    pub value: T,
    /// Bound on the neglected tail.
    pub tail_bound: T,
    /// Rise of the maximum at which the outer integral stopped.
    pub reach: T,
}

/// `E[exp(-alpha (M_tau - v0) - beta A_tau)]` at the first drawdown of size
/// `a_units`, with `A` the weighted area (`tau` itself for unit weight).
pub fn drawdown_joint_laplace<T: Real>(p: &DrawdownProblem<T>, opts: &DrawdownOptions<T>) -> Result<T> {
    Ok(drawdown_transform(p, opts)?.value)
}

pub fn drawdown_transform<T: Real>(p: &DrawdownProblem<T>, opts: &DrawdownOptions<T>) -> Result<DrawdownTransform<T>> {
    let kernel = Kernel::new(p, opts.ode)?;
    let upper = p.spec.space().upper;
    let alpha = p.alpha;
    let v0 = p.v0;
    let mut state = [T::zero(), T::zero()];
    let mut u0 = T::zero();
    let mut len = p.a_units * lit(2.0);
    for _ in 0..opts.max_windows {
        let mut u1 = u0 + len;
        if upper.is_finite() && v0 + u1 >= upper {
            u1 = (upper - v0) * lit(1.0 - 1e-9);
        }
        integrate_to_points(
            |u, y: &[T; 2]| {
                let (d, c) = kernel.at(v0 + u)?;
                Ok([d, (-alpha * u - y[0]).exp() * c])
            },
            u0,
            state,
            &[u1],
            &opts.ode,
            |_, _, y| {
                state = *y;
                Ok(())
            },
        )?;
        let bound = (-alpha * u1 - state[0]).exp();
        if bound < opts.tail_tol {
            return Ok(DrawdownTransform {
                value: state[1].min(T::one()),
                tail_bound: bound,
                reach: u1,
            });
        }
        if upper.is_finite() && v0 + u1 >= upper * lit(1.0 - 1e-9) {
            break;
        }
        u0 = u1;
        len = len * lit(2.0);
    }
    Err(Error::Truncation(
        "drawdown outer integral did not meet its tail bound".into(),
    ))
}

/// How the Azema-Yor contour `g` is given.
#[derive(Debug, Clone)]
pub enum Contour<T> {
    Function(Coefficient<T>),
    /// `g(x) = a + int_{v0}^x gamma`.
    Tax { gamma: Coefficient<T>, a: T, v0: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationOptions<T> {
    /// Relative change over a window that counts as converged.
    pub tolerance: T,
    pub max_windows: usize,
    /// Minimum distance between `g(t)` and `t`.
    pub min_gap: T,
    pub quad: QuadOptions<T>,
    pub ode: OdeOptions<T>,
}

impl<T: Real> Default for ExpectationOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: lit(1e-10),
            max_windows: 40,
            min_gap: lit(1e-9),
            quad: QuadOptions {
                abs_tol: lit(1e-15),
                rel_tol: lit(1e-11),
                max_subdivisions: 2000,
            },
            ode: OdeOptions {
                rel_tol: lit(1e-10),
                abs_tol: lit(1e-14),
                ..OdeOptions::default()
            },
        }
    }
}

/// An expectation that may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation<T> {
    /// `+inf` when divergence was detected.
    pub value: T,
    pub diverged: bool,
    /// Where the outer integral stopped.
    pub reach: T,
    /// `exp(-int s / (S - S(g)))` at `reach`.
    pub survival: T,
    /// Increment of the outer integral on each window.
    pub increments: Vec<T>,
}

struct Contoured<'a, T> {
    spec: &'a DiffusionSpec<T>,
    weight: &'a AreaWeight<T>,
    table: ScaleTable<T>,
    lo: T,
    opts: ExpectationOptions<T>,
}

impl<'a, T: Real> Contoured<'a, T> {
    fn ensure(&mut self, hi: T) -> Result<()> {
        self.table.extend_to(hi)
    }

    fn s_and_ln(&self, x: T) -> Result<(T, T)> {
        let (ls, big) = self.table.eval(x)?;
        Ok((ls, big))
    }

    /// `int_lo^hi b^2 (S(r) - S(anchor)) / (sigma^2 s) dr` (or with
    /// `S(anchor) - S(r)` when `reverse`).
    fn green(&self, lo: T, hi: T, anchor: T, reverse: bool) -> Result<T> {
        if lo >= hi {
            return Ok(T::zero());
        }
        let (_, s_anchor) = self.s_and_ln(anchor)?;
        integrate(
            |r| {
                let b2 = self.weight.b2(r)?;
                if b2 == T::zero() {
                    return Ok(T::zero());
                }
                let (ls, big) = self.s_and_ln(r)?;
                let sig = self.spec.volatility(r)?;
                let diff = if reverse { s_anchor - big } else { big - s_anchor };
                let v = b2 * diff / (sig * sig * ls.exp());
                if !v.is_finite() {
                    return Err(Error::Domain(format!("Green integrand undefined at r = {}", to_f64(r))));
                }
                Ok(v)
            },
            lo,
            hi,
            &self.opts.quad,
        )
    }

    fn check_contour(&self, t: T, g: T) -> Result<()> {
        if !(g < t - self.opts.min_gap * (T::one() + t.abs())) {
            return Err(Error::InvalidProblem(format!(
                "contour g({}) = {} is not strictly below t",
                to_f64(t),
                to_f64(g)
            )));
        }
        if g < self.lo {
            return Err(Error::InvalidProblem(format!(
                "contour g({}) = {} leaves the tabulated range",
                to_f64(t),
                to_f64(g)
            )));
        }
        Ok(())
    }
}

/// `E[int_0^tau b^2(V) ds]` for `tau = inf{t : V_t <= g(M_t)}`, `M_0 = s`.
pub fn ay_expected_area<T: Real>(
    spec: &DiffusionSpec<T>,
    weight: &AreaWeight<T>,
    contour: &Contour<T>,
    v0: T,
    s: T,
    opts: &ExpectationOptions<T>,
) -> Result<Expectation<T>> {
    if !(v0 <= s) {
        return Err(Error::InvalidProblem("need v0 <= s".into()));
    }
    let space = spec.space();
    if !space.contains_open(v0) || !space.contains_open(s) {
        return Err(Error::InvalidProblem("v0 and s must lie inside the state interval".into()));
    }
    let gamma_check = |x: T, gm: &Coefficient<T>| -> Result<T> {
        let v = gm.eval(x)?;
        if !(v >= T::zero() && v < T::one()) {
            return Err(Error::InvalidProblem(format!(
                "tax rate {} at x = {} outside [0, 1)",
                to_f64(v),
                to_f64(x)
            )));
        }
        Ok(v)
    };
    let q = opts.quad;
    let g_s = match contour {
        Contour::Function(g) => g.eval(s)?,
        Contour::Tax { gamma, a, v0: tv0 } => {
            if !(*a < *tv0) {
                return Err(Error::InvalidProblem("tax threshold must be below v0".into()));
            }
            if s < *tv0 {
                return Err(Error::InvalidProblem("running maximum below the tax base point".into()));
            }
            *a + integrate(|z| gamma_check(z, gamma), *tv0, s, &q)?
        }
    };
    let zero_result = Expectation {
        value: T::zero(),
        diverged: false,
        reach: s,
        survival: T::one(),
        increments: vec![],
    };
    if g_s >= v0 {
        return Ok(zero_result);
    }
    let lo = match contour {
        Contour::Tax { a, .. } => *a,
        Contour::Function(_) => {
            let l = space.lower;
            let floor = g_s - (s - g_s).max(T::one()) * lit(4.0);
            if l.is_finite() {
                floor.max(l + (g_s - l) * lit(1e-3))
            } else {
                floor
            }
        }
    };
    if !space.contains_open(lo) && !(lo == g_s && space.contains_open(g_s)) {
        return Err(Error::InvalidProblem("contour leaves the state interval".into()));
    }
    let lo = lo.min(g_s);
    let first = (s - lo).max(T::one()) * lit(2.0);
    let mut ctx = Contoured {
        spec,
        weight,
        table: ScaleTable::new(spec, lo, s + first)?,
        lo,
        opts: *opts,
    };
    ctx.check_contour(s, g_s)?;

    let (_, s_s) = ctx.s_and_ln(s)?;
    let (_, s_v) = ctx.s_and_ln(v0)?;
    let (_, s_g) = ctx.s_and_ln(g_s)?;
    let width = s_s - s_g;
    let w_low = (s_s - s_v) / width;
    let w_high = (s_v - s_g) / width;
    let two: T = lit(2.0);
    let part1 = if w_low > T::zero() { ctx.green(g_s, v0, g_s, false)? } else { T::zero() };
    let part2 = ctx.green(v0, s, s, true)?;

    // outer integral in t from s, state [ln K, E, g]
    let mut state = [T::zero(), T::zero(), g_s];
    let mut t0 = s;
    let mut len = first;
    let mut increments: Vec<T> = Vec::new();
    let mut small = 0usize;
    let mut diverged = false;
    let upper = space.upper;
    for _ in 0..opts.max_windows {
        let mut t1 = t0 + len;
        if upper.is_finite() && t1 >= upper {
            t1 = t0 + (upper - t0) * lit(0.5);
        }
        ctx.ensure(t1)?;
        let prev_e = state[1];
        let step = {
            let ctx = &ctx;
            let mut next = state;
            let res = integrate_to_points(
                |t, y: &[T; 3]| {
                    let (g, dg) = match contour {
                        Contour::Function(gf) => (gf.eval(t)?, T::zero()),
                        Contour::Tax { gamma, .. } => (y[2], gamma_check(t, gamma)?),
                    };
                    ctx.check_contour(t, g)?;
                    let (ls, big) = ctx.s_and_ln(t)?;
                    let (_, big_g) = ctx.s_and_ln(g)?;
                    let k = ls.exp() / (big - big_g);
                    let j = ctx.green(g, t, g, false)?;
                    Ok([-k, two * k * j * y[0].exp(), dg])
                },
                t0,
                state,
                &[t1],
                &opts.ode,
                |_, _, y| {
                    next = *y;
                    Ok(())
                },
            );
            res.map(|_| next)
        };
        match step {
            Ok(next) if next.iter().all(|v| v.is_finite()) => state = next,
            Ok(_) | Err(Error::Stiffness(_)) | Err(Error::QuadratureFailure(_)) => {
                // overflow of the integrand: only acceptable as divergence
                if increments.len() >= 2 && increments[increments.len() - 1] >= increments[increments.len() - 2] {
                    diverged = true;
                    break;
                }
                return Err(Error::Truncation(format!(
                    "outer integral became non-finite near t = {}",
                    to_f64(t1)
                )));
            }
            Err(e) => return Err(e),
        }
        let inc = state[1] - prev_e;
        increments.push(inc);
        t0 = t1;
        if state[1] > lit(1e15) {
            diverged = true;
            break;
        }
        let n = increments.len();
        // increments that stop shrinking across doubling windows mean at
        // best a tail like t^{-1-eps} with tiny eps
        let ratio: T = lit(0.95);
        if n >= 8 && inc > T::zero() && (n - 4..n).all(|i| increments[i] >= ratio * increments[i - 1]) {
            diverged = true;
            break;
        }
        if inc.abs() <= opts.tolerance * state[1].abs() {
            small += 1;
            if small >= 2 {
                break;
            }
        } else {
            small = 0;
        }
        if upper.is_finite() && upper - t1 < lit(1e-9) {
            break;
        }
        len = len * lit(2.0);
        if increments.len() == opts.max_windows {
            return Err(Error::Truncation("outer integral did not settle".into()));
        }
    }
    if diverged {
        return Ok(Expectation {
            value: T::infinity(),
            diverged: true,
            reach: t0,
            survival: state[0].exp(),
            increments,
        });
    }
    // the outer integrand already carries the factor 2
    let value = two * w_low * part1 + w_high * (two * part2 + state[1]);
    Ok(Expectation {
        value,
        diverged: false,
        reach: t0,
        survival: state[0].exp(),
        increments,
    })
}

/// `E[tau]` for `tau = inf{t : V_t <= g(M_t)}` with `M_0 = s >= v0`; zero
/// when `v0 <= g(s)`.
pub fn ay_expected_time<T: Real>(
    spec: &DiffusionSpec<T>,
    g: &Coefficient<T>,
    v0: T,
    s: T,
    opts: &ExpectationOptions<T>,
) -> Result<Expectation<T>> {
    ay_expected_area(spec, &AreaWeight::unit(), &Contour::Function(g.clone()), v0, s, opts)
}

/// Surplus `dU = dV - gamma(M) dM`, `U_0 = v0`, ruined on reaching `a`.
#[derive(Debug, Clone)]
pub struct TaxModel<T> {
    pub spec: DiffusionSpec<T>,
    pub gamma: Coefficient<T>,
    pub a: T,
    pub v0: T,
    /// Initial running maximum.
    pub s: T,
}

impl<T: Real> TaxModel<T> {
    pub fn new(spec: DiffusionSpec<T>, gamma: Coefficient<T>, a: T, v0: T) -> Result<Self> {
        if !(a < v0) {
            return Err(Error::InvalidProblem("default threshold must be below v0".into()));
        }
        if !spec.space().contains_open(a) || !spec.space().contains_open(v0) {
            return Err(Error::InvalidProblem("a and v0 must lie inside the state interval".into()));
        }
        for i in 0..=64 {
            let x = v0 + lit::<T>(i as f64 * 0.5);
            if !spec.space().contains_open(x) {
                break;
            }
            let v = gamma.eval(x)?;
            if !(v >= T::zero() && v < T::one()) {
                return Err(Error::InvalidProblem(format!(
                    "tax rate {} at x = {} outside [0, 1)",
                    to_f64(v),
                    to_f64(x)
                )));
            }
        }
        Ok(Self { spec, gamma, a, v0, s: v0 })
    }

    fn contour(&self) -> Contour<T> {
        Contour::Tax {
            gamma: self.gamma.clone(),
            a: self.a,
            v0: self.v0,
        }
    }
}

/// Expected time until the taxed surplus reaches `a`.
pub fn tax_expected_ruin_time<T: Real>(m: &TaxModel<T>, opts: &ExpectationOptions<T>) -> Result<Expectation<T>> {
    ay_expected_area(&m.spec, &AreaWeight::unit(), &m.contour(), m.v0, m.s, opts)
}

/// Expected `int_0^T b^2(V) ds` until ruin.
pub fn tax_expected_ruin_area<T: Real>(
    m: &TaxModel<T>,
    w: &AreaWeight<T>,
    opts: &ExpectationOptions<T>,
) -> Result<Expectation<T>> {
    ay_expected_area(&m.spec, w, &m.contour(), m.v0, m.s, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(mu: f64) -> DiffusionSpec<f64> {
        DiffusionSpec::bm_drift(mu, 1.0).unwrap()
    }

    #[test]
    fn bm_drawdown_closed_form() {
        let o = DrawdownOptions::default();
        let p = DrawdownProblem::new(bm(0.0), AreaWeight::unit(), 1.0, 0.0, 0.0, 1.0).unwrap();
        let v = drawdown_joint_laplace(&p, &o).unwrap();
        let want = 1.0 / (2f64.sqrt()).cosh();
        assert!((v - want).abs() < 1e-10, "{v} {want}");
        let q = DrawdownProblem { spec: p.spec.without_catalog(), ..p.clone() };
        let n = drawdown_joint_laplace(&q, &o).unwrap();
        assert!((n - want).abs() < 1e-8, "{n} {want}");
        let z = DrawdownProblem { beta: 0.0, ..p.clone() };
        assert!((drawdown_joint_laplace(&z, &o).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kernel_basis_invariance() {
        // drifted BM, beta = 0.7, basis exp(b+ x), exp(b- x)
        let (mu, beta, a, x) = (0.3f64, 0.7, 0.8, 0.25);
        let r = (mu * mu + 2.0 * beta).sqrt();
        let (bp, bm_) = (-mu + r, -mu - r);
        let g = |y: f64| (bp * y).exp();
        let h = |y: f64| (bm_ * y).exp();
        let base = drawdown_kernel_from_basis(g(x - a), h(x - a), g(x), h(x), bp * g(x), bm_ * h(x));
        let m = [[1.7, -0.4], [0.9, 2.2]];
        let gg = |y: f64, dy: bool| {
            let (u, v) = if dy { (bp * g(y), bm_ * h(y)) } else { (g(y), h(y)) };
            (m[0][0] * u + m[0][1] * v, m[1][0] * u + m[1][1] * v)
        };
        let (g1, h1) = gg(x - a, false);
        let (g2, h2) = gg(x, false);
        let (dg2, dh2) = gg(x, true);
        let mixed = drawdown_kernel_from_basis(g1, h1, g2, h2, dg2, dh2);
        assert!((mixed.0 - base.0).abs() < 1e-10 * base.0.abs());
        assert!((mixed.1 - base.1).abs() < 1e-10 * base.1.abs());
        let p = DrawdownProblem::new(bm(mu), AreaWeight::unit(), a, 0.0, 0.0, beta).unwrap();
        let (d, c) = drawdown_kernel(&p, x).unwrap();
        assert!((d - base.0).abs() < 1e-10 * d && (c - base.1).abs() < 1e-10 * c);
        let q = DrawdownProblem { spec: p.spec.without_catalog(), ..p };
        let (dn, cn) = drawdown_kernel(&q, x).unwrap();
        assert!((dn - d).abs() < 1e-8 * d && (cn - c).abs() < 1e-8 * c);
    }

    #[test]
    fn monotone_in_arguments() {
        let o = DrawdownOptions::default();
        let mut last = 2.0;
        for al in [0.0, 0.5, 1.0] {
            let p = DrawdownProblem::new(bm(0.2), AreaWeight::unit(), 0.7, 0.0, al, 0.4).unwrap();
            let v = drawdown_joint_laplace(&p, &o).unwrap();
            assert!(v <= last && v > 0.0);
            last = v;
        }
    }

    #[test]
    fn wald_identity_for_zero_tax() {
        let o = ExpectationOptions::default();
        let m = TaxModel::new(bm(-0.5), Coefficient::constant(0.0), 0.0, 1.0).unwrap();
        let e = tax_expected_ruin_time(&m, &o).unwrap();
        assert!(!e.diverged);
        assert!((e.value - 2.0).abs() < 2e-4, "{}", e.value);
        let area = tax_expected_ruin_area(&m, &AreaWeight::unit(), &o).unwrap();
        assert_eq!(area.value, e.value);
        let zero = AreaWeight::from_coefficient(Coefficient::constant(0.0), vec![]);
        assert_eq!(tax_expected_ruin_area(&m, &zero, &o).unwrap().value, 0.0);
    }

    #[test]
    fn transient_case_diverges() {
        let m = TaxModel::new(bm(0.5), Coefficient::constant(0.0), 0.0, 1.0).unwrap();
        let e = tax_expected_ruin_time(&m, &ExpectationOptions::default()).unwrap();
        assert!(e.diverged && e.value.is_infinite());
    }

    #[test]
    fn ay_matches_drawdown_derivative() {
        let spec = bm(-0.3);
        let a = 0.8;
        let g = Coefficient::expression("x - 0.8").unwrap();
        let e = ay_expected_time(&spec, &g, 0.0, 0.0, &ExpectationOptions::default()).unwrap();
        let o = DrawdownOptions::default();
        let h = 1e-4;
        let f = |b: f64| {
            let p = DrawdownProblem::new(spec.clone(), AreaWeight::unit(), a, 0.0, 0.0, b).unwrap();
            drawdown_joint_laplace(&p, &o).unwrap()
        };
        let deriv = (f(0.0) - f(2.0 * h)) / (2.0 * h);
        assert!((deriv - e.value).abs() / e.value < 1e-3, "{deriv} {}", e.value);
    }

    #[test]
    fn ay_zero_branch_and_continuity() {
        let spec = bm(-0.5);
        let g = Coefficient::expression("x / 2").unwrap();
        let o = ExpectationOptions::default();
        assert_eq!(ay_expected_time(&spec, &g, 0.5, 1.0, &o).unwrap().value, 0.0);
        let near = ay_expected_time(&spec, &g, 0.5 + 1e-6, 1.0, &o).unwrap().value;
        assert!(near >= 0.0 && near < 1e-4, "{near}");
    }

    #[test]
    fn standard_bm_half_contour_is_log_divergent() {
        // outer integrand is s^2 / t, so E[tau] is infinite
        let g = Coefficient::expression("x / 2").unwrap();
        let e = ay_expected_time(&bm(0.0), &g, 1.0, 1.0, &ExpectationOptions::default()).unwrap();
        assert!(e.diverged, "{e:?}");
        let inc = &e.increments;
        let last = inc[inc.len() - 1];
        assert!(inc.iter().rev().take(3).all(|v| (v / last - 1.0).abs() < 0.1));
    }

    #[test]
    fn shift_invariance() {
        let o = ExpectationOptions::default();
        let m1 = TaxModel::new(bm(-0.5), Coefficient::constant(0.3), 0.0, 1.0).unwrap();
        let m2 = TaxModel::new(bm(-0.5).with_ref_point(5.0).unwrap(), Coefficient::constant(0.3), 5.0, 6.0).unwrap();
        let a = tax_expected_ruin_time(&m1, &o).unwrap().value;
        let b = tax_expected_ruin_time(&m2, &o).unwrap().value;
        assert!((a - b).abs() < 1e-9 * a, "{a} {b}");
    }
}
