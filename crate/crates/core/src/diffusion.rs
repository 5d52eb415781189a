//! One-dimensional diffusions `dV = mu(V) dt + sigma(V) dW`, area weights and
//! the scale/speed machinery built on them.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::ode::{integrate_to_points, OdeOptions};
use crate::quadrature::{integrate, QuadOptions};
use crate::real::{lit, to_f64, Real};

/// Boundary behaviour at an end of the state interval.
///
/// `NaturalInfinite` covers natural boundaries, whether the coordinate is
/// infinite or finite (the origin for geometric Brownian motion): the process
/// never reaches them and the Sturm-Liouville solutions are found by
/// truncation. `Absorbing` ends kill the process on arrival. `Truncated` is a
/// numerical cut of an otherwise natural end and behaves like `Absorbing`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Absorbing,
    NaturalInfinite,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpace<T> {
    pub lower: T,
    pub upper: T,
    pub lower_boundary: Boundary,
    pub upper_boundary: Boundary,
}

impl<T: Real> StateSpace<T> {
    pub fn new(lower: T, upper: T, lower_boundary: Boundary, upper_boundary: Boundary) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || !(lower < upper) {
            return Err(Error::InvalidSpec(format!(
                "state space needs l < r (got l = {}, r = {})",
                to_f64(lower),
                to_f64(upper)
            )));
        }
        if lower == T::infinity() || upper == T::neg_infinity() {
            return Err(Error::InvalidSpec("state space bounds point the wrong way".into()));
        }
        for (v, b) in [(lower, lower_boundary), (upper, upper_boundary)] {
            if !v.is_finite() && b != Boundary::NaturalInfinite {
                return Err(Error::InvalidSpec(
                    "an infinite end must be declared NaturalInfinite".into(),
                ));
            }
        }
        Ok(Self {
            lower,
            upper,
            lower_boundary,
            upper_boundary,
        })
    }

    pub fn real_line() -> Self {
        Self {
            lower: T::neg_infinity(),
            upper: T::infinity(),
            lower_boundary: Boundary::NaturalInfinite,
            upper_boundary: Boundary::NaturalInfinite,
        }
    }

    /// `(0, inf)` with a natural origin.
    pub fn positive_half_line() -> Self {
        Self {
            lower: T::zero(),
            upper: T::infinity(),
            lower_boundary: Boundary::NaturalInfinite,
            upper_boundary: Boundary::NaturalInfinite,
        }
    }

    pub fn contains_open(&self, x: T) -> bool {
        x > self.lower && x < self.upper
    }

    pub fn contains_closed(&self, x: T) -> bool {
        x >= self.lower && x <= self.upper
    }

    fn default_ref_point(&self) -> T {
        if self.contains_open(T::zero()) {
            T::zero()
        } else if self.lower.is_finite() && self.upper.is_finite() {
            (self.lower + self.upper) * lit(0.5)
        } else if self.lower.is_finite() {
            self.lower + T::one()
        } else {
            self.upper - T::one()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Builtin { name: String, params: Vec<f64> },
    Expression(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Builtin { name, params } => write!(f, "{name}{params:?}"),
            Provenance::Expression(src) => write!(f, "{src}"),
        }
    }
}

type CoefFn<T> = dyn Fn(T) -> Result<T> + Send + Sync;

/// A deterministic real function of the state, with a record of where it came
/// from.
#[derive(Clone)]
pub struct Coefficient<T> {
    f: Arc<CoefFn<T>>,
    provenance: Provenance,
}

impl<T> fmt::Debug for Coefficient<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coefficient({})", self.provenance)
    }
}

impl<T: Real> Coefficient<T> {
    pub fn builtin<F>(name: &str, params: &[f64], f: F) -> Self
    where
        F: Fn(T) -> Result<T> + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            provenance: Provenance::Builtin {
                name: name.to_string(),
                params: params.to_vec(),
            },
        }
    }

    pub fn constant(c: T) -> Self {
        Self::builtin("const", &[to_f64(c)], move |_| Ok(c))
    }

    /// Parses `source` with the expression language.
    pub fn expression(source: &str) -> Result<Self> {
        let expr = Expr::parse(source)?;
        Ok(Self::from_expr(expr, source))
    }

    pub fn from_expr(expr: Expr, source: &str) -> Self {
        Self {
            f: Arc::new(move |x: T| expr.eval(x).map_err(Error::from)),
            provenance: Provenance::Expression(source.to_string()),
        }
    }

    #[inline]
    pub fn eval(&self, x: T) -> Result<T> {
        (self.f)(x)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Diffusions with closed-form scale functions (and, where available,
/// closed-form Sturm-Liouville solutions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Catalog<T> {
    /// `mu dt + sigma dW`.
    BmDrift { mu: T, sigma: T },
    /// `mu x dt + sigma x dW` on `(0, inf)`.
    Gbm { mu: T, sigma: T },
    /// `kappa (theta - x) dt + sigma dW`.
    Ou { kappa: T, theta: T, sigma: T },
    /// `mu x^2 dt + x dW` on the real line, with `sigma(0) = 0` declared.
    QuadDrift { mu: T },
    /// `(mu / x) dt + sigma dW` on `(0, inf)`: a scaled Bessel process, the
    /// time change of `Gbm` by `b^2(x) = x^2`.
    ScaledBessel { mu: T, sigma: T },
}

impl<T: Real> Catalog<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Catalog::BmDrift { .. } => "bm_drift",
            Catalog::Gbm { .. } => "gbm",
            Catalog::Ou { .. } => "ou",
            Catalog::QuadDrift { .. } => "quad_drift",
            Catalog::ScaledBessel { .. } => "scaled_bessel",
        }
    }

    /// `s(x) = exp(-k (x - x0))` for the exponential-scale entries.
    pub(crate) fn exp_rate(&self) -> Option<T> {
        match *self {
            Catalog::BmDrift { mu, sigma } => Some(lit::<T>(2.0) * mu / (sigma * sigma)),
            Catalog::QuadDrift { mu } => Some(lit::<T>(2.0) * mu),
            _ => None,
        }
    }

    /// `s(x) = (x / x0)^(-p)` for the power-scale entries.
    pub(crate) fn power(&self) -> Option<T> {
        match *self {
            Catalog::Gbm { mu, sigma } | Catalog::ScaledBessel { mu, sigma } => {
                Some(lit::<T>(2.0) * mu / (sigma * sigma))
            }
            _ => None,
        }
    }
}

/// A time-homogeneous diffusion on `(l, r)`.
#[derive(Debug, Clone)]
pub struct DiffusionSpec<T> {
    mu: Coefficient<T>,
    sigma: Coefficient<T>,
    space: StateSpace<T>,
    ref_point: T,
    catalog: Option<Catalog<T>>,
    sigma_zeros: Vec<T>,
    origin: Option<Arc<(DiffusionSpec<T>, AreaWeight<T>)>>,
}

/// Points of `(l, r)` where coefficients are checked at construction.
pub(crate) fn check_grid<T: Real>(space: &StateSpace<T>, x0: T) -> Vec<T> {
    let mut pts = Vec::new();
    let (l, r) = (space.lower, space.upper);
    if l.is_finite() && r.is_finite() {
        let n = 129;
        for i in 1..n {
            pts.push(l + (r - l) * lit(i as f64 / n as f64));
        }
    } else {
        pts.push(x0);
        for k in -6..=12 {
            let d: T = lit(2f64.powi(k));
            if r.is_finite() {
                pts.push(x0 + (r - x0) * (T::one() - lit::<T>(2f64.powi(-(k + 7)))));
            } else {
                pts.push(x0 + d);
            }
            if l.is_finite() {
                pts.push(l + (x0 - l) * lit(2f64.powi(-(k + 7))));
            } else {
                pts.push(x0 - d);
            }
        }
        for i in 1..32 {
            let u: T = lit(i as f64 / 32.0);
            pts.push(if l.is_finite() { l + (x0 - l) * u } else { x0 - u });
            pts.push(if r.is_finite() { x0 + (r - x0) * u } else { x0 + u });
        }
    }
    pts.retain(|&x| space.contains_open(x));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

fn near_declared<T: Real>(x: T, zeros: &[T]) -> bool {
    zeros.iter().any(|&z| x == z)
}

impl<T: Real> DiffusionSpec<T> {
    /// General constructor; `sigma` must not vanish on the check grid except
    /// at `sigma_zeros`.
    pub fn new(
        mu: Coefficient<T>,
        sigma: Coefficient<T>,
        space: StateSpace<T>,
        ref_point: Option<T>,
        sigma_zeros: Vec<T>,
    ) -> Result<Self> {
        let x0 = ref_point.unwrap_or_else(|| space.default_ref_point());
        if !space.contains_open(x0) {
            return Err(Error::InvalidSpec(format!(
                "ref_point {} is not inside the state interval",
                to_f64(x0)
            )));
        }
        let spec = Self {
            mu,
            sigma,
            space,
            ref_point: x0,
            catalog: None,
            sigma_zeros,
            origin: None,
        };
        spec.check_coefficients()?;
        Ok(spec)
    }

    fn check_coefficients(&self) -> Result<()> {
        for x in check_grid(&self.space, self.ref_point) {
            let m = self
                .mu
                .eval(x)
                .map_err(|e| Error::InvalidSpec(format!("drift at x = {}: {e}", to_f64(x))))?;
            let s = self
                .sigma
                .eval(x)
                .map_err(|e| Error::InvalidSpec(format!("volatility at x = {}: {e}", to_f64(x))))?;
            if !m.is_finite() || !s.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "coefficients not finite at x = {}",
                    to_f64(x)
                )));
            }
            if s == T::zero() && !near_declared(x, &self.sigma_zeros) {
                return Err(Error::InvalidSpec(format!("sigma vanishes at x = {}", to_f64(x))));
            }
        }
        Ok(())
    }

    fn from_catalog(cat: Catalog<T>, space: StateSpace<T>, sigma_zeros: Vec<T>) -> Result<Self> {
        let two: T = lit(2.0);
        let (mu, sigma) = match cat {
            Catalog::BmDrift { mu, sigma } => {
                let p = [to_f64(mu), to_f64(sigma)];
                (
                    Coefficient::builtin("bm_drift.mu", &p, move |_| Ok(mu)),
                    Coefficient::builtin("bm_drift.sigma", &p, move |_| Ok(sigma)),
                )
            }
            Catalog::Gbm { mu, sigma } => {
                let p = [to_f64(mu), to_f64(sigma)];
                (
                    Coefficient::builtin("gbm.mu", &p, move |x| Ok(mu * x)),
                    Coefficient::builtin("gbm.sigma", &p, move |x| Ok(sigma * x)),
                )
            }
            Catalog::Ou { kappa, theta, sigma } => {
                let p = [to_f64(kappa), to_f64(theta), to_f64(sigma)];
                (
                    Coefficient::builtin("ou.mu", &p, move |x| Ok(kappa * (theta - x))),
                    Coefficient::builtin("ou.sigma", &p, move |_| Ok(sigma)),
                )
            }
            Catalog::QuadDrift { mu } => {
                let p = [to_f64(mu)];
                (
                    Coefficient::builtin("quad_drift.mu", &p, move |x| Ok(mu * x * x)),
                    Coefficient::builtin("quad_drift.sigma", &p, move |x| Ok(x)),
                )
            }
            Catalog::ScaledBessel { mu, sigma } => {
                let p = [to_f64(mu), to_f64(sigma)];
                (
                    Coefficient::builtin("scaled_bessel.mu", &p, move |x| Ok(mu / x)),
                    Coefficient::builtin("scaled_bessel.sigma", &p, move |_| Ok(sigma)),
                )
            }
        };
        let _ = two;
        let mut spec = Self::new(mu, sigma, space, None, sigma_zeros)?;
        spec.catalog = Some(cat);
        Ok(spec)
    }

    fn check_sigma(sigma: T) -> Result<()> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::InvalidSpec("sigma must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn bm_drift(mu: T, sigma: T) -> Result<Self> {
        Self::check_sigma(sigma)?;
        Self::from_catalog(Catalog::BmDrift { mu, sigma }, StateSpace::real_line(), vec![])
    }

    pub fn gbm(mu: T, sigma: T) -> Result<Self> {
        Self::check_sigma(sigma)?;
        Self::from_catalog(Catalog::Gbm { mu, sigma }, StateSpace::positive_half_line(), vec![])
    }

    pub fn ou(kappa: T, theta: T, sigma: T) -> Result<Self> {
        Self::check_sigma(sigma)?;
        Self::from_catalog(Catalog::Ou { kappa, theta, sigma }, StateSpace::real_line(), vec![])
    }

    pub fn quad_drift(mu: T) -> Result<Self> {
        Self::from_catalog(Catalog::QuadDrift { mu }, StateSpace::real_line(), vec![T::zero()])
    }

    pub fn scaled_bessel(mu: T, sigma: T) -> Result<Self> {
        Self::check_sigma(sigma)?;
        Self::from_catalog(
            Catalog::ScaledBessel { mu, sigma },
            StateSpace::positive_half_line(),
            vec![],
        )
    }

    /// Same diffusion with a different scale base point.
    pub fn with_ref_point(mut self, x0: T) -> Result<Self> {
        if !self.space.contains_open(x0) {
            return Err(Error::InvalidSpec(format!("ref_point {} not admissible", to_f64(x0))));
        }
        self.ref_point = x0;
        Ok(self)
    }

    /// Same coefficients with the closed-form shortcuts removed, so every
    /// downstream quantity goes through quadrature and ODE integration.
    pub fn without_catalog(&self) -> Self {
        let mut s = self.clone();
        s.catalog = None;
        s
    }

    pub fn drift(&self, x: T) -> Result<T> {
        self.mu.eval(x)
    }

    pub fn volatility(&self, x: T) -> Result<T> {
        self.sigma.eval(x)
    }

    pub fn mu(&self) -> &Coefficient<T> {
        &self.mu
    }

    pub fn sigma(&self) -> &Coefficient<T> {
        &self.sigma
    }

    pub fn space(&self) -> &StateSpace<T> {
        &self.space
    }

    pub fn ref_point(&self) -> T {
        self.ref_point
    }

    pub fn catalog(&self) -> Option<&Catalog<T>> {
        self.catalog.as_ref()
    }

    pub fn sigma_zeros(&self) -> &[T] {
        &self.sigma_zeros
    }

    /// The `(spec, weight)` this spec was time-changed from, if any.
    pub fn origin(&self) -> Option<(&DiffusionSpec<T>, &AreaWeight<T>)> {
        self.origin.as_deref().map(|(s, w)| (s, w))
    }

    fn check_closed(&self, x: T) -> Result<()> {
        if !x.is_finite() || !self.space.contains_closed(x) {
            return Err(Error::Domain(format!(
                "x = {} outside the state interval",
                to_f64(x)
            )));
        }
        Ok(())
    }

    fn check_open(&self, x: T) -> Result<()> {
        if !self.space.contains_open(x) {
            return Err(Error::Domain(format!(
                "x = {} not strictly inside the state interval",
                to_f64(x)
            )));
        }
        Ok(())
    }

    /// `2 mu / sigma^2`, with removable 0/0 points approached from nearby.
    pub(crate) fn drift_ratio(&self, x: T) -> Result<T> {
        let sig = self.sigma.eval(x)?;
        let s2 = sig * sig;
        if s2 == T::zero() {
            let h = lit::<T>(1e-9) * (T::one() + x.abs());
            let lo = self.drift_ratio_at(x - h)?;
            let hi = self.drift_ratio_at(x + h)?;
            return Ok((lo + hi) * lit(0.5));
        }
        Ok(lit::<T>(2.0) * self.mu.eval(x)? / s2)
    }

    fn drift_ratio_at(&self, x: T) -> Result<T> {
        let sig = self.sigma.eval(x)?;
        let s2 = sig * sig;
        if s2 == T::zero() {
            return Err(Error::Domain(format!("sigma vanishes near x = {}", to_f64(x))));
        }
        Ok(lit::<T>(2.0) * self.mu.eval(x)? / s2)
    }

    /// `ln s(x)`.
    pub fn ln_scale_density(&self, x: T) -> Result<T> {
        self.check_closed(x)?;
        let x0 = self.ref_point;
        match self.catalog {
            Some(c) if c.exp_rate().is_some() => Ok(-c.exp_rate().unwrap() * (x - x0)),
            Some(c) if c.power().is_some() => {
                if x <= T::zero() {
                    return Err(Error::Domain("power scale needs x > 0".into()));
                }
                Ok(-c.power().unwrap() * (x / x0).ln())
            }
            Some(Catalog::Ou { kappa, theta, sigma }) => {
                let a = x - theta;
                let b = x0 - theta;
                Ok(kappa / (sigma * sigma) * (a * a - b * b))
            }
            _ => {
                let q = QuadOptions::default();
                Ok(-integrate(|u| self.drift_ratio(u), x0, x, &q)?)
            }
        }
    }

    /// `s(x) = exp(-int_{x0}^x 2 mu / sigma^2)`.
    pub fn scale_density(&self, x: T) -> Result<T> {
        Ok(self.ln_scale_density(x)?.exp())
    }

    /// `S(x) = int_{x0}^x s`.
    pub fn scale_function(&self, x: T) -> Result<T> {
        self.check_closed(x)?;
        let x0 = self.ref_point;
        if let Some(c) = self.catalog {
            if let Some(k) = c.exp_rate() {
                let d = x - x0;
                return Ok(if k == T::zero() { d } else { -(-k * d).exp_m1() / k });
            }
            if let Some(p) = c.power() {
                if x <= T::zero() {
                    return Err(Error::Domain("power scale needs x > 0".into()));
                }
                let e = T::one() - p;
                let l = (x / x0).ln();
                return Ok(if e == T::zero() { x0 * l } else { x0 * (e * l).exp_m1() / e });
            }
        }
        let q = QuadOptions::default();
        integrate(|y| self.scale_density(y), x0, x, &q)
    }

    /// `m(x) = 2 / (sigma^2(x) s(x))`.
    pub fn speed_density(&self, x: T) -> Result<T> {
        self.check_open(x)?;
        let sig = self.sigma.eval(x)?;
        let s = self.scale_density(x)?;
        let m = lit::<T>(2.0) / (sig * sig * s);
        if !m.is_finite() {
            return Err(Error::Domain(format!("speed density undefined at x = {}", to_f64(x))));
        }
        Ok(m)
    }

    /// `m*(x) = b^2(x) m(x)`.
    pub fn weighted_speed_density(&self, w: &AreaWeight<T>, x: T) -> Result<T> {
        let b2 = w.b2(x)?;
        Ok(b2 * self.speed_density(x)?)
    }

    /// The diffusion `X` with `V_t = X_{int_0^t b^2(V_s) ds}`: drift
    /// `mu / b^2` and volatility `sigma / b` on the same state interval.
    pub fn time_change(&self, w: &AreaWeight<T>) -> Result<Self> {
        if w.kind == WeightKind::Unit {
            return Ok(self.clone());
        }
        let recognised = match (self.catalog, w.kind) {
            (Some(Catalog::Gbm { mu, sigma }), WeightKind::Square) => {
                Some(Catalog::ScaledBessel { mu, sigma })
            }
            (Some(Catalog::QuadDrift { mu }), WeightKind::Square) => {
                Some(Catalog::BmDrift { mu, sigma: T::one() })
            }
            (Some(Catalog::BmDrift { mu, sigma }), WeightKind::Constant(eta)) => {
                Some(Catalog::BmDrift { mu: mu / eta, sigma: sigma / eta.sqrt() })
            }
            (Some(Catalog::Gbm { mu, sigma }), WeightKind::Constant(eta)) => {
                Some(Catalog::Gbm { mu: mu / eta, sigma: sigma / eta.sqrt() })
            }
            (Some(Catalog::ScaledBessel { mu, sigma }), WeightKind::Constant(eta)) => {
                Some(Catalog::ScaledBessel { mu: mu / eta, sigma: sigma / eta.sqrt() })
            }
            _ => None,
        };
        if let Some(cat) = recognised {
            let mut tc = Self::from_catalog(cat, self.space, vec![])?;
            tc.ref_point = self.ref_point;
            tc.origin = Some(Arc::new((self.clone(), w.clone())));
            return Ok(tc);
        }
        for x in check_grid(&self.space, self.ref_point) {
            if w.b2(x)? == T::zero() && !near_declared(x, &w.zeros) {
                return Err(Error::WeightZero(to_f64(x)));
            }
        }
        let (mu, sigma, b2a, b2b) = (self.mu.clone(), self.sigma.clone(), w.clone(), w.clone());
        let tc_mu = Coefficient {
            f: Arc::new(move |x: T| {
                let b2 = b2a.b2(x)?;
                if b2 == T::zero() {
                    return Err(Error::WeightZero(to_f64(x)));
                }
                Ok(mu.eval(x)? / b2)
            }),
            provenance: Provenance::Expression(format!("({}) / ({})", self.mu.provenance, w.b2.provenance)),
        };
        let tc_sigma = Coefficient {
            f: Arc::new(move |x: T| {
                let b2 = b2b.b2(x)?;
                if b2 == T::zero() {
                    return Err(Error::WeightZero(to_f64(x)));
                }
                Ok(sigma.eval(x)? / b2.sqrt())
            }),
            provenance: Provenance::Expression(format!(
                "({}) / sqrt({})",
                self.sigma.provenance, w.b2.provenance
            )),
        };
        let mut zeros = self.sigma_zeros.clone();
        zeros.extend(w.zeros.iter().copied());
        Ok(Self {
            mu: tc_mu,
            sigma: tc_sigma,
            space: self.space,
            ref_point: self.ref_point,
            catalog: None,
            sigma_zeros: zeros,
            origin: Some(Arc::new((self.clone(), w.clone()))),
        })
    }

    /// The pair `(spec, b^2)` whose killing-form equation
    /// `1/2 sigma^2 g'' + mu g' = lambda b^2 g` describes this spec.
    pub(crate) fn killing_form(&self) -> (DiffusionSpec<T>, AreaWeight<T>) {
        match &self.origin {
            Some(o) => (o.0.clone(), o.1.clone()),
            None => (self.clone(), AreaWeight::unit()),
        }
    }

    /// `int_x^r s` (upper) or `int_l^x s` (lower).
    pub fn scale_tail(&self, x: T, side: TailSide) -> Result<ScaleTail<T>> {
        self.check_closed(x)?;
        if let Some(t) = self.closed_form_tail(x, side)? {
            return Ok(t);
        }
        let end = match side {
            TailSide::Upper => self.space.upper,
            TailSide::Lower => self.space.lower,
        };
        let q = QuadOptions::default();
        if end.is_finite() {
            let ls = self.ln_scale_density(x)?;
            let v = integrate(
                |y| Ok((ls - integrate(|u| self.drift_ratio(u), x, y, &q)?).exp()),
                x,
                end,
                &q,
            )?;
            return Ok(ScaleTail {
                value: Some(v.abs()),
                evidence: vec![(end, v.abs())],
            });
        }
        let dir = match side {
            TailSide::Upper => T::one(),
            TailSide::Lower => -T::one(),
        };
        // successive doublings of the reach, integrated piecewise with ln s
        // carried across piece boundaries
        let mut ln_s = self.ln_scale_density(x)?;
        let mut start = x;
        let mut reach = T::one();
        let mut total = T::zero();
        let mut evidence = Vec::new();
        let mut prev_inc: Option<T> = None;
        let mut small = 0usize;
        let mut growing = 0usize;
        let tol: T = lit(1e-8);
        for _ in 0..80 {
            let stop = x + dir * reach;
            let base = ln_s;
            let from = start;
            let inc = integrate(
                |y| {
                    let l = base - integrate(|u| self.drift_ratio(u), from, y, &q)?;
                    Ok(l.exp())
                },
                from,
                stop,
                &q,
            )?
            .abs();
            ln_s = base - integrate(|u| self.drift_ratio(u), from, stop, &q)?;
            total = total + inc;
            evidence.push((stop, total));
            if !total.is_finite() || ln_s > lit(700.0) {
                return Ok(ScaleTail { value: None, evidence });
            }
            if inc <= tol * total {
                small += 1;
                if small >= 2 {
                    return Ok(ScaleTail { value: Some(total), evidence });
                }
            } else {
                small = 0;
            }
            if let Some(p) = prev_inc {
                if inc >= p && inc > tol * total {
                    growing += 1;
                    if growing >= 3 {
                        return Ok(ScaleTail { value: None, evidence });
                    }
                } else {
                    growing = 0;
                }
            }
            prev_inc = Some(inc);
            start = stop;
            reach = reach + reach;
        }
        Err(Error::Inconclusive(format!(
            "scale integral from {} did not settle (last partial sum {})",
            to_f64(x),
            to_f64(total)
        )))
    }

    fn closed_form_tail(&self, x: T, side: TailSide) -> Result<Option<ScaleTail<T>>> {
        let Some(c) = self.catalog else { return Ok(None) };
        let x0 = self.ref_point;
        let upper = side == TailSide::Upper;
        let value = if let Some(k) = c.exp_rate() {
            let finite = if upper { k > T::zero() } else { k < T::zero() };
            if finite {
                Some((-k * (x - x0)).exp() / k.abs())
            } else {
                None
            }
        } else if let Some(p) = c.power() {
            let e = T::one() - p;
            let finite = if upper { e < T::zero() } else { e > T::zero() };
            if finite {
                Some(x0 * (e * (x / x0).ln()).exp() / e.abs())
            } else {
                None
            }
        } else if let Catalog::Ou { kappa, .. } = c {
            if kappa > T::zero() {
                None
            } else {
                return Ok(None);
            }
        } else {
            return Ok(None);
        };
        Ok(Some(ScaleTail { value, evidence: vec![] }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
}

/// Outcome of a scale tail integral: `value` is `None` when it diverges.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTail<T> {
    pub value: Option<T>,
    /// `(reach, partial integral)` pairs from the doubling search; empty for
    /// closed forms.
    pub evidence: Vec<(T, T)>,
}

/// Recognised weight shapes; `General` covers everything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightKind<T> {
    Unit,
    Constant(T),
    Square,
    /// `x^2 1{x < 0}`.
    SquareNegative,
    /// `eta 1{x < 0}`.
    ConstNegative(T),
    General,
}

/// The area weight; only `b^2` is ever used.
#[derive(Debug, Clone)]
pub struct AreaWeight<T> {
    b2: Coefficient<T>,
    kind: WeightKind<T>,
    zeros: Vec<T>,
}

impl<T: Real> AreaWeight<T> {
    pub fn unit() -> Self {
        Self {
            b2: Coefficient::builtin("unit", &[], |_| Ok(T::one())),
            kind: WeightKind::Unit,
            zeros: vec![],
        }
    }

    pub fn constant(eta: T) -> Result<Self> {
        if !(eta > T::zero()) || !eta.is_finite() {
            return Err(Error::InvalidProblem("constant weight must be positive".into()));
        }
        if eta == T::one() {
            return Ok(Self::unit());
        }
        Ok(Self {
            b2: Coefficient::constant(eta),
            kind: WeightKind::Constant(eta),
            zeros: vec![],
        })
    }

    pub fn square() -> Self {
        Self {
            b2: Coefficient::builtin("square", &[], |x: T| Ok(x * x)),
            kind: WeightKind::Square,
            zeros: vec![T::zero()],
        }
    }

    pub fn square_negative() -> Self {
        Self {
            b2: Coefficient::builtin("square_negative", &[], |x: T| {
                Ok(if x < T::zero() { x * x } else { T::zero() })
            }),
            kind: WeightKind::SquareNegative,
            zeros: vec![T::zero()],
        }
    }

    pub fn const_negative(eta: T) -> Result<Self> {
        if !(eta >= T::zero()) || !eta.is_finite() {
            return Err(Error::InvalidProblem("rate must be nonnegative".into()));
        }
        Ok(Self {
            b2: Coefficient::builtin("const_negative", &[to_f64(eta)], move |x: T| {
                Ok(if x < T::zero() { eta } else { T::zero() })
            }),
            kind: WeightKind::ConstNegative(eta),
            zeros: vec![],
        })
    }

    /// `b^2` given as an expression in `x`.
    pub fn expression(source: &str) -> Result<Self> {
        Ok(Self::from_coefficient(Coefficient::expression(source)?, vec![]))
    }

    pub fn from_coefficient(b2: Coefficient<T>, zeros: Vec<T>) -> Self {
        Self {
            b2,
            kind: WeightKind::General,
            zeros,
        }
    }

    #[inline]
    pub fn b2(&self, x: T) -> Result<T> {
        self.b2.eval(x)
    }

    pub fn kind(&self) -> WeightKind<T> {
        self.kind
    }

    pub fn coefficient(&self) -> &Coefficient<T> {
        &self.b2
    }

    pub fn declared_zeros(&self) -> &[T] {
        &self.zeros
    }

    /// Checks `b^2 >= 0` on the spec's grid and `b^2 > 0` away from declared
    /// zeros.
    pub fn validate_positive(&self, spec: &DiffusionSpec<T>) -> Result<()> {
        for x in check_grid(spec.space(), spec.ref_point()) {
            let v = self.b2(x)?;
            if v.is_nan() || v < T::zero() {
                return Err(Error::InvalidProblem(format!(
                    "b^2 is negative at x = {}",
                    to_f64(x)
                )));
            }
            if v == T::zero() && !near_declared(x, &self.zeros) {
                return Err(Error::WeightZero(to_f64(x)));
            }
        }
        Ok(())
    }

    /// The weight on `x < 0` extended to the whole line by a positive
    /// function, used when only the negative half-line matters.
    pub fn negative_side_extension(&self) -> Self {
        match self.kind {
            WeightKind::SquareNegative => Self::square(),
            WeightKind::ConstNegative(eta) if eta > T::zero() => {
                Self::constant(eta).unwrap_or_else(|_| Self::unit())
            }
            _ => {
                let eps: T = lit(1e-12);
                let inner = self.b2.clone();
                Self {
                    b2: Coefficient {
                        f: Arc::new(move |x: T| Ok(inner.eval(x)?.max(eps))),
                        provenance: Provenance::Expression(format!("max({}, 1e-12)", self.b2.provenance)),
                    },
                    kind: WeightKind::General,
                    zeros: vec![],
                }
            }
        }
    }
}

/// `(ln s, S)` over a growing interval: closed form for catalog specs,
/// otherwise tabulated by ODE integration with cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct ScaleTable<T> {
    spec: DiffusionSpec<T>,
    closed: bool,
    xs: Vec<T>,
    ln_s: Vec<T>,
    big_s: Vec<T>,
    dln_s: Vec<T>,
    step: T,
}

impl<T: Real> ScaleTable<T> {
    pub fn new(spec: &DiffusionSpec<T>, lo: T, hi: T) -> Result<Self> {
        let closed = matches!(spec.catalog, Some(c) if c.exp_rate().is_some() || c.power().is_some());
        let mut t = Self {
            spec: spec.clone(),
            closed,
            xs: vec![],
            ln_s: vec![],
            big_s: vec![],
            dln_s: vec![],
            step: T::zero(),
        };
        if !closed {
            t.build(lo, hi)?;
        }
        Ok(t)
    }

    fn build(&mut self, lo: T, hi: T) -> Result<()> {
        let spec = &self.spec;
        spec.check_closed(lo)?;
        spec.check_closed(hi)?;
        let x0 = spec.ref_point;
        let n = 400usize;
        let step = ((hi - lo) / lit(n as f64)).min(lit(0.02)).max(lit(1e-6));
        self.step = step;
        let count = ((hi - lo) / step).ceil().to_usize().unwrap_or(n).max(2);
        let xs: Vec<T> = (0..=count).map(|i| lo + step * lit(i as f64)).collect();
        let ls0 = spec.ln_scale_density(lo)?;
        let s0 = spec.scale_function(lo)?;
        let mut ln_s = Vec::with_capacity(xs.len());
        let mut big_s = Vec::with_capacity(xs.len());
        ln_s.push(ls0);
        big_s.push(s0);
        let opts = OdeOptions::default();
        integrate_to_points(
            |x, y: &[T; 2]| Ok([-spec.drift_ratio(x)?, y[0].exp()]),
            lo,
            [ls0, s0],
            &xs[1..],
            &opts,
            |_, _, y| {
                ln_s.push(y[0]);
                big_s.push(y[1]);
                Ok(())
            },
        )?;
        let dln_s = xs
            .iter()
            .map(|&x| spec.drift_ratio(x).map(|v| -v))
            .collect::<Result<Vec<_>>>()?;
        let _ = x0;
        self.xs = xs;
        self.ln_s = ln_s;
        self.big_s = big_s;
        self.dln_s = dln_s;
        Ok(())
    }

    /// Makes sure the table covers `[.., hi]`.
    pub fn extend_to(&mut self, hi: T) -> Result<()> {
        if self.closed || self.xs.last().is_some_and(|&l| l >= hi) {
            return Ok(());
        }
        let lo = *self.xs.last().unwrap();
        let step = self.step;
        let count = ((hi - lo) / step).ceil().to_usize().unwrap_or(1).max(1);
        let new: Vec<T> = (1..=count).map(|i| lo + step * lit(i as f64)).collect();
        let spec = self.spec.clone();
        let y0 = [*self.ln_s.last().unwrap(), *self.big_s.last().unwrap()];
        let mut ln_s = Vec::new();
        let mut big_s = Vec::new();
        integrate_to_points(
            |x, y: &[T; 2]| Ok([-spec.drift_ratio(x)?, y[0].exp()]),
            lo,
            y0,
            &new,
            &OdeOptions::default(),
            |_, _, y| {
                ln_s.push(y[0]);
                big_s.push(y[1]);
                Ok(())
            },
        )?;
        for &x in &new {
            self.dln_s.push(-spec.drift_ratio(x)?);
        }
        self.xs.extend(new);
        self.ln_s.extend(ln_s);
        self.big_s.extend(big_s);
        Ok(())
    }

    pub fn spec(&self) -> &DiffusionSpec<T> {
        &self.spec
    }

    /// `(ln s(x), S(x))`.
    pub fn eval(&self, x: T) -> Result<(T, T)> {
        if self.closed {
            return Ok((self.spec.ln_scale_density(x)?, self.spec.scale_function(x)?));
        }
        let (lo, hi) = (self.xs[0], *self.xs.last().unwrap());
        if x < lo || x > hi {
            return Err(Error::Domain(format!(
                "x = {} outside tabulated range [{}, {}]",
                to_f64(x),
                to_f64(lo),
                to_f64(hi)
            )));
        }
        let pos = ((x - lo) / self.step).floor().to_usize().unwrap_or(0);
        let i = pos.min(self.xs.len() - 2);
        let (x1, x2) = (self.xs[i], self.xs[i + 1]);
        let h = x2 - x1;
        let t = (x - x1) / h;
        let herm = |f1: T, f2: T, d1: T, d2: T| {
            let t2 = t * t;
            let t3 = t2 * t;
            let two: T = lit(2.0);
            let three: T = lit(3.0);
            (two * t3 - three * t2 + T::one()) * f1
                + (t3 - two * t2 + t) * h * d1
                + (-two * t3 + three * t2) * f2
                + (t3 - t2) * h * d2
        };
        let l = herm(self.ln_s[i], self.ln_s[i + 1], self.dln_s[i], self.dln_s[i + 1]);
        let s = herm(
            self.big_s[i],
            self.big_s[i + 1],
            self.ln_s[i].exp(),
            self.ln_s[i + 1].exp(),
        );
        Ok((l, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn generic_bm(mu: f64) -> DiffusionSpec<f64> {
        DiffusionSpec::new(
            Coefficient::constant(mu),
            Coefficient::constant(1.0),
            StateSpace::real_line(),
            None,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn drifted_bm_scale() {
        for spec in [DiffusionSpec::bm_drift(1.0, 1.0).unwrap(), generic_bm(1.0)] {
            assert!(rel(spec.scale_density(1.0).unwrap(), (-2.0f64).exp()) < 1e-12);
            assert!(rel(spec.scale_function(1.0).unwrap(), (1.0 - (-2.0f64).exp()) / 2.0) < 1e-12);
            assert_eq!(spec.scale_function(0.0).unwrap(), 0.0);
            assert_eq!(spec.scale_density(0.0).unwrap(), 1.0);
            assert!(rel(spec.speed_density(1.0).unwrap(), 2.0 * 2f64.exp()) < 1e-12);
        }
    }

    #[test]
    fn standard_bm() {
        let spec = generic_bm(0.0);
        assert_eq!(spec.scale_density(3.7).unwrap(), 1.0);
        assert!((spec.scale_function(0.7).unwrap() - 0.7).abs() < 1e-14);
        assert_eq!(spec.speed_density(0.0).unwrap(), 2.0);
    }

    #[test]
    fn gbm_scale_and_speed() {
        let spec = DiffusionSpec::gbm(0.1, 0.2).unwrap();
        assert_eq!(spec.ref_point(), 1.0);
        assert!(rel(spec.scale_density(2.0).unwrap(), 0.03125) < 1e-13);
        assert!(rel(spec.speed_density(2.0).unwrap(), 400.0) < 1e-12);
        let w = AreaWeight::square();
        assert!(rel(spec.weighted_speed_density(&w, 2.0).unwrap(), 1600.0) < 1e-12);
        let generic = spec.without_catalog();
        assert!(rel(generic.scale_density(2.0).unwrap(), 0.03125) < 1e-12);
        assert!(rel(generic.scale_function(2.0).unwrap(), spec.scale_function(2.0).unwrap()) < 1e-11);
    }

    #[test]
    fn weighted_speed_is_product() {
        let spec = DiffusionSpec::ou(1.0, 0.3, 0.5).unwrap();
        let w = AreaWeight::expression("1 + x^2").unwrap();
        for &x in &[-1.0, 0.2, 0.9] {
            let m = spec.speed_density(x).unwrap();
            let ms = spec.weighted_speed_density(&w, x).unwrap();
            assert_eq!(ms, w.b2(x).unwrap() * m);
        }
        assert_eq!(
            DiffusionSpec::gbm(0.1, 0.2).unwrap().weighted_speed_density(&AreaWeight::unit(), 1.5).unwrap(),
            DiffusionSpec::gbm(0.1, 0.2).unwrap().speed_density(1.5).unwrap()
        );
    }

    #[test]
    fn time_change_examples() {
        let gbm = DiffusionSpec::gbm(0.1, 0.2).unwrap();
        let x = gbm.time_change(&AreaWeight::square()).unwrap();
        assert_eq!(x.catalog(), Some(&Catalog::ScaledBessel { mu: 0.1, sigma: 0.2 }));
        assert!(rel(x.drift(2.0).unwrap(), 0.05) < 1e-15);
        assert_eq!(x.volatility(2.0).unwrap(), 0.2);

        let q = DiffusionSpec::quad_drift(1.0).unwrap();
        let xq = q.time_change(&AreaWeight::square()).unwrap();
        assert_eq!(xq.catalog(), Some(&Catalog::BmDrift { mu: 1.0, sigma: 1.0 }));

        let same = gbm.time_change(&AreaWeight::unit()).unwrap();
        assert_eq!(same.drift(1.3).unwrap(), gbm.drift(1.3).unwrap());
    }

    #[test]
    fn time_change_preserves_scale() {
        let spec = DiffusionSpec::ou(0.8, 0.1, 0.6).unwrap();
        let w = AreaWeight::expression("1 + 0.5*sin(x)^2").unwrap();
        let tc = spec.time_change(&w).unwrap();
        for &x in &[-2.0, -0.5, 0.0, 0.4, 1.7] {
            let a = spec.scale_density(x).unwrap();
            let b = tc.scale_density(x).unwrap();
            assert!(rel(a, b) < 1e-10, "{x}: {a} vs {b}");
        }
        let gbm = DiffusionSpec::gbm(0.1, 0.2).unwrap().without_catalog();
        let tc = gbm.time_change(&AreaWeight::square()).unwrap();
        for &x in &[0.5, 1.0, 2.0] {
            assert!(rel(gbm.scale_density(x).unwrap(), tc.scale_density(x).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn weight_zero_rejected() {
        let spec = generic_bm(0.3);
        let w = AreaWeight::expression("max(x, 0)").unwrap();
        assert!(matches!(spec.time_change(&w), Err(Error::WeightZero(_))));
    }

    #[test]
    fn invalid_specs() {
        assert!(DiffusionSpec::<f64>::new(
            Coefficient::constant(0.0),
            Coefficient::expression("x").unwrap(),
            StateSpace::real_line(),
            Some(1.0),
            vec![],
        )
        .is_err());
        assert!(StateSpace::new(1.0, 0.0, Boundary::Absorbing, Boundary::Absorbing).is_err());
        assert!(DiffusionSpec::gbm(0.1, 0.2).unwrap().scale_density(-1.0).is_err());
        assert!(DiffusionSpec::gbm(0.1, 0.2).unwrap().with_ref_point(0.0).is_err());
    }

    #[test]
    fn default_ref_points() {
        let fin = StateSpace::new(1.0, 3.0, Boundary::Absorbing, Boundary::Absorbing).unwrap();
        assert_eq!(fin.default_ref_point(), 2.0);
        assert_eq!(StateSpace::<f64>::real_line().default_ref_point(), 0.0);
        let neg = StateSpace::new(f64::NEG_INFINITY, -2.0, Boundary::NaturalInfinite, Boundary::Absorbing).unwrap();
        assert_eq!(neg.default_ref_point(), -3.0);
    }

    #[test]
    fn tails() {
        let up = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let t = up.scale_tail(0.0, TailSide::Upper).unwrap();
        assert!(rel(t.value.unwrap(), 0.5) < 1e-14);
        let g = generic_bm(1.0);
        let t = g.scale_tail(0.0, TailSide::Upper).unwrap();
        assert!(rel(t.value.unwrap(), 0.5) < 1e-9);
        assert!(g.scale_tail(0.0, TailSide::Lower).unwrap().value.is_none());
        assert!(generic_bm(0.0).scale_tail(0.0, TailSide::Upper).unwrap().value.is_none());
        assert!(generic_bm(-0.5).scale_tail(0.0, TailSide::Upper).unwrap().value.is_none());
    }

    #[test]
    fn scale_table_matches_direct() {
        let spec = DiffusionSpec::ou(0.7, 0.2, 0.9).unwrap();
        let mut t = ScaleTable::new(&spec, -1.0, 1.0).unwrap();
        t.extend_to(3.0).unwrap();
        for &x in &[-0.93f64, 0.0, 0.51, 1.77, 2.999] {
            let (l, s) = t.eval(x).unwrap();
            assert!((l - spec.ln_scale_density(x).unwrap()).abs() < 1e-9);
            assert!((s - spec.scale_function(x).unwrap()).abs() < 1e-9 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn quad_drift_declared_zero() {
        let q = DiffusionSpec::quad_drift(1.0).unwrap().without_catalog();
        // 2 mu x^2 / x^2 = 2 mu, removable at 0
        assert!(rel(q.scale_density(-1.0).unwrap(), 2f64.exp()) < 1e-12);
        assert!(rel(q.scale_density(1.0).unwrap(), (-2f64).exp()) < 1e-12);
    }
}
