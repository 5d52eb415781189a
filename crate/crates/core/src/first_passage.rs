//! Laplace transforms and moments of `int_0^tau b^2(V_s) ds` for the exit
//! time `tau` of `V` from `(a, c)`.

use crate::diffusion::{AreaWeight, DiffusionSpec};
use crate::error::{Error, Result};
use crate::quadrature::ChebGrid;
use crate::real::{lit, to_f64, Real};
use crate::sturm_liouville::{
    closed_form_point, f_ratio, integrate_solution, solve_pair_at, Killing, SlOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Exit through `a` before `c`.
    Lower,
    /// Exit through `c` before `a`.
    Upper,
}

#[derive(Debug, Clone)]
pub struct ExitProblem<T> {
    pub spec: DiffusionSpec<T>,
    pub weight: AreaWeight<T>,
    pub a: T,
    pub c: T,
    pub v0: T,
}

impl<T: Real> ExitProblem<T> {
    pub fn new(spec: DiffusionSpec<T>, weight: AreaWeight<T>, a: T, v0: T, c: T) -> Result<Self> {
        if !(a < v0 && v0 < c) {
            return Err(Error::InvalidProblem(format!(
                "need a < v0 < c, got a = {}, v0 = {}, c = {}",
                to_f64(a),
                to_f64(v0),
                to_f64(c)
            )));
        }
        let space = spec.space();
        if !space.contains_closed(a) || !space.contains_closed(c) || !a.is_finite() || !c.is_finite() {
            return Err(Error::InvalidProblem("[a, c] must be a finite subinterval of the state space".into()));
        }
        for i in 0..=16 {
            let x = a + (c - a) * lit(i as f64 / 16.0);
            let v = weight.b2(x)?;
            if v.is_nan() || v < T::zero() {
                return Err(Error::InvalidProblem(format!("b^2 is negative at x = {}", to_f64(x))));
            }
        }
        Ok(Self { spec, weight, a, c, v0 })
    }

    fn scale_ratio(&self, side: Side) -> Result<T> {
        let sa = self.spec.scale_function(self.a)?;
        let sc = self.spec.scale_function(self.c)?;
        let sv = self.spec.scale_function(self.v0)?;
        Ok(match side {
            Side::Lower => (sc - sv) / (sc - sa),
            Side::Upper => (sv - sa) / (sc - sa),
        })
    }
}

/// `E[exp(-lambda tau); exit on side]`, ignoring the problem's weight.
pub fn exit_laplace<T: Real>(p: &ExitProblem<T>, lambda: T, side: Side, opts: &SlOptions<T>) -> Result<T> {
    transform(&p.spec, &AreaWeight::unit(), p, lambda, side, opts)
}

/// `E[exp(-lambda int_0^tau b^2(V_s) ds); exit on side]`.
pub fn area_laplace<T: Real>(p: &ExitProblem<T>, lambda: T, side: Side, opts: &SlOptions<T>) -> Result<T> {
    transform(&p.spec, &p.weight, p, lambda, side, opts)
}

fn transform<T: Real>(
    spec: &DiffusionSpec<T>,
    weight: &AreaWeight<T>,
    p: &ExitProblem<T>,
    lambda: T,
    side: Side,
    opts: &SlOptions<T>,
) -> Result<T> {
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda = {} must be finite and >= 0", to_f64(lambda))));
    }
    if lambda == T::zero() {
        return p.scale_ratio(side);
    }
    let tc = spec.time_change(weight)?;
    let (a, v0, c) = (p.a, p.v0, p.c);
    if let Some(cat) = tc.catalog() {
        if closed_form_point(cat, lambda, v0)?.is_some() {
            let mut o = *opts;
            o.grid_points = 2;
            let pair = solve_pair_at(&tc, lambda, (a, c), &[v0], &o)?;
            let r = match side {
                Side::Lower => f_ratio(&pair, v0, c, a, c)?,
                Side::Upper => f_ratio(&pair, a, v0, a, c)?,
            };
            return Ok(r.max(T::zero()).min(T::one()));
        }
    }
    // the solution vanishing at the far end is the only one that matters
    let (base, w) = tc.killing_form();
    let kill = Killing::new(&base, &w, lambda);
    let vals = match side {
        Side::Lower => integrate_solution(&kill, c, [T::zero(), -T::one()], &[v0, a], &opts.ode)?,
        Side::Upper => integrate_solution(&kill, a, [T::zero(), T::one()], &[v0, c], &opts.ode)?,
    };
    Ok((vals[0].0 - vals[1].0).exp().min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions<T> {
    pub initial_degree: usize,
    pub max_degree: usize,
    /// Relative change of every order at `v0` between grid doublings.
    pub tolerance: T,
}

impl<T: Real> Default for MomentOptions<T> {
    fn default() -> Self {
        Self {
            initial_degree: 32,
            max_degree: 2048,
            tolerance: lit(1e-8),
        }
    }
}

/// `mu*_1 .. mu*_n` at Chebyshev nodes over `[a, c]`.
#[derive(Debug, Clone)]
pub struct MomentTable<T> {
    cheb: ChebGrid<T>,
    /// `values[k]` holds order `k + 1`.
    pub values: Vec<Vec<T>>,
    pub v0: T,
}

impl<T: Real> MomentTable<T> {
    pub fn orders(&self) -> usize {
        self.values.len()
    }

    pub fn grid(&self) -> &[T] {
        &self.cheb.nodes
    }

    /// Order `n >= 1` at `x`; order 0 is identically 1.
    pub fn value(&self, n: usize, x: T) -> Result<T> {
        if x < self.cheb.a || x > self.cheb.b {
            return Err(Error::Domain(format!("x = {} outside [a, c]", to_f64(x))));
        }
        if n == 0 {
            return Ok(T::one());
        }
        let v = self
            .values
            .get(n - 1)
            .ok_or_else(|| Error::Domain(format!("order {n} not tabulated")))?;
        Ok(self.cheb.interpolate(v, x))
    }

    pub fn at_v0(&self, n: usize) -> Result<T> {
        self.value(n, self.v0)
    }
}

/// Moments of `tau` itself.
pub fn exit_time_moments<T: Real>(p: &ExitProblem<T>, n: usize, opts: &MomentOptions<T>) -> Result<MomentTable<T>> {
    moments(p, &AreaWeight::unit(), n, opts)
}

/// Moments of the area `int_0^tau b^2(V_s) ds`.
pub fn area_moments<T: Real>(p: &ExitProblem<T>, n: usize, opts: &MomentOptions<T>) -> Result<MomentTable<T>> {
    moments(p, &p.weight, n, opts)
}

fn weighted_speed<T: Real>(spec: &DiffusionSpec<T>, w: &AreaWeight<T>, x: T) -> Result<T> {
    match spec.weighted_speed_density(w, x) {
        Ok(v) if v.is_finite() => Ok(v),
        _ => {
            // removable singularity where sigma and b vanish together
            let h = lit::<T>(1e-7) * (T::one() + x.abs());
            let lo = spec.weighted_speed_density(w, x - h)?;
            let hi = spec.weighted_speed_density(w, x + h)?;
            Ok((lo + hi) * lit(0.5))
        }
    }
}

fn moments_on<T: Real>(
    p: &ExitProblem<T>,
    w: &AreaWeight<T>,
    n: usize,
    degree: usize,
) -> Result<(ChebGrid<T>, Vec<Vec<T>>)> {
    let cheb = ChebGrid::new(p.a, p.c, degree);
    let mut s = Vec::with_capacity(degree + 1);
    let mut m = Vec::with_capacity(degree + 1);
    for &x in &cheb.nodes {
        s.push(p.spec.scale_function(x)?);
        m.push(weighted_speed(&p.spec, w, x)?);
    }
    let (sa, sc) = (s[0], s[degree]);
    let width = sc - sa;
    let mut prev = vec![T::one(); degree + 1];
    let mut out = Vec::with_capacity(n);
    for order in 1..=n {
        let left: Vec<T> = (0..=degree).map(|j| (s[j] - sa) * prev[j] * m[j]).collect();
        let right: Vec<T> = (0..=degree).map(|j| (sc - s[j]) * prev[j] * m[j]).collect();
        let i1 = cheb.cumulative_integral(&left);
        let i2c = cheb.cumulative_integral(&right);
        let total = i2c[degree];
        let k: T = lit(order as f64);
        let mut cur: Vec<T> = (0..=degree)
            .map(|j| k * ((s[j] - sa) * (total - i2c[j]) + (sc - s[j]) * i1[j]) / width)
            .collect();
        cur[0] = T::zero();
        cur[degree] = T::zero();
        out.push(cur.clone());
        prev = cur;
    }
    Ok((cheb, out))
}

fn moments<T: Real>(p: &ExitProblem<T>, w: &AreaWeight<T>, n: usize, opts: &MomentOptions<T>) -> Result<MomentTable<T>> {
    if n == 0 {
        return Err(Error::Domain("moment order must be >= 1".into()));
    }
    let mut degree = opts.initial_degree.max(4);
    let (mut cheb, mut vals) = moments_on(p, w, n, degree)?;
    loop {
        if degree * 2 > opts.max_degree {
            return Err(Error::Convergence(format!(
                "moments at v0 still moving at Chebyshev degree {degree}"
            )));
        }
        degree *= 2;
        let (c2, v2) = moments_on(p, w, n, degree)?;
        let done = (0..n).all(|k| {
            let old = cheb.interpolate(&vals[k], p.v0);
            let new = c2.interpolate(&v2[k], p.v0);
            (new - old).abs() <= opts.tolerance * new.abs()
        });
        cheb = c2;
        vals = v2;
        if done {
            return Ok(MomentTable { cheb, values: vals, v0: p.v0 });
        }
    }
}

/// The alternative GBM pair `x^{1 - nu/2} I_{(nu-2)/2}(x sqrt(2 lambda))`,
/// `K` likewise, with `nu = 2 mu / sigma^2 - 1`, plugged into the exit
/// ratio. Kept as a comparison value; it does not solve the weighted
/// equation unless `sigma = 1` and the index shifts agree.
pub fn alternative_gbm_area_laplace<T: Real>(mu: T, sigma: T, a: T, v0: T, c: T, lambda: T) -> Result<T> {
    use crate::special::{bessel_i, bessel_k, BesselAccuracy};
    let two: T = lit(2.0);
    let nu = two * mu / (sigma * sigma) - T::one();
    let ord = (nu - two) / two;
    let k = (two * lambda).sqrt();
    let acc = BesselAccuracy::default();
    let i = |x: T| bessel_i(ord, x * k, &acc);
    let kk = |x: T| bessel_k(ord, x * k, &acc);
    let num = kk(v0)? * i(c)? - kk(c)? * i(v0)?;
    let den = kk(a)? * i(c)? - kk(c)? * i(a)?;
    Ok((v0 / a).powf(T::one() - nu / two) * num / den)
}

/// A closed-form expression for the first GBM area moment with `b^2 = x^2`
/// (`nu = 2 mu / sigma^2 - 1`), evaluated literally for comparison against
/// the recursion.
pub fn alternative_gbm_first_area_moment<T: Real>(mu: T, sigma: T, a: T, x: T, c: T) -> T {
    let two: T = lit(2.0);
    let nu = two * mu / (sigma * sigma) - T::one();
    let d = c.powf(-nu) - a.powf(-nu);
    let num = nu * x * x * d - nu * a * a * c * c * (c.powf(-nu - two) - a.powf(-nu - two))
        - nu * x.powf(-nu) * (c * c - a * a);
    num / (d * sigma * sigma * (nu + two))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(a: f64, v0: f64, c: f64) -> ExitProblem<f64> {
        ExitProblem::new(DiffusionSpec::bm_drift(0.0, 1.0).unwrap(), AreaWeight::unit(), a, v0, c).unwrap()
    }

    #[test]
    fn bm_exit_values() {
        let p = bm(0.0, 0.5, 1.0);
        let o = SlOptions::default();
        assert!((exit_laplace(&p, 0.0, Side::Lower, &o).unwrap() - 0.5).abs() < 1e-14);
        let r2 = 2f64.sqrt();
        let want = (r2 * 0.5).sinh() / r2.sinh();
        let got = exit_laplace(&p, 1.0, Side::Lower, &o).unwrap();
        assert!((got - want).abs() < 1e-13, "{got} {want}");
        let nu = exit_laplace(&ExitProblem { spec: p.spec.without_catalog(), ..p.clone() }, 1.0, Side::Lower, &o).unwrap();
        assert!((nu - want).abs() < 1e-9);
        assert!(exit_laplace(&p, 1e4, Side::Upper, &o).unwrap() < 1e-20);
    }

    #[test]
    fn unit_weight_area_equals_exit() {
        let spec = DiffusionSpec::<f64>::ou(1.0, 0.2, 0.5).unwrap();
        let p = ExitProblem::new(spec, AreaWeight::unit(), -0.5, 0.1, 0.8).unwrap();
        let o = SlOptions::default();
        for &lam in &[0.0, 0.3, 2.0] {
            for side in [Side::Lower, Side::Upper] {
                assert_eq!(exit_laplace(&p, lam, side, &o).unwrap(), area_laplace(&p, lam, side, &o).unwrap());
            }
        }
        let sum = area_laplace(&p, 0.0, Side::Lower, &o).unwrap() + area_laplace(&p, 0.0, Side::Upper, &o).unwrap();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gbm_area_closed_form_vs_numeric() {
        let spec = DiffusionSpec::<f64>::gbm(0.1, 0.2).unwrap();
        let p = ExitProblem::new(spec.clone(), AreaWeight::square(), 0.8, 1.0, 1.25).unwrap();
        let o = SlOptions::default();
        let cf = area_laplace(&p, 1.0, Side::Lower, &o).unwrap();
        assert!((cf - 0.128216272820779866).abs() < 1e-10, "{cf}");
        let q = ExitProblem { spec: spec.without_catalog(), ..p.clone() };
        let nu = area_laplace(&q, 1.0, Side::Lower, &o).unwrap();
        assert!((nu - cf).abs() < 1e-9);
        let alt = alternative_gbm_area_laplace(0.1f64, 0.2, 0.8, 1.0, 1.25, 1.0).unwrap();
        assert!((alt - 0.372966).abs() < 1e-5);
    }

    #[test]
    fn transform_shape_in_lambda() {
        let spec = DiffusionSpec::<f64>::gbm(0.1, 0.2).unwrap();
        let p = ExitProblem::new(spec, AreaWeight::square(), 0.8, 1.0, 1.25).unwrap();
        let o = SlOptions::default();
        for side in [Side::Lower, Side::Upper] {
            let v: Vec<f64> = (0..8).map(|i| area_laplace(&p, i as f64 * 0.5, side, &o).unwrap()).collect();
            for i in 0..v.len() {
                assert!((0.0..=1.0).contains(&v[i]));
                if i > 0 {
                    assert!(v[i] <= v[i - 1]);
                }
                if i > 1 {
                    assert!(v[i] - 2.0 * v[i - 1] + v[i - 2] >= -1e-8);
                }
            }
        }
    }

    #[test]
    fn bm_moments() {
        let p = bm(0.0, 0.5, 1.0);
        let t = exit_time_moments(&p, 2, &MomentOptions::default()).unwrap();
        assert!((t.at_v0(1).unwrap() - 0.25).abs() < 1e-12);
        // E[tau^2] from x = 0.5 for BM on (0, 1): (x - 2x^3 + x^4)(1 - ...) oracle
        // mu_2(x) = (x(1-x)(1 + x - x^2)) / 3
        let x = 0.5;
        assert!((t.at_v0(2).unwrap() - x * (1.0 - x) * (1.0 + x - x * x) / 3.0).abs() < 1e-12);
        assert_eq!(t.value(1, 0.0).unwrap(), 0.0);
        assert_eq!(t.value(1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gbm_area_moment_and_derivative() {
        let spec = DiffusionSpec::<f64>::gbm(0.1, 0.2).unwrap();
        let p = ExitProblem::new(spec, AreaWeight::square(), 0.8, 1.0, 1.25).unwrap();
        let m = area_moments(&p, 1, &MomentOptions::default()).unwrap();
        let m1 = m.at_v0(1).unwrap();
        assert!((m1 - 1.22683740068104427).abs() < 1e-8, "{m1}");
        let o = SlOptions::default();
        let h = 1e-4;
        let total = |l: f64| area_laplace(&p, l, Side::Lower, &o).unwrap() + area_laplace(&p, l, Side::Upper, &o).unwrap();
        let deriv = (total(0.0) - total(2.0 * h)) / (2.0 * h);
        assert!((deriv - m1).abs() / m1 < 1e-3);
        let t = exit_time_moments(&p, 1, &MomentOptions::default()).unwrap();
        for (i, &x) in m.grid().iter().enumerate() {
            let _ = x;
            assert!(m.values[0][i] <= 1.25f64.powi(2) * t.values[0][i] + 1e-12);
        }
        let alt = alternative_gbm_first_area_moment(0.1f64, 0.2, 0.8, 1.0, 1.25);
        assert!((alt + 4.907).abs() < 1e-3);
    }
}
