//! Positive monotone solutions of `1/2 sigma^2 g'' + mu g' = lambda g`.
//!
//! Solutions are carried as `(ln g, g'/g)` so that exponentially growing
//! modes never overflow. A weighted equation (the time change by `b^2`) is
//! solved in killing form `1/2 sigma^2 g'' + mu g' = lambda b^2 g` with the
//! original coefficients, which is the same equation multiplied through by
//! `b^2` and stays regular where `b^2` vanishes.

use crate::diffusion::{AreaWeight, Boundary, Catalog, DiffusionSpec, TailSide};
use crate::error::{Error, Result};
use crate::ode::{integrate_to_points, OdeOptions};
use crate::real::{lit, to_f64, Real};
use crate::special::{bessel_i_scaled, bessel_k_scaled, BesselAccuracy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlOptions<T> {
    /// Stop enlarging truncations once `|d psi| <= tolerance (1 + |psi|)` at
    /// both window ends twice in a row.
    pub tolerance: T,
    pub max_enlargements: usize,
    /// Uniform points across the window, on top of any requested points.
    pub grid_points: usize,
    pub ode: OdeOptions<T>,
}

impl<T: Real> Default for SlOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: lit(1e-10),
            max_enlargements: 40,
            grid_points: 65,
            ode: OdeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericMeta<T> {
    pub lower_truncation: Option<T>,
    pub upper_truncation: Option<T>,
    pub tolerance: T,
    pub enlargements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairSource<T> {
    ClosedForm(&'static str),
    /// `lambda = 0`: built from the scale function.
    Harmonic,
    Numeric(NumericMeta<T>),
}

/// `g_plus` (increasing) and `g_minus` (decreasing) on an ordered grid.
#[derive(Debug, Clone)]
pub struct SLSolutionPair<T> {
    pub lambda: T,
    pub grid: Vec<T>,
    pub ln_g_plus: Vec<T>,
    /// `g_plus' / g_plus`.
    pub dlog_plus: Vec<T>,
    pub ln_g_minus: Vec<T>,
    /// `g_minus' / g_minus`.
    pub dlog_minus: Vec<T>,
    pub source: PairSource<T>,
}

/// `(psi_plus, psi_minus) = (g_plus'/g_plus, -g_minus'/g_minus)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceExponents<T> {
    pub psi_plus: Vec<T>,
    pub psi_minus: Vec<T>,
}

/// Values of both solutions at one abscissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPoint<T> {
    pub ln_g_plus: T,
    pub dlog_plus: T,
    pub ln_g_minus: T,
    pub dlog_minus: T,
}

fn hermite<T: Real>(x1: T, x2: T, f1: T, f2: T, d1: T, d2: T, x: T) -> (T, T) {
    let h = x2 - x1;
    let t = (x - x1) / h;
    let (t2, t3) = (t * t, t * t * t);
    let two: T = lit(2.0);
    let three: T = lit(3.0);
    let six: T = lit(6.0);
    let v = (two * t3 - three * t2 + T::one()) * f1
        + (t3 - two * t2 + t) * h * d1
        + (-two * t3 + three * t2) * f2
        + (t3 - t2) * h * d2;
    let dv = ((six * t2 - six * t) * f1 + (six * t - six * t2) * f2) / h
        + (three * t2 - lit::<T>(4.0) * t + T::one()) * d1
        + (three * t2 - two * t) * d2;
    (v, dv)
}

impl<T: Real> SLSolutionPair<T> {
    pub fn g_plus(&self) -> Vec<T> {
        self.ln_g_plus.iter().map(|v| v.exp()).collect()
    }

    pub fn g_minus(&self) -> Vec<T> {
        self.ln_g_minus.iter().map(|v| v.exp()).collect()
    }

    pub fn dg_plus(&self) -> Vec<T> {
        self.ln_g_plus.iter().zip(&self.dlog_plus).map(|(l, d)| l.exp() * *d).collect()
    }

    pub fn dg_minus(&self) -> Vec<T> {
        self.ln_g_minus.iter().zip(&self.dlog_minus).map(|(l, d)| l.exp() * *d).collect()
    }

    pub fn window(&self) -> (T, T) {
        (self.grid[0], *self.grid.last().unwrap())
    }

    /// Exact values on grid nodes, cubic Hermite in `ln g` elsewhere.
    pub fn at(&self, x: T) -> Result<PairPoint<T>> {
        let (a, c) = self.window();
        if x.is_nan() || x < a || x > c {
            return Err(Error::Domain(format!(
                "x = {} outside the solution window [{}, {}]",
                to_f64(x),
                to_f64(a),
                to_f64(c)
            )));
        }
        let j = self.grid.partition_point(|&g| g < x);
        if j < self.grid.len() && self.grid[j] == x {
            return Ok(PairPoint {
                ln_g_plus: self.ln_g_plus[j],
                dlog_plus: self.dlog_plus[j],
                ln_g_minus: self.ln_g_minus[j],
                dlog_minus: self.dlog_minus[j],
            });
        }
        let i = j - 1;
        let (x1, x2) = (self.grid[i], self.grid[i + 1]);
        let (lp, dp) = hermite(
            x1,
            x2,
            self.ln_g_plus[i],
            self.ln_g_plus[i + 1],
            self.dlog_plus[i],
            self.dlog_plus[i + 1],
            x,
        );
        let (lm, dm) = hermite(
            x1,
            x2,
            self.ln_g_minus[i],
            self.ln_g_minus[i + 1],
            self.dlog_minus[i],
            self.dlog_minus[i + 1],
            x,
        );
        Ok(PairPoint {
            ln_g_plus: lp,
            dlog_plus: dp,
            ln_g_minus: lm,
            dlog_minus: dm,
        })
    }

    pub fn exponents(&self) -> LaplaceExponents<T> {
        LaplaceExponents {
            psi_plus: self.dlog_plus.clone(),
            psi_minus: self.dlog_minus.iter().map(|d| -*d).collect(),
        }
    }

    /// `(g_minus g_plus' - g_minus' g_plus) / s` on the grid.
    pub fn wronskian_in_scale(&self, spec: &DiffusionSpec<T>) -> Result<Vec<T>> {
        self.grid
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let ls = spec.ln_scale_density(x)?;
                Ok((self.ln_g_minus[i] + self.ln_g_plus[i] - ls).exp()
                    * (self.dlog_plus[i] - self.dlog_minus[i]))
            })
            .collect()
    }
}

/// `f(y, z) = g_minus(y) g_plus(z) - g_minus(z) g_plus(y)`.
pub fn f_lambda<T: Real>(pair: &SLSolutionPair<T>, y: T, z: T) -> Result<T> {
    let (sign, ln) = ln_f_lambda(pair, y, z)?;
    Ok(sign * ln.exp())
}

/// `f(y, z)` as `(sign, ln |f|)`.
pub fn ln_f_lambda<T: Real>(pair: &SLSolutionPair<T>, y: T, z: T) -> Result<(T, T)> {
    let py = pair.at(y)?;
    let pz = pair.at(z)?;
    Ok(ln_f_from_logs(py.ln_g_minus, py.ln_g_plus, pz.ln_g_minus, pz.ln_g_plus))
}

/// `g1(y) g2(z) - g1(z) g2(y)` from logarithms of positive values.
pub(crate) fn ln_f_from_logs<T: Real>(lg1_y: T, lg2_y: T, lg1_z: T, lg2_z: T) -> (T, T) {
    if lg1_y == lg1_z && lg2_y == lg2_z {
        return (T::zero(), T::neg_infinity());
    }
    let p = lg1_y + lg2_z;
    let q = lg1_z + lg2_y;
    if p >= q {
        (T::one(), p + (-(q - p).exp_m1()).ln())
    } else {
        (-T::one(), q + (-(p - q).exp_m1()).ln())
    }
}

/// `f(y1, z1) / f(y2, z2)` without forming either factor.
pub fn f_ratio<T: Real>(pair: &SLSolutionPair<T>, y1: T, z1: T, y2: T, z2: T) -> Result<T> {
    let (s1, l1) = ln_f_lambda(pair, y1, z1)?;
    let (s2, l2) = ln_f_lambda(pair, y2, z2)?;
    Ok(s1 * s2 * (l1 - l2).exp())
}

/// `f(y, z)` from raw values of an arbitrary pair `(g, h)`: the literal
/// definition, used to check basis invariance.
pub fn f_from_values<T: Real>(g_y: T, h_y: T, g_z: T, h_z: T) -> T {
    g_y * h_z - g_z * h_y
}

/// `(psi_plus(x), psi_minus(x))`.
pub fn laplace_exponents<T: Real>(pair: &SLSolutionPair<T>, x: T) -> Result<(T, T)> {
    let p = pair.at(x)?;
    Ok((p.dlog_plus, -p.dlog_minus))
}

/// Closed-form `(ln g+, g+'/g+, ln g-, g-'/g-)` at `x` for catalog entries
/// that have them.
pub(crate) fn closed_form_point<T: Real>(
    cat: &Catalog<T>,
    lambda: T,
    x: T,
) -> Result<Option<PairPoint<T>>> {
    let two: T = lit(2.0);
    match *cat {
        Catalog::BmDrift { mu, sigma } => {
            let s2 = sigma * sigma;
            let root = (mu * mu + two * lambda * s2).sqrt();
            let bp = (-mu + root) / s2;
            let bm = (-mu - root) / s2;
            Ok(Some(PairPoint {
                ln_g_plus: bp * x,
                dlog_plus: bp,
                ln_g_minus: bm * x,
                dlog_minus: bm,
            }))
        }
        Catalog::Gbm { mu, sigma } => {
            if x <= T::zero() {
                return Err(Error::Domain("gbm solutions need x > 0".into()));
            }
            let s2 = sigma * sigma;
            let b = mu - s2 * lit(0.5);
            let root = (b * b + two * s2 * lambda).sqrt();
            let pp = (-b + root) / s2;
            let pm = (-b - root) / s2;
            let lx = x.ln();
            Ok(Some(PairPoint {
                ln_g_plus: pp * lx,
                dlog_plus: pp / x,
                ln_g_minus: pm * lx,
                dlog_minus: pm / x,
            }))
        }
        Catalog::ScaledBessel { mu, sigma } => {
            if x <= T::zero() {
                return Err(Error::Domain("Bessel solutions need x > 0".into()));
            }
            if lambda == T::zero() {
                return Ok(None);
            }
            // g = x^{-nu/2} I_{nu/2}(x sqrt(2 lambda) / sigma), nu = 2 mu / sigma^2 - 1
            let nu = two * mu / (sigma * sigma) - T::one();
            let ord = nu * lit(0.5);
            let k = (two * lambda).sqrt() / sigma;
            let z = k * x;
            let acc = BesselAccuracy::default();
            let i0 = bessel_i_scaled(ord, z, &acc)?;
            let i_lo = bessel_i_scaled(ord - T::one(), z, &acc)?;
            let i_hi = bessel_i_scaled(ord + T::one(), z, &acc)?;
            let k0 = bessel_k_scaled(ord, z, &acc)?;
            let k_lo = bessel_k_scaled(ord - T::one(), z, &acc)?;
            let k_hi = bessel_k_scaled(ord + T::one(), z, &acc)?;
            let pre = -ord * x.ln();
            let dpre = -ord / x;
            Ok(Some(PairPoint {
                ln_g_plus: pre + z + i0.ln(),
                dlog_plus: dpre + k * (i_lo + i_hi) / (two * i0),
                ln_g_minus: pre - z + k0.ln(),
                dlog_minus: dpre - k * (k_lo + k_hi) / (two * k0),
            }))
        }
        _ => Ok(None),
    }
}

/// The killing-form equation `1/2 sigma^2 g'' + mu g' = lambda b^2 g`.
pub(crate) struct Killing<'a, T> {
    pub spec: &'a DiffusionSpec<T>,
    pub weight: &'a AreaWeight<T>,
    pub lambda: T,
}

impl<'a, T: Real> Killing<'a, T> {
    pub fn new(spec: &'a DiffusionSpec<T>, weight: &'a AreaWeight<T>, lambda: T) -> Self {
        Self { spec, weight, lambda }
    }

    fn raw(&self, x: T) -> Result<(T, T, T)> {
        let sig = self.spec.volatility(x)?;
        let mu = self.spec.drift(x)?;
        let k = if self.lambda == T::zero() {
            T::zero()
        } else {
            self.lambda * self.weight.b2(x)?
        };
        Ok((mu, sig * sig, k))
    }

    /// `g'' = 2 (k g - mu g') / sigma^2`, averaging across removable zeros
    /// of `sigma`.
    pub fn second(&self, x: T, g: T, dg: T) -> Result<T> {
        let (mu, s2, k) = self.raw(x)?;
        if s2 == T::zero() {
            let h = lit::<T>(1e-9) * (T::one() + x.abs());
            let lo = self.second_strict(x - h, g, dg)?;
            let hi = self.second_strict(x + h, g, dg)?;
            return Ok((lo + hi) * lit(0.5));
        }
        Ok(lit::<T>(2.0) * (k * g - mu * dg) / s2)
    }

    fn second_strict(&self, x: T, g: T, dg: T) -> Result<T> {
        let (mu, s2, k) = self.raw(x)?;
        if s2 == T::zero() {
            return Err(Error::Domain(format!("sigma vanishes near x = {}", to_f64(x))));
        }
        Ok(lit::<T>(2.0) * (k * g - mu * dg) / s2)
    }

    /// Local exponential rate `(-mu +- sqrt(mu^2 + 2 k sigma^2)) / sigma^2`.
    pub fn wkb(&self, x: T, plus: bool) -> Result<T> {
        let (mu, s2, k) = self.raw(x)?;
        if s2 == T::zero() {
            let h = lit::<T>(1e-9) * (T::one() + x.abs());
            return self.wkb(x + h, plus);
        }
        let root = (mu * mu + lit::<T>(2.0) * k * s2).sqrt();
        Ok(if plus { (-mu + root) / s2 } else { (-mu - root) / s2 })
    }
}

/// Integrates the killing-form equation from `start` with state `y0 =
/// (g, g')` through `targets` (monotone, away from `start`), renormalising
/// as it goes; returns `(ln g, g'/g)` at each target.
pub(crate) fn integrate_solution<T: Real>(
    kill: &Killing<'_, T>,
    start: T,
    y0: [T; 2],
    targets: &[T],
    ode: &OdeOptions<T>,
) -> Result<Vec<(T, T)>> {
    if targets.is_empty() {
        return Ok(vec![]);
    }
    // intermediate renormalisation points between the start and the first
    // target, and between widely separated targets
    let mut pts: Vec<(T, Option<usize>)> = Vec::with_capacity(targets.len() + 64);
    let mut prev = start;
    let gap_limit = {
        let span = (targets[targets.len() - 1] - start).abs();
        (span / lit(256.0)).max(lit(1e-3))
    };
    for (i, &t) in targets.iter().enumerate() {
        let gap = (t - prev).abs();
        if gap > gap_limit {
            let n = (gap / gap_limit).ceil().to_usize().unwrap_or(1).min(4096);
            for j in 1..n {
                pts.push((prev + (t - prev) * lit(j as f64 / n as f64), None));
            }
        }
        pts.push((t, Some(i)));
        prev = t;
    }
    let xs: Vec<T> = pts.iter().map(|p| p.0).collect();
    let mut out = vec![(T::zero(), T::zero()); targets.len()];
    let mut log_scale = T::zero();
    integrate_to_points(
        |x, y: &[T; 2]| Ok([y[1], kill.second(x, y[0], y[1])?]),
        start,
        y0,
        &xs,
        ode,
        |k, x, y| {
            let g = y[0];
            if !(g > T::zero()) {
                return Err(Error::Truncation(format!(
                    "solution lost positivity at x = {}",
                    to_f64(x)
                )));
            }
            let lg = g.ln();
            if let Some(i) = pts[k].1 {
                out[i] = (log_scale + lg, y[1] / g);
            }
            log_scale = log_scale + lg;
            y[0] = T::one();
            y[1] = y[1] / g;
            Ok(())
        },
    )?;
    Ok(out)
}

/// A single monotone branch on an ascending grid.
pub(crate) struct Branch<T> {
    pub ln_g: Vec<T>,
    pub dlog: Vec<T>,
    pub truncation: Option<T>,
    pub rounds: usize,
}

fn converged<T: Real>(a: &[T], b: &[T], tol: T) -> bool {
    let ends = [0, a.len() - 1];
    ends.iter().all(|&i| (a[i] - b[i]).abs() <= tol * (T::one() + a[i].abs()))
}

/// Increasing (`plus`) or decreasing solution of the killing-form equation
/// at the ascending `grid`, respecting the corresponding boundary.
pub(crate) fn solve_branch<T: Real>(
    kill: &Killing<'_, T>,
    grid: &[T],
    plus: bool,
    opts: &SlOptions<T>,
) -> Result<Branch<T>> {
    let space = kill.spec.space();
    let (a, c) = (grid[0], grid[grid.len() - 1]);
    let (end, kind) = if plus {
        (space.lower, space.lower_boundary)
    } else {
        (space.upper, space.upper_boundary)
    };
    // integrate away from the boundary towards the window
    let targets: Vec<T> = if plus {
        grid.to_vec()
    } else {
        grid.iter().rev().copied().collect()
    };
    let finish = |vals: Vec<(T, T)>, trunc: Option<T>, rounds: usize| {
        let mut ln_g: Vec<T> = vals.iter().map(|v| v.0).collect();
        let mut dlog: Vec<T> = vals.iter().map(|v| v.1).collect();
        if !plus {
            ln_g.reverse();
            dlog.reverse();
        }
        Branch {
            ln_g,
            dlog,
            truncation: trunc,
            rounds,
        }
    };
    if end.is_finite() && kind != Boundary::NaturalInfinite {
        let dir = if plus { T::one() } else { -T::one() };
        let t: Vec<T> = targets.iter().copied().filter(|&x| x != end).collect();
        if t.len() != targets.len() {
            return Err(Error::Domain("window touches an absorbing boundary".into()));
        }
        let vals = integrate_solution(kill, end, [T::zero(), dir], &t, &opts.ode)?;
        return Ok(finish(vals, Some(end), 1));
    }
    let width = c - a;
    let mut prev: Option<Vec<(T, T)>> = None;
    let mut hits = 0usize;
    for round in 0..opts.max_enlargements {
        let trunc = if end.is_finite() {
            let near = if plus { a } else { c };
            end + (near - end) * lit(0.5f64.powi(round as i32 + 1))
        } else {
            let off = width * lit(5.0 * 2f64.powi(round as i32));
            if plus {
                a - off
            } else {
                c + off
            }
        };
        let slope = kill.wkb(trunc, plus)?;
        let vals = integrate_solution(kill, trunc, [T::one(), slope], &targets, &opts.ode)?;
        if let Some(p) = &prev {
            let pd: Vec<T> = p.iter().map(|v| v.1).collect();
            let vd: Vec<T> = vals.iter().map(|v| v.1).collect();
            if converged(&pd, &vd, opts.tolerance) {
                hits += 1;
                if hits >= 2 {
                    return Ok(finish(vals, Some(trunc), round + 1));
                }
            } else {
                hits = 0;
            }
        }
        prev = Some(vals);
    }
    Err(Error::Truncation(format!(
        "{} solution did not stabilise after {} enlargements",
        if plus { "increasing" } else { "decreasing" },
        opts.max_enlargements
    )))
}

fn build_grid<T: Real>(window: (T, T), points: &[T], n: usize) -> Result<Vec<T>> {
    let (a, c) = window;
    if !(a < c) || !a.is_finite() || !c.is_finite() {
        return Err(Error::Domain("window must be a finite interval [A, C] with A < C".into()));
    }
    let n = n.max(2);
    let mut grid: Vec<T> = (0..n)
        .map(|i| if i == n - 1 { c } else { a + (c - a) * lit(i as f64 / (n - 1) as f64) })
        .collect();
    for &p in points {
        if p < a || p > c || p.is_nan() {
            return Err(Error::Domain(format!(
                "requested point {} outside the window",
                to_f64(p)
            )));
        }
        grid.push(p);
    }
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup();
    Ok(grid)
}

fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda = {} must be finite and >= 0", to_f64(lambda))));
    }
    Ok(())
}

fn harmonic_pair<T: Real>(spec: &DiffusionSpec<T>, grid: Vec<T>) -> Result<SLSolutionPair<T>> {
    let (a, c) = (grid[0], grid[grid.len() - 1]);
    let lower = spec.scale_tail(a, TailSide::Lower)?.value;
    let upper = spec.scale_tail(c, TailSide::Upper)?.value;
    let sa = spec.scale_function(a)?;
    let sc = spec.scale_function(c)?;
    let mut pair = SLSolutionPair {
        lambda: T::zero(),
        ln_g_plus: Vec::with_capacity(grid.len()),
        dlog_plus: Vec::with_capacity(grid.len()),
        ln_g_minus: Vec::with_capacity(grid.len()),
        dlog_minus: Vec::with_capacity(grid.len()),
        grid: vec![],
        source: PairSource::Harmonic,
    };
    // with both tails infinite, anchor g_plus on the window to keep the pair
    // independent
    let anchored = lower.is_none() && upper.is_none();
    for &x in &grid {
        let sx = spec.scale_function(x)?;
        let dens = spec.scale_density(x)?;
        let gp = match lower {
            Some(t) => Some(t + (sx - sa)),
            None if anchored => Some((sc - sa) + (sx - sa)),
            None => None,
        };
        match gp {
            Some(v) => {
                pair.ln_g_plus.push(v.ln());
                pair.dlog_plus.push(dens / v);
            }
            None => {
                pair.ln_g_plus.push(T::zero());
                pair.dlog_plus.push(T::zero());
            }
        }
        match upper {
            Some(t) => {
                let v = t + (sc - sx);
                pair.ln_g_minus.push(v.ln());
                pair.dlog_minus.push(-dens / v);
            }
            None => {
                pair.ln_g_minus.push(T::zero());
                pair.dlog_minus.push(T::zero());
            }
        }
    }
    pair.grid = grid;
    Ok(pair)
}

/// Fundamental pair of `spec` on `window`. For a time-changed spec the
/// weighted equation is solved; catalog entries use closed forms.
pub fn solve_pair<T: Real>(
    spec: &DiffusionSpec<T>,
    lambda: T,
    window: (T, T),
    opts: &SlOptions<T>,
) -> Result<SLSolutionPair<T>> {
    solve_pair_at(spec, lambda, window, &[], opts)
}

/// As [`solve_pair`], with `points` added to the grid so values there are
/// exact rather than interpolated.
pub fn solve_pair_at<T: Real>(
    spec: &DiffusionSpec<T>,
    lambda: T,
    window: (T, T),
    points: &[T],
    opts: &SlOptions<T>,
) -> Result<SLSolutionPair<T>> {
    check_lambda(lambda)?;
    let space = spec.space();
    if !space.contains_closed(window.0) || !space.contains_closed(window.1) {
        return Err(Error::Domain("window outside the state interval".into()));
    }
    let grid = build_grid(window, points, opts.grid_points)?;
    if lambda == T::zero() {
        return harmonic_pair(spec, grid);
    }
    if let Some(cat) = spec.catalog() {
        if closed_form_point(cat, lambda, grid[0])?.is_some() {
            let mut pair = SLSolutionPair {
                lambda,
                ln_g_plus: vec![],
                dlog_plus: vec![],
                ln_g_minus: vec![],
                dlog_minus: vec![],
                grid: vec![],
                source: PairSource::ClosedForm(cat.name()),
            };
            for &x in &grid {
                let p = closed_form_point(cat, lambda, x)?.unwrap();
                pair.ln_g_plus.push(p.ln_g_plus);
                pair.dlog_plus.push(p.dlog_plus);
                pair.ln_g_minus.push(p.ln_g_minus);
                pair.dlog_minus.push(p.dlog_minus);
            }
            pair.grid = grid;
            return Ok(pair);
        }
    }
    let (base, weight) = spec.killing_form();
    let kill = Killing::new(&base, &weight, lambda);
    let plus = solve_branch(&kill, &grid, true, opts)?;
    let minus = solve_branch(&kill, &grid, false, opts)?;
    Ok(SLSolutionPair {
        lambda,
        ln_g_plus: plus.ln_g,
        dlog_plus: plus.dlog,
        ln_g_minus: minus.ln_g,
        dlog_minus: minus.dlog,
        grid,
        source: PairSource::Numeric(NumericMeta {
            lower_truncation: plus.truncation,
            upper_truncation: minus.truncation,
            tolerance: opts.tolerance,
            enlargements: plus.rounds.max(minus.rounds),
        }),
    })
}

/// Only the increasing solution, at the ascending `grid`; used where the
/// decreasing one is not needed (and may not even be defined).
pub(crate) fn solve_increasing<T: Real>(
    spec: &DiffusionSpec<T>,
    lambda: T,
    grid: &[T],
    opts: &SlOptions<T>,
) -> Result<(Vec<T>, Vec<T>, PairSource<T>)> {
    check_lambda(lambda)?;
    if let Some(cat) = spec.catalog() {
        if lambda > T::zero() && closed_form_point(cat, lambda, grid[0])?.is_some() {
            let mut lg = vec![];
            let mut dl = vec![];
            for &x in grid {
                let p = closed_form_point(cat, lambda, x)?.unwrap();
                lg.push(p.ln_g_plus);
                dl.push(p.dlog_plus);
            }
            return Ok((lg, dl, PairSource::ClosedForm(cat.name())));
        }
    }
    let (base, weight) = spec.killing_form();
    let kill = Killing::new(&base, &weight, lambda);
    let b = solve_branch(&kill, grid, true, opts)?;
    Ok((
        b.ln_g,
        b.dlog,
        PairSource::Numeric(NumericMeta {
            lower_truncation: b.truncation,
            upper_truncation: None,
            tolerance: opts.tolerance,
            enlargements: b.rounds,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Coefficient, StateSpace};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn drifted_bm_numeric_matches_closed_form() {
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let numeric = spec.without_catalog();
        let opts = SlOptions::default();
        let cf = solve_pair(&spec, 1.0, (-2.0, 2.0), &opts).unwrap();
        let nu = solve_pair(&numeric, 1.0, (-2.0, 2.0), &opts).unwrap();
        assert!(matches!(nu.source, PairSource::Numeric(_)));
        for i in 0..cf.grid.len() {
            assert!(rel(nu.dlog_plus[i], cf.dlog_plus[i]) < 1e-6);
            assert!(rel(nu.dlog_minus[i], cf.dlog_minus[i]) < 1e-6);
        }
        let (pp, pm) = laplace_exponents(&cf, 0.0).unwrap();
        assert!(rel(pp, 3f64.sqrt() - 1.0) < 1e-14);
        assert!(rel(pm, 3f64.sqrt() + 1.0) < 1e-14);
        let r_cf = f_ratio(&cf, 0.0, 1.0, -1.0, 1.0).unwrap();
        let r_nu = f_ratio(&nu, 0.0, 1.0, -1.0, 1.0).unwrap();
        assert!(rel(r_nu, r_cf) < 1e-8);
    }

    #[test]
    fn standard_bm_f_value() {
        let spec = DiffusionSpec::bm_drift(0.0, 1.0).unwrap();
        let pair = solve_pair(&spec, 1.0, (0.0, 1.0), &SlOptions::default()).unwrap();
        let r2 = 2f64.sqrt();
        let v = f_lambda(&pair, 0.0, 1.0).unwrap();
        assert!(rel(v, r2.exp() - (-r2).exp()) < 1e-14);
        assert_eq!(f_lambda(&pair, 0.5, 0.5).unwrap(), 0.0);
        let a = f_lambda(&pair, 0.2, 0.7).unwrap();
        let b = f_lambda(&pair, 0.7, 0.2).unwrap();
        assert_eq!(a, -b);
        assert!(a > 0.0);
    }

    #[test]
    fn zero_lambda_exponents() {
        let mu = 0.75;
        let spec = DiffusionSpec::bm_drift(mu, 1.0).unwrap();
        let pair = solve_pair(&spec, 0.0, (-1.0, 1.0), &SlOptions::default()).unwrap();
        let (pp, pm) = laplace_exponents(&pair, 0.0).unwrap();
        assert_eq!(pp, 0.0);
        assert!(rel(pm, 2.0 * mu) < 1e-12);
        let w = pair.wronskian_in_scale(&spec).unwrap();
        for v in &w {
            assert!(rel(*v, w[0]) < 1e-10);
        }
    }

    #[test]
    fn bessel_pair_solves_weighted_equation() {
        let gbm = DiffusionSpec::gbm(0.1, 0.2).unwrap();
        let tc = gbm.time_change(&AreaWeight::square()).unwrap();
        let opts = SlOptions::default();
        for &lam in &[0.1, 1.0, 5.0] {
            let cf = solve_pair(&tc, lam, (0.8, 1.25), &opts).unwrap();
            assert!(matches!(cf.source, PairSource::ClosedForm("scaled_bessel")));
            let nu = solve_pair(&tc.without_catalog(), lam, (0.8, 1.25), &opts).unwrap();
            for i in [0, cf.grid.len() / 2, cf.grid.len() - 1] {
                assert!(rel(nu.dlog_plus[i], cf.dlog_plus[i]) < 1e-6, "lam {lam}");
                assert!(rel(nu.dlog_minus[i], cf.dlog_minus[i]) < 1e-6, "lam {lam}");
            }
        }
    }

    #[test]
    fn pair_invariants_numeric_ou() {
        let spec = DiffusionSpec::ou(1.2, 0.3, 0.7).unwrap();
        let pair = solve_pair(&spec, 0.8, (-1.0, 1.5), &SlOptions::default()).unwrap();
        for i in 0..pair.grid.len() {
            assert!(pair.dlog_plus[i] >= 0.0 && pair.dlog_minus[i] <= 0.0);
        }
        let w = pair.wronskian_in_scale(&spec).unwrap();
        for v in &w {
            assert!(rel(*v, w[0]) < 1e-6);
        }
        // convex in scale: second differences of g against S are >= 0
        let s: Vec<f64> = pair.grid.iter().map(|&x| spec.scale_function(x).unwrap()).collect();
        for g in [pair.g_plus(), pair.g_minus()] {
            for i in 1..g.len() - 1 {
                let d1 = (g[i] - g[i - 1]) / (s[i] - s[i - 1]);
                let d2 = (g[i + 1] - g[i]) / (s[i + 1] - s[i]);
                assert!(d2 - d1 >= -1e-8 * d1.abs().max(1.0));
            }
        }
    }

    #[test]
    fn psi_plus_monotone_in_lambda() {
        let spec = DiffusionSpec::ou(0.5, 0.0, 1.0).unwrap();
        let mut last = 0.0;
        for &lam in &[0.05, 0.2, 0.8, 2.0] {
            let pair = solve_pair_at(&spec, lam, (-0.5, 0.5), &[0.0], &SlOptions::default()).unwrap();
            let (pp, _) = laplace_exponents(&pair, 0.0).unwrap();
            assert!(pp >= last);
            last = pp;
        }
    }

    #[test]
    fn absorbing_boundary_solution() {
        // standard BM killed at 0 and 1: g_plus = sinh(sqrt(2 l) x)
        let spec = DiffusionSpec::new(
            Coefficient::constant(0.0),
            Coefficient::constant(1.0),
            StateSpace::new(0.0, 1.0, Boundary::Absorbing, Boundary::Absorbing).unwrap(),
            None,
            vec![],
        )
        .unwrap();
        let pair = solve_pair(&spec, 1.0, (0.25, 0.75), &SlOptions::default()).unwrap();
        let k = 2f64.sqrt();
        let (pp, _) = laplace_exponents(&pair, 0.5).unwrap();
        assert!(rel(pp, k / (k * 0.5).tanh()) < 1e-9);
    }

    #[test]
    fn off_grid_interpolation() {
        let spec = DiffusionSpec::bm_drift(0.3, 1.0).unwrap().without_catalog();
        let opts = SlOptions { grid_points: 129, ..SlOptions::default() };
        let pair = solve_pair(&spec, 1.0, (-1.0, 1.0), &opts).unwrap();
        let p = pair.at(0.123).unwrap();
        let bp = -0.3 + (0.09f64 + 2.0).sqrt();
        assert!(rel(p.dlog_plus, bp) < 1e-7);
        assert!(pair.at(1.5).is_err());
    }

    #[test]
    fn basis_invariance_literal() {
        let g = |x: f64| (1.3 * x).exp();
        let h = |x: f64| (-0.4 * x).exp();
        let (v0, a, c) = (0.2, -0.5, 0.9);
        let base = f_from_values(h(v0), g(v0), h(c), g(c)) / f_from_values(h(a), g(a), h(c), g(c));
        let (m11, m12, m21, m22) = (0.7, -1.9, 2.3, 0.4);
        let gg = |x: f64| m11 * g(x) + m12 * h(x);
        let hh = |x: f64| m21 * g(x) + m22 * h(x);
        let mixed = f_from_values(hh(v0), gg(v0), hh(c), gg(c)) / f_from_values(hh(a), gg(a), hh(c), gg(c));
        assert!(rel(mixed, base) < 1e-12);
    }
}
