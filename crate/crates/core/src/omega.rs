//! Occupation area below zero and bankruptcy in the Omega risk model.
//!
//! With bankruptcy rate `omega` (zero above 0) the exposure is
//! `int_0^inf omega(V_s) 1{V_s < 0} ds`. The transform uses the diffusion
//! time-changed by any positive extension of `omega`; only its increasing
//! solution on `(l, 0]` enters, so the extension above 0 never matters.

use crate::diffusion::{AreaWeight, Boundary, Coefficient, DiffusionSpec, TailSide, WeightKind};
use crate::error::{Error, Result};
use crate::ode::integrate_to_points;
use crate::real::{lit, to_f64, Real};
use crate::sturm_liouville::{solve_increasing, solve_pair_at, Killing, PairSource, SlOptions};

#[derive(Debug, Clone)]
pub struct OmegaProblem<T> {
    pub spec: DiffusionSpec<T>,
    pub omega: AreaWeight<T>,
    pub v0: T,
    /// Overrides an inconclusive numerical classification of `S(inf)`.
    pub declared_finite_scale: Option<bool>,
}

impl<T: Real> OmegaProblem<T> {
    pub fn new(spec: DiffusionSpec<T>, omega: AreaWeight<T>, v0: T) -> Result<Self> {
        let space = spec.space();
        if !space.contains_open(T::zero()) {
            return Err(Error::InvalidProblem("0 must lie inside the state interval".into()));
        }
        if !space.contains_open(v0) {
            return Err(Error::InvalidProblem(format!("v0 = {} outside the state interval", to_f64(v0))));
        }
        let reach_hi = if space.upper.is_finite() { space.upper } else { lit(50.0) };
        let reach_lo = if space.lower.is_finite() { space.lower } else { lit(-50.0) };
        for i in 1..=64 {
            let t: T = lit(i as f64 / 64.0);
            let x = reach_hi * t;
            if x < space.upper && omega.b2(x)? != T::zero() {
                return Err(Error::InvalidProblem(format!(
                    "bankruptcy rate must vanish above 0, nonzero at x = {}",
                    to_f64(x)
                )));
            }
        }
        let mut prev: Option<T> = None;
        for i in (1..=64).rev() {
            // from the left end towards 0
            let x = reach_lo * lit(i as f64 / 64.0);
            if x <= space.lower {
                continue;
            }
            let v = omega.b2(x)?;
            if v.is_nan() || v < T::zero() {
                return Err(Error::InvalidProblem(format!("bankruptcy rate negative at x = {}", to_f64(x))));
            }
            if let Some(p) = prev {
                if v > p * (T::one() + lit(1e-12)) {
                    return Err(Error::InvalidProblem(format!(
                        "bankruptcy rate must be nonincreasing on x <= 0, increases at x = {}",
                        to_f64(x)
                    )));
                }
            }
            prev = Some(v);
        }
        Ok(Self {
            spec,
            omega,
            v0,
            declared_finite_scale: None,
        })
    }

    pub fn with_declared_scale(mut self, finite: bool) -> Self {
        self.declared_finite_scale = Some(finite);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailVerdict {
    Finite,
    Infinite,
    /// The numerical search was inconclusive and the user's declaration was
    /// used.
    Declared { finite: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SFinitenessVerdict<T> {
    pub verdict: TailVerdict,
    /// `int_0^inf s` when finite and computed.
    pub tail: Option<T>,
    pub evidence: Vec<(T, T)>,
}

impl<T> SFinitenessVerdict<T> {
    pub fn is_finite(&self) -> bool {
        matches!(
            self.verdict,
            TailVerdict::Finite | TailVerdict::Declared { finite: true }
        )
    }
}

/// Whether `S(inf) = int_0^inf s` is finite.
pub fn classify_scale_tail<T: Real>(spec: &DiffusionSpec<T>) -> Result<SFinitenessVerdict<T>> {
    classify_with(spec, None)
}

fn classify_with<T: Real>(spec: &DiffusionSpec<T>, declared: Option<bool>) -> Result<SFinitenessVerdict<T>> {
    match spec.scale_tail(T::zero(), TailSide::Upper) {
        Ok(t) => Ok(SFinitenessVerdict {
            verdict: if t.value.is_some() {
                TailVerdict::Finite
            } else {
                TailVerdict::Infinite
            },
            tail: t.value,
            evidence: t.evidence,
        }),
        Err(Error::Inconclusive(msg)) => match declared {
            Some(finite) => Ok(SFinitenessVerdict {
                verdict: TailVerdict::Declared { finite },
                tail: None,
                evidence: vec![],
            }),
            None => Err(Error::Inconclusive(msg)),
        },
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaBranch {
    ZeroLambda,
    PositiveFiniteScale,
    PositiveInfiniteScale,
    NonPositive,
}

/// The transform with the pieces it was assembled from.
#[derive(Debug, Clone)]
pub struct OccupationTransform<T> {
    pub value: T,
    pub branch: OmegaBranch,
    /// `psi+*_lambda(0)`.
    pub psi_plus: T,
    /// `psi-*_0(0)`.
    pub psi_minus_zero: T,
    /// `g*_+(v0) / g*_+(0)` on the non-positive branch.
    pub g_ratio: Option<T>,
    pub scale: SFinitenessVerdict<T>,
    pub source: Option<PairSource<T>>,
}

/// `E[exp(-lambda int_0^inf omega(V_s) 1{V_s < 0} ds)]`.
pub fn occupation_area_laplace<T: Real>(p: &OmegaProblem<T>, lambda: T, opts: &SlOptions<T>) -> Result<T> {
    Ok(occupation_transform(p, lambda, opts)?.value)
}

pub fn occupation_transform<T: Real>(
    p: &OmegaProblem<T>,
    lambda: T,
    opts: &SlOptions<T>,
) -> Result<OccupationTransform<T>> {
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda = {} must be finite and >= 0", to_f64(lambda))));
    }
    let scale = classify_with(&p.spec, p.declared_finite_scale)?;
    let psi_minus_zero = match (scale.is_finite(), scale.tail) {
        (true, Some(t)) => p.spec.scale_density(T::zero())? / t,
        (true, None) => {
            let t = p
                .spec
                .scale_tail(T::zero(), TailSide::Upper)
                .ok()
                .and_then(|t| t.value)
                .ok_or_else(|| Error::Inconclusive("declared finite scale tail could not be evaluated".into()))?;
            p.spec.scale_density(T::zero())? / t
        }
        (false, _) => T::zero(),
    };
    if lambda == T::zero() {
        return Ok(OccupationTransform {
            value: T::one(),
            branch: OmegaBranch::ZeroLambda,
            psi_plus: T::zero(),
            psi_minus_zero,
            g_ratio: None,
            scale,
            source: None,
        });
    }
    let ext = p.omega.negative_side_extension();
    let tc = p.spec.time_change(&ext)?;
    let v0 = p.v0;
    let hi = T::zero();
    let left = v0.min(T::zero());
    let lower = p.spec.space().lower;
    let span = if lower.is_finite() {
        T::one().min((left - lower) * lit(0.5))
    } else {
        T::one()
    };
    let mut grid = vec![left - span];
    if v0 < T::zero() {
        grid.push(v0);
    }
    grid.push(hi);
    let (ln_g, dlog, source) = solve_increasing(&tc, lambda, &grid, opts)?;
    let n = grid.len();
    let psi_plus = dlog[n - 1];
    let frac = psi_minus_zero / (psi_plus + psi_minus_zero);
    let (value, branch, g_ratio) = if v0 > T::zero() {
        if scale.is_finite() {
            let num = p
                .spec
                .scale_tail(v0, TailSide::Upper)?
                .value
                .ok_or_else(|| Error::Inconclusive("tail beyond v0 not finite".into()))?;
            let den = p.spec.scale_density(T::zero())? / psi_minus_zero;
            let v = T::one() - num / den * psi_plus / (psi_plus + psi_minus_zero);
            (v, OmegaBranch::PositiveFiniteScale, None)
        } else {
            (frac, OmegaBranch::PositiveInfiniteScale, None)
        }
    } else {
        let r = if v0 < T::zero() {
            (ln_g[n - 2] - ln_g[n - 1]).exp()
        } else {
            T::one()
        };
        (r * frac, OmegaBranch::NonPositive, Some(r))
    };
    Ok(OccupationTransform {
        value: value.max(T::zero()).min(T::one()),
        branch,
        psi_plus,
        psi_minus_zero,
        g_ratio,
        scale,
        source: Some(source),
    })
}

/// `1 - E[exp(-exposure)]`.
pub fn bankruptcy_probability<T: Real>(p: &OmegaProblem<T>, opts: &SlOptions<T>) -> Result<T> {
    Ok(T::one() - occupation_area_laplace(p, T::one(), opts)?)
}

/// The three-branch closed form for `dV = mu V^2 dt + V dW` with
/// `omega = x^2 1{x < 0}`, evaluated as written. Its `v0 <= 0` branch
/// uses `exp(-2 mu v0)` and leaves `[0, 1]` for moderately negative `v0`;
/// the solver gives `1 - 2 mu exp(beta v0) / (sqrt(mu^2 + 2) + mu)`.
pub fn alternative_quad_drift_bankruptcy<T: Real>(mu: T, v0: T) -> T {
    let two: T = lit(2.0);
    let r = (mu * mu + two).sqrt();
    if mu < T::zero() {
        T::one()
    } else if v0 > T::zero() {
        (r - mu) / (r + mu) * (-two * mu * v0).exp()
    } else {
        T::one() - two * mu / (r + mu) * (-two * mu * v0).exp()
    }
}

/// `E[exp(-eta int_0^{e_delta} 1{V_s < 0} ds)]` for an independent
/// exponential time `e_delta` (closed form in the pair at `delta` and
/// `delta + eta`).
pub fn occupation_at_exponential_time<T: Real>(
    spec: &DiffusionSpec<T>,
    eta: T,
    delta: T,
    v0: T,
    opts: &SlOptions<T>,
) -> Result<T> {
    if !(delta > T::zero()) || !(eta >= T::zero()) {
        return Err(Error::Domain("need delta > 0 and eta >= 0".into()));
    }
    let space = spec.space();
    let lo = v0.min(T::zero());
    let hi = v0.max(T::zero());
    let pad = |room: T| T::one().min(room * lit(0.5));
    let a = if space.lower.is_finite() { lo - pad(lo - space.lower) } else { lo - T::one() };
    let c = if space.upper.is_finite() { hi + pad(space.upper - hi) } else { hi + T::one() };
    let pts = [v0, T::zero()];
    let p_d = solve_pair_at(spec, delta, (a, c), &pts, opts)?;
    let p_de = solve_pair_at(spec, delta + eta, (a, c), &pts, opts)?;
    let at0_d = p_d.at(T::zero())?;
    let at0_de = p_de.at(T::zero())?;
    let psi_plus = at0_de.dlog_plus;
    let psi_minus = -at0_d.dlog_minus;
    let q = delta / (delta + eta);
    let mix = (q * psi_plus + psi_minus) / (psi_plus + psi_minus);
    if v0 > T::zero() {
        let r = (p_d.at(v0)?.ln_g_minus - at0_d.ln_g_minus).exp();
        Ok(r * mix + T::one() - r)
    } else {
        let r = (p_de.at(v0)?.ln_g_plus - at0_de.ln_g_plus).exp();
        Ok(r * mix + q * (T::one() - r))
    }
}

/// `E[exp(-lambda tau_omega)] = P(tau_omega < e_lambda)`, with `tau_omega`
/// the first arrival of a Poisson clock of intensity `omega(V) 1{V < 0}`.
///
/// Computed as `int G(v0, y) omega(y) m(y) dy` with the Green function of
/// `1/2 sigma^2 w'' + mu w' - (lambda + omega) w = -omega` in the
/// diffusion's own clock. Experimental.
pub fn bankruptcy_time_laplace<T: Real>(p: &OmegaProblem<T>, lambda: T, opts: &SlOptions<T>) -> Result<T> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::Domain("bankruptcy time transform needs lambda > 0".into()));
    }
    let spec = &p.spec;
    let om = p.omega.clone();
    let lam = lambda;
    let kill_w = AreaWeight::from_coefficient(
        Coefficient::builtin("lambda_plus_omega", &[to_f64(lambda)], move |x: T| Ok(lam + om.b2(x)?)),
        vec![],
    );
    let kill = Killing::new(spec, &kill_w, T::one());
    let v0 = p.v0;
    let space = spec.space();
    let lo = v0.min(T::zero());
    let hi = v0.max(T::zero());
    let pad = |room: T| T::one().min(room * lit(0.5));
    let a = if space.lower.is_finite() { lo - pad(lo - space.lower) } else { lo - T::one() };
    let c = if space.upper.is_finite() { hi + pad(space.upper - hi) } else { hi + T::one() };
    let plus = green_branch(&kill, &p.omega, (a, v0, c), true, opts)?;
    let minus = green_branch(&kill, &p.omega, (a, v0, c), false, opts)?;
    let s0 = spec.scale_density(v0)?;
    let w = (plus.1 - minus.1) * s0 / (plus.0 - minus.0);
    Ok(w.max(T::zero()).min(T::one()))
}

/// `(g'/g, J/g)` at `v0`, where `J = int_{start}^{x} g omega m` is carried
/// along with the solution from its truncation point.
fn green_branch<T: Real>(
    kill: &Killing<'_, T>,
    omega: &AreaWeight<T>,
    (a, v0, c): (T, T, T),
    plus: bool,
    opts: &SlOptions<T>,
) -> Result<(T, T)> {
    let spec = kill.spec;
    let space = spec.space();
    let (end, kind) = if plus {
        (space.lower, space.lower_boundary)
    } else {
        (space.upper, space.upper_boundary)
    };
    let targets: Vec<T> = if plus { vec![a, v0, c] } else { vec![c, v0, a] };
    let dir = if plus { T::one() } else { -T::one() };
    if end.is_finite() && kind != Boundary::NaturalInfinite {
        let v = green_run(kill, omega, end, [T::zero(), dir], &targets, opts)?;
        return Ok(v[1]);
    }
    let width = c - a;
    let mut prev: Option<Vec<(T, T)>> = None;
    let mut hits = 0usize;
    for round in 0..opts.max_enlargements {
        let trunc = if end.is_finite() {
            let near = if plus { a } else { c };
            end + (near - end) * lit(0.5f64.powi(round as i32 + 1))
        } else {
            (if plus { a } else { c }) - dir * width * lit(5.0 * 2f64.powi(round as i32))
        };
        let slope = kill.wkb(trunc, plus)?;
        let vals = green_run(kill, omega, trunc, [T::one(), slope], &targets, opts)?;
        if let Some(pv) = &prev {
            let close = pv.iter().zip(&vals).all(|(x, y)| {
                (x.0 - y.0).abs() <= opts.tolerance * (T::one() + y.0.abs())
                    && (x.1 - y.1).abs() <= opts.tolerance * (T::one() + y.1.abs())
            });
            if close {
                hits += 1;
                if hits >= 2 {
                    return Ok(vals[1]);
                }
            } else {
                hits = 0;
            }
        }
        prev = Some(vals);
    }
    Err(Error::Truncation("Green function branch did not stabilise".into()))
}

fn green_run<T: Real>(
    kill: &Killing<'_, T>,
    omega: &AreaWeight<T>,
    start: T,
    y0: [T; 2],
    targets: &[T],
    opts: &SlOptions<T>,
) -> Result<Vec<(T, T)>> {
    let spec = kill.spec;
    let mut pts: Vec<(T, Option<usize>)> = Vec::new();
    let mut prev = start;
    let step: T = lit(0.05);
    for (i, &t) in targets.iter().enumerate() {
        let gap = (t - prev).abs();
        let n = (gap / step).ceil().to_usize().unwrap_or(1).clamp(1, 100_000);
        for j in 1..n {
            pts.push((prev + (t - prev) * lit(j as f64 / n as f64), None));
        }
        pts.push((t, Some(i)));
        prev = t;
    }
    let xs: Vec<T> = pts.iter().map(|p| p.0).collect();
    let mut out = vec![(T::zero(), T::zero()); targets.len()];
    let ls0 = spec.ln_scale_density(start)?;
    let speed_weight = |x: T, ls: T| -> Result<T> {
        let om = omega.b2(x)?;
        if om == T::zero() {
            return Ok(T::zero());
        }
        let sig = spec.volatility(x)?;
        let m = lit::<T>(2.0) / (sig * sig * ls.exp());
        if !m.is_finite() {
            return Err(Error::Domain(format!("speed density undefined at x = {}", to_f64(x))));
        }
        Ok(om * m)
    };
    integrate_to_points(
        |x, y: &[T; 4]| {
            Ok([
                y[1],
                kill.second(x, y[0], y[1])?,
                y[0] * speed_weight(x, y[3])?,
                -spec.drift_ratio(x)?,
            ])
        },
        start,
        [y0[0], y0[1], T::zero(), ls0],
        &xs,
        &opts.ode,
        |k, x, y| {
            let g = y[0];
            if !(g > T::zero()) {
                return Err(Error::Truncation(format!("solution lost positivity at x = {}", to_f64(x))));
            }
            y[1] = y[1] / g;
            y[2] = y[2] / g;
            y[0] = T::one();
            if let Some(i) = pts[k].1 {
                out[i] = (y[1], y[2]);
            }
            Ok(())
        },
    )?;
    Ok(out)
}

/// Whether `omega` is a constant rate below 0.
pub fn constant_rate<T: Real>(omega: &AreaWeight<T>) -> Option<T> {
    match omega.kind() {
        WeightKind::ConstNegative(eta) => Some(eta),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(mu: f64, v0: f64) -> OmegaProblem<f64> {
        OmegaProblem::new(DiffusionSpec::quad_drift(mu).unwrap(), AreaWeight::square_negative(), v0).unwrap()
    }

    #[test]
    fn verdicts() {
        let v = classify_scale_tail(&DiffusionSpec::<f64>::bm_drift(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(v.verdict, TailVerdict::Finite);
        assert!((v.tail.unwrap() - 0.5).abs() < 1e-15);
        for mu in [0.0, -0.5] {
            let v = classify_scale_tail(&DiffusionSpec::<f64>::bm_drift(mu, 1.0).unwrap()).unwrap();
            assert_eq!(v.verdict, TailVerdict::Infinite);
        }
        let nu = classify_scale_tail(&DiffusionSpec::<f64>::bm_drift(1.0, 1.0).unwrap().without_catalog()).unwrap();
        assert_eq!(nu.verdict, TailVerdict::Finite);
        assert!((nu.tail.unwrap() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn quadratic_drift_example() {
        let o = SlOptions::default();
        let r3 = 3f64.sqrt();
        let psi0 = (r3 - 1.0) / (r3 + 1.0);
        let p = quad(1.0, 0.5);
        let t = occupation_area_laplace(&p, 1.0, &o).unwrap();
        assert!((t - (1.0 - psi0 * (-1.0f64).exp())).abs() < 1e-13);
        assert!((bankruptcy_probability(&quad(1.0, 0.0), &o).unwrap() - psi0).abs() < 1e-13);
        assert!((bankruptcy_probability(&quad(-1.0, 0.3), &o).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(occupation_area_laplace(&quad(-0.5, 0.3), 1.0, &o).unwrap(), 0.0);
        assert_eq!(occupation_area_laplace(&p, 0.0, &o).unwrap(), 1.0);
        let neg = bankruptcy_probability(&quad(1.0, -0.5), &o).unwrap();
        let bp = -1.0 + r3;
        assert!((neg - (1.0 - 2.0 / (1.0 + r3) * (bp * -0.5f64).exp())).abs() < 1e-13);
        assert!(alternative_quad_drift_bankruptcy(1.0f64, -0.5) < 0.0);
    }

    #[test]
    fn numeric_matches_recognised() {
        let o = SlOptions::default();
        for v0 in [-0.7, 0.0, 0.4] {
            let p = quad(1.0, v0);
            let q = OmegaProblem { spec: p.spec.without_catalog(), ..p.clone() };
            let a = occupation_area_laplace(&p, 0.7, &o).unwrap();
            let b = occupation_area_laplace(&q, 0.7, &o).unwrap();
            assert!((a - b).abs() < 1e-8, "{v0}: {a} {b}");
        }
    }

    #[test]
    fn general_rate_same_as_constant() {
        let o = SlOptions::default();
        let spec = DiffusionSpec::<f64>::bm_drift(0.4, 1.0).unwrap();
        let p = OmegaProblem::new(spec.clone(), AreaWeight::const_negative(2.0).unwrap(), -0.3).unwrap();
        let g = OmegaProblem::new(spec, AreaWeight::expression("2 * indicator(x < 0)").unwrap(), -0.3).unwrap();
        let a = occupation_area_laplace(&p, 1.0, &o).unwrap();
        let b = occupation_area_laplace(&g, 1.0, &o).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn shape_in_lambda_and_v0() {
        let o = SlOptions::default();
        let p = quad(0.6, 0.2);
        let v: Vec<f64> = (0..6).map(|i| occupation_area_laplace(&p, i as f64 * 0.4, &o).unwrap()).collect();
        for i in 1..v.len() {
            assert!(v[i] <= v[i - 1] && (0.0..=1.0).contains(&v[i]));
            if i > 1 {
                assert!(v[i] - 2.0 * v[i - 1] + v[i - 2] >= -1e-8);
            }
        }
        let mut last = 0.0;
        for k in -4..=4 {
            let t = occupation_area_laplace(&quad(0.6, k as f64 * 0.25), 1.0, &o).unwrap();
            assert!(t >= last - 1e-12);
            last = t;
        }
    }

    #[test]
    fn bankruptcy_time_routes_agree() {
        let o = SlOptions::default();
        let spec = DiffusionSpec::<f64>::bm_drift(0.5, 1.0).unwrap();
        for v0 in [-0.4, 0.0, 0.6] {
            let p = OmegaProblem::new(spec.clone(), AreaWeight::const_negative(1.5).unwrap(), v0).unwrap();
            let green = bankruptcy_time_laplace(&p, 0.8, &o).unwrap();
            let lz = 1.0 - occupation_at_exponential_time(&spec, 1.5, 0.8, v0, &o).unwrap();
            assert!((green - lz).abs() < 1e-7, "{v0}: {green} {lz}");
        }
        let p = OmegaProblem::new(spec.clone(), AreaWeight::const_negative(1.5).unwrap(), 0.3).unwrap();
        let h = 1e-4;
        let f1 = bankruptcy_time_laplace(&p, h, &o).unwrap();
        let f2 = bankruptcy_time_laplace(&p, 2.0 * h, &o).unwrap();
        let bp = bankruptcy_probability(&p, &o).unwrap();
        assert!((2.0 * f1 - f2 - bp).abs() < 1e-4, "{f1} {f2} {bp}");
        let z = OmegaProblem::new(spec, AreaWeight::const_negative(0.0).unwrap(), 0.3).unwrap();
        assert_eq!(bankruptcy_time_laplace(&z, 1.0, &o).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_rates() {
        let spec = DiffusionSpec::<f64>::bm_drift(0.5, 1.0).unwrap();
        assert!(OmegaProblem::new(spec.clone(), AreaWeight::square(), 0.1).is_err());
        assert!(OmegaProblem::new(spec, AreaWeight::expression("exp(x) * indicator(x < 0)").unwrap(), 0.1).is_err());
    }
}
