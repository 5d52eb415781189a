//! Dormand-Prince 5(4) integrator for small fixed-size systems.
//!
//! The integrator lands exactly on every requested output abscissa and lets the
//! caller rewrite the state there, which is how linear solutions are
//! renormalised without losing their log scale.

use crate::error::{Error, Result};
use crate::real::{lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions<T> {
    pub rel_tol: T,
    pub abs_tol: T,
    pub min_step: T,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        Self {
            rel_tol: lit(1e-11),
            abs_tol: lit(1e-13),
            min_step: lit(1e-13),
            max_steps: 2_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = rhs(x, y)` from `x0` through each abscissa in `points`
/// (monotone, all on one side of `x0`), calling `on_point(i, x_i, &mut y)` at
/// each.
pub fn integrate_to_points<T, const N: usize, F, P>(
    mut rhs: F,
    x0: T,
    y0: [T; N],
    points: &[T],
    opts: &OdeOptions<T>,
    mut on_point: P,
) -> Result<()>
where
    T: Real,
    F: FnMut(T, &[T; N]) -> Result<[T; N]>,
    P: FnMut(usize, T, &mut [T; N]) -> Result<()>,
{
    let Some(&last) = points.last() else {
        return Ok(());
    };
    let dir = if last >= x0 { T::one() } else { -T::one() };
    let span = (last - x0).abs();
    let mut h = (span * lit(1e-3)).max(lit(1e-6)).min(lit(0.05));
    let mut x = x0;
    let mut y = y0;
    let mut steps = 0usize;

    for (i, &target) in points.iter().enumerate() {
        if (target - x) * dir < T::zero() {
            return Err(Error::Domain(format!(
                "output abscissa {} is behind the integrator",
                to_f64(target)
            )));
        }
        while (target - x) * dir > T::zero() {
            let remaining = (target - x).abs();
            let mut last_step = false;
            let mut step = h;
            if step >= remaining {
                step = remaining;
                last_step = true;
            }
            let hs = step * dir;
            let mut k = [[T::zero(); N]; 7];
            for s in 0..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let aij: T = lit(A[s][j]);
                    if aij != T::zero() {
                        for n in 0..N {
                            ys[n] = ys[n] + hs * aij * kj[n];
                        }
                    }
                }
                k[s] = rhs(x + hs * lit(C[s]), &ys)?;
            }
            let mut y_new = y;
            let mut err_sq = T::zero();
            for n in 0..N {
                let mut inc = T::zero();
                let mut e = T::zero();
                for s in 0..7 {
                    inc = inc + lit::<T>(B[s]) * k[s][n];
                    e = e + lit::<T>(E[s]) * k[s][n];
                }
                y_new[n] = y[n] + hs * inc;
                let sc = opts.abs_tol + opts.rel_tol * y[n].abs().max(y_new[n].abs());
                let r = hs * e / sc;
                err_sq = err_sq + r * r;
            }
            let err = (err_sq / lit(N as f64)).sqrt();
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                h = step * lit(0.25);
                if h < opts.min_step {
                    return Err(Error::Stiffness(format!(
                        "non-finite state near x = {}",
                        to_f64(x)
                    )));
                }
                continue;
            }
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Stiffness("maximum number of steps exceeded".into()));
            }
            let fac = if err == T::zero() {
                lit(5.0)
            } else {
                (lit::<T>(0.9) * err.powf(lit(-0.2))).max(lit(0.2)).min(lit(5.0))
            };
            if err <= T::one() {
                x = if last_step { target } else { x + hs };
                y = y_new;
                if !last_step {
                    h = step * fac;
                }
            } else {
                h = step * fac.min(T::one());
                if h < opts.min_step {
                    return Err(Error::Stiffness(format!(
                        "step size underflow near x = {}",
                        to_f64(x)
                    )));
                }
            }
        }
        on_point(i, x, &mut y)?;
    }
    Ok(())
}
