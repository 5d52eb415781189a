//! Adaptive Gauss-Kronrod quadrature and Chebyshev-Lobatto spectral tools.

use crate::error::{Error, Result};
use crate::real::{lit, to_f64, Real};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_subdivisions: usize,
}

impl<T: Real> Default for QuadOptions<T> {
    fn default() -> Self {
        Self {
            abs_tol: lit(1e-14),
            rel_tol: lit(1e-12),
            max_subdivisions: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

fn gk15<T: Real, F>(f: &mut F, a: T, b: T) -> Result<Panel<T>>
where
    F: FnMut(T) -> Result<T>,
{
    let center = (a + b) * lit(0.5);
    let half = (b - a) * lit(0.5);
    let fc = f(center)?;
    let mut kronrod = fc * lit(WGK[7]);
    let mut gauss = fc * lit(WG[3]);
    for j in 0..7 {
        let dx = half * lit(XGK[j]);
        let f1 = f(center - dx)?;
        let f2 = f(center + dx)?;
        kronrod = kronrod + (f1 + f2) * lit(WGK[j]);
        if j % 2 == 1 {
            gauss = gauss + (f1 + f2) * lit(WG[j / 2]);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    if !value.is_finite() {
        return Err(Error::QuadratureFailure(format!(
            "non-finite integrand on [{}, {}]",
            to_f64(a),
            to_f64(b)
        )));
    }
    Ok(Panel { a, b, value, error })
}

/// Integrates `f` over the finite interval `[a, b]` (either orientation).
pub fn integrate<T: Real, F>(mut f: F, a: T, b: T, opts: &QuadOptions<T>) -> Result<T>
where
    F: FnMut(T) -> Result<T>,
{
    if a == b {
        return Ok(T::zero());
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain("integrate requires finite limits".into()));
    }
    let (lo, hi, sign) = if a < b { (a, b, T::one()) } else { (b, a, -T::one()) };
    let mut panels = vec![gk15(&mut f, lo, hi)?];
    loop {
        let total: T = panels.iter().map(|p| p.value).sum();
        let err: T = panels.iter().map(|p| p.error).sum();
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok(sign * total);
        }
        if panels.len() >= opts.max_subdivisions {
            return Err(Error::QuadratureFailure(format!(
                "error estimate {:e} above tolerance after {} panels on [{}, {}]",
                to_f64(err),
                panels.len(),
                to_f64(lo),
                to_f64(hi)
            )));
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, p)| {
                if p.error > acc.1 {
                    (i, p.error)
                } else {
                    acc
                }
            });
        let worst = panels.swap_remove(idx);
        let mid = (worst.a + worst.b) * lit(0.5);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::QuadratureFailure("panel width underflow".into()));
        }
        panels.push(gk15(&mut f, worst.a, mid)?);
        panels.push(gk15(&mut f, mid, worst.b)?);
    }
}

/// Integrates `f` over `[a, +inf)` with the map `t = a + u / (1 - u)`.
pub fn integrate_to_infinity<T: Real, F>(mut f: F, a: T, opts: &QuadOptions<T>) -> Result<T>
where
    F: FnMut(T) -> Result<T>,
{
    integrate(
        |u: T| {
            let one = T::one();
            let w = one - u;
            let t = a + u / w;
            let v = f(t)?;
            if v == T::zero() {
                Ok(T::zero())
            } else {
                Ok(v / (w * w))
            }
        },
        T::zero(),
        T::one(),
        opts,
    )
}

/// Integrates `f` over `(-inf, b]`.
pub fn integrate_from_neg_infinity<T: Real, F>(mut f: F, b: T, opts: &QuadOptions<T>) -> Result<T>
where
    F: FnMut(T) -> Result<T>,
{
    // int_{-inf}^b f(x) dx = int_b^inf f(2b - t) dt
    integrate_to_infinity(|t: T| f(b + b - t), b, opts)
}

/// Chebyshev-Lobatto grid on `[a, b]`, ascending, `n + 1` points.
#[derive(Debug, Clone)]
pub struct ChebGrid<T> {
    pub a: T,
    pub b: T,
    pub nodes: Vec<T>,
    theta: Vec<T>,
}

impl<T: Real> ChebGrid<T> {
    pub fn new(a: T, b: T, n: usize) -> Self {
        assert!(n >= 2, "Chebyshev grid needs at least three points");
        let mid = (a + b) * lit(0.5);
        let half = (b - a) * lit(0.5);
        let nf: T = lit(n as f64);
        let mut nodes = Vec::with_capacity(n + 1);
        let mut theta = Vec::with_capacity(n + 1);
        for j in 0..=n {
            // t_j = -cos(pi j / n) runs from -1 to 1
            let th = T::PI() - T::PI() * lit::<T>(j as f64) / nf;
            theta.push(th);
            nodes.push(mid + half * th.cos());
        }
        nodes[0] = a;
        nodes[n] = b;
        Self { a, b, nodes, theta }
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Coefficients `a_k` of the interpolant `sum_k a_k T_k(t)`.
    pub fn coefficients(&self, values: &[T]) -> Vec<T> {
        let n = self.degree();
        assert_eq!(values.len(), n + 1);
        let nf: T = lit(n as f64);
        let two: T = lit(2.0);
        let half: T = lit(0.5);
        (0..=n)
            .map(|k| {
                let kf: T = lit(k as f64);
                let mut acc = T::zero();
                for (j, (&v, &th)) in values.iter().zip(&self.theta).enumerate() {
                    let w = if j == 0 || j == n { half } else { T::one() };
                    acc = acc + w * v * (kf * th).cos();
                }
                let c = two * acc / nf;
                if k == 0 || k == n {
                    c * half
                } else {
                    c
                }
            })
            .collect()
    }

    /// Values at the nodes of the antiderivative vanishing at `a`.
    pub fn cumulative_integral(&self, values: &[T]) -> Vec<T> {
        let n = self.degree();
        let c = self.coefficients(values);
        let coef = |k: usize| if k <= n { c[k] } else { T::zero() };
        let mut big = vec![T::zero(); n + 2];
        big[1] = coef(0) - coef(2) * lit(0.5);
        for (k, slot) in big.iter_mut().enumerate().skip(2) {
            let kf: T = lit(k as f64);
            *slot = (coef(k - 1) - coef(k + 1)) / (kf + kf);
        }
        let mut a0 = T::zero();
        for (k, &v) in big.iter().enumerate().skip(1) {
            if k % 2 == 0 {
                a0 = a0 - v;
            } else {
                a0 = a0 + v;
            }
        }
        big[0] = a0;
        let scale = (self.b - self.a) * lit(0.5);
        self.theta
            .iter()
            .map(|&th| {
                let s: T = big
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| v * (lit::<T>(k as f64) * th).cos())
                    .sum();
                s * scale
            })
            .collect()
    }

    /// Barycentric interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[T], x: T) -> T {
        let n = self.degree();
        let mut num = T::zero();
        let mut den = T::zero();
        for (j, (&xj, &v)) in self.nodes.iter().zip(values).enumerate() {
            let diff = x - xj;
            if diff == T::zero() {
                return v;
            }
            let mut w: T = if j % 2 == 0 { T::one() } else { -T::one() };
            if j == 0 || j == n {
                w = w * lit(0.5);
            }
            let t = w / diff;
            num = num + t * v;
            den = den + t;
        }
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> QuadOptions<f64> {
        QuadOptions::default()
    }

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x: f64| Ok(x * x), 0.0, 3.0, &opts()).unwrap();
        assert!((v - 9.0).abs() < 1e-13);
        let r = integrate(|x: f64| Ok(x * x), 3.0, 0.0, &opts()).unwrap();
        assert!((r + 9.0).abs() < 1e-13);
    }

    #[test]
    fn peaked_integrand() {
        let v = integrate(|x: f64| Ok(1.0 / (1e-4 + x * x)), -1.0, 1.0, &opts()).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((v - exact).abs() / exact < 1e-11);
    }

    #[test]
    fn semi_infinite() {
        let v = integrate_to_infinity(|x: f64| Ok((-x).exp()), 1.0, &opts()).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-13);
        let w = integrate_from_neg_infinity(|x: f64| Ok(x.exp()), 0.0, &opts()).unwrap();
        assert!((w - 1.0).abs() < 1e-13);
    }

    #[test]
    fn failure_reported() {
        let o = QuadOptions { max_subdivisions: 3, ..opts() };
        let e = integrate(|x: f64| Ok(x.abs().sqrt().recip()), -1.0, 1.0, &o);
        assert!(matches!(e, Err(Error::QuadratureFailure(_))));
    }

    #[test]
    fn chebyshev_cumulative_and_interp() {
        let g = ChebGrid::<f64>::new(0.5, 2.0, 32);
        let vals: Vec<f64> = g.nodes.iter().map(|x| x.cos()).collect();
        let cum = g.cumulative_integral(&vals);
        for (x, c) in g.nodes.iter().zip(&cum) {
            assert!((c - (x.sin() - 0.5f64.sin())).abs() < 1e-14);
        }
        assert!((g.interpolate(&vals, 1.234) - 1.234f64.cos()).abs() < 1e-14);
    }
}
