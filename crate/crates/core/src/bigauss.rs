//! Covariance of Gaussian indicator pairs.
//!
//! For a standard bivariate Gaussian pair (X, Y) with correlation r, the
//! quantity of interest is
//!
//!   cov(r, u, v) = P(X > u, Y > v) - P(X > u) P(Y > v).
//!
//! Two independent routes are provided: a single integral over the
//! correlation path (obtained by differentiating the orthant probability in
//! r) and the Hermite product series. They agree on |r| < 1 and serve as
//! cross-checks for each other.

#[allow(unused_imports)]
use num_traits::Float;
use crate::normal;
use crate::quad::{self, Kahan, QuadResult};

/// Result of summing a series numerically.
#[derive(Clone, Copy, Debug)]
pub struct SeriesSum {
    pub value: f64,
    pub terms: usize,
    pub converged: bool,
}

/// Indicator covariance via the correlation-path integral
///
///   cov(r, u, v) = (1/2pi) int_0^{asin r} exp{-(u^2 - 2uv sin t + v^2)
///                                             / (2 cos^2 t)} dt,
///
/// which follows from d/dr P(X > u, Y > v) = phi_2(u, v; r) and the
/// substitution r = sin t. Requires |r| < 1.
pub fn indicator_cov_integral(r: f64, u: f64, v: f64, tol: f64) -> QuadResult {
    assert!(r.abs() < 1.0, "correlation must satisfy |r| < 1");
    if r == 0.0 {
        return QuadResult { value: 0.0, abs_err_est: 0.0, converged: true };
    }
    let upper = r.asin();
    let f = |t: f64| {
        let (s, c) = (t.sin(), t.cos());
        let q = (u * u - 2.0 * u * v * s + v * v) / (2.0 * c * c);
        (-q).exp()
    };
    let mut res = quad::simpson_adaptive(&f, 0.0, upper, 32, tol, 16);
    res.value /= 2.0 * core::f64::consts::PI;
    res.abs_err_est /= 2.0 * core::f64::consts::PI;
    res
}

/// Indicator covariance via the Hermite product series
///
///   cov(r, u, v) = sum_{k >= 1} r^k / k! H_{k-1}(u) phi(u) H_{k-1}(v) phi(v).
///
/// Computed with the scaled recurrence, so term k is
/// (r^k / k) hh_{k-1}(u) hh_{k-1}(v) phi(u) phi(v) with hh_k = H_k / sqrt(k!);
/// the scaled values stay O(1) and nothing overflows. Truncation is decided
/// by the Cramer envelope |hh_k(x)| <= c e^{x^2/4} (c < 1.09), which bounds
/// the discarded tail by a geometric series; per-term smallness is not
/// trusted because hh_{k-1}(u) hh_{k-1}(v) has structural zeros (e.g. three
/// in a row at u = -1, v = 0).
pub fn indicator_cov_series(r: f64, u: f64, v: f64, tol: f64, max_terms: usize) -> SeriesSum {
    assert!(r.abs() < 1.0, "correlation must satisfy |r| < 1");
    const CRAMER: f64 = 1.086_435;
    let pp = normal::pdf(u) * normal::pdf(v);
    let envelope = CRAMER * CRAMER * ((u * u + v * v) / 4.0).exp() * pp;
    let mut hu = crate::hermite::ScaledHermite::new(u);
    let mut hv = crate::hermite::ScaledHermite::new(v);
    let mut rk = 1.0; // r^k, updated at loop head
    let mut acc = Kahan::default();
    for k in 1..=max_terms {
        rk *= r;
        // states currently hold hh_{k-1}
        let term = rk / (k as f64) * hu.current() * hv.current() * pp;
        acc.add(term);
        // sum_{j > k} |r|^j / j <= |r|^{k+1} / ((k+1)(1 - |r|))
        let tail = envelope * rk.abs() * r.abs() / ((k + 1) as f64 * (1.0 - r.abs()));
        if tail <= tol {
            return SeriesSum { value: acc.value(), terms: k, converged: true };
        }
        hu.step();
        hv.step();
    }
    SeriesSum { value: acc.value(), terms: max_terms, converged: false }
}

/// Orthant probability P(X > u, Y > v) by direct two-dimensional quadrature
/// of the bivariate density over [u, 12] x [v, 12] (the mass beyond 12
/// standard deviations is below 1e-32). Tensor Gauss-Legendre on panels of
/// width <= 1 converges far past double precision for this integrand; the
/// routine is deliberately independent of both series and path integral so
/// it can act as an oracle for them.
pub fn orthant_oracle(r: f64, u: f64, v: f64) -> f64 {
    assert!(r.abs() < 1.0, "correlation must satisfy |r| < 1");
    const HI: f64 = 12.0;
    let lo_u = u.max(-HI);
    let lo_v = v.max(-HI);
    if lo_u >= HI || lo_v >= HI {
        return 0.0;
    }
    let det = 1.0 - r * r;
    let norm = 1.0 / (2.0 * core::f64::consts::PI * det.sqrt());
    let (nodes, weights) = quad::gauss_legendre_nodes(24);
    let panels = |lo: f64| -> usize { ((HI - lo).ceil() as usize).max(1) };
    let (pu, pv) = (panels(lo_u), panels(lo_v));
    let (wu, wv) = ((HI - lo_u) / pu as f64, (HI - lo_v) / pv as f64);
    let mut acc = Kahan::default();
    for iu in 0..pu {
        let au = lo_u + wu * iu as f64;
        for (&xu, &cu) in nodes.iter().zip(&weights) {
            let x = au + 0.5 * wu * (xu + 1.0);
            for iv in 0..pv {
                let av = lo_v + wv * iv as f64;
                for (&xv, &cv) in nodes.iter().zip(&weights) {
                    let y = av + 0.5 * wv * (xv + 1.0);
                    let q = (x * x - 2.0 * r * x * y + y * y) / (2.0 * det);
                    acc.add(cu * cv * (-q).exp());
                }
            }
        }
    }
    acc.value() * norm * 0.25 * wu * wv
}

/// Reconstruct the correlation from the covariance surface: by Hoeffding's
/// identity, int int cov(r, u, v) du dv = r. Integrates the path-integral
/// covariance on a trapezoid grid over [-halfwidth, halfwidth]^2; the
/// integrand decays like a Gaussian in each argument, so halfwidth 8 already
/// leaves truncation error far below 1e-6.
pub fn hoeffding_reconstruct(r: f64, halfwidth: f64, step: f64) -> f64 {
    assert!(halfwidth > 0.0 && step > 0.0);
    let n = (2.0 * halfwidth / step).round() as usize;
    let h = 2.0 * halfwidth / n as f64;
    // Exploit cov(r, u, v) = cov(r, v, u): sum the upper triangle twice.
    let mut acc = Kahan::default();
    for i in 0..=n {
        let u = -halfwidth + h * i as f64;
        let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
        for j in i..=n {
            let v = -halfwidth + h * j as f64;
            let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
            let c = indicator_cov_integral(r, u, v, 1e-12).value;
            let sym = if j == i { 1.0 } else { 2.0 };
            acc.add(wi * wj * sym * c);
        }
    }
    acc.value() * h * h
}
