//! Scalar quadrature: globally refined composite Simpson and classical
//! Gaussian rules (Hermite and Legendre) with Newton-iterated nodes.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;

/// Integration scheme for weighted inner products.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    AdaptiveSimpson,
    GaussHermite,
}

/// Quadrature controls shared by the Hermite and memory modules.
///
/// `init_intervals` is the interval count of the first composite Simpson
/// pass (200 intervals = 201 nodes); refinement doubles it until two
/// successive values agree within `tol` or `max_doublings` is exhausted.
#[derive(Clone, Debug)]
pub struct QuadratureSpec {
    pub scheme: Scheme,
    pub halfwidth: f64,
    pub init_intervals: usize,
    pub tol: f64,
    pub max_doublings: u32,
    pub gh_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            scheme: Scheme::AdaptiveSimpson,
            halfwidth: 12.0,
            init_intervals: 200,
            tol: 1e-12,
            max_doublings: 14,
            gh_nodes: 64,
        }
    }
}

/// Value plus convergence evidence from a refinement ladder.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err_est: f64,
    pub converged: bool,
}

impl QuadResult {
    pub fn zero() -> Self {
        QuadResult { value: 0.0, abs_err_est: 0.0, converged: true }
    }

    fn accumulate(&mut self, other: &QuadResult) {
        self.value += other.value;
        self.abs_err_est += other.abs_err_est;
        self.converged &= other.converged;
    }
}

/// Compensated (Kahan) accumulator; the refinement sums hit ~1e6 terms.
#[derive(Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

fn trapezoid(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = Kahan::default();
    acc.add(0.5 * f(a));
    acc.add(0.5 * f(b));
    for i in 1..n {
        acc.add(f(a + i as f64 * h));
    }
    acc.value() * h
}

/// Midpoint refinement: T_{2n} from T_n plus the n new midpoints.
fn trapezoid_refine(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize, t_n: f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = Kahan::default();
    for i in 0..n {
        acc.add(f(a + (i as f64 + 0.5) * h));
    }
    0.5 * t_n + 0.5 * h * acc.value()
}

/// Composite Simpson with global doubling until two successive refinements
/// agree within `tol` (absolute). `converged = false` flags disagreement at
/// the refinement cap; the value returned is still the finest estimate.
pub fn simpson_adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    init_intervals: usize,
    tol: f64,
    max_doublings: u32,
) -> QuadResult {
    if a == b {
        return QuadResult::zero();
    }
    let n0 = init_intervals.max(2).next_multiple_of(2);
    // S_n = (4 T_n - T_{n/2}) / 3.
    let mut n = n0 / 2;
    let mut t_coarse = trapezoid(f, a, b, n);
    let mut t_fine = trapezoid_refine(f, a, b, n, t_coarse);
    n *= 2;
    let mut simpson = (4.0 * t_fine - t_coarse) / 3.0;
    let mut last_diff = f64::INFINITY;
    for _ in 0..max_doublings {
        t_coarse = t_fine;
        t_fine = trapezoid_refine(f, a, b, n, t_coarse);
        n *= 2;
        let next = (4.0 * t_fine - t_coarse) / 3.0;
        last_diff = (next - simpson).abs();
        simpson = next;
        if last_diff <= tol {
            return QuadResult { value: simpson, abs_err_est: last_diff, converged: true };
        }
    }
    QuadResult { value: simpson, abs_err_est: last_diff, converged: false }
}

/// Simpson over [a, b] split at the interior `breaks` (sorted or not), so
/// integrands with known discontinuities converge at full rate on each
/// smooth piece.
pub fn simpson_with_breaks(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    init_intervals: usize,
    tol: f64,
    max_doublings: u32,
) -> QuadResult {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b).collect();
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    cuts.dedup();
    if cuts.is_empty() {
        return simpson_adaptive(f, a, b, init_intervals, tol, max_doublings);
    }
    let pieces = cuts.len() + 1;
    let piece_tol = tol / pieces as f64;
    let mut out = QuadResult::zero();
    let mut lo = a;
    for cut in cuts.iter().copied().chain(core::iter::once(b)) {
        // Nudge the endpoints inward so a one-sided jump exactly at a break
        // cannot contaminate the smooth piece; the skipped slivers are a few
        // ulps wide, far below any tolerance in use.
        let eps = 4.0 * f64::EPSILON * lo.abs().max(cut.abs()).max(1.0);
        let (plo, phi) = (lo + eps, cut - eps);
        if plo < phi {
            let r = simpson_adaptive(f, plo, phi, init_intervals, piece_tol, max_doublings);
            out.accumulate(&r);
        }
        lo = cut;
    }
    out
}

/// Gauss-Hermite nodes and weights for weight e^{-x^2} (physicists'
/// convention, sum of weights = sqrt(pi)). Newton iteration on the
/// orthonormal recurrence; good to ~1 ulp for n up to a few hundred.
pub fn gauss_hermite_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    let m = (n + 1) / 2;
    let pim4 = 0.751_125_544_464_942_9_f64; // pi^{-1/4}
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // Largest roots first came out of the guesses; callers expect ascending.
    x.reverse();
    w.reverse();
    (x, w)
}

/// Gauss-Legendre nodes and weights on [-1, 1] (sum of weights = 2).
pub fn gauss_legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_PI: f64 = 1.772_453_850_905_516_f64;

    #[test]
    fn simpson_polynomial_and_smooth() {
        let r = simpson_adaptive(&|x| x * x, 0.0, 1.0, 8, 1e-14, 10);
        assert!(r.converged);
        assert!((r.value - 1.0 / 3.0).abs() < 1e-14);

        let r = simpson_adaptive(&|x: f64| x.sin(), 0.0, PI, 200, 1e-13, 14);
        assert!(r.converged);
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_gaussian_mass() {
        // Total phi-mass over [-12, 12]; tail beyond is < 1e-32.
        let r = simpson_adaptive(
            &|x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            -12.0,
            12.0,
            200,
            1e-13,
            14,
        );
        assert!(r.converged);
        assert!((r.value - 1.0).abs() < 1e-12, "got {}", r.value);
    }

    #[test]
    fn breakpoint_split_handles_jump() {
        // Hand oracle: -1 over [-1, 0.25] plus +1 over (0.25, 1] is
        // -1.25 + 0.75 = -0.5.
        let f = |x: f64| if x > 0.25 { 1.0 } else { -1.0 };
        let r = simpson_with_breaks(&f, -1.0, 1.0, &[0.25], 50, 1e-12, 12);
        assert!(r.converged);
        assert!((r.value + 0.5).abs() < 1e-12, "got {}", r.value);
    }

    #[test]
    fn gauss_hermite_moments() {
        // Oracles: known Gaussian moments of weight e^{-x^2}:
        // integral of 1 -> sqrt(pi); x^2 -> sqrt(pi)/2; x^4 -> 3 sqrt(pi)/4.
        for n in [13usize, 20, 64, 128] {
            let (x, w) = gauss_hermite_nodes(n);
            let s0: f64 = w.iter().sum();
            let s2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            let s4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
            assert!((s0 - SQRT_PI).abs() < 1e-12 * SQRT_PI, "n={n} s0={s0}");
            assert!((s2 - SQRT_PI / 2.0).abs() < 1e-12, "n={n}");
            assert!((s4 - 0.75 * SQRT_PI).abs() < 1e-11, "n={n}");
        }
    }

    #[test]
    fn gauss_hermite_degree_exactness() {
        // Exact for degree <= 2n-1; x^{38} with n = 20 nodes. Moment oracle:
        // integral x^{2m} e^{-x^2} = (2m-1)!! sqrt(pi) / 2^m, m = 19.
        let (x, w) = gauss_hermite_nodes(20);
        let s38: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        let mut dfact = 1.0_f64; // 37!!
        let mut k = 37.0;
        while k > 1.0 {
            dfact *= k;
            k -= 2.0;
        }
        let oracle = dfact * SQRT_PI / 2.0_f64.powi(19);
        assert!((s38 - oracle).abs() < 1e-12 * oracle, "{s38} vs {oracle}");
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre_nodes(16);
        let s0: f64 = w.iter().sum();
        assert!((s0 - 2.0).abs() < 1e-13);
        // Degree-30 monomial: integral over [-1,1] = 2/31.
        let s30: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s30 - 2.0 / 31.0).abs() < 1e-14, "{s30}");
        let s31: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(31)).sum();
        assert!(s31.abs() < 1e-16);
    }
}
