//! Probabilists' Hermite polynomials and phi-weighted inner products.
//!
//! H_0 = 1, H_1 = x, H_{n+1} = x H_n - n H_{n-1}; orthogonality
//! <H_j, H_k>_phi = k! delta_jk. The Hermite rank of a centered f is the
//! smallest k with <f, H_k>_phi != 0; it drives both the memory
//! classification series and the limit-theorem dichotomy, so the detector
//! here is deliberately conservative about quadrature convergence.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::normal;
use crate::quad::{self, QuadResult, QuadratureSpec, Scheme};

/// H_n(x) by the three-term recurrence.
pub fn hermite_eval(n: u32, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let mut hm = 1.0; // H_0
            let mut h = x; // H_1
            for j in 1..n {
                let next = x * h - j as f64 * hm;
                hm = h;
                h = next;
            }
            h
        }
    }
}

/// H_n(x)/sqrt(n!) by the normalized recurrence. Stays bounded by
/// ~1.09 e^{x^2/4}, so it is safe for n in the millions where H_n itself
/// overflows around n = 170.
pub fn hermite_eval_scaled(n: u32, x: f64) -> f64 {
    let mut state = ScaledHermite::new(x);
    for _ in 0..n {
        state.step();
    }
    state.current()
}

/// Incremental H_k(x)/sqrt(k!) evaluator; `step` advances k by one.
/// The memory-series loops keep one of these per measure support point.
#[derive(Clone, Copy, Debug)]
pub struct ScaledHermite {
    x: f64,
    k: u32,
    h: f64,  // H_k / sqrt(k!)
    hm: f64, // H_{k-1} / sqrt((k-1)!)
}

impl ScaledHermite {
    pub fn new(x: f64) -> Self {
        ScaledHermite { x, k: 0, h: 1.0, hm: 0.0 }
    }

    pub fn current(&self) -> f64 {
        self.h
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn step(&mut self) {
        let kf = self.k as f64;
        let next = (self.x * self.h - kf.sqrt() * self.hm) / (kf + 1.0).sqrt();
        self.hm = self.h;
        self.h = next;
        self.k += 1;
    }
}

/// Integer coefficient vector of H_n (exact; n <= 33 before i128 overflow,
/// callers here stay far below that).
fn hermite_int_coeffs(n: u32) -> Vec<i128> {
    let mut prev: Vec<i128> = alloc::vec![1]; // H_0
    if n == 0 {
        return prev;
    }
    let mut cur: Vec<i128> = alloc::vec![0, 1]; // H_1
    for j in 1..n {
        let mut next = alloc::vec![0i128; j as usize + 2];
        for (i, &c) in cur.iter().enumerate() {
            next[i + 1] = next[i + 1].checked_add(c).unwrap();
        }
        for (i, &c) in prev.iter().enumerate() {
            next[i] = next[i].checked_sub((j as i128).checked_mul(c).unwrap()).unwrap();
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// <H_j, H_k>_phi computed exactly: the polynomial product is integrated
/// against phi via the Gaussian moments E[Y^m] = (m-1)!! in i128 integer
/// arithmetic, so the result is bit-exact (k! delta_jk, no rounding at
/// all). Panics if j or k exceeds 16 (i128 overflow bound).
pub fn gram(j: u32, k: u32) -> f64 {
    assert!(j <= 16 && k <= 16, "gram supports degrees up to 16");
    let cj = hermite_int_coeffs(j);
    let ck = hermite_int_coeffs(k);
    // Gaussian moments up to degree j + k.
    let deg = (j + k) as usize;
    let mut moments = alloc::vec![0i128; deg + 1];
    moments[0] = 1;
    for m in (2..=deg).step_by(2) {
        moments[m] = moments[m - 2].checked_mul(m as i128 - 1).unwrap();
    }
    let mut acc: i128 = 0;
    for (a, &ca) in cj.iter().enumerate() {
        if ca == 0 {
            continue;
        }
        for (b, &cb) in ck.iter().enumerate() {
            if cb == 0 || (a + b) % 2 == 1 {
                continue;
            }
            let term = ca.checked_mul(cb).unwrap().checked_mul(moments[a + b]).unwrap();
            acc = acc.checked_add(term).unwrap();
        }
    }
    acc as f64
}

/// integral of f(x) phi(x) dx under `spec`, splitting the Simpson domain at
/// `breaks` (known discontinuities of f).
pub fn phi_integral(f: &dyn Fn(f64) -> f64, spec: &QuadratureSpec, breaks: &[f64]) -> QuadResult {
    match spec.scheme {
        Scheme::AdaptiveSimpson => quad::simpson_with_breaks(
            &|x| f(x) * normal::pdf(x),
            -spec.halfwidth,
            spec.halfwidth,
            breaks,
            spec.init_intervals,
            spec.tol,
            spec.max_doublings,
        ),
        Scheme::GaussHermite => {
            let value = gh_phi_integral(f, spec.gh_nodes);
            let check = gh_phi_integral(f, spec.gh_nodes + 16);
            let diff = (value - check).abs();
            QuadResult { value: check, abs_err_est: diff, converged: diff <= spec.tol.max(1e-13) }
        }
    }
}

fn gh_phi_integral(f: &dyn Fn(f64) -> f64, n: usize) -> f64 {
    // integral f phi dx = (1/sqrt(pi)) integral f(sqrt(2) t) e^{-t^2} dt.
    let (x, w) = quad::gauss_hermite_nodes(n);
    let mut acc = quad::Kahan::default();
    for (xi, wi) in x.iter().zip(&w) {
        acc.add(wi * f(core::f64::consts::SQRT_2 * xi));
    }
    acc.value() / PI.sqrt()
}

/// <f, H_k>_phi by quadrature.
pub fn hermite_coeff(f: &dyn Fn(f64) -> f64, k: u32, spec: &QuadratureSpec) -> QuadResult {
    hermite_coeff_with_breaks(f, k, spec, &[])
}

/// Same, splitting the quadrature domain at known discontinuities of f.
pub fn hermite_coeff_with_breaks(
    f: &dyn Fn(f64) -> f64,
    k: u32,
    spec: &QuadratureSpec,
    breaks: &[f64],
) -> QuadResult {
    phi_integral(&|x| f(x) * hermite_eval(k, x), spec, breaks)
}

/// Coefficient table for f with the detected Hermite rank.
#[derive(Clone, Debug)]
pub struct HermiteCoefficients {
    /// coeffs[k] = <f, H_k>_phi for k = 0..=k_max.
    pub coeffs: Vec<f64>,
    /// Smallest k >= 1 whose coefficient clears the detection threshold;
    /// None means none up to k_max.
    pub rank: Option<u32>,
    pub k_max: u32,
    pub scheme: Scheme,
    /// sqrt of the L^2_phi norm estimate of f; None when norm scaling was
    /// disabled (infinite-variance fallback, absolute-tolerance decisions).
    pub norm_estimate: Option<f64>,
    /// False if any coefficient quadrature failed to converge.
    pub all_converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HermiteError {
    /// <f, H_0>_phi beyond tolerance: f is not centered.
    NotCentered { c0: f64, threshold: f64 },
}

impl core::fmt::Display for HermiteError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            HermiteError::NotCentered { c0, threshold } => {
                write!(f, "rank detection needs centered input: <f, H_0> = {c0} exceeds {threshold}")
            }
        }
    }
}

impl core::error::Error for HermiteError {}

/// Norm estimates beyond this are treated as "effectively infinite
/// variance" and rank decisions fall back to absolute tolerances.
const NORM_SQ_CEILING: f64 = 1e12;

/// Detect the Hermite rank of a centered f: the smallest k in 1..=k_max
/// with |<f, H_k>_phi| above tol (relative to the L^2_phi norm estimate,
/// or absolute when that estimate is unavailable or divergent).
pub fn hermite_rank(
    f: &dyn Fn(f64) -> f64,
    k_max: u32,
    tol: f64,
    spec: &QuadratureSpec,
    breaks: &[f64],
) -> Result<HermiteCoefficients, HermiteError> {
    let norm_sq = phi_integral(&|x| f(x) * f(x), spec, breaks);
    let norm_estimate = if norm_sq.converged && norm_sq.value <= NORM_SQ_CEILING {
        Some(norm_sq.value.max(0.0).sqrt())
    } else {
        None
    };
    let threshold = match norm_estimate {
        Some(n) => tol * n.max(1.0),
        None => tol,
    };

    // Norm-quadrature nonconvergence is expected in the fallback case and
    // does not count against the coefficient convergence flag.
    let mut coeffs = Vec::with_capacity(k_max as usize + 1);
    let mut all_converged = true;
    let c0 = phi_integral(f, spec, breaks);
    all_converged &= c0.converged;
    if c0.value.abs() > threshold {
        return Err(HermiteError::NotCentered { c0: c0.value, threshold });
    }
    coeffs.push(c0.value);

    let mut rank = None;
    for k in 1..=k_max {
        let ck = hermite_coeff_with_breaks(f, k, spec, breaks);
        all_converged &= ck.converged;
        coeffs.push(ck.value);
        if rank.is_none() && ck.value.abs() > threshold {
            rank = Some(k);
        }
    }
    Ok(HermiteCoefficients {
        coeffs,
        rank,
        k_max,
        scheme: spec.scheme,
        norm_estimate,
        all_converged,
    })
}

/// [(2k-1)!!]^2 / (2k)! evaluated in log space; equals C(2k,k)/4^k and
/// decays like 1/sqrt(pi k). Safe for k up to 1e6 and beyond.
pub fn half_factorial_ratio(k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let kf = k as f64;
    let log = libm::lgamma(2.0 * kf + 1.0)
        - 2.0 * kf * core::f64::consts::LN_2
        - 2.0 * libm::lgamma(kf + 1.0);
    log.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn explicit_low_degrees() {
        // H_2 = x^2 - 1, H_3 = x^3 - 3x, H_4 = x^4 - 6x^2 + 3.
        for &x in &[-3.7, -1.0, -0.2, 0.0, 0.5, 1.0, 2.9] {
            assert_eq!(hermite_eval(0, x), 1.0);
            assert_eq!(hermite_eval(1, x), x);
            assert!((hermite_eval(2, x) - (x * x - 1.0)).abs() < 1e-14);
            assert!((hermite_eval(3, x) - (x * x * x - 3.0 * x)).abs() < 1e-13);
            assert!((hermite_eval(4, x) - (x.powi(4) - 6.0 * x * x + 3.0)).abs() < 1e-12);
        }
        assert_eq!(hermite_eval(2, 0.0), -1.0);
        assert_eq!(hermite_eval(3, 1.0), -2.0);
    }

    #[test]
    fn parity_is_exact() {
        // The recurrence mirrors sign structure exactly in floating point.
        for n in 0..=20u32 {
            for &x in &[0.3, 1.7, 4.2, 7.9] {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(hermite_eval(n, -x), sign * hermite_eval(n, x), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn scaled_matches_plain() {
        for n in [0u32, 1, 5, 12, 40] {
            for &x in &[-2.0, 0.0, 1.3] {
                let fact: f64 = (1..=n as u64).map(|j| j as f64).product();
                let expect = hermite_eval(n, x) / fact.sqrt();
                let got = hermite_eval_scaled(n, x);
                assert!((got - expect).abs() < 1e-12 * (1.0 + expect.abs()), "n={n} x={x}");
            }
        }
        // Large degree stays finite and Cramer-bounded.
        let v = hermite_eval_scaled(1_000_000, 1.3);
        assert!(v.is_finite());
        assert!(v.abs() <= 1.09 * (1.3f64 * 1.3 / 4.0).exp());
    }

    #[test]
    fn gram_is_exactly_orthogonal() {
        for j in 0..=16u32 {
            for k in 0..=16u32 {
                let expect = if j == k {
                    (1..=k as u64).map(|v| v as f64).product::<f64>()
                } else {
                    0.0
                };
                // Integer-exact route: the defect is literally zero.
                assert_eq!(gram(j, k), expect, "j={j} k={k}");
            }
        }
    }

    #[test]
    fn quadrature_orthogonality_small_degrees() {
        // The generic f64 quadrature path holds 1e-8 absolute up to k = 8.
        let spec = default_spec();
        for j in 0..=8u32 {
            for k in 0..=8u32 {
                let r = hermite_coeff(&|x| hermite_eval(j, x), k, &spec);
                assert!(r.converged, "j={j} k={k}");
                let defect = (r.value - gram(j, k)).abs();
                assert!(defect < 1e-8, "j={j} k={k} defect={defect:.3e}");
            }
        }
    }

    #[test]
    fn quadrature_matches_gram_relatively_to_degree_12() {
        let spec = default_spec();
        for j in (0..=12u32).step_by(3) {
            for k in (0..=12u32).step_by(2) {
                let r = hermite_coeff(&|x| hermite_eval(j, x), k, &spec);
                let scale = gram(k, k).max(1.0);
                assert!(
                    (r.value - gram(j, k)).abs() <= 1e-12 * scale,
                    "j={j} k={k} got {} want {}",
                    r.value,
                    gram(j, k)
                );
            }
        }
    }

    #[test]
    fn indicator_coefficient_oracle() {
        // Oracle (independent): <1_{x>0} - 1/2, H_1>_phi = int_0^infty x phi
        // = phi(0) = 1/sqrt(2 pi). Frozen value below.
        let oracle = normal::pdf(0.0);
        assert!((oracle - 0.398_942_280_401_432_7).abs() < 1e-16);
        let f = |x: f64| if x > 0.0 { 0.5 } else { -0.5 };
        let spec = default_spec();
        let r = hermite_coeff_with_breaks(&f, 1, &spec, &[0.0]);
        assert!(r.converged);
        assert!((r.value - oracle).abs() < 1e-10, "got {}", r.value);
    }

    #[test]
    fn smooth_coefficient_cross_scheme() {
        // <x^2, H_2>_phi = E[Y^4] - E[Y^2] = 2, on both schemes.
        let f = |x: f64| x * x;
        let simpson = hermite_coeff(&f, 2, &default_spec());
        let gh = hermite_coeff(
            &f,
            2,
            &QuadratureSpec { scheme: Scheme::GaussHermite, ..default_spec() },
        );
        assert!((simpson.value - 2.0).abs() < 1e-10);
        assert!((gh.value - 2.0).abs() < 1e-12);
        assert!((simpson.value - gh.value).abs() < 1e-10);
    }

    #[test]
    fn rank_detection_basics() {
        let spec = default_spec();
        let r = hermite_rank(&|x| 2.5 * x, 6, 1e-7, &spec, &[]).unwrap();
        assert_eq!(r.rank, Some(1));
        let r = hermite_rank(&|x| x * x - 1.0, 6, 1e-7, &spec, &[]).unwrap();
        assert_eq!(r.rank, Some(2));
        let r = hermite_rank(&|x| hermite_eval(3, x), 6, 1e-7, &spec, &[]).unwrap();
        assert_eq!(r.rank, Some(3));
        assert!(r.coeffs[1].abs() < 1e-9 && r.coeffs[2].abs() < 1e-9);
        // Zero function: no rank up to k_max.
        let r = hermite_rank(&|_| 0.0, 8, 1e-7, &spec, &[]).unwrap();
        assert_eq!(r.rank, None);
        assert_eq!(r.k_max, 8);
    }

    #[test]
    fn rank_rejects_uncentered() {
        let spec = default_spec();
        let err = hermite_rank(&|x| x * x, 4, 1e-7, &spec, &[]).unwrap_err();
        match err {
            HermiteError::NotCentered { c0, .. } => assert!((c0 - 1.0).abs() < 1e-10),
        }
    }

    #[test]
    fn rank_scale_invariance() {
        let spec = default_spec();
        for &c in &[1e-3, 0.5, 1.0, 40.0, 1e3] {
            let r = hermite_rank(&|x| c * (x * x - 1.0), 5, 1e-7, &spec, &[]).unwrap();
            assert_eq!(r.rank, Some(2), "scale {c}");
        }
    }

    #[test]
    fn infinite_variance_fallback() {
        // f = exp(s x^2) - mean with s = 0.4: the phi-variance integrand
        // grows like e^{0.3 x^2}, so the norm estimate blows past the
        // ceiling and decisions switch to absolute tolerance. Coefficient
        // oracle: E[e^{sY^2} H_2(Y)] = 2s (1-2s)^{-3/2}.
        let s = 0.4;
        let mean = (1.0 - 2.0 * s).powf(-0.5);
        let f = move |x: f64| (s * x * x).exp() - mean;
        // The integrand decays only like e^{-0.1 x^2}; widen the window so
        // truncation stays below the coefficient tolerance.
        let spec = QuadratureSpec { halfwidth: 16.0, ..default_spec() };
        let r = hermite_rank(&f, 4, 1e-7, &spec, &[]).unwrap();
        assert!(r.norm_estimate.is_none(), "expected absolute-tolerance fallback");
        assert_eq!(r.rank, Some(2));
        let oracle = 2.0 * s * (1.0 - 2.0 * s).powf(-1.5);
        assert!((r.coeffs[2] - oracle).abs() < 1e-6 * oracle, "got {}", r.coeffs[2]);
    }

    #[test]
    fn half_factorial_ratio_values() {
        // k = 2: (3!!)^2/4! = 9/24 = 0.375 by hand.
        assert!((half_factorial_ratio(0) - 1.0).abs() < 1e-15);
        assert!((half_factorial_ratio(1) - 0.5).abs() < 1e-15);
        assert!((half_factorial_ratio(2) - 0.375).abs() < 1e-14);
        // Stirling limit: ratio * sqrt(pi k) increases to 1.
        let mut prev = 0.0;
        for k in 1..=100u64 {
            let v = half_factorial_ratio(k) * (PI * k as f64).sqrt();
            assert!(v > prev, "k={k}");
            assert!(v <= 1.0, "k={k} v={v}");
            prev = v;
        }
        let v100 = half_factorial_ratio(100) * (PI * 100.0).sqrt();
        assert!(v100 > 0.997 && v100 < 1.0, "{v100}");
        // No overflow far out.
        let big = half_factorial_ratio(1_000_000);
        assert!(big.is_finite() && big > 0.0);
        assert!((big * (PI * 1e6).sqrt() - 1.0).abs() < 1e-3);
    }
}
