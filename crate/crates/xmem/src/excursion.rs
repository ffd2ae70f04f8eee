//! Excursion-set volumes, their normalized fluctuation statistics, Monte
//! Carlo ensembles over growing windows, and the scaling-exponent
//! estimates that separate the central-limit regime (variance of the raw
//! volume growing like n^d) from the long-memory regime (n^{2d - q eta},
//! q the Hermite rank of the conditional level indicator).

use rayon::prelude::*;

use xmem_core::hermite::{hermite_rank, phi_integral};
use xmem_core::memory::{generalized_inverse, CovarianceModel, Transform, TransformKind};
use xmem_core::normal;
use xmem_core::quad::QuadratureSpec;

use crate::fieldsim::{
    composition_breaks, marginal_tail, simulate_white_noise, subordinate, volatility_field,
    CirculantEmbedding, FieldSample, SimError, ZDistribution,
};
use crate::rng::{RngSpec, StreamRole};

// ---------------------------------------------------------------------------
// Volumes

/// Lebesgue volume of {t : X_t > u} on the sample's grid: cell volume
/// times the strict exceedance count.
pub fn excursion_volume(sample: &FieldSample, u: f64) -> f64 {
    let count = sample.values().iter().filter(|&&v| v > u).count();
    sample.cell_volume() * count as f64
}

/// (raw volume - n^d * tail * cell volume) / n^{d/2}.
pub fn normalized_stat(sample: &FieldSample, u: f64, tail: f64) -> f64 {
    let nd = sample.len() as f64;
    (excursion_volume(sample, u) - nd * sample.cell_volume() * tail) / nd.sqrt()
}

/// Volume plus its normalization in one record.
#[derive(Clone, Copy, Debug)]
pub struct ExcursionStat {
    pub level: f64,
    pub raw_volume: f64,
    pub centered_normalized: f64,
    pub window_n: usize,
    pub d: u8,
}

pub fn excursion_stat(sample: &FieldSample, u: f64, tail: f64) -> ExcursionStat {
    ExcursionStat {
        level: u,
        raw_volume: excursion_volume(sample, u),
        centered_normalized: normalized_stat(sample, u, tail),
        window_n: sample.n(),
        d: sample.d(),
    }
}

// ---------------------------------------------------------------------------
// Ensembles

/// One Monte Carlo experiment: a field construction evaluated at several
/// levels over several window sizes.
#[derive(Clone)]
pub struct EnsembleConfig<'a> {
    pub d: u8,
    /// None simulates iid unit Gaussians directly (white noise).
    pub model: Option<&'a CovarianceModel>,
    pub transform: Option<&'a Transform>,
    pub z: Option<&'a ZDistribution>,
    pub levels: &'a [f64],
    pub n_values: &'a [usize],
    pub replicates: usize,
    pub master_seed: u64,
}

/// Ensemble moments of the normalized statistic at one (level, n) cell.
/// `variance` is the unbiased sample variance; skewness and kurtosis
/// (excess) use population central moments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsemblePoint {
    pub level: f64,
    pub n: usize,
    pub replicates: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn ensemble_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let e = x - mean;
        c2 += e * e;
        c3 += e * e * e;
        c4 += e * e * e * e;
    }
    let variance = c2 / (n - 1.0);
    let m2 = c2 / n;
    if m2 <= 0.0 {
        return (mean, variance, 0.0, 0.0);
    }
    let skewness = (c3 / n) / m2.powf(1.5);
    let kurtosis = (c4 / n) / (m2 * m2) - 3.0;
    (mean, variance, skewness, kurtosis)
}

/// Run the ensemble. Replicates are drawn in parallel, each on its own
/// RNG stream keyed by (window index, replicate); the moment pass walks
/// the collected per-replicate values in index order, so the result is
/// identical for any thread count. Points come back level-major in the
/// order of `levels` and `n_values`.
pub fn mc_ensemble(cfg: &EnsembleConfig) -> Result<Vec<EnsemblePoint>, SimError> {
    if cfg.d != 1 && cfg.d != 2 {
        return Err(SimError::BadParameter("dimension must be 1 or 2".into()));
    }
    if let Some(m) = cfg.model {
        if m.d != cfg.d {
            return Err(SimError::DimensionMismatch { model_d: m.d, wanted: cfg.d });
        }
    }
    if cfg.replicates < 2 {
        return Err(SimError::BadParameter("need at least 2 replicates".into()));
    }
    if cfg.levels.is_empty() || cfg.n_values.is_empty() {
        return Err(SimError::BadParameter("levels and n_values must be nonempty".into()));
    }

    // Marginal exceedance once per level; shared by every window size.
    let identity = Transform::identity();
    let tails: Vec<f64> = cfg
        .levels
        .iter()
        .map(|&u| match (cfg.transform, cfg.z) {
            (None, None) => normal::tail(u),
            (Some(g), z) => marginal_tail(g, z, u),
            (None, Some(z)) => marginal_tail(&identity, Some(z), u),
        })
        .collect();

    let mut per_level: Vec<Vec<EnsemblePoint>> = vec![Vec::new(); cfg.levels.len()];
    for (ni, &n) in cfg.n_values.iter().enumerate() {
        let emb = match cfg.model {
            Some(m) => Some(CirculantEmbedding::new(n, m)?),
            None => None,
        };
        let stats: Vec<Vec<f64>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>, SimError> {
                let y_spec = RngSpec::replicate(cfg.master_seed, ni, r, StreamRole::Gaussian);
                let y = match &emb {
                    Some(e) => e.field(y_spec),
                    None => simulate_white_noise(n, cfg.d, y_spec)?,
                };
                let x = match (cfg.transform, cfg.z) {
                    (None, None) => y,
                    (Some(g), None) => subordinate(&y, g)?,
                    (g, Some(z)) => {
                        let z_spec =
                            RngSpec::replicate(cfg.master_seed, ni, r, StreamRole::Noise);
                        volatility_field(&y, g.unwrap_or(&identity), z, z_spec)?
                    }
                };
                Ok(cfg
                    .levels
                    .iter()
                    .zip(&tails)
                    .map(|(&u, &tail)| normalized_stat(&x, u, tail))
                    .collect())
            })
            .collect::<Result<_, _>>()?;
        for (li, &u) in cfg.levels.iter().enumerate() {
            let vals: Vec<f64> = stats.iter().map(|row| row[li]).collect();
            let (mean, variance, skewness, kurtosis) = ensemble_moments(&vals);
            per_level[li].push(EnsemblePoint {
                level: u,
                n,
                replicates: cfg.replicates,
                mean,
                variance,
                skewness,
                kurtosis,
            });
        }
    }
    Ok(per_level.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// Scaling exponents

/// Log-log slope of ensemble variances against window size.
#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub n_values: Vec<usize>,
    /// Variances of the raw (unnormalized) statistic per window size.
    pub variances: Vec<f64>,
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub replicates: usize,
}

/// Ordinary least squares of log2(variance) on log2(n). Needs at least
/// three strictly increasing window sizes spanning a factor of 8 and
/// positive variances; the residual standard error is floored at 1e-12 so
/// an exact power law still reports a positive uncertainty.
pub fn scaling_exponent(
    n_values: &[usize],
    variances: &[f64],
    replicates: usize,
) -> Result<ScalingReport, SimError> {
    if n_values.len() != variances.len() {
        return Err(SimError::BadParameter("window and variance counts differ".into()));
    }
    if n_values.len() < 3 {
        return Err(SimError::BadParameter("need at least 3 window sizes".into()));
    }
    if n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::BadParameter("window sizes must be strictly increasing".into()));
    }
    if (n_values[n_values.len() - 1] as f64) < 8.0 * n_values[0] as f64 {
        return Err(SimError::BadParameter("window sizes must span a factor of 8".into()));
    }
    if variances.iter().any(|&v| !(v > 0.0)) {
        return Err(SimError::BadParameter("variances must be positive".into()));
    }

    let k = n_values.len() as f64;
    let xs: Vec<f64> = n_values.iter().map(|&n| (n as f64).log2()).collect();
    let ys: Vec<f64> = variances.iter().map(|&v| v.log2()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let e = y - (intercept + slope * x);
        rss += e * e;
    }
    let stderr = (rss / (k - 2.0) / sxx).sqrt().max(1e-12);
    Ok(ScalingReport {
        n_values: n_values.to_vec(),
        variances: variances.to_vec(),
        exponent: slope,
        exponent_stderr: stderr,
        replicates,
    })
}

/// Scaling report for one level of an ensemble: converts the normalized
/// variances back to raw-volume variances (times n^d) and fits the slope.
pub fn level_scaling(
    points: &[EnsemblePoint],
    level: f64,
    d: u8,
) -> Result<ScalingReport, SimError> {
    let sel: Vec<&EnsemblePoint> = points.iter().filter(|p| p.level == level).collect();
    if sel.is_empty() {
        return Err(SimError::BadParameter(format!("no ensemble points at level {level}")));
    }
    let n_values: Vec<usize> = sel.iter().map(|p| p.n).collect();
    let raw: Vec<f64> =
        sel.iter().map(|p| p.variance * n_values_pow(p.n, d)).collect();
    scaling_exponent(&n_values, &raw, sel[0].replicates)
}

fn n_values_pow(n: usize, d: u8) -> f64 {
    (n as f64).powi(d as i32)
}

// ---------------------------------------------------------------------------
// Predicted exponents from the Hermite rank of the level indicator

/// Rank and limit-theorem prediction for the centered conditional level
/// indicator xi(y) = P(G(y) Z > u) - P(X > u) (indicator of G(y) > u in
/// the pure subordination case).
#[derive(Clone, Debug)]
pub struct CltTheory {
    /// Hermite rank of xi; None when xi vanishes identically.
    pub q: Option<u32>,
    /// E[chi(Y_0)] in the xi = 0 case, chi the conditional indicator
    /// variance; the CLT variance per unit window volume.
    pub sigma2: Option<f64>,
    /// max(d, 2d - q eta); d when xi = 0 or correlations are summable.
    pub predicted_exponent: f64,
    /// <xi, H_k>_phi for k = 0..=12.
    pub coefficients: Vec<f64>,
}

pub fn predicted_exponent(d: u8, q: Option<u32>, decay: Option<f64>) -> f64 {
    let d = f64::from(d);
    match (q, decay) {
        (Some(q), Some(eta)) => (2.0 * d - f64::from(q) * eta).max(d),
        _ => d,
    }
}

const RANK_KMAX: u32 = 12;
const RANK_TOL: f64 = 1e-6;
/// Coefficients all under this absolute size count as xi = 0.
const XI_ZERO_TOL: f64 = 1e-8;

/// Tabulate xi, detect its Hermite rank, and predict the variance-scaling
/// exponent in dimension `d` for correlation tail exponent `decay`
/// (None when correlations are summable or the field is white noise).
pub fn xi_and_rank(
    g: &Transform,
    z: Option<&ZDistribution>,
    u: f64,
    d: u8,
    decay: Option<f64>,
) -> Result<CltTheory, SimError> {
    let tail = marginal_tail(g, z, u);
    let (xi, breaks): (Box<dyn Fn(f64) -> f64>, Vec<f64>) = match z {
        None => {
            let gc = g.clone();
            let breaks = indicator_breaks(g, u);
            (
                Box::new(move |y: f64| if gc.eval(y) > u { 1.0 - tail } else { -tail }),
                breaks,
            )
        }
        Some(z) => {
            let gc = g.clone();
            let zc = z.clone();
            let breaks = composition_breaks(g, z, u);
            (
                Box::new(move |y: f64| {
                    let gy = gc.eval(y);
                    let q = if gy > 0.0 {
                        zc.tail(u / gy)
                    } else if gy < 0.0 {
                        zc.prob_below(u / gy)
                    } else if u < 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    q - tail
                }),
                breaks,
            )
        }
    };

    let spec = QuadratureSpec::default();
    let table = hermite_rank(&*xi, RANK_KMAX, RANK_TOL, &spec, &breaks)
        .map_err(|e| SimError::BadParameter(format!("rank detection: {e}")))?;

    match table.rank {
        Some(q) => Ok(CltTheory {
            q: Some(q),
            sigma2: None,
            predicted_exponent: predicted_exponent(d, Some(q), decay),
            coefficients: table.coeffs,
        }),
        None => {
            let sup = table.coeffs.iter().skip(1).fold(0.0f64, |a, &c| a.max(c.abs()));
            if sup < XI_ZERO_TOL {
                // xi vanishes: CLT regime with sigma2 = E[q(y)(1 - q(y))].
                let chi = |y: f64| {
                    let p = xi(y) + tail;
                    p * (1.0 - p)
                };
                let sigma2 = phi_integral(&chi, &spec, &breaks).value;
                Ok(CltTheory {
                    q: None,
                    sigma2: Some(sigma2),
                    predicted_exponent: f64::from(d),
                    coefficients: table.coeffs,
                })
            } else {
                Err(SimError::RankUndetected { k_max: RANK_KMAX })
            }
        }
    }
}

/// Jump abscissas of y -> 1{G(y) > u}.
fn indicator_breaks(g: &Transform, u: f64) -> Vec<f64> {
    match generalized_inverse(g, u) {
        Ok(x) => match g.kind() {
            TransformKind::EvenComposed => vec![-x, x],
            _ => vec![x],
        },
        Err(_) => vec![],
    }
}

// ---------------------------------------------------------------------------
// Heavy-tailed partial sums

/// Partial-sum dispersion scaling for X = exp(Y^2 / (2 alpha)), the
/// infinite-variance family whose sums are attracted either to an
/// alpha-stable law (theta = 1/alpha) or a Rosenblatt-type law
/// (theta = 1 - eta), whichever normalization is larger.
#[derive(Clone)]
pub struct PartialSumConfig<'a> {
    pub alpha: f64,
    pub model: &'a CovarianceModel,
    pub n_values: &'a [usize],
    pub replicates: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug)]
pub struct PartialSumReport {
    pub n_values: Vec<usize>,
    /// Inter-quartile range of the centered sums S_n over replicates.
    pub dispersion: Vec<f64>,
    pub theta_hat: f64,
    pub theta_stderr: f64,
    /// max(1/alpha, 1 - eta).
    pub predicted_theta: f64,
    /// E[X] by quadrature, subtracted pointwise from the sums.
    pub mean_x: f64,
    pub replicates: usize,
}

/// Dispersion is measured by the inter-quartile range, not the variance,
/// because Var X = infinity throughout alpha in (1, 2); quantile spread
/// still identifies the normalization exponent.
pub fn partial_sum_scaling(cfg: &PartialSumConfig) -> Result<PartialSumReport, SimError> {
    if !(cfg.alpha > 1.0 && cfg.alpha < 2.0) {
        return Err(SimError::BadParameter(format!(
            "partial-sum scaling needs alpha in (1, 2), got {}",
            cfg.alpha
        )));
    }
    if cfg.model.d != 1 {
        return Err(SimError::DimensionMismatch { model_d: cfg.model.d, wanted: 1 });
    }
    if cfg.n_values.len() < 3 || cfg.n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::BadParameter(
            "need at least 3 strictly increasing window sizes".into(),
        ));
    }
    if cfg.replicates < 8 {
        return Err(SimError::BadParameter("quartiles need at least 8 replicates".into()));
    }

    let g = Transform::exp_sq(cfg.alpha)?;
    // The integrand decays like exp(-y^2 (1 - 1/alpha) / 2): widen the
    // quadrature window so the truncation stays below tolerance.
    let wide = QuadratureSpec { halfwidth: 16.0, ..QuadratureSpec::default() };
    let mean_x = phi_integral(&|y| g.eval(y), &wide, &[]).value;

    let n_max = *cfg.n_values.last().unwrap();
    let emb = CirculantEmbedding::new(n_max, cfg.model)?;

    // One trajectory per replicate; S_n read off at each requested n.
    let sums: Vec<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let y = emb.field(RngSpec::replicate(cfg.master_seed, 0, r, StreamRole::Gaussian));
            let mut out = Vec::with_capacity(cfg.n_values.len());
            let mut acc = 0.0;
            let mut next = 0;
            for (t, &yv) in y.values().iter().enumerate() {
                acc += g.eval(yv) - mean_x;
                if t + 1 == cfg.n_values[next] {
                    out.push(acc);
                    next += 1;
                    if next == cfg.n_values.len() {
                        break;
                    }
                }
            }
            out
        })
        .collect();

    let mut dispersion = Vec::with_capacity(cfg.n_values.len());
    for ni in 0..cfg.n_values.len() {
        let mut vals: Vec<f64> = sums.iter().map(|row| row[ni]).collect();
        vals.sort_by(f64::total_cmp);
        dispersion.push(quantile_sorted(&vals, 0.75) - quantile_sorted(&vals, 0.25));
    }

    let fit = scaling_exponent(cfg.n_values, &dispersion, cfg.replicates)?;
    let predicted_theta = match cfg.model.decay_exponent() {
        Some(eta) => (1.0 / cfg.alpha).max(1.0 - eta),
        None => 1.0 / cfg.alpha,
    };
    Ok(PartialSumReport {
        n_values: cfg.n_values.to_vec(),
        dispersion,
        theta_hat: fit.exponent,
        theta_stderr: fit.exponent_stderr,
        predicted_theta,
        mean_x,
        replicates: cfg.replicates,
    })
}

/// Type-7 quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

// ---------------------------------------------------------------------------
