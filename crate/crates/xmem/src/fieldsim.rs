//! Exact stationary Gaussian simulation and the constructions built on it:
//! subordination X = G(Y) and stochastic volatility X = G(Y) Z.
//!
//! Gaussian samples come from circulant embedding: the covariance row is
//! wrapped onto a circle, its FFT gives the eigenvalues, and complex white
//! noise shaped by their square roots transforms back to a draw with the
//! exact target covariance. No approximation enters as long as the
//! eigenvalues are nonnegative; indefinite embeddings double the circle
//! and fail loud at 16 n rather than truncate.

use std::io::{self, Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use xmem_core::hermite::phi_integral;
use xmem_core::memory::{
    generalized_inverse, CovarianceModel, MemoryError, Transform, TransformKind,
};
use xmem_core::normal;
use xmem_core::quad::QuadratureSpec;

use crate::rng::RngSpec;

/// Eigenvalues below -EIG_CLAMP_REL * max are genuine indefiniteness;
/// anything closer to zero is floating-point noise and gets clamped.
const EIG_CLAMP_REL: f64 = 1e-8;

/// Embedding circle cap, as a multiple of the grid side.
const EMBED_CAP: usize = 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(
        "circulant embedding of {model} is indefinite up to size {size}: \
         min eigenvalue {min_eig:.3e} against max {max_eig:.3e}"
    )]
    NonEmbeddable { model: String, size: usize, min_eig: f64, max_eig: f64 },
    #[error("grid side must be a power of two, got {0}")]
    NotPowerOfTwo(usize),
    #[error("operation needs a Gaussian sample, but this one went through {0}")]
    NotGaussian(String),
    #[error("model has dimension {model_d}, the operation needs {wanted}")]
    DimensionMismatch { model_d: u8, wanted: u8 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("rank detection found no coefficient above tolerance up to k = {k_max}")]
    RankUndetected { k_max: u32 },
    #[error(transparent)]
    Core(#[from] MemoryError),
}

// ---------------------------------------------------------------------------
// Samples and provenance

/// Construction record carried by every sample. Two samples with equal
/// provenance hold identical values.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub model: String,
    /// Transform labels applied after the Gaussian draw, in order.
    pub transforms: Vec<String>,
    pub z: Option<String>,
    pub seed: RngSpec,
    pub z_seed: Option<RngSpec>,
    /// Embedding eigenvalues clamped to zero (floating-point noise).
    pub clamped: usize,
}

/// One realization on the lattice {0..n-1}^d with unit grid spacing.
#[derive(Clone, Debug)]
pub struct FieldSample {
    values: Vec<f64>,
    n: usize,
    d: u8,
    cell_volume: f64,
    pub provenance: Provenance,
}

impl FieldSample {
    fn new(values: Vec<f64>, n: usize, d: u8, provenance: Provenance) -> Self {
        debug_assert_eq!(values.len(), n.pow(d as u32));
        Self { values, n, d, cell_volume: 1.0, provenance }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> u8 {
        self.d
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Untouched by any transform or noise.
    pub fn is_gaussian(&self) -> bool {
        self.provenance.transforms.is_empty() && self.provenance.z.is_none()
    }

    /// Row-major entry (i, j); meaningful for d = 2.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

// ---------------------------------------------------------------------------
// White-noise laws for the volatility construction

#[derive(Clone, Debug, PartialEq)]
pub enum ZFamily {
    Gaussian,
    Pareto { alpha: f64, x_min: f64 },
    /// Pareto magnitude with an independent random sign.
    SymmetricPareto { alpha: f64, x_min: f64 },
    Exponential { lambda: f64 },
    Rademacher,
}

/// Z law together with its survival function in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct ZDistribution {
    family: ZFamily,
}

impl ZDistribution {
    pub fn gaussian() -> Self {
        Self { family: ZFamily::Gaussian }
    }

    pub fn rademacher() -> Self {
        Self { family: ZFamily::Rademacher }
    }

    fn check_pareto(alpha: f64, x_min: Option<f64>) -> Result<(f64, f64), SimError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(SimError::BadParameter("pareto needs alpha > 0".into()));
        }
        // Default scale puts the median of the magnitude at 1.
        let x_min = x_min.unwrap_or_else(|| 2f64.powf(-1.0 / alpha));
        if !(x_min > 0.0) || !x_min.is_finite() {
            return Err(SimError::BadParameter("pareto needs x_min > 0".into()));
        }
        Ok((alpha, x_min))
    }

    pub fn pareto(alpha: f64, x_min: Option<f64>) -> Result<Self, SimError> {
        let (alpha, x_min) = Self::check_pareto(alpha, x_min)?;
        Ok(Self { family: ZFamily::Pareto { alpha, x_min } })
    }

    pub fn symmetric_pareto(alpha: f64, x_min: Option<f64>) -> Result<Self, SimError> {
        let (alpha, x_min) = Self::check_pareto(alpha, x_min)?;
        Ok(Self { family: ZFamily::SymmetricPareto { alpha, x_min } })
    }

    pub fn exponential(lambda: f64) -> Result<Self, SimError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(SimError::BadParameter("exponential needs lambda > 0".into()));
        }
        Ok(Self { family: ZFamily::Exponential { lambda } })
    }

    pub fn family(&self) -> &ZFamily {
        &self.family
    }

    pub fn label(&self) -> String {
        match &self.family {
            ZFamily::Gaussian => "gaussian".into(),
            ZFamily::Pareto { alpha, x_min } => format!("pareto(alpha={alpha}, x_min={x_min})"),
            ZFamily::SymmetricPareto { alpha, x_min } => {
                format!("symmetric_pareto(alpha={alpha}, x_min={x_min})")
            }
            ZFamily::Exponential { lambda } => format!("exponential(lambda={lambda})"),
            ZFamily::Rademacher => "rademacher".into(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(
            self.family,
            ZFamily::Gaussian | ZFamily::SymmetricPareto { .. } | ZFamily::Rademacher
        )
    }

    /// P(Z > u), strict.
    pub fn tail(&self, u: f64) -> f64 {
        match &self.family {
            ZFamily::Gaussian => normal::tail(u),
            ZFamily::Pareto { alpha, x_min } => {
                if u < *x_min {
                    1.0
                } else {
                    (x_min / u).powf(*alpha)
                }
            }
            ZFamily::SymmetricPareto { alpha, x_min } => {
                if u >= *x_min {
                    0.5 * (x_min / u).powf(*alpha)
                } else if u >= -x_min {
                    0.5
                } else {
                    1.0 - 0.5 * (x_min / -u).powf(*alpha)
                }
            }
            ZFamily::Exponential { lambda } => {
                if u <= 0.0 {
                    1.0
                } else {
                    (-lambda * u).exp()
                }
            }
            ZFamily::Rademacher => {
                if u >= 1.0 {
                    0.0
                } else if u >= -1.0 {
                    0.5
                } else {
                    1.0
                }
            }
        }
    }

    /// P(Z < u), strict; differs from 1 - tail(u) only at atoms.
    pub fn prob_below(&self, u: f64) -> f64 {
        match &self.family {
            ZFamily::Rademacher => {
                if u > 1.0 {
                    1.0
                } else if u > -1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            _ => 1.0 - self.tail(u),
        }
    }

    /// Points where the survival function is not smooth (kinks or jumps);
    /// quadrature over compositions splits at their preimages.
    pub fn tail_breaks(&self) -> Vec<f64> {
        match &self.family {
            ZFamily::Gaussian => vec![],
            ZFamily::Pareto { x_min, .. } => vec![*x_min],
            ZFamily::SymmetricPareto { x_min, .. } => vec![-*x_min, *x_min],
            ZFamily::Exponential { .. } => vec![0.0],
            ZFamily::Rademacher => vec![-1.0, 1.0],
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.family {
            ZFamily::Gaussian => rng.sample(StandardNormal),
            ZFamily::Pareto { alpha, x_min } => {
                let u: f64 = rng.gen();
                x_min * (1.0 - u).powf(-1.0 / alpha)
            }
            ZFamily::SymmetricPareto { alpha, x_min } => {
                // Fixed draw order: sign first, then magnitude.
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let u: f64 = rng.gen();
                sign * x_min * (1.0 - u).powf(-1.0 / alpha)
            }
            ZFamily::Exponential { lambda } => {
                let u: f64 = rng.gen();
                -(1.0 - u).ln() / lambda
            }
            ZFamily::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Circulant embedding

/// Shared eigenstructure of the circulant embedding for one (n, model)
/// pair; immutable, so replicates can draw from it concurrently.
pub struct CirculantEmbedding {
    d: u8,
    n: usize,
    m: usize,
    sqrt_eig: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    model_label: String,
    /// Eigenvalues clamped to zero during construction.
    pub clamped: usize,
}

impl CirculantEmbedding {
    pub fn new(n: usize, model: &CovarianceModel) -> Result<Self, SimError> {
        if !n.is_power_of_two() {
            return Err(SimError::NotPowerOfTwo(n));
        }
        let d = model.d;
        let mut planner = FftPlanner::new();
        let mut m = 2 * n;
        loop {
            let fft = planner.plan_fft_forward(m);
            let fold = |j: usize| if 2 * j <= m { j as f64 } else { (m - j) as f64 };
            let mut buf: Vec<Complex<f64>> = match d {
                1 => (0..m).map(|j| Complex::new(model.rho(fold(j)), 0.0)).collect(),
                2 => (0..m * m)
                    .map(|idx| {
                        let r = fold(idx / m).hypot(fold(idx % m));
                        Complex::new(model.rho(r), 0.0)
                    })
                    .collect(),
                _ => return Err(SimError::DimensionMismatch { model_d: d, wanted: 2 }),
            };
            match d {
                1 => {
                    let mut scratch =
                        vec![Complex::default(); fft.get_inplace_scratch_len()];
                    fft.process_with_scratch(&mut buf, &mut scratch);
                }
                _ => fft_2d(&fft, &mut buf, m),
            }

            let mut min_eig = f64::INFINITY;
            let mut max_eig = f64::NEG_INFINITY;
            for c in &buf {
                min_eig = min_eig.min(c.re);
                max_eig = max_eig.max(c.re);
            }
            if min_eig >= -EIG_CLAMP_REL * max_eig {
                let mut clamped = 0usize;
                let sqrt_eig = buf
                    .iter()
                    .map(|c| {
                        if c.re < 0.0 {
                            clamped += 1;
                            0.0
                        } else {
                            c.re.sqrt()
                        }
                    })
                    .collect();
                return Ok(Self {
                    d,
                    n,
                    m,
                    sqrt_eig,
                    fft,
                    model_label: model.label(),
                    clamped,
                });
            }
            if m >= EMBED_CAP * n {
                return Err(SimError::NonEmbeddable {
                    model: model.label(),
                    size: m,
                    min_eig,
                    max_eig,
                });
            }
            m *= 2;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> u8 {
        self.d
    }

    /// Embedding circle size actually used.
    pub fn size(&self) -> usize {
        self.m
    }

    /// One exact draw. The real part of the shaped spectral noise carries
    /// the target covariance after dividing by sqrt of the circle volume.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .sqrt_eig
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(a * s, b * s)
            })
            .collect();
        let m = self.m;
        let norm = (self.sqrt_eig.len() as f64).sqrt();
        match self.d {
            1 => {
                let mut scratch =
                    vec![Complex::default(); self.fft.get_inplace_scratch_len()];
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n].iter().map(|c| c.re / norm).collect()
            }
            _ => {
                fft_2d(&self.fft, &mut buf, m);
                let mut out = Vec::with_capacity(self.n * self.n);
                for i in 0..self.n {
                    for j in 0..self.n {
                        out.push(buf[i * m + j].re / norm);
                    }
                }
                out
            }
        }
    }

    pub fn field(&self, spec: RngSpec) -> FieldSample {
        let mut rng = spec.rng();
        let values = self.draw(&mut rng);
        FieldSample::new(
            values,
            self.n,
            self.d,
            Provenance {
                model: self.model_label.clone(),
                transforms: vec![],
                z: None,
                seed: spec,
                z_seed: None,
                clamped: self.clamped,
            },
        )
    }
}

/// Separable 2-d FFT over a square row-major grid.
fn fft_2d(fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>], m: usize) {
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(m) {
        fft.process_with_scratch(row, &mut scratch);
    }
    transpose_square(buf, m);
    for row in buf.chunks_exact_mut(m) {
        fft.process_with_scratch(row, &mut scratch);
    }
    transpose_square(buf, m);
}

fn transpose_square(buf: &mut [Complex<f64>], m: usize) {
    for i in 0..m {
        for j in 0..i {
            buf.swap(i * m + j, j * m + i);
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation entry points

pub fn simulate_gaussian_1d(
    n: usize,
    model: &CovarianceModel,
    spec: RngSpec,
) -> Result<FieldSample, SimError> {
    if model.d != 1 {
        return Err(SimError::DimensionMismatch { model_d: model.d, wanted: 1 });
    }
    Ok(CirculantEmbedding::new(n, model)?.field(spec))
}

pub fn simulate_gaussian_2d(
    n: usize,
    model: &CovarianceModel,
    spec: RngSpec,
) -> Result<FieldSample, SimError> {
    if model.d != 2 {
        return Err(SimError::DimensionMismatch { model_d: model.d, wanted: 2 });
    }
    Ok(CirculantEmbedding::new(n, model)?.field(spec))
}

/// Unit-variance iid Gaussian field (rho = 0 off the origin), sampled
/// directly without an embedding.
pub fn simulate_white_noise(n: usize, d: u8, spec: RngSpec) -> Result<FieldSample, SimError> {
    if d != 1 && d != 2 {
        return Err(SimError::DimensionMismatch { model_d: d, wanted: 2 });
    }
    if n == 0 {
        return Err(SimError::BadParameter("grid side must be positive".into()));
    }
    let mut rng = spec.rng();
    let len = n.pow(d as u32);
    let values = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(FieldSample::new(
        values,
        n,
        d,
        Provenance {
            model: format!("white_noise(d={d})"),
            transforms: vec![],
            z: None,
            seed: spec,
            z_seed: None,
            clamped: 0,
        },
    ))
}

/// Pointwise X = G(Y). Requires an untransformed Gaussian input.
pub fn subordinate(sample: &FieldSample, g: &Transform) -> Result<FieldSample, SimError> {
    if !sample.is_gaussian() {
        return Err(SimError::NotGaussian(sample.provenance.transforms.join(" then ")));
    }
    let mut out = sample.clone();
    for v in &mut out.values {
        *v = g.eval(*v);
    }
    out.provenance.transforms.push(g.label().to_string());
    Ok(out)
}

/// X_t = G(Y_t) Z_t with Z iid from `z` on its own stream.
pub fn volatility_field(
    sample_y: &FieldSample,
    g: &Transform,
    z: &ZDistribution,
    z_spec: RngSpec,
) -> Result<FieldSample, SimError> {
    if !sample_y.is_gaussian() {
        return Err(SimError::NotGaussian(sample_y.provenance.transforms.join(" then ")));
    }
    let mut rng = z_spec.rng();
    let mut out = sample_y.clone();
    for v in &mut out.values {
        *v = g.eval(*v) * z.sample(&mut rng);
    }
    out.provenance.transforms.push(g.label().to_string());
    out.provenance.z = Some(z.label());
    out.provenance.z_seed = Some(z_spec);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Marginal tails

/// P(X_0 > u) for X = G(Y) (z = None) or X = G(Y) Z.
///
/// Pure subordination reduces to Gaussian tails of the generalized
/// inverse. The volatility case integrates the composed survival function
/// y -> P(Z > u / G(y)) against phi, splitting the quadrature wherever
/// u / G(y) crosses a kink of the Z tail, which keeps the absolute error
/// near quadrature tolerance (well inside 1e-10).
pub fn marginal_tail(g: &Transform, z: Option<&ZDistribution>, u: f64) -> f64 {
    let Some(z) = z else {
        return subordinated_tail(g, u);
    };
    let q = |y: f64| {
        let gy = g.eval(y);
        if gy > 0.0 {
            z.tail(u / gy)
        } else if gy < 0.0 {
            z.prob_below(u / gy)
        } else {
            // G(y) = 0 kills the noise: X = 0 there.
            if u < 0.0 {
                1.0
            } else {
                0.0
            }
        }
    };
    let breaks = composition_breaks(g, z, u);
    phi_integral(&q, &QuadratureSpec::default(), &breaks).value
}

fn subordinated_tail(g: &Transform, u: f64) -> f64 {
    match g.kind() {
        TransformKind::MonotoneIncreasing => match generalized_inverse(g, u) {
            Ok(x) => normal::tail(x),
            // Out of range: which side is decided against G(0).
            Err(_) => out_of_range_tail(g, u),
        },
        TransformKind::MonotoneDecreasing => match generalized_inverse(g, u) {
            Ok(x) => normal::cdf(x),
            Err(_) => out_of_range_tail(g, u),
        },
        TransformKind::EvenComposed => match generalized_inverse(g, u) {
            Ok(s) => 2.0 * normal::tail(s),
            Err(_) => out_of_range_tail(g, u),
        },
    }
}

fn out_of_range_tail(g: &Transform, u: f64) -> f64 {
    if u < g.eval(0.0) {
        1.0
    } else {
        0.0
    }
}

/// Preimages in y of the Z-tail kinks under y -> u / G(y), plus any sign
/// crossing of G itself.
pub(crate) fn composition_breaks(g: &Transform, z: &ZDistribution, u: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let push_level = |level: f64, out: &mut Vec<f64>| {
        if let Ok(x) = generalized_inverse(g, level) {
            out.push(x);
            if matches!(g.kind(), TransformKind::EvenComposed) {
                out.push(-x);
            }
        }
    };
    for kink in z.tail_breaks() {
        if kink != 0.0 {
            push_level(u / kink, &mut out);
        }
    }
    push_level(0.0, &mut out);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// Dumps

const BINARY_MAGIC: &[u8; 4] = b"XMEM";
const BINARY_VERSION: u32 = 1;

/// Little-endian dump: 32-byte header (magic, version, d, n, master seed,
/// reserved), then the values row-major as f64.
pub fn write_binary<W: Write>(sample: &FieldSample, w: &mut W) -> io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&u32::from(sample.d).to_le_bytes())?;
    w.write_all(&(sample.n as u32).to_le_bytes())?;
    w.write_all(&sample.provenance.seed.master_seed.to_le_bytes())?;
    w.write_all(&[0u8; 8])?;
    for v in &sample.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(r: &mut R) -> io::Result<FieldSample> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[0..4] != BINARY_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported version {version}"),
        ));
    }
    let d = u32::from_le_bytes(header[8..12].try_into().unwrap()) as u8;
    let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if d != 1 && d != 2 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad dimension"));
    }
    let len = n.pow(d as u32);
    let mut values = vec![0f64; len];
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    for (v, chunk) in values.iter_mut().zip(bytes.chunks_exact(8)) {
        *v = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(FieldSample::new(
        values,
        n,
        d,
        Provenance {
            model: "binary import".into(),
            // Marked so an import never passes for a fresh Gaussian draw.
            transforms: vec!["binary import".into()],
            z: None,
            seed: RngSpec::new(seed, 0),
            z_seed: None,
            clamped: 0,
        },
    ))
}

/// Plain CSV of the values, intended for small grids.
pub fn write_csv<W: Write>(sample: &FieldSample, w: &mut W) -> io::Result<()> {
    match sample.d {
        1 => {
            writeln!(w, "t,value")?;
            for (t, v) in sample.values.iter().enumerate() {
                writeln!(w, "{t},{v}")?;
            }
        }
        _ => {
            writeln!(w, "i,j,value")?;
            for i in 0..sample.n {
                for j in 0..sample.n {
                    writeln!(w, "{i},{j},{}", sample.at2(i, j))?;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
