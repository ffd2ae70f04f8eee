//! Experiment configuration: a flat key = value text format with dotted
//! section names, one assignment per line, '#' comments. Parsing is strict:
//! duplicate keys, unknown keys, and type errors are all rejected with the
//! offending line number.

use std::collections::BTreeMap;
use std::fmt;

use xmem_core::memory::{CovarianceModel, FiniteMeasure, IndexSet, Transform};

use crate::fieldsim::ZDistribution;

pub const DEFAULT_KMAX: u32 = 1_000_000;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_DENSITY_POINTS: usize = 201;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Classify,
    VolatilityClassify,
    Rank,
    Clt,
    PartialSum,
    CovCheck,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::Classify,
        CommandKind::VolatilityClassify,
        CommandKind::Rank,
        CommandKind::Clt,
        CommandKind::PartialSum,
        CommandKind::CovCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Classify => "classify",
            CommandKind::VolatilityClassify => "volatility-classify",
            CommandKind::Rank => "rank",
            CommandKind::Clt => "clt",
            CommandKind::PartialSum => "partial-sum",
            CommandKind::CovCheck => "cov-check",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }

    /// Commands that draw random numbers and therefore need run.seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, CommandKind::Clt | CommandKind::PartialSum)
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Section specs. Each spec stores the parsed parameters verbatim and builds
// the core object on demand, so a config survives a text round trip
// field-for-field.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexChoice {
    Lattice,
    Continuum,
}

impl IndexChoice {
    fn to_core(self) -> IndexSet {
        match self {
            IndexChoice::Lattice => IndexSet::Lattice,
            IndexChoice::Continuum => IndexSet::Continuum,
        }
    }

    fn name(self) -> &'static str {
        match self {
            IndexChoice::Lattice => "lattice",
            IndexChoice::Continuum => "continuum",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelFamily {
    Cauchy { eta: f64 },
    ExpDecay { lambda: f64 },
    UserGrid { ts: Vec<f64>, rhos: Vec<f64> },
    WhiteNoise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub d: u8,
    pub index: IndexChoice,
}

impl ModelSpec {
    /// None means white noise (no correlation model to embed).
    pub fn build(&self) -> Result<Option<CovarianceModel>, ConfigError> {
        let model = match &self.family {
            ModelFamily::WhiteNoise => return Ok(None),
            ModelFamily::Cauchy { eta } => {
                CovarianceModel::cauchy(*eta, self.d, self.index.to_core())
            }
            ModelFamily::ExpDecay { lambda } => {
                CovarianceModel::exp_decay(*lambda, self.d, self.index.to_core())
            }
            ModelFamily::UserGrid { ts, rhos } => CovarianceModel::user_grid(ts, rhos, self.d),
        };
        model.map(Some).map_err(|e| ConfigError(format!("model: {e}")))
    }

    pub fn is_white_noise(&self) -> bool {
        matches!(self.family, ModelFamily::WhiteNoise)
    }

    /// Correlation tail exponent used in exponent predictions; None when
    /// correlations are summable (exp_decay, compact grids, white noise).
    pub fn decay_exponent(&self) -> Result<Option<f64>, ConfigError> {
        Ok(self.build()?.and_then(|m| m.decay_exponent()))
    }

    pub fn label(&self) -> String {
        match self.build() {
            Ok(Some(m)) => m.label(),
            _ => format!("white_noise(d={})", self.d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransformSpec {
    Identity,
    ExpSq { alpha: f64 },
    SignedExp { beta: f64 },
    AbsExpSq { alpha: f64 },
}

impl TransformSpec {
    pub fn build(&self) -> Result<Transform, ConfigError> {
        let t = match self {
            TransformSpec::Identity => return Ok(Transform::identity()),
            TransformSpec::ExpSq { alpha } | TransformSpec::AbsExpSq { alpha } => {
                Transform::exp_sq(*alpha)
            }
            TransformSpec::SignedExp { beta } => Transform::signed_exp(*beta),
        };
        t.map_err(|e| ConfigError(format!("transform: {e}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::Identity => "identity",
            TransformSpec::ExpSq { .. } => "exp_sq",
            TransformSpec::SignedExp { .. } => "signed_exp",
            TransformSpec::AbsExpSq { .. } => "abs_exp_sq",
        }
    }

    pub fn label(&self) -> String {
        match self {
            TransformSpec::Identity => "identity".into(),
            TransformSpec::ExpSq { alpha } => format!("exp_sq(alpha={alpha})"),
            TransformSpec::SignedExp { beta } => format!("signed_exp(beta={beta})"),
            TransformSpec::AbsExpSq { alpha } => format!("abs_exp_sq(alpha={alpha})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasureSpec {
    /// Atoms as (location, weight) pairs.
    Dirac { atoms: Vec<(f64, f64)> },
    GaussianDensity { mean: f64, sd: f64, points: usize },
}

impl MeasureSpec {
    pub fn build(&self) -> Result<FiniteMeasure, ConfigError> {
        let m = match self {
            MeasureSpec::Dirac { atoms } => FiniteMeasure::from_atoms(atoms),
            MeasureSpec::GaussianDensity { mean, sd, points } => {
                if *points < 4 {
                    return err("measure.gaussian_density.points must be at least 4");
                }
                if !(*sd > 0.0) {
                    return err("measure.gaussian_density.sd must be positive");
                }
                let n = *points;
                let lo = mean - 6.0 * sd;
                let hi = mean + 6.0 * sd;
                let grid: Vec<f64> = (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect();
                let vals: Vec<f64> = grid
                    .iter()
                    .map(|x| {
                        let z = (x - mean) / sd;
                        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                    })
                    .collect();
                FiniteMeasure::from_density(&grid, &vals)
            }
        };
        m.map_err(|e| ConfigError(format!("measure: {e}")))
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, MeasureSpec::Dirac { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            MeasureSpec::Dirac { atoms } => {
                let parts: Vec<String> =
                    atoms.iter().map(|(x, w)| format!("{x}:{w}")).collect();
                format!("dirac[{}]", parts.join(","))
            }
            MeasureSpec::GaussianDensity { mean, sd, points } => {
                format!("gaussian_density(mean={mean},sd={sd},points={points})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ZSpec {
    Gaussian,
    Rademacher,
    Exponential { lambda: f64 },
    Pareto { alpha: f64, x_min: Option<f64> },
    SymmetricPareto { alpha: f64, x_min: Option<f64> },
}

impl ZSpec {
    pub fn build(&self) -> Result<ZDistribution, ConfigError> {
        let z = match self {
            ZSpec::Gaussian => return Ok(ZDistribution::gaussian()),
            ZSpec::Rademacher => return Ok(ZDistribution::rademacher()),
            ZSpec::Exponential { lambda } => ZDistribution::exponential(*lambda),
            ZSpec::Pareto { alpha, x_min } => ZDistribution::pareto(*alpha, *x_min),
            ZSpec::SymmetricPareto { alpha, x_min } => {
                ZDistribution::symmetric_pareto(*alpha, *x_min)
            }
        };
        z.map_err(|e| ConfigError(format!("z: {e}")))
    }

    fn family_name(&self) -> &'static str {
        match self {
            ZSpec::Gaussian => "gaussian",
            ZSpec::Rademacher => "rademacher",
            ZSpec::Exponential { .. } => "exponential",
            ZSpec::Pareto { .. } => "pareto",
            ZSpec::SymmetricPareto { .. } => "symmetric_pareto",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub n_values: Option<Vec<usize>>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub kmax: u32,
    pub tol: f64,
    pub id: Option<String>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            n_values: None,
            replicates: None,
            seed: None,
            kmax: DEFAULT_KMAX,
            tol: DEFAULT_TOL,
            id: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovSpec {
    pub r: Vec<f64>,
    pub u: f64,
    pub v: f64,
}

// ---------------------------------------------------------------------------
// The config

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub command: Option<CommandKind>,
    pub model: Option<ModelSpec>,
    pub transform: Option<TransformSpec>,
    pub measure: Option<MeasureSpec>,
    pub z: Option<ZSpec>,
    pub levels: Option<Vec<f64>>,
    pub run: RunSpec,
    pub cov: Option<CovSpec>,
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut bag = KeyBag::parse(text)?;

        let command = match bag.take("command")? {
            Some((line, v)) => match CommandKind::from_name(&v) {
                Some(c) => Some(c),
                None => return err(format!("line {line}: unknown command `{v}`")),
            },
            None => None,
        };

        let model = parse_model(&mut bag)?;
        let transform = parse_transform(&mut bag)?;
        let measure = parse_measure(&mut bag)?;
        let z = parse_z(&mut bag)?;

        let levels = match bag.take("levels")? {
            Some((line, v)) => Some(parse_f64_list(&v).map_err(|e| at(line, e))?),
            None => None,
        };

        let run = RunSpec {
            n_values: bag
                .take_map("run.n_values", parse_usize_list)?,
            replicates: bag.take_map("run.replicates", parse_usize)?,
            seed: bag.take_map("run.seed", parse_u64)?,
            kmax: bag
                .take_map("run.kmax", parse_u32)?
                .unwrap_or(DEFAULT_KMAX),
            tol: bag.take_map("run.tol", parse_f64)?.unwrap_or(DEFAULT_TOL),
            id: bag.take("run.id")?.map(|(_, v)| v),
        };
        if run.kmax < 2 {
            return err("run.kmax must be at least 2");
        }
        if !(run.tol > 0.0) {
            return err("run.tol must be positive");
        }

        let cov = parse_cov(&mut bag)?;
        let output_path = bag.take("output.path")?.map(|(_, v)| v);

        bag.finish()?;
        Ok(ExperimentConfig {
            command,
            model,
            transform,
            measure,
            z,
            levels,
            run,
            cov,
            output_path,
        })
    }

    /// Canonical text form; from_text(to_text(c)) == c.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };

        if let Some(c) = self.command {
            push("command", c.name().into());
        }
        if let Some(m) = &self.model {
            match &m.family {
                ModelFamily::Cauchy { eta } => {
                    push("model.family", "cauchy".into());
                    push("model.eta", fmt_f64(*eta));
                }
                ModelFamily::ExpDecay { lambda } => {
                    push("model.family", "exp_decay".into());
                    push("model.lambda", fmt_f64(*lambda));
                }
                ModelFamily::UserGrid { ts, rhos } => {
                    push("model.family", "user_grid".into());
                    push("model.grid.ts", fmt_f64_list(ts));
                    push("model.grid.rhos", fmt_f64_list(rhos));
                }
                ModelFamily::WhiteNoise => push("model.family", "white_noise".into()),
            }
            push("model.d", m.d.to_string());
            if matches!(m.family, ModelFamily::Cauchy { .. } | ModelFamily::ExpDecay { .. }) {
                push("model.index", m.index.name().into());
            }
        }
        if let Some(t) = &self.transform {
            push("transform.name", t.name().into());
            match t {
                TransformSpec::Identity => {}
                TransformSpec::ExpSq { alpha } | TransformSpec::AbsExpSq { alpha } => {
                    push("transform.alpha", fmt_f64(*alpha));
                }
                TransformSpec::SignedExp { beta } => push("transform.beta", fmt_f64(*beta)),
            }
        }
        if let Some(m) = &self.measure {
            match m {
                MeasureSpec::Dirac { atoms } => {
                    let parts: Vec<String> = atoms
                        .iter()
                        .map(|(x, w)| {
                            if *w == 1.0 {
                                fmt_f64(*x)
                            } else {
                                format!("{}:{}", fmt_f64(*x), fmt_f64(*w))
                            }
                        })
                        .collect();
                    push("measure.dirac", parts.join(", "));
                }
                MeasureSpec::GaussianDensity { mean, sd, points } => {
                    push("measure.gaussian_density.mean", fmt_f64(*mean));
                    push("measure.gaussian_density.sd", fmt_f64(*sd));
                    push("measure.gaussian_density.points", points.to_string());
                }
            }
        }
        if let Some(z) = &self.z {
            push("z.family", z.family_name().into());
            match z {
                ZSpec::Gaussian | ZSpec::Rademacher => {}
                ZSpec::Exponential { lambda } => push("z.lambda", fmt_f64(*lambda)),
                ZSpec::Pareto { alpha, x_min } | ZSpec::SymmetricPareto { alpha, x_min } => {
                    push("z.alpha", fmt_f64(*alpha));
                    if let Some(x) = x_min {
                        push("z.x_min", fmt_f64(*x));
                    }
                }
            }
        }
        if let Some(levels) = &self.levels {
            push("levels", fmt_f64_list(levels));
        }
        if let Some(ns) = &self.run.n_values {
            let parts: Vec<String> = ns.iter().map(|n| n.to_string()).collect();
            push("run.n_values", parts.join(", "));
        }
        if let Some(r) = self.run.replicates {
            push("run.replicates", r.to_string());
        }
        if let Some(s) = self.run.seed {
            push("run.seed", s.to_string());
        }
        push("run.kmax", self.run.kmax.to_string());
        push("run.tol", fmt_f64(self.run.tol));
        if let Some(id) = &self.run.id {
            push("run.id", id.clone());
        }
        if let Some(c) = &self.cov {
            push("cov.r", fmt_f64_list(&c.r));
            push("cov.u", fmt_f64(c.u));
            push("cov.v", fmt_f64(c.v));
        }
        if let Some(p) = &self.output_path {
            push("output.path", p.clone());
        }
        out
    }

    /// Check that every field the command needs is present and usable.
    pub fn validate_for(&self, cmd: CommandKind) -> Result<(), ConfigError> {
        if let Some(declared) = self.command {
            if declared != cmd {
                return err(format!(
                    "config declares command `{declared}` but `{cmd}` was invoked"
                ));
            }
        }
        let need = |ok: bool, what: &str| -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                err(format!("{cmd} requires {what}"))
            }
        };

        match cmd {
            CommandKind::Classify | CommandKind::VolatilityClassify => {
                need(self.model.is_some(), "a model.* section")?;
                need(self.transform.is_some(), "a transform.* section")?;
                need(self.measure.is_some(), "a measure.* section")?;
                let m = self.model.as_ref().unwrap();
                if m.is_white_noise() {
                    return err(format!(
                        "{cmd} needs a correlation model; white noise is s.r.d. for every measure"
                    ));
                }
                if cmd == CommandKind::VolatilityClassify {
                    need(self.z.is_some(), "a z.* section")?;
                    if !self.measure.as_ref().unwrap().is_atomic() {
                        return err(
                            "volatility-classify requires an atomic (dirac) measure",
                        );
                    }
                }
            }
            CommandKind::Rank => {
                need(self.transform.is_some(), "a transform.* section")?;
                need(self.model.is_some(), "a model.* section (white_noise is allowed)")?;
                need(
                    self.levels.as_ref().is_some_and(|l| !l.is_empty()),
                    "a nonempty levels list",
                )?;
            }
            CommandKind::Clt => {
                need(self.model.is_some(), "a model.* section (white_noise is allowed)")?;
                need(
                    self.levels.as_ref().is_some_and(|l| !l.is_empty()),
                    "a nonempty levels list",
                )?;
                need(
                    self.run.n_values.as_ref().is_some_and(|n| !n.is_empty()),
                    "run.n_values",
                )?;
                need(self.run.replicates.is_some_and(|r| r >= 2), "run.replicates (at least 2)")?;
                need(self.run.seed.is_some(), "run.seed (stochastic command)")?;
                let ns = self.run.n_values.as_ref().unwrap();
                check_window_sizes(cmd, ns)?;
                if !self.model.as_ref().unwrap().is_white_noise() {
                    if let Some(bad) = ns.iter().find(|n| !n.is_power_of_two()) {
                        return err(format!(
                            "circulant embedding needs power-of-two window sizes, got {bad}"
                        ));
                    }
                }
            }
            CommandKind::PartialSum => {
                need(self.model.is_some(), "a model.* section")?;
                if self.model.as_ref().unwrap().is_white_noise() {
                    return err("partial-sum needs a correlation model, not white noise");
                }
                match &self.transform {
                    Some(TransformSpec::ExpSq { alpha })
                    | Some(TransformSpec::AbsExpSq { alpha }) => {
                        if !(*alpha > 1.0 && *alpha < 2.0) {
                            return err(format!(
                                "partial-sum requires alpha in (1, 2), got {alpha}"
                            ));
                        }
                    }
                    Some(other) => {
                        return err(format!(
                            "partial-sum requires transform.name = exp_sq, got {}",
                            other.name()
                        ));
                    }
                    None => return err("partial-sum requires a transform.* section"),
                }
                need(
                    self.run.n_values.as_ref().is_some_and(|n| !n.is_empty()),
                    "run.n_values",
                )?;
                need(
                    self.run.replicates.is_some_and(|r| r >= 8),
                    "run.replicates (at least 8 for quartiles)",
                )?;
                need(self.run.seed.is_some(), "run.seed (stochastic command)")?;
                let ns = self.run.n_values.as_ref().unwrap();
                check_window_sizes(cmd, ns)?;
                if !ns.last().unwrap().is_power_of_two() {
                    return err(format!(
                        "the largest window size must be a power of two, got {}",
                        ns.last().unwrap()
                    ));
                }
            }
            CommandKind::CovCheck => {
                let cov = match &self.cov {
                    Some(c) => c,
                    None => return err("cov-check requires a cov.* section"),
                };
                if cov.r.is_empty() {
                    return err("cov.r must list at least one correlation");
                }
                if let Some(bad) = cov.r.iter().find(|r| !(r.abs() < 1.0)) {
                    return err(format!("cov.r values must satisfy |r| < 1, got {bad}"));
                }
            }
        }
        Ok(())
    }

    pub fn experiment_id(&self, cmd: CommandKind) -> String {
        self.run.id.clone().unwrap_or_else(|| cmd.name().to_string())
    }
}

/// Slope fitting needs at least 3 strictly increasing sizes spanning a
/// factor of 8; rejecting here keeps later failures genuinely numeric.
fn check_window_sizes(cmd: CommandKind, ns: &[usize]) -> Result<(), ConfigError> {
    if ns.len() < 3 {
        return err(format!("{cmd} needs at least 3 window sizes to fit a slope"));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return err("run.n_values must be strictly increasing");
    }
    if (ns[ns.len() - 1] as f64) < 8.0 * ns[0] as f64 {
        return err("run.n_values must span at least a factor of 8");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Section parsers

fn parse_model(bag: &mut KeyBag) -> Result<Option<ModelSpec>, ConfigError> {
    let family = match bag.take("model.family")? {
        Some((line, v)) => (line, v),
        None => {
            if let Some((line, key)) = bag.peek_prefix("model.") {
                return err(format!(
                    "line {line}: `{key}` given without model.family"
                ));
            }
            return Ok(None);
        }
    };
    let (fline, fname) = family;

    let d = match bag.take_map("model.d", parse_u8)? {
        Some(d) if d == 1 || d == 2 => d,
        Some(d) => return err(format!("model.d must be 1 or 2, got {d}")),
        None => return err("model.d is required with model.family"),
    };

    let index_given = match bag.take("model.index")? {
        Some((line, v)) => Some(match v.as_str() {
            "lattice" => IndexChoice::Lattice,
            "continuum" => IndexChoice::Continuum,
            other => {
                return err(format!(
                    "line {line}: model.index must be lattice or continuum, got `{other}`"
                ))
            }
        }),
        None => None,
    };

    let (family, index) = match fname.as_str() {
        "cauchy" => {
            let eta = bag
                .take_map("model.eta", parse_f64)?
                .ok_or_else(|| ConfigError("cauchy model requires model.eta".into()))?;
            (
                ModelFamily::Cauchy { eta },
                index_given.unwrap_or(IndexChoice::Lattice),
            )
        }
        "exp_decay" => {
            let lambda = bag
                .take_map("model.lambda", parse_f64)?
                .ok_or_else(|| ConfigError("exp_decay model requires model.lambda".into()))?;
            (
                ModelFamily::ExpDecay { lambda },
                index_given.unwrap_or(IndexChoice::Lattice),
            )
        }
        "user_grid" => {
            let ts = bag
                .take_map("model.grid.ts", parse_f64_list)?
                .ok_or_else(|| ConfigError("user_grid model requires model.grid.ts".into()))?;
            let rhos = bag
                .take_map("model.grid.rhos", parse_f64_list)?
                .ok_or_else(|| ConfigError("user_grid model requires model.grid.rhos".into()))?;
            if index_given == Some(IndexChoice::Lattice) {
                return err("user_grid models are continuum-indexed; drop model.index");
            }
            (ModelFamily::UserGrid { ts, rhos }, IndexChoice::Continuum)
        }
        "white_noise" => {
            if index_given.is_some() {
                return err("model.index is meaningless for white_noise");
            }
            (ModelFamily::WhiteNoise, IndexChoice::Lattice)
        }
        other => {
            return err(format!(
                "line {fline}: unknown model.family `{other}` \
                 (expected cauchy, exp_decay, user_grid, or white_noise)"
            ))
        }
    };

    Ok(Some(ModelSpec { family, d, index }))
}

fn parse_transform(bag: &mut KeyBag) -> Result<Option<TransformSpec>, ConfigError> {
    let (line, name) = match bag.take("transform.name")? {
        Some(kv) => kv,
        None => {
            if let Some((line, key)) = bag.peek_prefix("transform.") {
                return err(format!("line {line}: `{key}` given without transform.name"));
            }
            return Ok(None);
        }
    };
    let spec = match name.as_str() {
        "identity" => TransformSpec::Identity,
        "exp_sq" => TransformSpec::ExpSq {
            alpha: bag
                .take_map("transform.alpha", parse_f64)?
                .ok_or_else(|| ConfigError("exp_sq requires transform.alpha".into()))?,
        },
        "abs_exp_sq" => TransformSpec::AbsExpSq {
            alpha: bag
                .take_map("transform.alpha", parse_f64)?
                .ok_or_else(|| ConfigError("abs_exp_sq requires transform.alpha".into()))?,
        },
        "signed_exp" => TransformSpec::SignedExp {
            beta: bag
                .take_map("transform.beta", parse_f64)?
                .ok_or_else(|| ConfigError("signed_exp requires transform.beta".into()))?,
        },
        other => {
            return err(format!(
                "line {line}: unknown transform `{other}` \
                 (expected identity, exp_sq, signed_exp, or abs_exp_sq)"
            ))
        }
    };
    Ok(Some(spec))
}

fn parse_measure(bag: &mut KeyBag) -> Result<Option<MeasureSpec>, ConfigError> {
    let dirac = bag.take("measure.dirac")?;
    let mean = bag.take_map("measure.gaussian_density.mean", parse_f64)?;
    let sd = bag.take_map("measure.gaussian_density.sd", parse_f64)?;
    let points = bag.take_map("measure.gaussian_density.points", parse_usize)?;

    match (dirac, mean) {
        (Some(_), Some(_)) => {
            err("measure.dirac and measure.gaussian_density.* are mutually exclusive")
        }
        (Some((line, v)), None) => {
            if sd.is_some() || points.is_some() {
                return err(
                    "measure.gaussian_density.* keys are meaningless with measure.dirac",
                );
            }
            let atoms = parse_atom_list(&v).map_err(|e| at(line, e))?;
            Ok(Some(MeasureSpec::Dirac { atoms }))
        }
        (None, Some(mean)) => {
            let sd = sd.ok_or_else(|| {
                ConfigError("gaussian_density measure requires measure.gaussian_density.sd".into())
            })?;
            Ok(Some(MeasureSpec::GaussianDensity {
                mean,
                sd,
                points: points.unwrap_or(DEFAULT_DENSITY_POINTS),
            }))
        }
        (None, None) => {
            if sd.is_some() || points.is_some() {
                return err(
                    "measure.gaussian_density.mean is required with other gaussian_density keys",
                );
            }
            Ok(None)
        }
    }
}

fn parse_z(bag: &mut KeyBag) -> Result<Option<ZSpec>, ConfigError> {
    let (line, name) = match bag.take("z.family")? {
        Some(kv) => kv,
        None => {
            if let Some((line, key)) = bag.peek_prefix("z.") {
                return err(format!("line {line}: `{key}` given without z.family"));
            }
            return Ok(None);
        }
    };
    let spec = match name.as_str() {
        "gaussian" => ZSpec::Gaussian,
        "rademacher" => ZSpec::Rademacher,
        "exponential" => ZSpec::Exponential {
            lambda: bag
                .take_map("z.lambda", parse_f64)?
                .ok_or_else(|| ConfigError("exponential z requires z.lambda".into()))?,
        },
        "pareto" | "symmetric_pareto" => {
            let alpha = bag
                .take_map("z.alpha", parse_f64)?
                .ok_or_else(|| ConfigError(format!("{name} z requires z.alpha")))?;
            let x_min = bag.take_map("z.x_min", parse_f64)?;
            if name == "pareto" {
                ZSpec::Pareto { alpha, x_min }
            } else {
                ZSpec::SymmetricPareto { alpha, x_min }
            }
        }
        other => {
            return err(format!(
                "line {line}: unknown z.family `{other}` (expected gaussian, rademacher, \
                 exponential, pareto, or symmetric_pareto)"
            ))
        }
    };
    Ok(Some(spec))
}

fn parse_cov(bag: &mut KeyBag) -> Result<Option<CovSpec>, ConfigError> {
    let r = match bag.take("cov.r")? {
        Some((line, v)) => parse_grid_list(&v).map_err(|e| at(line, e))?,
        None => {
            if let Some((line, key)) = bag.peek_prefix("cov.") {
                return err(format!("line {line}: `{key}` given without cov.r"));
            }
            return Ok(None);
        }
    };
    let u = bag.take_map("cov.u", parse_f64)?.unwrap_or(0.0);
    let v = bag.take_map("cov.v", parse_f64)?.unwrap_or(0.0);
    Ok(Some(CovSpec { r, u, v }))
}

// ---------------------------------------------------------------------------
// Key bag: raw key -> (line, value) with duplicate and leftover detection

struct KeyBag {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyBag {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = match line.split_once('=') {
                Some(kv) => kv,
                None => {
                    return err(format!(
                        "line {line_no}: expected `key = value`, got `{line}`"
                    ))
                }
            };
            let key = k.trim().to_string();
            let value = v.trim().to_string();
            if key.is_empty() {
                return err(format!("line {line_no}: missing key before `=`"));
            }
            if value.is_empty() {
                return err(format!("line {line_no}: empty value for `{key}`"));
            }
            if let Some((first, _)) = entries.get(&key) {
                return err(format!(
                    "line {line_no}: duplicate key `{key}` (first set on line {first})"
                ));
            }
            entries.insert(key, (line_no, value));
        }
        Ok(KeyBag { entries })
    }

    fn take(&mut self, key: &str) -> Result<Option<(usize, String)>, ConfigError> {
        Ok(self.entries.remove(key))
    }

    fn take_map<T>(
        &mut self,
        key: &str,
        f: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        match self.entries.remove(key) {
            Some((line, v)) => match f(&v) {
                Ok(t) => Ok(Some(t)),
                Err(e) => err(format!("line {line}: {key}: {e}")),
            },
            None => Ok(None),
        }
    }

    /// First remaining key under a dotted prefix, by line order.
    fn peek_prefix(&self, prefix: &str) -> Option<(usize, String)> {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, (line, _))| (*line, k.clone()))
            .min()
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, (line, _))) = self.entries.iter().min_by_key(|(_, (line, _))| *line) {
            return err(format!("line {line}: unknown or inapplicable key `{key}`"));
        }
        Ok(())
    }
}

fn at(line: usize, msg: String) -> ConfigError {
    ConfigError(format!("line {line}: {msg}"))
}

// ---------------------------------------------------------------------------
// Scalar and list parsers (plain-String errors; KeyBag adds line context)

fn parse_f64(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !x.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(x)
}

fn parse_u64(s: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn parse_u32(s: &str) -> Result<u32, String> {
    s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn parse_u8(s: &str) -> Result<u8, String> {
    s.parse().map_err(|_| format!("`{s}` is not a small integer"))
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn split_list(s: &str) -> Result<Vec<&str>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).collect();
    if items.iter().any(|i| i.is_empty()) {
        return Err("empty list item".into());
    }
    Ok(items)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    split_list(s)?.into_iter().map(parse_f64).collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    split_list(s)?.into_iter().map(parse_usize).collect()
}

/// List items that are either scalars or inclusive `a:b:step` ranges.
fn parse_grid_list(s: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in split_list(s)? {
        if item.contains(':') {
            out.extend(expand_range(item)?);
        } else {
            out.push(parse_f64(item)?);
        }
    }
    Ok(out)
}

fn expand_range(item: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = item.split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("range `{item}` must be a:b:step"));
    }
    let a = parse_f64(parts[0])?;
    let b = parse_f64(parts[1])?;
    let step = parse_f64(parts[2])?;
    if !(step > 0.0) {
        return Err(format!("range `{item}`: step must be positive"));
    }
    if b < a {
        return Err(format!("range `{item}`: end below start"));
    }
    let n = ((b - a) / step).round();
    if ((b - a) - n * step).abs() > 1e-9 * step.max(1.0) {
        return Err(format!("range `{item}`: step does not divide the span"));
    }
    let n = n as usize;
    if n == 0 {
        return Ok(vec![a]);
    }
    let mut out: Vec<f64> = (0..=n)
        .map(|i| a + (b - a) * (i as f64 / n as f64))
        .collect();
    out[0] = a;
    out[n] = b;
    // The typed endpoints fix the intended decimal precision; rounding to
    // it moves a point by at most 0.5 * 10^-p, far under step / 2, and
    // keeps grid values like -0.7 and 0 exact instead of -0.7000...01.
    if let Some(p) = [parts[0], parts[1], parts[2]]
        .iter()
        .map(|s| decimal_places(s))
        .collect::<Option<Vec<_>>>()
        .map(|ps| ps.into_iter().max().unwrap_or(0))
    {
        let scale = 10f64.powi(p as i32);
        for x in &mut out {
            *x = (*x * scale).round() / scale;
        }
    }
    Ok(out)
}

/// Digits after the decimal point in a plain literal; None for exponent
/// notation or anything longer than f64 precision carries.
fn decimal_places(s: &str) -> Option<usize> {
    if s.contains(['e', 'E']) {
        return None;
    }
    let p = match s.split_once('.') {
        Some((_, frac)) => frac.len(),
        None => 0,
    };
    if p > 12 {
        None
    } else {
        Some(p)
    }
}

/// Dirac atoms: `loc` or `loc:weight`, comma-separated.
fn parse_atom_list(s: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for item in split_list(s)? {
        match item.split_once(':') {
            Some((loc, w)) => {
                out.push((parse_f64(loc.trim())?, parse_f64(w.trim())?));
            }
            None => out.push((parse_f64(item)?, 1.0)),
        }
    }
    Ok(out)
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_f64_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| fmt_f64(*x)).collect();
    parts.join(", ")
}

// ---------------------------------------------------------------------------
