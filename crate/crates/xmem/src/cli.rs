//! Command-line front end: configuration loading, dispatch to the
//! classification and simulation layers, artifact writing, and the
//! run-directory report.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numeric
//! failure (non-embeddable model, quadrature failure, undetected rank).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use xmem_core::bigauss::{indicator_cov_integral, indicator_cov_series, orthant_oracle};
use xmem_core::memory::{
    classify_subordinated, volatility_memory_series, MemoryVerdict, SeriesValue, Transform,
};
use xmem_core::normal;

use crate::config::{CommandKind, ExperimentConfig, TransformSpec};
use crate::excursion::{
    level_scaling, mc_ensemble, partial_sum_scaling, xi_and_rank, EnsembleConfig,
    PartialSumConfig,
};
use crate::output::{
    atomic_write, cov_csv, ensemble_csv, partial_sum_csv, rank_json, verdict_json, CovRow,
    LevelSummary, COV_HEADER, ENSEMBLE_HEADER, PARTIAL_SUM_HEADER,
};

#[derive(Parser)]
#[command(
    name = "xmem",
    version,
    about = "Memory classification and excursion-volume scaling experiments \
             for subordinated Gaussian and stochastic-volatility fields"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Classify X = G(Y) as short- or long-range dependent under a level measure
    Classify(RunArgs),
    /// Classify the stochastic-volatility field X = G(Y) Z
    #[command(name = "volatility-classify")]
    VolatilityClassify(RunArgs),
    /// Hermite rank and predicted scaling exponent of the level indicator
    Rank(RunArgs),
    /// Monte Carlo excursion-volume ensemble with measured scaling exponents
    Clt(RunArgs),
    /// Heavy-tailed partial-sum dispersion scaling
    #[command(name = "partial-sum")]
    PartialSum(RunArgs),
    /// Cross-check the indicator-covariance implementations on a correlation grid
    #[command(name = "cov-check")]
    CovCheck(RunArgs),
    /// Summarize the artifacts in a run directory
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Artifact path (overrides output.path from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides run.seed from the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the simulation layer (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding run artifacts (*.json, *.csv)
    #[arg(long)]
    dir: PathBuf,
    /// Write a gnuplot data file of log2 n vs log2 raw variance per level
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------

/// println! panics when stdout is a closed pipe (`xmem ... | head`);
/// status lines are best-effort, so swallow write errors.
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

enum CliError {
    Config(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

fn config_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn numeric_err(e: impl fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

/// Parse arguments, dispatch, and map the outcome to an exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // clap prints the message itself and exits 0 for --help/--version,
        // 2 for usage errors.
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        CliCommand::Classify(a) => execute(CommandKind::Classify, &a),
        CliCommand::VolatilityClassify(a) => execute(CommandKind::VolatilityClassify, &a),
        CliCommand::Rank(a) => execute(CommandKind::Rank, &a),
        CliCommand::Clt(a) => execute(CommandKind::Clt, &a),
        CliCommand::PartialSum(a) => execute(CommandKind::PartialSum, &a),
        CliCommand::CovCheck(a) => execute(CommandKind::CovCheck, &a),
        CliCommand::Report(a) => report(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("xmem: {e}");
            e.exit_code()
        }
    }
}

fn execute(kind: CommandKind, args: &RunArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_text(&text).map_err(config_err)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = Some(seed);
    }
    cfg.validate_for(kind).map_err(config_err)?;
    if let Some(k) = args.threads {
        // A second pool registration in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    match kind {
        CommandKind::Classify | CommandKind::VolatilityClassify => {
            run_classify(kind, &cfg, args)
        }
        CommandKind::Rank => run_rank(&cfg, args),
        CommandKind::Clt => run_clt(&cfg, args),
        CommandKind::PartialSum => run_partial_sum(&cfg, args),
        CommandKind::CovCheck => run_cov_check(&cfg, args),
    }
}

fn resolve_out(args: &RunArgs, cfg: &ExperimentConfig, kind: CommandKind, ext: &str) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Some(p) = &cfg.output_path {
        return PathBuf::from(p);
    }
    PathBuf::from(format!("{}.{ext}", cfg.experiment_id(kind)))
}

fn write_artifact(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic_write(path, bytes)
        .map_err(|e| CliError::Numeric(format!("writing {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// classify / volatility-classify

fn run_classify(kind: CommandKind, cfg: &ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    let mspec = cfg.model.as_ref().unwrap();
    let model = mspec.build().map_err(config_err)?.unwrap();
    let tspec = cfg.transform.as_ref().unwrap();
    let g = tspec.build().map_err(config_err)?;
    let measure_spec = cfg.measure.as_ref().unwrap();
    let mu = measure_spec.build().map_err(config_err)?;

    let verdict = match kind {
        CommandKind::Classify => {
            classify_subordinated(&g, &model, &mu, cfg.run.kmax, cfg.run.tol)
        }
        _ => {
            let z = cfg.z.as_ref().unwrap().build().map_err(config_err)?;
            let breaks = z.tail_breaks();
            let tail = move |s: f64| z.tail(s);
            volatility_memory_series(&g, &tail, &breaks, &model, &mu, cfg.run.kmax)
        }
    }
    .map_err(numeric_err)?;

    let out = resolve_out(args, cfg, kind, "json");
    let json = verdict_json(kind, &verdict, measure_spec, &tspec.label(), &model.label());
    write_artifact(&out, json.as_bytes())?;
    outln!(
        "{kind}: verdict {} ({}) -> {}",
        verdict.verdict,
        describe_series(&verdict),
        out.display()
    );
    Ok(())
}

fn describe_series(v: &MemoryVerdict) -> String {
    match v.series_value {
        SeriesValue::Finite(x) => match v.tail_bound {
            Some(t) => format!("series {x}, tail bound {t:.2e}"),
            None => format!("series {x}"),
        },
        SeriesValue::Infinite => match &v.divergence_certificate {
            Some(c) => format!("series infinite, divergence at k = {}", c.k),
            None => "series infinite".into(),
        },
        SeriesValue::Undetermined => "series undetermined".into(),
    }
}

// ---------------------------------------------------------------------------
// rank

fn run_rank(cfg: &ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    let mspec = cfg.model.as_ref().unwrap();
    let decay = mspec.decay_exponent().map_err(config_err)?;
    let tspec = cfg.transform.as_ref().unwrap();
    let g = tspec.build().map_err(config_err)?;
    let z = match &cfg.z {
        Some(zs) => Some(zs.build().map_err(config_err)?),
        None => None,
    };
    let levels = cfg.levels.as_ref().unwrap();

    let mut lines = Vec::with_capacity(levels.len());
    for &u in levels {
        let theory = xi_and_rank(&g, z.as_ref(), u, mspec.d, decay).map_err(numeric_err)?;
        match theory.q {
            Some(q) => outln!(
                "level {u}: q = {q}, predicted exponent {}",
                theory.predicted_exponent
            ),
            None => outln!(
                "level {u}: xi = 0 (CLT regime), sigma2 = {:.6}, predicted exponent {}",
                theory.sigma2.unwrap_or(0.0),
                theory.predicted_exponent
            ),
        }
        lines.push((u, theory));
    }

    let out = resolve_out(args, cfg, CommandKind::Rank, "json");
    let z_label = z.as_ref().map(|z| z.label());
    let json = rank_json(&mspec.label(), &tspec.label(), z_label.as_deref(), &lines);
    write_artifact(&out, json.as_bytes())?;
    outln!("rank: wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// clt

fn run_clt(cfg: &ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    let mspec = cfg.model.as_ref().unwrap();
    let model = mspec.build().map_err(config_err)?;
    let decay = mspec.decay_exponent().map_err(config_err)?;
    let g = match &cfg.transform {
        Some(t) => Some(t.build().map_err(config_err)?),
        None => None,
    };
    let z = match &cfg.z {
        Some(zs) => Some(zs.build().map_err(config_err)?),
        None => None,
    };
    let levels = cfg.levels.as_ref().unwrap();
    let n_values = cfg.run.n_values.as_ref().unwrap();
    let replicates = cfg.run.replicates.unwrap();
    let seed = cfg.run.seed.unwrap();

    let ens = EnsembleConfig {
        d: mspec.d,
        model: model.as_ref(),
        transform: g.as_ref(),
        z: z.as_ref(),
        levels,
        n_values,
        replicates,
        master_seed: seed,
    };
    let points = mc_ensemble(&ens).map_err(numeric_err)?;

    let g_theory = g.clone().unwrap_or_else(Transform::identity);
    let mut summaries = Vec::with_capacity(levels.len());
    for &u in levels {
        let report = level_scaling(&points, u, mspec.d).map_err(numeric_err)?;
        let theory = xi_and_rank(&g_theory, z.as_ref(), u, mspec.d, decay).map_err(numeric_err)?;
        outln!(
            "level {u}: measured {:.2}\u{b1}{:.2} predicted {:.2}",
            report.exponent, report.exponent_stderr, theory.predicted_exponent
        );
        summaries.push(LevelSummary {
            level: u,
            report,
            predicted_exponent: theory.predicted_exponent,
        });
    }

    let transform_label = cfg
        .transform
        .as_ref()
        .map(TransformSpec::label)
        .unwrap_or_else(|| "identity".into());
    let z_family = z.as_ref().map(|z| z.label());
    let out = resolve_out(args, cfg, CommandKind::Clt, "csv");
    let csv = ensemble_csv(
        &cfg.experiment_id(CommandKind::Clt),
        mspec.d,
        decay,
        &transform_label,
        z_family.as_deref(),
        &points,
        &summaries,
        seed,
    );
    write_artifact(&out, csv.as_bytes())?;
    outln!("clt: wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// partial-sum

fn run_partial_sum(cfg: &ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    let mspec = cfg.model.as_ref().unwrap();
    let model = mspec.build().map_err(config_err)?.unwrap();
    let decay = mspec.decay_exponent().map_err(config_err)?;
    let alpha = match cfg.transform.as_ref().unwrap() {
        TransformSpec::ExpSq { alpha } | TransformSpec::AbsExpSq { alpha } => *alpha,
        _ => unreachable!("validated"),
    };
    let seed = cfg.run.seed.unwrap();

    let ps = PartialSumConfig {
        alpha,
        model: &model,
        n_values: cfg.run.n_values.as_ref().unwrap(),
        replicates: cfg.run.replicates.unwrap(),
        master_seed: seed,
    };
    let report = partial_sum_scaling(&ps).map_err(numeric_err)?;
    outln!(
        "theta {:.3}\u{b1}{:.3} predicted {:.3}",
        report.theta_hat, report.theta_stderr, report.predicted_theta
    );

    let out = resolve_out(args, cfg, CommandKind::PartialSum, "csv");
    let csv = partial_sum_csv(
        &cfg.experiment_id(CommandKind::PartialSum),
        alpha,
        decay,
        &report,
        seed,
    );
    write_artifact(&out, csv.as_bytes())?;
    outln!("partial-sum: wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// cov-check

fn run_cov_check(cfg: &ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    let cov = cfg.cov.as_ref().unwrap();
    let (u, v) = (cov.u, cov.v);
    let mut rows = Vec::with_capacity(cov.r.len());
    for &r in &cov.r {
        let integral = indicator_cov_integral(r, u, v, 1e-12);
        if !integral.converged {
            return Err(CliError::Numeric(format!(
                "covariance integral did not converge at r = {r}"
            )));
        }
        let series = indicator_cov_series(r, u, v, 1e-12, 4000);
        if !series.converged {
            return Err(CliError::Numeric(format!(
                "covariance series did not converge at r = {r}"
            )));
        }
        let oracle = orthant_oracle(r, u, v) - normal::tail(u) * normal::tail(v);
        rows.push(CovRow {
            r,
            u,
            v,
            integral: integral.value,
            series: series.value,
            oracle,
        });
    }

    let max_series = rows
        .iter()
        .map(|w| (w.integral - w.series).abs())
        .fold(0.0f64, f64::max);
    let max_oracle = rows
        .iter()
        .map(|w| (w.integral - w.oracle).abs())
        .fold(0.0f64, f64::max);
    outln!(
        "checked {} correlations: max |integral - series| = {max_series:.2e}, \
         max |integral - orthant| = {max_oracle:.2e}",
        rows.len()
    );

    let out = resolve_out(args, cfg, CommandKind::CovCheck, "csv");
    write_artifact(&out, cov_csv(&rows).as_bytes())?;
    outln!("cov-check: wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// report

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(&args.dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    names.sort();

    let mut printed = 0usize;
    let mut plot = String::new();
    for path in &names {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let stem = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match ext {
            "json" => {
                let text = match fs::read_to_string(path) {
                    Ok(t) => t,
                    Err(_) => continue,
                };
                if let Ok(val) = serde_json::from_str::<Value>(&text) {
                    printed += report_json(&stem, &val);
                }
            }
            "csv" => {
                let text = match fs::read_to_string(path) {
                    Ok(t) => t,
                    Err(_) => continue,
                };
                printed += report_csv(&stem, &text, &mut plot);
            }
            _ => {}
        }
    }
    if printed == 0 {
        return Err(CliError::Config(format!(
            "no run artifacts found in {}",
            args.dir.display()
        )));
    }
    if let Some(out) = &args.out {
        write_artifact(out, plot.as_bytes())?;
        outln!("report: wrote {}", out.display());
    }
    Ok(())
}

fn report_json(stem: &str, val: &Value) -> usize {
    let command = val.get("command").and_then(Value::as_str).unwrap_or("");
    match command {
        "classify" | "volatility-classify" => {
            let verdict = val.get("verdict").and_then(Value::as_str).unwrap_or("?");
            let series = match val.get("series_value") {
                Some(Value::Number(n)) => format!("series {n}"),
                Some(Value::String(s)) => format!("series {s}"),
                _ => "series ?".into(),
            };
            let cert = val
                .get("certificate")
                .and_then(|c| c.get("k"))
                .and_then(Value::as_u64)
                .map(|k| format!(", divergence at k = {k}"))
                .unwrap_or_default();
            let model = val.get("model").and_then(Value::as_str).unwrap_or("?");
            outln!("{stem}: {command} {model}: verdict {verdict} ({series}{cert})");
            1
        }
        "rank" => {
            let mut count = 0;
            if let Some(levels) = val.get("levels").and_then(Value::as_array) {
                for entry in levels {
                    let u = entry.get("level").and_then(Value::as_f64).unwrap_or(f64::NAN);
                    let pred = entry
                        .get("predicted_exponent")
                        .and_then(Value::as_f64)
                        .unwrap_or(f64::NAN);
                    match entry.get("q").and_then(Value::as_u64) {
                        Some(q) => outln!(
                            "{stem}: rank level {u}: q = {q}, predicted exponent {pred}"
                        ),
                        None => outln!(
                            "{stem}: rank level {u}: xi = 0, predicted exponent {pred}"
                        ),
                    }
                    count += 1;
                }
            }
            count
        }
        _ => 0,
    }
}

fn report_csv(stem: &str, text: &str, plot: &mut String) -> usize {
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h,
        None => return 0,
    };
    let col = |name: &str| header.split(',').position(|c| c == name);
    let mut printed = 0;

    if header == ENSEMBLE_HEADER {
        let (id_c, d_c, lvl_c, n_c, var_c) = (
            col("experiment_id").unwrap(),
            col("d").unwrap(),
            col("level").unwrap(),
            col("n").unwrap(),
            col("variance").unwrap(),
        );
        let (exp_c, se_c, pred_c) = (
            col("exponent").unwrap(),
            col("exponent_stderr").unwrap(),
            col("predicted_exponent").unwrap(),
        );
        let mut block_level = String::new();
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() <= pred_c {
                continue;
            }
            if cells[n_c] == "all" {
                let (e, se, p) = (
                    fmt2(cells[exp_c]),
                    fmt2(cells[se_c]),
                    fmt2(cells[pred_c]),
                );
                outln!(
                    "{stem}: {} level {}: measured {e}\u{b1}{se} predicted {p}",
                    cells[id_c], cells[lvl_c]
                );
                printed += 1;
            } else if let (Ok(n), Ok(var), Ok(d)) = (
                cells[n_c].parse::<f64>(),
                cells[var_c].parse::<f64>(),
                cells[d_c].parse::<f64>(),
            ) {
                if cells[lvl_c] != block_level {
                    if !block_level.is_empty() {
                        plot.push('\n');
                    }
                    block_level = cells[lvl_c].to_string();
                    plot.push_str(&format!("# {stem} level {block_level}\n"));
                }
                // Raw volume variance recovers the n^d normalization.
                if var > 0.0 {
                    plot.push_str(&format!(
                        "{} {}\n",
                        n.log2(),
                        (var * n.powf(d)).log2()
                    ));
                }
            }
        }
        if !block_level.is_empty() {
            plot.push('\n');
        }
    } else if header == PARTIAL_SUM_HEADER {
        let (id_c, n_c) = (col("experiment_id").unwrap(), col("n").unwrap());
        let (th_c, se_c, pred_c) = (
            col("theta").unwrap(),
            col("theta_stderr").unwrap(),
            col("predicted_theta").unwrap(),
        );
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() > pred_c && cells[n_c] == "all" {
                outln!(
                    "{stem}: {} theta {}\u{b1}{} predicted {}",
                    cells[id_c],
                    fmt3(cells[th_c]),
                    fmt3(cells[se_c]),
                    fmt3(cells[pred_c])
                );
                printed += 1;
            }
        }
    } else if header == COV_HEADER {
        let (int_c, ds_c, do_c) = (
            col("integral").unwrap(),
            col("delta_series").unwrap(),
            col("delta_oracle").unwrap(),
        );
        let mut rows = 0usize;
        let (mut max_s, mut max_o) = (0.0f64, 0.0f64);
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() <= do_c || cells[int_c].parse::<f64>().is_err() {
                continue;
            }
            rows += 1;
            max_s = max_s.max(cells[ds_c].parse().unwrap_or(0.0));
            max_o = max_o.max(cells[do_c].parse().unwrap_or(0.0));
        }
        if rows > 0 {
            outln!(
                "{stem}: {rows} correlations, max delta series {max_s:.2e}, \
                 max delta orthant {max_o:.2e}"
            );
            printed += 1;
        }
    }
    printed
}

fn fmt2(cell: &str) -> String {
    cell.parse::<f64>().map(|x| format!("{x:.2}")).unwrap_or_else(|_| cell.into())
}

fn fmt3(cell: &str) -> String {
    cell.parse::<f64>().map(|x| format!("{x:.3}")).unwrap_or_else(|_| cell.into())
}
