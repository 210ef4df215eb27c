//! Command-line driver: structure analysis, symbol evaluation, evolution of
//! Gaussian or grid states, and the verification experiments.
//!
//! Exit codes: 0 on success, 2 when a verification ran but failed, 1 on any
//! input or runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use fouk::io::{self, State, StructureView};
use fouk::linalg::DEFAULT_RANK_TOL;
use fouk::semigroup::{evolve, fourier_l2_norm, grid_evolve, GridState};
use fouk::symbol::{DEFAULT_OPT_SAMPLES, DEFAULT_QUAD_ORDER};
use fouk::verifier::{
    appendix_suite, fit_blowup_exponent, gevrey_growth, kolmogorov_suite, linear_grid, log_grid, non_smoothing_witness,
    subelliptic_check, KolmogorovOptions, VerificationReport, VerifierConfig,
};
use fouk::{compute_structure_with_tol, OUOperator, SymbolContext};
use nalgebra::DVector;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "FOUK_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fouk",
    version,
    about = "Fractional Ornstein-Uhlenbeck semigroups: structure, symbols, evolution, checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute S, r, the V_k spaces and the Kalman condition.
    Analyze(AnalyzeArgs),
    /// Evaluate the time-dependent symbol and related constants at one point.
    Symbol(SymbolArgs),
    /// Evolve a Gaussian or grid state.
    Evolve(EvolveArgs),
    /// Run a verification experiment.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
struct OperatorArgs {
    /// Operator JSON file `{"n", "B", "Q", "s"}`.
    #[arg(long, conflicts_with = "preset")]
    op: Option<PathBuf>,
    /// `kolmogorov:s=<v>[,d=<k>]` or `fractional-heat:n=<d>,s=<v>`.
    #[arg(long)]
    preset: Option<String>,
    /// Relative singular-value threshold for rank decisions.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    /// Gauss-Legendre order for the symbol integrals (at least 16).
    #[arg(long, default_value_t = DEFAULT_QUAD_ORDER)]
    quad_order: usize,
    /// Sphere scan size (dimensions 2 and 3) or multistart count (higher).
    #[arg(long, default_value_t = DEFAULT_OPT_SAMPLES)]
    opt_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct OutputArgs {
    /// Directory for output files; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the `generated_unix` field so reruns are byte-identical.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    operator: OperatorArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SymbolArgs {
    #[command(flatten)]
    operator: OperatorArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long)]
    t: f64,
    /// Frequency as comma-separated components.
    #[arg(long, allow_hyphen_values = true)]
    xi: String,
    /// Power of `q_t` in the decay diagnostic.
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Exponential weight in the decay diagnostic; defaults to `t`.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[command(flatten)]
    operator: OperatorArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// State JSON (`"type": "gaussian"` or `"type": "grid"`).
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    t: f64,
    /// Points per axis when sampling a Gaussian onto a grid.
    #[arg(long = "grid-points", default_value_t = 128)]
    grid_points: usize,
    /// Half side length of the box when sampling a Gaussian.
    #[arg(long = "grid-half-length", default_value_t = 8.0)]
    grid_half_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(subcommand)]
    experiment: Experiment,
}

#[derive(Debug, Clone, Args)]
struct CommonVerify {
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    t_points: Option<usize>,
}

impl CommonVerify {
    fn grid(&self, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
        Ok(log_grid(self.t_min.unwrap_or(lo), self.t_max.unwrap_or(hi), self.t_points.unwrap_or(points))?)
    }
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// Short-time blow-up exponent of directional derivatives.
    Smoothing {
        #[command(flatten)]
        operator: OperatorArgs,
        #[command(flatten)]
        common: CommonVerify,
        /// Derivative direction; repeat for a product of derivatives. By
        /// default each coordinate axis in S-perp is fitted separately.
        #[arg(long, allow_hyphen_values = true)]
        direction: Vec<String>,
    },
    /// Factorial growth of iterated derivatives at a fixed time.
    Gevrey {
        #[command(flatten)]
        operator: OperatorArgs,
        #[command(flatten)]
        common: CommonVerify,
        /// Direction family cycled through as the order grows.
        #[arg(long, allow_hyphen_values = true)]
        direction: Vec<String>,
        #[arg(long, default_value_t = 10)]
        m_max: usize,
        #[arg(long, default_value_t = 0.05)]
        t: f64,
    },
    /// Linear growth for a direction with a component in S.
    Witness {
        #[command(flatten)]
        operator: OperatorArgs,
        #[command(flatten)]
        common: CommonVerify,
        /// Direction; defaults to the first basis vector of S.
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_min: f64,
        #[arg(long, default_value_t = 50.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 25)]
        lambda_points: usize,
    },
    /// Subelliptic estimate over seeded Gaussian families.
    Subelliptic {
        #[command(flatten)]
        operator: OperatorArgs,
        #[command(flatten)]
        common: CommonVerify,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Exponent fits for the fractional Kolmogorov operator at short and long times.
    Kolmogorov {
        #[command(flatten)]
        common: CommonVerify,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        /// Number of (x, v) blocks.
        #[arg(long, default_value_t = 1)]
        blocks: usize,
        #[arg(long, default_value_t = 1.0)]
        long_t_min: f64,
        #[arg(long, default_value_t = 10.0)]
        long_t_max: f64,
        #[arg(long, default_value_t = DEFAULT_QUAD_ORDER)]
        quad_order: usize,
        #[arg(long, default_value_t = DEFAULT_OPT_SAMPLES)]
        opt_samples: usize,
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        rank_tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Lower bound for q_t and the constant M_t over a time grid.
    Appendix {
        #[command(flatten)]
        operator: OperatorArgs,
        #[command(flatten)]
        common: CommonVerify,
    },
}

/// Parses a preset specification.
pub fn preset(spec: &str) -> Result<OUOperator> {
    let (name, params) = spec.split_once(':').unwrap_or((spec, ""));
    let mut s = None;
    let mut n = None;
    let mut d = None;
    for kv in params.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("preset parameter '{kv}' is not key=value"))?;
        match k.trim() {
            "s" => s = Some(v.trim().parse::<f64>().with_context(|| format!("preset parameter s='{v}'"))?),
            "n" => n = Some(v.trim().parse::<usize>().with_context(|| format!("preset parameter n='{v}'"))?),
            "d" => d = Some(v.trim().parse::<usize>().with_context(|| format!("preset parameter d='{v}'"))?),
            other => bail!("unknown preset parameter '{other}'"),
        }
    }
    let s = s.ok_or_else(|| anyhow!("preset '{spec}' needs s=<value>"))?;
    Ok(match name {
        "kolmogorov" => {
            if n.is_some() {
                bail!("the kolmogorov preset takes s and d, not n");
            }
            OUOperator::kolmogorov(d.unwrap_or(1), s)?
        }
        "fractional-heat" => {
            if d.is_some() {
                bail!("the fractional-heat preset takes n and s, not d");
            }
            OUOperator::fractional_heat(n.ok_or_else(|| anyhow!("fractional-heat preset needs n=<dimension>"))?, s)?
        }
        other => bail!("unknown preset '{other}' (expected kolmogorov or fractional-heat)"),
    })
}

fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let vals = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("'{p}' is not a number in vector '{text}'")))
        .collect::<Result<Vec<f64>>>()?;
    if vals.is_empty() {
        bail!("empty vector");
    }
    Ok(DVector::from_vec(vals))
}

impl OperatorArgs {
    fn operator(&self) -> Result<OUOperator> {
        match (&self.op, &self.preset) {
            (Some(path), None) => {
                io::load_operator(path).with_context(|| format!("reading operator from {}", path.display()))
            }
            (None, Some(p)) => preset(p),
            _ => bail!("give exactly one of --op or --preset"),
        }
    }

    fn context(&self) -> Result<SymbolContext> {
        let op = self.operator()?;
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            bail!("--rank-tol must lie in (0, 1)");
        }
        let report = compute_structure_with_tol(&op, self.rank_tol);
        Ok(SymbolContext::with_settings(op, report, self.quad_order, self.opt_samples, self.seed)?)
    }
}

fn timestamp(output: &OutputArgs) -> Option<u64> {
    if output.no_timestamp {
        return None;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

fn emit(output: &OutputArgs, file_name: &str, text: &str) -> Result<()> {
    match &output.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(file_name);
            io::write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            if let Err(e) = writeln!(out, "{}", text.trim_end()) {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn emit_json(output: &OutputArgs, name: &str, mut value: Value) -> Result<()> {
    if let (Some(ts), Some(obj)) = (timestamp(output), value.as_object_mut()) {
        obj.insert("generated_unix".into(), json!(ts));
    }
    emit(output, &format!("{name}.json"), &serde_json::to_string_pretty(&value)?)
}

fn emit_report(common: &CommonVerify, mut report: VerificationReport) -> Result<bool> {
    report.generated_unix = timestamp(&common.output);
    let (ext, text) = match common.format {
        Format::Json => ("json", report.to_json()?),
        Format::Csv => ("csv", report.to_csv()?),
    };
    emit(&common.output, &format!("{}.{ext}", report.experiment), &text)?;
    if !report.pass {
        for n in &report.notes {
            eprintln!("note: {n}");
        }
        eprintln!("verification '{}' failed", report.experiment);
    }
    Ok(report.pass)
}

fn analyze(args: &AnalyzeArgs) -> Result<bool> {
    let ctx = args.operator.context()?;
    let mut value = serde_json::to_value(StructureView::from(&ctx.report))?;
    value["operator"] = serde_json::to_value(io::OperatorSpec::from_operator(&ctx.op))?;
    emit_json(&args.output, "analyze", value)?;
    Ok(true)
}

fn symbol(args: &SymbolArgs) -> Result<bool> {
    let ctx = args.operator.context()?;
    if !(args.t > 0.0 && args.t.is_finite()) {
        bail!("--t must be positive");
    }
    let xi = parse_vector(&args.xi)?;
    if xi.len() != ctx.n() {
        bail!("--xi has {} components, the operator acts on R^{}", xi.len(), ctx.n());
    }
    let tau = args.tau.unwrap_or(args.t);
    let t = args.t;
    let mut value = json!({
        "t": t,
        "xi": xi.iter().copied().collect::<Vec<_>>(),
        "a_t": ctx.a_t(t, &xi),
        "q_t": ctx.q_t(t, &xi),
        "cumulative_exponent": ctx.cumulative_exponent(t, &xi),
        "gamma": { "q": args.q, "tau": tau, "value": ctx.gamma(args.q, t, tau, &xi) },
        "s_component_norm": ctx.report.s_component(&xi).norm(),
    });
    if let Ok(k) = ctx.report.index(&xi) {
        value["index"] = json!(k);
    }
    if ctx.report.dim_s_perp() > 0 {
        value["m_t"] = json!(ctx.m_t(t)?);
        value["lower_bound_ratio"] = json!(ctx.lower_bound_ratio(t)?);
    }
    emit_json(&args.output, "symbol", value)?;
    Ok(true)
}

fn evolve_cmd(args: &EvolveArgs) -> Result<bool> {
    let ctx = args.operator.context()?;
    if !(args.t >= 0.0 && args.t.is_finite()) {
        bail!("--t must be non-negative");
    }
    let state = io::load_state(&args.state).with_context(|| format!("reading state from {}", args.state.display()))?;
    if state.n() != ctx.n() {
        bail!("state has dimension {}, the operator acts on R^{}", state.n(), ctx.n());
    }
    let t = args.t;
    let mut value = json!({ "t": t, "trace_b": ctx.op.trace_b() });
    let grid = match &state {
        State::Gaussian(u) => {
            value["initial_norm"] = json!(u.norm_l2());
            if ctx.n() <= fouk::semigroup::grid::MAX_GRID_DIM {
                Some(GridState::sample_gaussian(u, args.grid_points, args.grid_half_length)?)
            } else {
                value["note"] = json!("grid output needs n <= 2; only the semi-analytic norms are reported");
                None
            }
        }
        State::Grid(g) => {
            value["initial_norm"] = json!(g.norm_l2());
            Some(g.clone())
        }
    };
    if let State::Gaussian(u) = &state {
        if t > 0.0 {
            let ev = evolve(&ctx, u, t);
            value["semi_analytic_norm"] = json!(evolved_norm(&ctx, u, &ev)?);
        } else {
            value["semi_analytic_norm"] = json!(fourier_l2_norm(u)?);
        }
    }
    if let Some(g) = grid {
        let out = grid_evolve(&ctx, &g, t)?;
        value["grid"] = json!({ "n": g.n(), "N": g.size(), "L": g.half_length() });
        value["final_norm"] = json!(out.state.norm_l2());
        value["resampling_error"] = json!(out.resampling_error);
        value["warnings"] = json!(out.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>());
        if let State::Gaussian(u) = &state {
            let ev = evolve(&ctx, u, t);
            value["fourier_error"] = json!(out.state.fourier_error(|k| ev.value(k)));
        }
        for w in &out.warnings {
            eprintln!("warning: {w}");
        }
        match &args.output.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("evolved.c64");
                io::write_grid(&path, &out.state)?;
                value["file"] = json!("evolved.c64");
            }
            None => eprintln!("note: pass --out to write the evolved grid"),
        }
    }
    emit_json(&args.output, "evolve", value)?;
    Ok(true)
}

fn evolved_norm(
    ctx: &SymbolContext,
    u: &fouk::semigroup::GaussianState,
    ev: &fouk::semigroup::EvolvedFourierState,
) -> Result<f64> {
    use fouk::semigroup::{integrate_frequency, Envelope};
    let env = Envelope::of_evolved(u, &ctx.flow_t(ev.t())).for_symbol(ctx);
    let integral = integrate_frequency(&env, 0, &|xi: &DVector<f64>| ev.value(xi).norm_sqr())?;
    Ok((integral / (2.0 * std::f64::consts::PI).powi(u.n() as i32)).sqrt())
}

fn axis(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

fn directions(ctx: &SymbolContext, given: &[String]) -> Result<Vec<DVector<f64>>> {
    let dirs = given.iter().map(|d| parse_vector(d)).collect::<Result<Vec<_>>>()?;
    if let Some(d) = dirs.iter().find(|d| d.len() != ctx.n()) {
        bail!("direction has {} components, the operator acts on R^{}", d.len(), ctx.n());
    }
    Ok(dirs)
}

/// Coordinate axes lying in S-perp.
fn smoothing_axes(ctx: &SymbolContext) -> Vec<DVector<f64>> {
    (0..ctx.n()).map(|i| axis(ctx.n(), i)).filter(|e| ctx.report.index(e).is_ok()).collect()
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let cfg = VerifierConfig::default();
    match &args.experiment {
        Experiment::Smoothing { operator, common, direction } => {
            let ctx = operator.context()?;
            let grid = common.grid(1e-3, 1e-1, 20)?;
            let given = directions(&ctx, direction)?;
            let report = if given.is_empty() {
                let axes = smoothing_axes(&ctx);
                if axes.is_empty() {
                    bail!("no coordinate axis lies in S-perp; pass --direction explicitly");
                }
                let mut r = VerificationReport::new("smoothing");
                r.pass = true;
                for e in axes {
                    let i = e.iter().position(|v| *v == 1.0).unwrap_or(0);
                    let name = format!("e{}", i + 1);
                    let fit = fit_blowup_exponent(&ctx, &[e], &grid, &cfg)?;
                    r.absorb(&name, fit.into_report(&name, &cfg));
                }
                r
            } else {
                let mut r = fit_blowup_exponent(&ctx, &given, &grid, &cfg)?.into_report("smoothing", &cfg);
                r.experiment = "smoothing".into();
                r
            };
            emit_report(common, report)
        }
        Experiment::Gevrey { operator, common, direction, m_max, t } => {
            let ctx = operator.context()?;
            let mut family = directions(&ctx, direction)?;
            if family.is_empty() {
                family = smoothing_axes(&ctx).into_iter().take(1).collect();
                if family.is_empty() {
                    bail!("no coordinate axis lies in S-perp; pass --direction explicitly");
                }
            }
            emit_report(common, gevrey_growth(&ctx, &family, *m_max, *t, &cfg)?)
        }
        Experiment::Witness { operator, common, xi, t, lambda_min, lambda_max, lambda_points } => {
            let ctx = operator.context()?;
            let xi = match xi {
                Some(x) => {
                    let v = parse_vector(x)?;
                    if v.len() != ctx.n() {
                        bail!("--xi has {} components, the operator acts on R^{}", v.len(), ctx.n());
                    }
                    v
                }
                None if ctx.report.dim_s() > 0 => ctx.report.s_basis.column(0).into_owned(),
                None => bail!("S is trivial for this operator, so no direction can witness non-smoothing"),
            };
            if *lambda_points < 2 {
                bail!("--lambda-points must be at least 2");
            }
            let grid = linear_grid(*lambda_min, *lambda_max, *lambda_points);
            emit_report(common, non_smoothing_witness(&ctx, &xi, *t, &grid, &cfg)?)
        }
        Experiment::Subelliptic { operator, common, samples } => {
            let ctx = operator.context()?;
            let seed = ctx.seed;
            emit_report(common, subelliptic_check(&ctx, *samples, seed, &cfg)?)
        }
        Experiment::Kolmogorov {
            common,
            s,
            blocks,
            long_t_min,
            long_t_max,
            quad_order,
            opt_samples,
            rank_tol,
            seed,
        } => {
            let opts = KolmogorovOptions {
                s: *s,
                blocks: *blocks,
                short_grid: common.grid(1e-3, 1e-1, 20)?,
                long_grid: log_grid(*long_t_min, *long_t_max, common.t_points.unwrap_or(20))?,
                quad_order: *quad_order,
                opt_samples: *opt_samples,
                seed: *seed,
                rank_tol: *rank_tol,
            };
            emit_report(common, kolmogorov_suite(&opts, &cfg)?)
        }
        Experiment::Appendix { operator, common } => {
            let ctx = operator.context()?;
            let hi = if ctx.op.is_nilpotent() { 10.0 } else { 0.5 };
            let grid = common.grid(1e-3, hi, 20)?;
            emit_report(common, appendix_suite(&ctx, &grid, &cfg)?)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}='{v}' is not a thread count"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be positive");
        }
        // A pool built earlier in the same process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Symbol(a) => symbol(a),
        Command::Evolve(a) => evolve_cmd(a),
        Command::Verify(a) => verify(a),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Path of a report written by `verify` into `dir`.
pub fn report_path(dir: &Path, experiment: &str, csv: bool) -> PathBuf {
    dir.join(format!("{experiment}.{}", if csv { "csv" } else { "json" }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let k = preset("kolmogorov:s=0.5,d=2").unwrap();
        assert_eq!((k.n(), k.s()), (4, 0.5));
        assert_eq!(k.q()[(2, 2)], 4.0);
        let h = preset("fractional-heat:n=3, s=1").unwrap();
        assert_eq!(h.q(), &(nalgebra::DMatrix::identity(3, 3) * 2.0));
        for bad in ["kolmogorov", "kolmogorov:s=1,n=2", "fractional-heat:s=1", "heat:s=1", "kolmogorov:s=x", "kolmogorov:s"] {
            assert!(preset(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn vectors() {
        assert_eq!(parse_vector(" 1, -2.5").unwrap(), DVector::from_vec(vec![1.0, -2.5]));
        assert!(parse_vector("1,,2").is_err());
    }
}
