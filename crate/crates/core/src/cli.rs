//! Command-line front end: argument parsing, config files, and the command
//! implementations behind the `sosm` binary.
//!
//! Every command writes one JSON report (`<command>.json`) and zero or more
//! SVG plots into the output directory, chosen by `--out`, then the
//! `SOSM_OUT_DIR` environment variable, then `./sosm-out`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::csvio::{parse_cohort_csv, write_cohort_csv};
use crate::error::{Result, SosmError};
use crate::geometry::{curve_energy, polyline_curvature, weighted_curve_energy, Polyline};
use crate::graph::LaplacianKind;
use crate::kernel::{default_sigma, WeightSource};
use crate::objective::{embed, ContextOptions, Init, OptimizerConfig, Penalty, SosmObjectiveContext};
use crate::report::{digest, write_report, ExperimentReport};
use crate::ricciflow::SupportPolicy;
use crate::svg::{render_svg, PlotKind, Series};
use crate::transport::{cross_curvature_cost, sinkhorn, TransportProblem};
use crate::verify::{
    flow_convergence_experiment, make_bifurcation_cohort, make_curve_cohort, make_ring_cohort, make_swiss_cohort,
    merge_reports, stability_experiment, survival_gradient_experiment, survival_gradient_score, FlowParams,
    Perturbation, SyntheticCohort,
};

pub const OUT_DIR_ENV: &str = "SOSM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "sosm-out";

#[derive(Debug, Parser)]
#[command(name = "sosm", version, about = "Survival-weighted curvature embeddings, transport and flow audits")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// `key = value` file; command-line flags of the same name take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (falls back to $SOSM_OUT_DIR, then ./sosm-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Curvature penalty variant.
    #[arg(long, global = true, default_value = "pairwise", value_parser = ["pairwise", "absolute"])]
    pub penalty: String,
    /// Graph Laplacian kind.
    #[arg(long, global = true, default_value = "combinatorial", value_parser = ["combinatorial", "random-walk"])]
    pub laplacian: String,
    /// Weight source: survival kernel or feature-space proxy.
    #[arg(long, global = true, default_value = "survival", value_parser = ["survival", "proxy"])]
    pub weights: String,
    /// Neighbours per sample in the kNN graph.
    #[arg(long, global = true, default_value_t = 8)]
    pub k: usize,
    /// Latent dimension.
    #[arg(long, global = true, default_value_t = 2)]
    pub d: usize,
    /// Kernel bandwidth (default: median pairwise difference).
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Flow step size.
    #[arg(long, global = true, default_value_t = 0.05)]
    pub eta: f64,
    /// Entropic regularization for transport.
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub reg: f64,
    /// Iterations of the command's main loop (optimizer: 500, flow: 30).
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Noise level for synthetic cohorts.
    #[arg(long, global = true, default_value_t = 0.02)]
    pub noise: f64,
    /// Optimizer initialization.
    #[arg(long, global = true, default_value = "spectral", value_parser = ["spectral", "random"])]
    pub init: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (writes cohort.csv).
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Fit an embedding to a cohort CSV.
    #[command(args_override_self = true)]
    Embed(EmbedArgs),
    /// Curve energy of a polyline CSV.
    #[command(args_override_self = true)]
    Energy(EnergyArgs),
    /// Second-order stability of curve energy around a straight segment.
    #[command(args_override_self = true)]
    Stability(StabilityArgs),
    /// Curvature flow on a cohort's kNN graph.
    #[command(args_override_self = true)]
    Flow(FlowArgs),
    /// Curvature-weighted transport from the initial to the fitted embedding.
    #[command(args_override_self = true)]
    Transport(InputArgs),
    /// Run all three audit experiments; exit status 0 iff all pass.
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "curve", value_parser = ["curve", "swiss", "bifurcation", "ring"])]
    pub family: String,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Ambient dimension.
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub branch_point: f64,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Cohort CSV (`id`, optional `survival_time` / `censored`, features).
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Also write the fitted coordinates as CSV.
    #[arg(long)]
    pub save_embedding: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EnergyArgs {
    /// Numeric point columns, plus an optional `t` column of vertex times.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the polyline as closed.
    #[arg(long)]
    pub closed: bool,
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    #[arg(long, default_value_t = 201)]
    pub m: usize,
    /// `zero`, `sine`, `random-smooth` or `random-smooth:<seed>`.
    #[arg(long, default_value = "sine")]
    pub perturbation: String,
    #[arg(long, default_value = "0.1,0.01,0.001", value_delimiter = ',')]
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0.5)]
    pub idleness: f64,
    /// Fail instead of truncating neighbourhoods larger than the exact solver allows.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Cohort CSV; without it a curve cohort is synthesized from --seed and --noise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub idleness: f64,
    #[arg(long)]
    pub exact: bool,
    /// Optimizer iterations for the survival-gradient experiment.
    #[arg(long, default_value_t = 500)]
    pub embed_iters: usize,
    #[arg(long, default_value_t = 201)]
    pub m: usize,
    #[arg(long, default_value = "0.1,0.01,0.001", value_delimiter = ',')]
    pub epsilons: Vec<f64>,
}

const SUBCOMMANDS: [&str; 7] = ["synth", "embed", "energy", "stability", "flow", "transport", "verify"];

/// Turns `key = value` lines into `--key value` arguments. `true` becomes a
/// bare flag and `false` is dropped.
pub fn config_args(text: &str, path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| SosmError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: expected 'key = value'", n + 1),
        })?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            continue;
        }
        match value.trim() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => {
                out.push(format!("--{key}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Splices config-file arguments in front of the explicit ones so that the
/// command line wins.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut config = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            config = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        }
    }
    let Some(config) = config else { return Ok(args) };
    let path = PathBuf::from(&config);
    let text = std::fs::read_to_string(&path).map_err(|e| SosmError::io(&path, e))?;
    let extra = config_args(&text, &path)?;
    let at = strs.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())).map_or(args.len(), |p| p + 1);
    let mut out = args[..at].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

/// Parses and runs; returns the process exit status.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(pass) => i32::from(!pass),
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn out_dir(global: &GlobalArgs) -> PathBuf {
    global
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Runs a parsed command. The result is the verdict for `verify` and `true`
/// for completed compute commands.
pub fn run(cli: &Cli) -> Result<bool> {
    let start = Instant::now();
    let g = &cli.global;
    let out = out_dir(g);
    std::fs::create_dir_all(&out).map_err(|e| SosmError::io(&out, e))?;
    let (name, mut report) = match &cli.command {
        Command::Synth(a) => ("synth", synth(g, a, &out)?),
        Command::Embed(a) => ("embed", embed_cmd(g, a, &out)?),
        Command::Energy(a) => ("energy", energy_cmd(g, a, &out)?),
        Command::Stability(a) => ("stability", stability_cmd(a, &out)?),
        Command::Flow(a) => ("flow", flow_cmd(g, a, &out)?),
        Command::Transport(a) => ("transport", transport_cmd(g, a, &out)?),
        Command::Verify(a) => ("verify", verify_cmd(g, a, &out)?),
    };
    report.name = name.to_string();
    report.seed = g.seed;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    write_report(&report, &out.join(format!("{name}.json")))?;
    Ok(report.pass)
}

fn context_options(g: &GlobalArgs) -> Result<ContextOptions> {
    Ok(ContextOptions {
        k: g.k,
        laplacian: g.laplacian.parse::<LaplacianKind>()?,
        weights: g.weights.parse::<WeightSource>()?,
        sigma: g.sigma,
        penalty: g.penalty.parse::<Penalty>()?,
    })
}

fn optimizer(g: &GlobalArgs, iters: usize) -> Result<OptimizerConfig> {
    Ok(OptimizerConfig {
        d: g.d,
        max_iters: iters,
        seed: g.seed,
        init: g.init.parse::<Init>()?,
        ..OptimizerConfig::default()
    })
}

fn record_globals(r: &mut ExperimentReport, g: &GlobalArgs) {
    r.param("penalty", g.penalty.as_str())
        .param("laplacian", g.laplacian.as_str())
        .param("weights", g.weights.as_str())
        .param("k", g.k)
        .param("d", g.d)
        .param("init", g.init.as_str());
    if let Some(s) = g.sigma {
        r.param("sigma", s);
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| SosmError::io(path, e))?;
    Ok(digest(&bytes))
}

fn synth(g: &GlobalArgs, a: &SynthArgs, out: &Path) -> Result<ExperimentReport> {
    let s = match a.family.as_str() {
        "curve" => make_curve_cohort(a.n, a.dim, g.noise, g.seed)?,
        "swiss" => make_swiss_cohort(a.n, a.dim, g.noise, g.seed)?,
        "bifurcation" => make_bifurcation_cohort(a.n, a.dim, a.branch_point, a.separation, g.seed)?,
        "ring" => make_ring_cohort(a.n, a.dim)?,
        other => return Err(SosmError::Parameter(format!("unknown family '{other}'"))),
    };
    let path = out.join("cohort.csv");
    write_cohort_csv(&s.cohort, &path)?;
    let mut r = ExperimentReport::new("synth", g.seed);
    r.inputs_digest = s.digest();
    r.param("family", s.family.to_string()).param("n", a.n).param("dim", a.dim).param("noise", s.noise);
    if s.family == crate::verify::Family::Bifurcation {
        r.param("branch_point", a.branch_point).param("separation", a.separation);
    }
    r.metric("samples", s.cohort.len() as f64).metric("features", s.cohort.dim() as f64);
    let f = s.cohort.features();
    let pts = (0..s.cohort.len()).map(|i| (f[[i, 0]], f[[i, 1]])).collect();
    render_svg(&[Series::new("features 0-1", pts)], PlotKind::Scatter, "synthetic cohort", &out.join("synth.svg"))?;
    r.finalize();
    Ok(r)
}

fn embed_cmd(g: &GlobalArgs, a: &EmbedArgs, out: &Path) -> Result<ExperimentReport> {
    let path = &a.input.input;
    let parsed = parse_cohort_csv(path)?;
    let cohort = &parsed.cohort;
    let ctx = SosmObjectiveContext::from_cohort(cohort, &context_options(g)?)?;
    let cfg = optimizer(g, g.iters.unwrap_or(500))?;
    let run = embed(cohort, &ctx, &cfg)?;
    let mut r = ExperimentReport::new("embed", g.seed);
    r.inputs_digest = file_digest(path)?;
    record_globals(&mut r, g);
    r.param("max_iters", cfg.max_iters);
    if !parsed.dropped_columns.is_empty() {
        r.param("dropped_columns", parsed.dropped_columns.join(","));
    }
    r.metric("initial_loss", run.initial_loss)
        .metric("final_loss", run.final_loss)
        .metric("iterations", run.iterations as f64)
        .metric("converged", f64::from(u8::from(run.converged)));
    let z = run.embedding.coords();
    if let Some(t) = cohort.survival() {
        r.metric("abs_spearman_axis0", survival_gradient_score(&run.embedding.column(0), t));
    }
    let pts = (0..z.nrows()).map(|i| (z[[i, 0]], if z.ncols() > 1 { z[[i, 1]] } else { 0.0 })).collect();
    render_svg(&[Series::new("embedding", pts)], PlotKind::Scatter, "embedding", &out.join("embed.svg"))?;
    let losses: Vec<f64> = run.trace.iter().map(|e| e.loss).collect();
    render_svg(&[Series::indexed("loss", &losses)], PlotKind::Trace, "loss trace", &out.join("embed_trace.svg"))?;
    if let Some(p) = &a.save_embedding {
        write_embedding(cohort.ids(), &z.to_owned(), p)?;
    }
    r.finalize();
    Ok(r)
}

fn write_embedding(ids: &[String], z: &Array2<f64>, path: &Path) -> Result<()> {
    let mut text = String::from("id");
    for c in 0..z.ncols() {
        text.push_str(&format!(",z{c}"));
    }
    text.push('\n');
    for (i, id) in ids.iter().enumerate() {
        text.push_str(id);
        for c in 0..z.ncols() {
            text.push_str(&format!(",{}", z[[i, c]]));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| SosmError::io(path, e))
}

/// Reads a polyline CSV: every column except `t` is a coordinate.
fn read_polyline(path: &Path, closed: bool) -> Result<(Polyline, Option<Vec<f64>>)> {
    let bad = |m: String| SosmError::Parse { path: path.to_path_buf(), message: m };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    let t_col = header.iter().position(|h| h == "t");
    let coords: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != t_col).collect();
    let mut pts = Vec::new();
    let mut times = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |c: usize| {
            let cell = rec.get(c).unwrap_or("");
            cell.parse::<f64>()
                .map_err(|_| bad(format!("row {}, column {}: '{cell}' is not a number", r + 1, header[c])))
        };
        for &c in &coords {
            pts.push(num(c)?);
        }
        if let Some(c) = t_col {
            times.push(num(c)?);
        }
    }
    let m = pts.len() / coords.len().max(1);
    let points = Array2::from_shape_vec((m, coords.len()), pts).map_err(|e| bad(e.to_string()))?;
    let line = if closed { Polyline::closed(points)? } else { Polyline::open(points)? };
    Ok((line, t_col.map(|_| times)))
}

fn energy_cmd(g: &GlobalArgs, a: &EnergyArgs, out: &Path) -> Result<ExperimentReport> {
    let (line, times) = read_polyline(&a.input, a.closed)?;
    let mut r = ExperimentReport::new("energy", g.seed);
    r.inputs_digest = file_digest(&a.input)?;
    r.param("closed", a.closed).param("vertices", line.len());
    r.metric("energy", curve_energy(&line)?).metric("length", line.total_length());
    if let Some(t) = times {
        let sigma = match g.sigma {
            Some(s) => s,
            None => default_sigma(&t)?,
        };
        r.param("sigma", sigma);
        r.metric("weighted_energy", weighted_curve_energy(&line, &t, sigma)?);
    }
    let profile = polyline_curvature(&line)?;
    let s = line.arclengths();
    let curv = profile.vertex_indices.iter().zip(&profile.kappas).map(|(&i, &k)| (s[i], k)).collect();
    render_svg(&[Series::new("curvature", curv)], PlotKind::Line, "curvature vs arc length", &out.join("energy.svg"))?;
    r.finalize();
    Ok(r)
}

fn stability_cmd(a: &StabilityArgs, out: &Path) -> Result<ExperimentReport> {
    let pert: Perturbation = a.perturbation.parse()?;
    let r = stability_experiment(a.m, pert, &a.epsilons);
    let pts: Vec<(f64, f64)> = a
        .epsilons
        .iter()
        .enumerate()
        .filter_map(|(k, &e)| r.get_metric(&format!("delta_energy.{k}")).filter(|&d| d > 0.0).map(|d| (e.log10(), d.log10())))
        .collect();
    if !pts.is_empty() {
        render_svg(&[Series::new("log10 dE vs log10 eps", pts)], PlotKind::Trace, "energy increase", &out.join("stability.svg"))?;
    }
    Ok(r)
}

fn flow_params(g: &GlobalArgs, idleness: f64, exact: bool) -> FlowParams {
    FlowParams {
        k: g.k,
        idleness,
        eta: g.eta,
        iters: g.iters.unwrap_or(30),
        support: if exact { SupportPolicy::Exact } else { SupportPolicy::Truncate },
    }
}

fn trace_plot(r: &ExperimentReport, prefix: &str, path: &Path) -> Result<()> {
    let var: Vec<f64> = r
        .metrics
        .iter()
        .filter(|(k, _)| k.starts_with(&format!("{prefix}trace.variance.")))
        .map(|&(_, v)| v)
        .collect();
    if var.is_empty() {
        return Ok(());
    }
    render_svg(&[Series::indexed("curvature variance", &var)], PlotKind::Trace, "flow trace", path)
}

fn flow_cmd(g: &GlobalArgs, a: &FlowArgs, out: &Path) -> Result<ExperimentReport> {
    let parsed = parse_cohort_csv(&a.input.input)?;
    let cohort = SyntheticCohort::observed(parsed.cohort, g.seed)?;
    let mut r = flow_convergence_experiment(&cohort, &flow_params(g, a.idleness, a.exact));
    r.inputs_digest = file_digest(&a.input.input)?;
    trace_plot(&r, "", &out.join("flow.svg"))?;
    // a completed flow run is a successful compute command; the recorded
    // inequalities stay in the metrics
    if r.get_metric("failed").is_some() {
        return Err(SosmError::Precondition(format!("flow failed: {:?}", r.get_param("error"))));
    }
    r.tolerances.clear();
    r.finalize();
    Ok(r)
}

fn transport_cmd(g: &GlobalArgs, a: &InputArgs, out: &Path) -> Result<ExperimentReport> {
    let parsed = parse_cohort_csv(&a.input)?;
    let cohort = &parsed.cohort;
    let ctx = SosmObjectiveContext::from_cohort(cohort, &context_options(g)?)?;
    let run = embed(cohort, &ctx, &optimizer(g, g.iters.unwrap_or(500))?)?;
    let cost = cross_curvature_cost(&run.initial, &run.embedding, ctx.laplacian())?;
    let problem = TransportProblem::uniform(cost)?;
    let plan = sinkhorn(&problem, g.reg, 200_000, 1e-9)?;
    let mut r = ExperimentReport::new("transport", g.seed);
    r.inputs_digest = file_digest(&a.input)?;
    record_globals(&mut r, g);
    r.param("reg", g.reg);
    r.metric("ot_value", plan.objective)
        .metric("marginal_residual", plan.marginal_residual)
        .metric("sinkhorn_iterations", plan.iterations as f64)
        .metric("log_domain", f64::from(u8::from(plan.log_domain)))
        .metric("initial_loss", run.initial_loss)
        .metric("final_loss", run.final_loss);
    let n = cohort.len();
    let mass: Vec<f64> = (0..n).map(|i| plan.coupling[[i, i]] * n as f64).collect();
    render_svg(&[Series::indexed("diagonal mass fraction", &mass)], PlotKind::Line, "coupling diagonal", &out.join("transport.svg"))?;
    r.finalize();
    Ok(r)
}

fn verify_cmd(g: &GlobalArgs, a: &VerifyArgs, out: &Path) -> Result<ExperimentReport> {
    let (cohort, digest_override) = match &a.input {
        Some(p) => (SyntheticCohort::observed(parse_cohort_csv(p)?.cohort, g.seed)?, Some(file_digest(p)?)),
        None => (make_curve_cohort(a.n, a.dim, g.noise, g.seed)?, None),
    };
    let opts = context_options(g)?;
    let gradient = match SosmObjectiveContext::from_cohort(&cohort.cohort, &opts) {
        Ok(ctx) => survival_gradient_experiment(&cohort, &optimizer(g, a.embed_iters)?, &ctx),
        Err(e) => crate::verify::failed_report("survival_gradient", g.seed, &e),
    };
    let stability = stability_experiment(a.m, Perturbation::Sine, &a.epsilons);
    let flow = flow_convergence_experiment(&cohort, &flow_params(g, a.idleness, a.exact));
    trace_plot(&flow, "", &out.join("verify_flow.svg"))?;
    let mut r = merge_reports("verify", g.seed, &[gradient, stability, flow]);
    if let Some(d) = digest_override {
        r.inputs_digest = d;
    }
    record_globals(&mut r, g);
    r.finalize();
    Ok(r)
}
