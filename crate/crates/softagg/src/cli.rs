//! The `softagg` command line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use softagg_core::estimator::DEFAULT_DELTA0;
use softagg_core::evaluation::{align_and_score, compare_p_with_estimate, singular_diagnostics, SingularDiagnostics};
use softagg_core::linalg::hash_matrix;
use softagg_core::markov::{
    count_transitions, mixing_time, sample_trajectory, stationary_distribution, InitialState, Trajectory,
    STATIONARY_MAX_ITER, STATIONARY_TOL,
};
use softagg_core::sweep::{AnchorCount, SweepConfig, SweepMode};
use softagg_core::synth::{check_regularity, generate_model, RegularityReport, SynthSpec};
use softagg_core::{
    estimate, estimate_oracle, AggregationEstimate, EstimateOptions, Hunter, SvdMethod, TransitionCounts,
    ZeroMassPolicy,
};

use crate::archive::{read_estimate, read_model, write_estimate, write_model};
use crate::config::{parse_size_grid, parse_usize_list, resolve, GlobalConfig};
use crate::error::{CliError, ExitCode, Result};
use crate::ingest::{ingest_coordinate_trips, ingest_labeled_trips, CoordinateColumns, GridSpec};
use crate::io::{read_counts, read_trajectory, write_counts, write_json, write_trajectory};
use crate::sweep::{run_sweep, SweepStatus};

#[derive(Debug, Parser)]
#[command(name = "softagg", version, about = "Soft state aggregation of Markov chains from transition counts")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Base random seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps (default: logical cores)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, default_value = "warn",
          value_parser = ["off", "error", "warn", "info", "debug", "trace"])]
    pub log_level: String,
    /// JSON config file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or load) a model, sample a trajectory and count transitions
    Simulate(SimulateArgs),
    /// Turn trip records into a count file
    Ingest(IngestArgs),
    /// Estimate U, V and the anchor states from counts
    Estimate(EstimateArgs),
    /// Compare an estimate with the true model
    Evaluate(EvaluateArgs),
    /// Run an error-rate sweep over synthetic models
    Sweep(SweepArgs),
    /// Regularity statistics, mixing time and singular-vector diagnostics
    Diagnose(DiagnoseArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Number of states
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of meta-states
    #[arg(long)]
    pub r: Option<usize>,
    /// Anchor states per meta-state
    #[arg(long)]
    pub anchors: Option<usize>,
    /// Number of transitions to sample
    #[arg(long)]
    pub n: Option<usize>,
    /// Dirichlet concentration for rows of U and non-anchor rows of V
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Load this model directory instead of generating one
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Initial state index, or "stationary"
    #[arg(long)]
    pub x0: Option<String>,
    /// Skip writing trajectory.txt
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub no_trajectory: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestArgs {
    /// CSV file with a header row
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Origin label column
    #[arg(long)]
    pub origin_col: Option<String>,
    /// Destination label column
    #[arg(long)]
    pub dest_col: Option<String>,
    /// Grid for coordinate trips: lat_min,lat_max,lon_min,lon_max,rows,cols
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub origin_lat: Option<String>,
    #[arg(long)]
    pub origin_lon: Option<String>,
    #[arg(long)]
    pub dest_lat: Option<String>,
    #[arg(long)]
    pub dest_lon: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateArgs {
    /// Count file ("p n" header, then "i j count" lines)
    #[arg(long, value_name = "FILE")]
    pub counts: Option<PathBuf>,
    /// Trajectory file (one state per line)
    #[arg(long, value_name = "FILE")]
    pub trajectory: Option<PathBuf>,
    /// State count for --trajectory (default: largest state + 1)
    #[arg(long)]
    pub p: Option<usize>,
    /// Noiseless mode on this model directory
    #[arg(long, value_name = "MODEL_DIR")]
    pub oracle: Option<PathBuf>,
    /// Number of meta-states
    #[arg(long)]
    pub r: Option<usize>,
    /// Anchor threshold
    #[arg(long)]
    pub delta0: Option<f64>,
    /// Vertex hunter: spa or cluster-sp
    #[arg(long)]
    pub hunter: Option<String>,
    /// Cluster count for cluster-sp
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Remove states without in- or out-transitions before estimating
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub drop_unvisited: bool,
    /// Add this pseudo-count to every entry
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// SCORE floor as a multiple of the median |h_1| entry
    #[arg(long)]
    pub floor_factor: Option<f64>,
    /// SVD method: auto, dense or randomized
    #[arg(long)]
    pub svd: Option<String>,
    /// Also write timings.json
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub timings: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Estimate directory
    #[arg(long, value_name = "DIR")]
    pub estimate: Option<PathBuf>,
    /// Model directory holding the truth
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Count file, to compare transition-matrix estimates
    #[arg(long, value_name = "FILE")]
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    /// fixed_p or fixed_ratio; each comes with default settings
    #[arg(long, alias = "preset")]
    #[serde(alias = "preset")]
    pub mode: Option<String>,
    /// States (fixed_p)
    #[arg(long)]
    pub p: Option<usize>,
    /// Trajectory lengths (fixed_p), e.g. 1e4,1e4.5,...,1e6
    #[arg(long)]
    pub n: Option<String>,
    /// n / p (fixed_ratio)
    #[arg(long)]
    pub ratio: Option<f64>,
    /// State counts (fixed_ratio), e.g. 100,200,400,800
    #[arg(long)]
    pub p_grid: Option<String>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Anchor states per meta-state
    #[arg(long)]
    pub anchors: Option<usize>,
    /// Anchor states per meta-state as a fraction of p
    #[arg(long)]
    pub anchor_fraction: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub hunter: Option<String>,
    /// Stop after this many new cells (resume later)
    #[arg(long, hide = true)]
    pub max_cells: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseArgs {
    /// Model directory
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Estimate directory with a stored decomposition
    #[arg(long, value_name = "DIR")]
    pub estimate: Option<PathBuf>,
    /// Largest power of P tried for the mixing time
    #[arg(long)]
    pub k_max: Option<usize>,
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn out_dir(g: &GlobalConfig) -> Result<PathBuf> {
    let out = need(&g.out, "out")?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok(out)
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Settings recorded in manifests. Output location and worker count do
/// not affect results and are left out.
fn recorded_config<T: Serialize>(g: &GlobalConfig, args: &T) -> serde_json::Value {
    let mut v = serde_json::to_value(args).expect("serializable args");
    if let serde_json::Value::Object(m) = &mut v {
        m.retain(|_, x| !x.is_null());
        if let Some(seed) = g.seed {
            m.insert("seed".into(), json!(seed));
        }
    }
    v
}

pub fn parse_hunter(name: Option<&str>, clusters: Option<usize>, seed: u64) -> Result<Hunter> {
    match name.unwrap_or("spa") {
        "spa" => {
            if clusters.is_some() {
                return Err(CliError::usage("--clusters requires --hunter cluster-sp"));
            }
            Ok(Hunter::Spa)
        }
        "cluster-sp" => Ok(Hunter::ClusterSp { clusters, seed }),
        other => Err(CliError::usage(format!("unknown hunter {other:?}; expected spa or cluster-sp"))),
    }
}

fn hunter_json(h: &Hunter) -> serde_json::Value {
    match h {
        Hunter::Spa => json!({"name": "spa"}),
        Hunter::ClusterSp { clusters, seed } => json!({"name": "cluster-sp", "clusters": clusters, "seed": seed}),
    }
}

#[derive(Debug, Serialize)]
struct RegularityJson {
    pi_min_scaled: f64,
    pi_max_scaled: f64,
    meta_mass_max_scaled: f64,
    u_gram_min_scaled: f64,
    v_gram_min_scaled: f64,
    eigengap_scaled: f64,
    /// `null` when some meta-state transition probability is zero.
    meta_transition_ratio: Option<f64>,
    /// `null` when every state is an anchor.
    anchor_margin: Option<f64>,
    deltas: Vec<Option<f64>>,
}

impl From<&RegularityReport> for RegularityJson {
    fn from(r: &RegularityReport) -> Self {
        Self {
            pi_min_scaled: r.pi_min_scaled,
            pi_max_scaled: r.pi_max_scaled,
            meta_mass_max_scaled: r.meta_mass_max_scaled,
            u_gram_min_scaled: r.u_gram_min_scaled,
            v_gram_min_scaled: r.v_gram_min_scaled,
            eigengap_scaled: r.eigengap_scaled,
            meta_transition_ratio: finite(r.meta_transition_ratio),
            anchor_margin: finite(r.anchor_margin),
            deltas: r.deltas.iter().map(|&d| finite(d)).collect(),
        }
    }
}

fn parse_x0(s: Option<&str>) -> Result<InitialState> {
    match s.unwrap_or("stationary") {
        "stationary" => Ok(InitialState::Stationary),
        other => other
            .parse()
            .map(InitialState::State)
            .map_err(|_| CliError::usage(format!("--x0 must be a state index or \"stationary\", got {other:?}"))),
    }
}

fn cmd_simulate(g: &GlobalConfig, a: &SimulateArgs) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let n = need(&a.n, "n")?;
    let x0 = parse_x0(a.x0.as_deref())?;
    let (model, spec) = match &a.model {
        Some(dir) => {
            if a.p.is_some() || a.r.is_some() || a.anchors.is_some() || a.alpha.is_some() {
                return Err(CliError::usage("--model cannot be combined with --p, --r, --anchors or --alpha"));
            }
            (read_model(dir)?, None)
        }
        None => {
            let spec = SynthSpec {
                p: need(&a.p, "p")?,
                r: need(&a.r, "r")?,
                anchors_per_meta: need(&a.anchors, "anchors")?,
                dirichlet_alpha: a.alpha.unwrap_or(1.0),
                seed,
            };
            spec.validate()?;
            (generate_model(&spec)?, Some(spec))
        }
    };
    if n == 0 {
        return Err(CliError::usage("--n must be >= 1"));
    }
    let out = out_dir(g)?;
    let trajectory_seed = seed.wrapping_add(1);
    let p_true = model.transition_matrix()?;
    let traj: Trajectory = sample_trajectory(&p_true, n, x0, trajectory_seed)?;
    let counts = count_transitions(&traj, model.p())?;
    write_model(&out.join("model"), &model, spec.as_ref())?;
    if !a.no_trajectory {
        write_trajectory(&out.join("trajectory.txt"), &traj)?;
    }
    write_counts(&out.join("counts.txt"), &counts)?;
    write_json(&out.join("regularity.json"), &RegularityJson::from(&check_regularity(&model)?))?;
    let manifest = json!({
        "command": "simulate",
        "version": env!("CARGO_PKG_VERSION"),
        "config": recorded_config(g, a),
        "p": model.p(),
        "r": model.r(),
        "n": n,
        "model_seed": spec.as_ref().map(|s| s.seed),
        "trajectory_seed": trajectory_seed,
        "counts_sha256": hash_matrix(&counts.to_f64()),
    });
    write_json(&out.join("run_manifest.json"), &manifest)?;
    info!("wrote model, trajectory and counts to {}", out.display());
    Ok(())
}

fn cmd_ingest(g: &GlobalConfig, a: &IngestArgs) -> Result<()> {
    let input = need(&a.input, "input")?;
    let labeled = a.origin_col.is_some() || a.dest_col.is_some();
    let coords = a.grid.is_some();
    let got = match (labeled, coords) {
        (true, false) => ingest_labeled_trips(&input, &need(&a.origin_col, "origin-col")?, &need(&a.dest_col, "dest-col")?)?,
        (false, true) => {
            let grid = GridSpec::parse(a.grid.as_deref().unwrap_or_default()).map_err(|e| CliError::usage(e.to_string()))?;
            let cols = CoordinateColumns {
                origin_lat: need(&a.origin_lat, "origin-lat")?,
                origin_lon: need(&a.origin_lon, "origin-lon")?,
                dest_lat: need(&a.dest_lat, "dest-lat")?,
                dest_lon: need(&a.dest_lon, "dest-lon")?,
            };
            ingest_coordinate_trips(&input, &grid, &cols)?
        }
        _ => return Err(CliError::usage("give either --origin-col/--dest-col or --grid with coordinate columns")),
    };
    let out = out_dir(g)?;
    write_counts(&out.join("counts.txt"), &got.counts)?;
    write_json(&out.join("dictionary.json"), &got.dictionary)?;
    write_json(&out.join("summary.json"), &got.summary)?;
    info!("{} states, {} transitions, {} rows dropped", got.summary.p, got.summary.n, got.summary.rows_dropped);
    Ok(())
}

fn counts_from_trajectory(path: &Path, p: Option<usize>) -> Result<TransitionCounts> {
    let states = read_trajectory(path)?;
    let max = states.iter().copied().max().unwrap_or(0);
    let p = p.unwrap_or(max + 1);
    if max >= p {
        return Err(CliError::data(path, format!("state {max} out of range for p = {p}")));
    }
    Ok(count_transitions(&Trajectory { states, seed: 0 }, p)?)
}

fn estimate_options(a: &EstimateArgs, seed: u64) -> Result<EstimateOptions> {
    let zero_mass = match (a.drop_unvisited, a.smoothing) {
        (true, Some(_)) => return Err(CliError::usage("--drop-unvisited and --smoothing are exclusive")),
        (true, None) => ZeroMassPolicy::Drop,
        (false, Some(s)) => ZeroMassPolicy::Smooth(s),
        (false, None) => ZeroMassPolicy::Error,
    };
    let svd = match a.svd.as_deref().unwrap_or("auto") {
        "auto" => SvdMethod::Auto,
        "dense" => SvdMethod::Dense,
        "randomized" => SvdMethod::Randomized { oversample: 10, max_iter: 300, seed },
        other => return Err(CliError::usage(format!("unknown --svd {other:?}; expected auto, dense or randomized"))),
    };
    Ok(EstimateOptions {
        zero_mass,
        hunter: parse_hunter(a.hunter.as_deref(), a.clusters, seed)?,
        floor_factor: a.floor_factor.unwrap_or(softagg_core::score::DEFAULT_FLOOR_FACTOR),
        svd,
    })
}

fn options_json(o: &EstimateOptions) -> serde_json::Value {
    let zero_mass = match o.zero_mass {
        ZeroMassPolicy::Error => json!("error"),
        ZeroMassPolicy::Drop => json!("drop"),
        ZeroMassPolicy::Smooth(s) => json!({"smooth": s}),
    };
    let svd = match o.svd {
        SvdMethod::Auto => json!("auto"),
        SvdMethod::Dense => json!("dense"),
        SvdMethod::Randomized { oversample, max_iter, seed } => {
            json!({"randomized": {"oversample": oversample, "max_iter": max_iter, "seed": seed}})
        }
    };
    json!({"zero_mass": zero_mass, "hunter": hunter_json(&o.hunter), "floor_factor": o.floor_factor, "svd": svd})
}

fn cmd_estimate(g: &GlobalConfig, a: &EstimateArgs) -> Result<()> {
    let started = Instant::now();
    let seed = g.seed.unwrap_or(0);
    let delta0 = a.delta0.unwrap_or(DEFAULT_DELTA0);
    let options = estimate_options(a, seed)?;
    let inputs = [a.counts.is_some(), a.trajectory.is_some(), a.oracle.is_some()];
    if inputs.iter().filter(|&&x| x).count() != 1 {
        return Err(CliError::usage("give exactly one of --counts, --trajectory or --oracle"));
    }
    if a.p.is_some() && a.trajectory.is_none() {
        return Err(CliError::usage("--p only applies to --trajectory"));
    }
    let (est, input): (AggregationEstimate, serde_json::Value) = if let Some(dir) = &a.oracle {
        let model = read_model(dir)?;
        if let Some(r) = a.r {
            if r != model.r() {
                return Err(CliError::usage(format!("--r {r} disagrees with the model's r = {}", model.r())));
            }
        }
        let t = Instant::now();
        let est = estimate_oracle(&model, delta0, &options)?;
        info!("oracle estimate in {:?}", t.elapsed());
        (est, json!({"oracle": dir, "u_sha256": hash_matrix(model.u()), "v_sha256": hash_matrix(model.v())}))
    } else {
        let r = need(&a.r, "r")?;
        let (counts, source) = match (&a.counts, &a.trajectory) {
            (Some(path), _) => (read_counts(path)?, json!({"counts": path})),
            (_, Some(path)) => (counts_from_trajectory(path, a.p)?, json!({"trajectory": path})),
            _ => unreachable!(),
        };
        let t = Instant::now();
        let est = estimate(&counts, r, delta0, &options)?;
        info!("estimate in {:?}", t.elapsed());
        let mut source = source;
        source["counts_sha256"] = json!(hash_matrix(&counts.to_f64()));
        source["n"] = json!(counts.total());
        (est, source)
    };
    let estimated = started.elapsed();
    let out = out_dir(g)?;
    write_estimate(&out, &est)?;
    let stage_hashes: Vec<serde_json::Value> = est
        .provenance
        .stage_hashes
        .iter()
        .map(|(stage, h)| json!({"stage": stage.as_str(), "sha256": h}))
        .collect();
    let manifest = json!({
        "command": "estimate",
        "version": env!("CARGO_PKG_VERSION"),
        "config": recorded_config(g, a),
        "input": input,
        "p": est.p,
        "r": est.r,
        "delta0": delta0,
        "options": options_json(&options),
        "seed": seed,
        "sigma": est.provenance.sigma,
        "stage_hashes": stage_hashes,
        "anchors": est.anchors.len(),
    });
    write_json(&out.join("run_manifest.json"), &manifest)?;
    if a.timings {
        let timings = json!({
            "estimate_ms": estimated.as_secs_f64() * 1e3,
            "total_ms": started.elapsed().as_secs_f64() * 1e3,
        });
        write_json(&out.join("timings.json"), &timings)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SingularJson {
    omega: f64,
    h1_max_error: f64,
    h_rest_max_row_error: f64,
    rotation: Vec<Vec<f64>>,
    sigma_true: Vec<f64>,
}

impl From<SingularDiagnostics> for SingularJson {
    fn from(d: SingularDiagnostics) -> Self {
        Self {
            omega: d.omega,
            h1_max_error: d.h1_max_error,
            h_rest_max_row_error: d.h_rest_max_row_error,
            rotation: d.rotation.row_iter().map(|r| r.iter().copied().collect()).collect(),
            sigma_true: d.sigma_true,
        }
    }
}

fn singular_for(est: &AggregationEstimate, model: &softagg_core::SoftAggregationModel) -> Result<Option<SingularJson>> {
    match &est.decomposition {
        Some(d) if d.right.nrows() == model.p() => Ok(Some(singular_diagnostics(d, model)?.into())),
        _ => Ok(None),
    }
}

fn cmd_evaluate(g: &GlobalConfig, a: &EvaluateArgs) -> Result<()> {
    let est = read_estimate(&need(&a.estimate, "estimate")?)?;
    let model = read_model(&need(&a.model, "model")?)?;
    let e = align_and_score(&est, &model)?;
    let comparison = match &a.counts {
        Some(path) => {
            let c = compare_p_with_estimate(&est, &read_counts(path)?, &model)?;
            Some(json!({
                "tv_lowrank": c.tv_lowrank,
                "tv_lowrank_raw": c.tv_lowrank_raw,
                "tv_empirical": c.tv_empirical,
                "rows_compared": c.rows_compared,
            }))
        }
        None => None,
    };
    let errors = json!({
        "permutation": e.permutation,
        "tv_V_mean": e.tv_v_mean,
        "tv_V_max": e.tv_v_max,
        "tv_U_mean": e.tv_u_mean,
        "tv_U_max": e.tv_u_max,
        "tv_U_projected_mean": e.tv_u_projected_mean,
        "tv_P_mean": e.tv_p_mean,
        "tv_P_raw_mean": e.tv_p_raw_mean,
        "anchor_precision_strict": e.anchor_precision_strict,
        "anchor_recall_strict": e.anchor_recall_strict,
        "anchor_precision_loose": e.anchor_precision_loose,
        "anchor_recall_loose": e.anchor_recall_loose,
        "anchors_exact_strict": e.anchors_exact_strict,
        "p_comparison": comparison,
        "singular": singular_for(&est, &model)?,
    });
    let out = out_dir(g)?;
    write_json(&out.join("errors.json"), &errors)
}

fn cmd_diagnose(g: &GlobalConfig, a: &DiagnoseArgs) -> Result<()> {
    let model = read_model(&need(&a.model, "model")?)?;
    let report = check_regularity(&model)?;
    let p_true = model.transition_matrix()?;
    let pi = stationary_distribution(&p_true, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    let k_max = a.k_max.unwrap_or(10_000);
    let mixing = match mixing_time(&p_true, &pi, k_max) {
        Ok(k) => json!(k),
        Err(softagg_core::Error::NotMixedBy(_)) => serde_json::Value::Null,
        Err(e) => return Err(e.into()),
    };
    let singular = match &a.estimate {
        Some(dir) => singular_for(&read_estimate(dir)?, &model)?,
        None => None,
    };
    let out = out_dir(g)?;
    let diagnostics = json!({
        "p": model.p(),
        "r": model.r(),
        "regularity": RegularityJson::from(&report),
        "mixing_time": mixing,
        "mixing_k_max": k_max,
        "singular": singular,
    });
    write_json(&out.join("diagnostics.json"), &diagnostics)
}

/// Resolved sweep settings.
fn sweep_config(g: &GlobalConfig, a: &SweepArgs) -> Result<(SweepConfig, serde_json::Value)> {
    let seed = g.seed.unwrap_or(0);
    let mode_name = a.mode.as_deref().unwrap_or("fixed_p");
    let bad = |e: String| CliError::usage(e);
    let (mode, default_anchors) = match mode_name {
        "fixed_p" => {
            if a.ratio.is_some() || a.p_grid.is_some() {
                return Err(CliError::usage("--ratio and --p-grid apply to fixed_ratio sweeps"));
            }
            let n_grid = parse_size_grid(a.n.as_deref().unwrap_or("1e4,3e4,1e5,3e5,1e6")).map_err(bad)?;
            (SweepMode::FixedP { p: a.p.unwrap_or(200), n_grid }, AnchorCount::PerMeta(25))
        }
        "fixed_ratio" => {
            if a.p.is_some() || a.n.is_some() {
                return Err(CliError::usage("--p and --n apply to fixed_p sweeps"));
            }
            let p_grid = parse_usize_list(a.p_grid.as_deref().unwrap_or("100,200,400,800")).map_err(bad)?;
            (SweepMode::FixedRatio { ratio: a.ratio.unwrap_or(1000.0), p_grid }, AnchorCount::FractionOfP(0.125))
        }
        other => return Err(CliError::usage(format!("unknown sweep mode {other:?}; expected fixed_p or fixed_ratio"))),
    };
    let anchors = match (a.anchors, a.anchor_fraction) {
        (Some(_), Some(_)) => return Err(CliError::usage("--anchors and --anchor-fraction are exclusive")),
        (Some(k), None) => AnchorCount::PerMeta(k),
        (None, Some(f)) => AnchorCount::FractionOfP(f),
        (None, None) => default_anchors,
    };
    let mut config = SweepConfig::new(mode, a.r.unwrap_or(4), anchors, seed);
    config.reps = a.reps.unwrap_or(5);
    config.dirichlet_alpha = a.alpha.unwrap_or(1.0);
    config.delta0 = a.delta0.unwrap_or(DEFAULT_DELTA0);
    config.options.hunter = parse_hunter(a.hunter.as_deref(), None, seed)?;
    let grid: Vec<serde_json::Value> = config.mode.grid().iter().map(|(p, n)| json!({"p": p, "n": n})).collect();
    let anchors_json = match config.anchors {
        AnchorCount::PerMeta(k) => json!({"per_meta": k}),
        AnchorCount::FractionOfP(f) => json!({"fraction_of_p": f}),
    };
    let describe = json!({
        "mode": config.mode.name(),
        "grid": grid,
        "r": config.r,
        "anchors": anchors_json,
        "reps": config.reps,
        "dirichlet_alpha": config.dirichlet_alpha,
        "delta0": config.delta0,
        "seed": seed,
        "options": options_json(&config.options),
    });
    Ok((config, describe))
}

fn cmd_sweep(g: &GlobalConfig, a: &SweepArgs) -> Result<()> {
    let (config, describe) = sweep_config(g, a)?;
    config.validate()?;
    let workers = g
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let out = out_dir(g)?;
    match run_sweep(&config, &describe, &out, workers, a.max_cells)? {
        SweepStatus::Complete { fit, .. } => {
            println!("slope {:.4} over {} points", fit.slope, fit.points.len());
        }
        SweepStatus::Partial { done, total } => {
            println!("stopped after {done} of {total} cells; rerun the same command to resume");
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let flags = GlobalConfig { seed: cli.global.seed, out: cli.global.out.clone(), workers: cli.global.workers };
    let file = cli.global.config.as_deref();
    match &cli.command {
        Command::Simulate(a) => {
            let (g, a) = resolve(file, &flags, a)?;
            cmd_simulate(&g, &a)
        }
        Command::Ingest(a) => {
            let (g, a) = resolve(file, &flags, a)?;
            cmd_ingest(&g, &a)
        }
        Command::Estimate(a) => {
            let (g, a) = resolve(file, &flags, a)?;
            cmd_estimate(&g, &a)
        }
        Command::Evaluate(a) => {
            let (g, a) = resolve(file, &flags, a)?;
            cmd_evaluate(&g, &a)
        }
        Command::Sweep(a) => {
            let (g, a) = resolve(file, &flags, a)?;
            cmd_sweep(&g, &a)
        }
        Command::Diagnose(a) => {
            let (g, a) = resolve(file, &flags, a)?;
            cmd_diagnose(&g, &a)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Usage as i32 } else { ExitCode::Ok as i32 };
        }
    };
    let level = cli.global.log_level.parse().unwrap_or(log::LevelFilter::Warn);
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match run(&cli) {
        Ok(()) => ExitCode::Ok as i32,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as i32
        }
    }
}
