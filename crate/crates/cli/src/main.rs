//! Command-line interface: training, prediction, cross-validation, grid
//! searches, the decomposition benchmark and capacity bounds.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure. Outputs are byte-identical across reruns with the same seed,
//! except for measured wall-clock durations inside run records; logs go to
//! stderr only.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrct::data::{
    encode_and_scale, load_csv, load_csv_unlabeled, default_costs, Dataset, LabelColumn,
};
use mrct::decomp::{c_nb_dec, s_nb_dec, DecompVariant};
use mrct::harness::{
    accuracy, compare_decomposition, cross_validate, default_lambda_grid, default_psi_grid,
    grid_search_1d, grid_search_2d, nested_cv_psi, write_bench_csv, write_heatmap_csvs,
    write_records_jsonl, Method, RunRecord, WarmStart,
};
use mrct::objective::{sparsity_indices, RegScope, RegularizerSpec, SPARSITY_TOL};
use mrct::solver::{multistart_train, prepared_start, start_rng, TrainResult};
use mrct::synth::{gaussian_blobs, two_cluster_overlap};
use mrct::tree::{class_posterior, LogisticCdf, ModelDoc, TreeTopology};
use mrct::vc::{shatter_construction, verify_separation, vc_lower, vc_upper_witness, VcLower, VcQuery};
use mrct::{Error, Result};

use config::{parse_reg_spec, EffectiveConfig, FileConfig};

#[derive(Parser)]
#[command(
    name = "mrct",
    version,
    about = "Sparse multivariate randomized classification trees",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel runs (default: all logical cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tree on a CSV file and write model, transform and records
    Train(RunArgs),
    /// Predict labels and class posteriors for a CSV file
    Predict(PredictArgs),
    /// k-fold cross-validation of one method
    Cv(CvArgs),
    /// Cross-validated sweep of one regularizer weight
    Grid(GridArgs),
    /// Accuracy and sparsity grids over (local, global) weight pairs
    Heatmap(HeatmapArgs),
    /// Nested cross-validated selection of the proximal weight
    PsiSelect(PsiArgs),
    /// Decomposition vs monolithic training benchmark
    DecompBench(BenchArgs),
    /// VC-dimension bounds for a tree family
    Vc(VcArgs),
    /// Generate a synthetic dataset CSV
    Synth(SynthArgs),
}

/// Flags shared by every training-style command. Flags override keys of
/// `--config`; defaults fill the rest.
#[derive(Args, Debug)]
struct RunArgs {
    /// CSV dataset with a header row
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column name (default: the last column)
    #[arg(long)]
    label_column: Option<String>,
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tree depth
    #[arg(long)]
    depth: Option<usize>,
    /// Logistic steepness
    #[arg(long)]
    gamma: Option<f64>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Regularizer as kind:scope:lambda[:alpha|:q,eps]; repeatable
    #[arg(long = "reg")]
    regs: Vec<String>,
    /// Random starts per training
    #[arg(long)]
    restarts: Option<usize>,
    /// Projected-gradient iteration budget
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stationarity tolerance
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Class-coverage penalty weight
    #[arg(long)]
    coverage_weight: Option<f64>,
    /// Minimum expected correct rate per class
    #[arg(long)]
    min_rate: Option<f64>,
    /// Weight of the minimum-rate penalty
    #[arg(long)]
    min_rate_weight: Option<f64>,
    /// Train by decomposition (s-nb-dec | c-nb-dec)
    #[arg(long)]
    decomp: Option<String>,
    /// Proximal weight of the decomposition subproblems
    #[arg(long)]
    psi: Option<f64>,
    /// Macro-iteration budget
    #[arg(long)]
    max_macro: Option<usize>,
    /// Inner iteration cap per subproblem
    #[arg(long)]
    inner_iters: Option<usize>,
    /// Iterations of the full-variable initialization phase
    #[arg(long)]
    init_iters: Option<usize>,
    /// Disable the decomposition initialization phase
    #[arg(long)]
    no_init: bool,
    /// Include the per-iteration objective trace in train-result.json
    #[arg(long)]
    trace: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model JSON written by `train`
    #[arg(long)]
    model: PathBuf,
    /// CSV file to predict (label column optional, ignored)
    #[arg(long)]
    data: PathBuf,
    /// Transform record (default: transform.json next to the model)
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Output CSV (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of folds
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    k: Option<usize>,
    /// Smallest grid exponent (lambda = 2^r)
    #[arg(long)]
    grid_min_exp: Option<i32>,
    /// Largest grid exponent
    #[arg(long)]
    grid_max_exp: Option<i32>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    grid_min_exp: Option<i32>,
    #[arg(long)]
    grid_max_exp: Option<i32>,
    /// Warm-start policy between cells (replace | augment | off)
    #[arg(long)]
    warm: Option<String>,
}

#[derive(Args, Debug)]
struct PsiArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Outer fold count
    #[arg(long)]
    k: Option<usize>,
    /// Inner fold count
    #[arg(long)]
    inner_k: Option<usize>,
    /// Comma-separated proximal weights to try
    #[arg(long)]
    psi_grid: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Folds of the holdout split (fold 0 is the test set)
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct VcArgs {
    /// Number of inputs
    #[arg(long)]
    p: usize,
    /// Tree depth
    #[arg(long)]
    d: usize,
    /// Also build the depth-2 separation at this threshold and verify it
    #[arg(long)]
    shatter_eps: Option<f64>,
    /// Emit JSON instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Generator kind (blobs | twoclass)
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    /// Classes (blobs only)
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Informative feature count (blobs only; default: all)
    #[arg(long)]
    informative: Option<usize>,
    #[arg(long, default_value_t = 0.12)]
    sigma: f64,
    /// Fraction of relabeled samples (blobs only)
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    /// Positive class fraction (twoclass only)
    #[arg(long, default_value_t = 0.5)]
    positive_fraction: f64,
    /// Center separation (twoclass only)
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Heatmap(args) => cmd_heatmap(args),
        Command::PsiSelect(args) => cmd_psi_select(args),
        Command::DecompBench(args) => cmd_decomp_bench(args),
        Command::Vc(args) => cmd_vc(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::Structure(_) | Error::Infeasible(_) => 2,
                Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) => 3,
                Error::Numerical(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}

/// Everything a training-style command needs, resolved from flags over
/// file keys over defaults.
struct Resolved {
    data_path: PathBuf,
    label: LabelColumn,
    dataset_id: String,
    method: Method,
    seed: u64,
    out: Option<PathBuf>,
    harness: config::HarnessConfig,
}

impl Resolved {
    fn effective(&self) -> EffectiveConfig {
        EffectiveConfig {
            data: self.data_path.clone(),
            label_column: match &self.label {
                LabelColumn::Last => None,
                LabelColumn::Name(n) => Some(n.clone()),
            },
            depth: self.method.depth,
            gamma: self.method.gamma,
            seed: self.seed,
            out: self.out.clone().unwrap_or_default(),
            regularizer: self.method.regs.clone(),
            penalty: self.method.pen,
            solver: self.method.solver,
            decomp: self.method.decomp,
            harness_k: self.harness.k.unwrap_or(5),
            warm: self.harness.warm.unwrap_or(WarmStart::Replace),
        }
    }
}

fn resolve(args: &RunArgs, needs_out: bool) -> Result<Resolved> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let data_path = args
        .data
        .clone()
        .or(file.data)
        .ok_or_else(|| Error::Config("no dataset given (--data or config `data`)".into()))?;
    let label = match args.label_column.clone().or(file.label_column) {
        Some(name) => LabelColumn::Name(name),
        None => LabelColumn::Last,
    };
    let depth = args
        .depth
        .or(file.depth)
        .ok_or_else(|| Error::Config("no tree depth given (--depth or config `depth`)".into()))?;
    let gamma = args.gamma.or(file.gamma).unwrap_or(512.0);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = args.out.clone().or(file.out);
    if needs_out && out.is_none() {
        return Err(Error::Config(
            "no output directory given (--out or config `out`)".into(),
        ));
    }

    let regs: Vec<RegularizerSpec> = if args.regs.is_empty() {
        file.regularizer.clone()
    } else {
        args.regs
            .iter()
            .map(|s| parse_reg_spec(s))
            .collect::<Result<_>>()?
    };

    let mut pen = file.penalty.unwrap_or_default();
    if let Some(w) = args.coverage_weight {
        pen.coverage_weight = w;
    }
    if let Some(r) = args.min_rate {
        pen.min_rate = r;
    }
    if let Some(w) = args.min_rate_weight {
        pen.min_rate_weight = w;
    }
    pen.validate()?;

    let mut solver = file.solver.unwrap_or_default();
    if let Some(r) = args.restarts {
        solver.restarts = r;
    }
    if let Some(m) = args.max_iters {
        solver.max_iters = m;
    }
    if let Some(t) = args.grad_tol {
        solver.grad_tol = t;
    }
    solver.seed = seed;
    solver.validate()?;

    let decomp = if args.decomp.is_some() || file.decomp.is_some() {
        let mut cfg = file.decomp.unwrap_or_default();
        if let Some(kind) = &args.decomp {
            cfg.variant = match kind.as_str() {
                "s-nb-dec" => DecompVariant::SNbDec,
                "c-nb-dec" => DecompVariant::CNbDec,
                other => {
                    return Err(Error::Config(format!(
                        "unknown decomposition {other:?} (expected s-nb-dec or c-nb-dec)"
                    )))
                }
            };
        }
        if let Some(psi) = args.psi {
            cfg.psi = psi;
        }
        if let Some(m) = args.max_macro {
            cfg.max_macro = m;
        }
        if let Some(i) = args.inner_iters {
            cfg.inner_iters = i;
        }
        if let Some(i) = args.init_iters {
            cfg.init_iters = i;
        }
        if args.no_init {
            cfg.initialization = false;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Some(cfg)
    } else {
        None
    };

    let dataset_id = data_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();

    Ok(Resolved {
        data_path,
        label,
        dataset_id,
        method: Method {
            depth,
            gamma,
            regs,
            pen,
            solver,
            decomp,
        },
        seed,
        out,
        harness: file.harness.unwrap_or_default(),
    })
}

fn write_effective_config(dir: &Path, resolved: &Resolved) -> Result<()> {
    let text = toml::to_string_pretty(&resolved.effective())
        .map_err(|e| Error::Config(format!("cannot serialize effective config: {e}")))?;
    std::fs::write(dir.join("effective-config.toml"), text)?;
    Ok(())
}

fn cmd_train(args: RunArgs) -> Result<()> {
    let resolved = resolve(&args, true)?;
    let raw = load_csv(&resolved.data_path, &resolved.label)?;
    let all_rows: Vec<usize> = (0..raw.n_rows()).collect();
    let (ds, transform) = encode_and_scale(&raw, &all_rows)?;

    let method = &resolved.method;
    let topo = TreeTopology::new(method.depth)?;
    let cdf = LogisticCdf::new(method.gamma)?;
    let costs = default_costs(ds.k())?;

    let (best, all) = match &method.decomp {
        None => multistart_train(
            &ds,
            &topo,
            &cdf,
            &costs,
            &method.regs,
            &method.pen,
            &method.solver,
        )?,
        Some(cfg) => {
            let mut all = Vec::with_capacity(method.solver.restarts);
            for i in 0..method.solver.restarts {
                let mut rng = start_rng(resolved.seed, i);
                let start = prepared_start(
                    &ds,
                    &topo,
                    &cdf,
                    &costs,
                    &method.regs,
                    &method.pen,
                    &method.solver,
                    &mut rng,
                )?;
                let mut cfg_i = *cfg;
                cfg_i.seed = resolved.seed.wrapping_add(i as u64);
                let mut result = match cfg.variant {
                    DecompVariant::SNbDec => s_nb_dec(
                        &ds,
                        &topo,
                        &cdf,
                        &costs,
                        &method.regs,
                        &method.pen,
                        &cfg_i,
                        Some(&start),
                    )?,
                    DecompVariant::CNbDec => c_nb_dec(
                        &ds,
                        &topo,
                        &cdf,
                        &costs,
                        &method.regs,
                        &method.pen,
                        &cfg_i,
                        &start,
                    )?,
                };
                result.start_index = i;
                all.push(result);
            }
            let best_idx = all
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.final_objective
                        .partial_cmp(&b.final_objective)
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .map(|(i, _)| i)
                .unwrap_or(0);
            (all[best_idx].clone(), all)
        }
    };

    let train_acc = accuracy(&best.params, &cdf, &topo, &ds)?;
    let records: Vec<RunRecord> = all
        .iter()
        .map(|r| {
            let acc = accuracy(&r.params, &cdf, &topo, &ds)?;
            let (dl, dg) = sparsity_indices(&r.params.a, SPARSITY_TOL);
            Ok(RunRecord {
                dataset: resolved.dataset_id.clone(),
                method: method.id(),
                fold: 0,
                start_index: r.start_index,
                lambda_local: method
                    .regs
                    .iter()
                    .find(|s| s.scope == RegScope::Local)
                    .map_or(0.0, |s| s.lambda),
                lambda_global: method
                    .regs
                    .iter()
                    .find(|s| s.scope == RegScope::Global)
                    .map_or(0.0, |s| s.lambda),
                psi: method.decomp.map_or(0.0, |d| d.psi),
                accuracy: acc,
                delta_local: dl,
                delta_global: dg,
                final_objective: r.final_objective,
                elapsed_secs: r.elapsed_secs,
                seed: resolved.seed,
            })
        })
        .collect::<Result<_>>()?;

    let out = resolved.out.clone().expect("out required");
    std::fs::create_dir_all(&out)?;
    let doc = ModelDoc::from_parts(&best.params, &cdf, &topo);
    std::fs::write(out.join("model.json"), serde_json::to_string_pretty(&doc)?)?;
    std::fs::write(
        out.join("transform.json"),
        serde_json::to_string_pretty(&transform)?,
    )?;
    let mut reported: TrainResult = best.clone();
    if !args.trace {
        reported.objective_trace.clear();
    }
    std::fs::write(
        out.join("train-result.json"),
        serde_json::to_string_pretty(&reported)?,
    )?;
    write_records_jsonl(&out.join("records.jsonl"), &records)?;
    write_effective_config(&out, &resolved)?;

    let (dl, dg) = sparsity_indices(&best.params.a, SPARSITY_TOL);
    println!(
        "train accuracy {:.4} on {} samples; objective {:.6}; deltaL {:.2} deltaG {:.2}; model in {}",
        train_acc,
        ds.n(),
        best.final_objective,
        dl,
        dg,
        out.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let doc: ModelDoc = serde_json::from_str(&std::fs::read_to_string(&args.model)?)?;
    let (topo, cdf, params) = doc.into_parts()?;
    let transform_path = args.transform.clone().unwrap_or_else(|| {
        args.model
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("transform.json")
    });
    let transform: mrct::data::Transform =
        serde_json::from_str(&std::fs::read_to_string(&transform_path).map_err(|e| {
            Error::Data(format!(
                "transform record {} not readable: {e}",
                transform_path.display()
            ))
        })?)?;

    let raw = load_csv_unlabeled(&args.data)?;
    let x = transform.apply(&raw)?;

    let mut out = String::new();
    out.push_str("label");
    for class in &transform.class_names {
        out.push_str(&format!(",p_{class}"));
    }
    out.push('\n');
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).to_vec();
        let posterior = class_posterior(&params, &cdf, &topo, &row)?;
        // argmax, ties toward the lowest class index
        let mut label = 0;
        for (i, &v) in posterior.iter().enumerate().skip(1) {
            if v > posterior[label] {
                label = i;
            }
        }
        out.push_str(&transform.class_names[label]);
        for v in &posterior {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let resolved = resolve(&args.run, true)?;
    let k = args.k.or(resolved.harness.k).unwrap_or(5);
    let raw = load_csv(&resolved.data_path, &resolved.label)?;
    let outcome = cross_validate(&raw, &resolved.method, k, resolved.seed, &resolved.dataset_id)?;

    let out = resolved.out.clone().expect("out required");
    std::fs::create_dir_all(&out)?;
    write_records_jsonl(&out.join("records.jsonl"), &outcome.records)?;
    std::fs::write(
        out.join("cv-summary.json"),
        serde_json::to_string_pretty(&outcome)?,
    )?;
    write_effective_config(&out, &resolved)?;
    println!(
        "cv accuracy {:.4}; deltaL {:.2}; deltaG {:.2} ({} folds x {} starts)",
        outcome.mean_accuracy,
        outcome.mean_delta_local,
        outcome.mean_delta_global,
        k,
        resolved.method.solver.restarts
    );
    Ok(())
}

fn lambda_grid(min_exp: Option<i32>, max_exp: Option<i32>) -> Result<Vec<f64>> {
    match (min_exp, max_exp) {
        (None, None) => Ok(default_lambda_grid()),
        (lo, hi) => {
            let lo = lo.unwrap_or(-8);
            let hi = hi.unwrap_or(5);
            if lo > hi {
                return Err(Error::Config(format!(
                    "grid exponents out of order: {lo} > {hi}"
                )));
            }
            Ok((lo..=hi).map(|r| (r as f64).exp2()).collect())
        }
    }
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let resolved = resolve(&args.run, true)?;
    let k = args.k.or(resolved.harness.k).unwrap_or(5);
    let grid = lambda_grid(
        args.grid_min_exp.or(resolved.harness.grid_min_exp),
        args.grid_max_exp.or(resolved.harness.grid_max_exp),
    )?;
    let raw = load_csv(&resolved.data_path, &resolved.label)?;
    let outcome = grid_search_1d(
        &raw,
        &resolved.method,
        &grid,
        k,
        resolved.seed,
        &resolved.dataset_id,
    )?;

    let out = resolved.out.clone().expect("out required");
    std::fs::create_dir_all(&out)?;
    let mut csv = String::from("lambda,accuracy,deltaL,deltaG\n");
    let mut records = Vec::new();
    for row in &outcome.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.lambda,
            row.outcome.mean_accuracy,
            row.outcome.mean_delta_local,
            row.outcome.mean_delta_global
        ));
        records.extend(row.outcome.records.iter().cloned());
    }
    std::fs::write(out.join("grid.csv"), csv)?;
    write_records_jsonl(&out.join("records.jsonl"), &records)?;
    write_effective_config(&out, &resolved)?;
    let best = &outcome.rows[outcome.best];
    println!(
        "best lambda {} with accuracy {:.4}, deltaL {:.2}, deltaG {:.2}",
        best.lambda,
        best.outcome.mean_accuracy,
        best.outcome.mean_delta_local,
        best.outcome.mean_delta_global
    );
    Ok(())
}

fn cmd_heatmap(args: HeatmapArgs) -> Result<()> {
    let resolved = resolve(&args.run, true)?;
    let k = args.k.or(resolved.harness.k).unwrap_or(5);
    let grid = lambda_grid(
        args.grid_min_exp.or(resolved.harness.grid_min_exp),
        args.grid_max_exp.or(resolved.harness.grid_max_exp),
    )?;
    let warm = match args
        .warm
        .as_deref()
        .map(str::to_ascii_lowercase)
        .or_else(|| {
            resolved.harness.warm.map(|w| {
                match w {
                    WarmStart::Replace => "replace",
                    WarmStart::Augment => "augment",
                    WarmStart::Off => "off",
                }
                .to_string()
            })
        })
        .as_deref()
    {
        None | Some("replace") => WarmStart::Replace,
        Some("augment") => WarmStart::Augment,
        Some("off") => WarmStart::Off,
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown warm-start policy {other:?} (expected replace, augment or off)"
            )))
        }
    };

    let local = resolved
        .method
        .regs
        .iter()
        .find(|s| s.scope == RegScope::Local)
        .copied()
        .ok_or_else(|| Error::Config("heatmap needs a local regularizer (--reg ...:local:...)".into()))?;
    let global = resolved
        .method
        .regs
        .iter()
        .find(|s| s.scope == RegScope::Global)
        .copied()
        .ok_or_else(|| Error::Config("heatmap needs a global regularizer (--reg ...:global:...)".into()))?;

    let raw = load_csv(&resolved.data_path, &resolved.label)?;
    let map = grid_search_2d(
        &raw,
        &resolved.method,
        local,
        global,
        &grid,
        &grid,
        k,
        resolved.seed,
        &resolved.dataset_id,
        warm,
    )?;

    let out = resolved.out.clone().expect("out required");
    std::fs::create_dir_all(&out)?;
    write_heatmap_csvs(&out, &resolved.dataset_id, &map)?;
    write_records_jsonl(&out.join("records.jsonl"), &map.records)?;
    write_effective_config(&out, &resolved)?;
    println!(
        "wrote {0}_acc.csv, {0}_deltaL.csv, {0}_deltaG.csv ({1}x{1} cells) to {2}",
        resolved.dataset_id,
        grid.len(),
        out.display()
    );
    Ok(())
}

fn cmd_psi_select(args: PsiArgs) -> Result<()> {
    let resolved = resolve(&args.run, true)?;
    let outer_k = args.k.or(resolved.harness.k).unwrap_or(5);
    let inner_k = args.inner_k.or(resolved.harness.inner_k).unwrap_or(5);
    let psi_grid: Vec<f64> = match &args.psi_grid {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad psi value {s:?}")))
            })
            .collect::<Result<_>>()?,
        None => resolved
            .harness
            .psi_grid
            .clone()
            .unwrap_or_else(default_psi_grid),
    };
    let raw = load_csv(&resolved.data_path, &resolved.label)?;
    let outcome = nested_cv_psi(
        &raw,
        &resolved.method,
        &psi_grid,
        outer_k,
        inner_k,
        resolved.seed,
        &resolved.dataset_id,
    )?;

    let out = resolved.out.clone().expect("out required");
    std::fs::create_dir_all(&out)?;
    write_records_jsonl(&out.join("selection-records.jsonl"), &outcome.selection_records)?;
    write_records_jsonl(&out.join("records.jsonl"), &outcome.final_outcome.records)?;
    std::fs::write(
        out.join("psi-summary.json"),
        serde_json::to_string_pretty(&outcome)?,
    )?;
    write_effective_config(&out, &resolved)?;
    println!(
        "best psi {}; final cv accuracy {:.4}",
        outcome.best_psi, outcome.final_outcome.mean_accuracy
    );
    Ok(())
}

fn cmd_decomp_bench(args: BenchArgs) -> Result<()> {
    let resolved = resolve(&args.run, true)?;
    if resolved.method.decomp.is_none() {
        return Err(Error::Config(
            "decomp-bench needs a decomposition config (--decomp s-nb-dec ...)".into(),
        ));
    }
    let k = args.k.or(resolved.harness.k).unwrap_or(5);
    let raw = load_csv(&resolved.data_path, &resolved.label)?;
    let outcome = compare_decomposition(&raw, &resolved.method, k, resolved.seed, &resolved.dataset_id)?;

    let out = resolved.out.clone().expect("out required");
    std::fs::create_dir_all(&out)?;
    write_bench_csv(&out.join("bench.csv"), &outcome)?;
    std::fs::write(
        out.join("bench-summary.json"),
        serde_json::to_string_pretty(&outcome)?,
    )?;
    write_effective_config(&out, &resolved)?;
    println!(
        "reference accuracy {:.4} in {:.2}s total; series of {} macro points in bench.csv",
        outcome.reference_accuracy,
        outcome.reference_secs,
        outcome.series.len()
    );
    Ok(())
}

fn cmd_vc(args: VcArgs) -> Result<()> {
    let query = VcQuery::new(args.p, args.d)?;
    let lower = vc_lower(query);
    let upper = vc_upper_witness(query);
    let shatter = match args.shatter_eps {
        Some(eps) => {
            let c = shatter_construction(args.p, eps)?;
            let report = verify_separation(args.p, eps, c.gamma_min * (1.0 + 1e-9))?;
            Some((c, report))
        }
        None => None,
    };

    if args.json {
        let lower_json = match &lower {
            VcLower::Bound(b) => serde_json::json!(b.to_string()),
            VcLower::NoBound { .. } => serde_json::Value::Null,
        };
        let conditions = match &lower {
            VcLower::Bound(_) => serde_json::Value::Null,
            VcLower::NoBound { violated } => serde_json::json!(violated),
        };
        let mut doc = serde_json::json!({
            "p": args.p,
            "D": args.d,
            "lower": lower_json,
            "upper_witness": upper.to_string(),
            "conditions": conditions,
        });
        if let Some((c, report)) = &shatter {
            doc["shatter"] = serde_json::json!({
                "gamma_min": c.gamma_min,
                "separated": report.separated,
                "worst_right_set": report.worst_right_set,
                "worst_left_set": report.worst_left_set,
            });
        }
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }

    match &lower {
        VcLower::Bound(b) => println!("lower={b}, upper_witness={upper}"),
        VcLower::NoBound { violated } => {
            println!("lower=no bound (violated: {violated}), upper_witness={upper}")
        }
    }
    if let Some((c, report)) = &shatter {
        println!(
            "shatter: gamma_min={:.6}, verified={}, worst probabilities right-set {:.6} / left-set {:.6}",
            c.gamma_min, report.separated, report.worst_right_set, report.worst_left_set
        );
        if args.p == 3 {
            println!("note: p = 3 sits on the construction's applicability edge (denominator 1)");
        }
    }
    Ok(())
}

fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&ds.feature_names.join(","));
    out.push_str(",class\n");
    for i in 0..ds.n() {
        for (j, v) in ds.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push(',');
        out.push_str(&ds.class_names[ds.y[i]]);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let ds = match args.kind.as_str() {
        "blobs" => gaussian_blobs(
            args.n,
            args.p,
            args.k,
            args.informative.unwrap_or(args.p),
            args.sigma,
            args.label_noise,
            args.seed,
        )?,
        "twoclass" => two_cluster_overlap(
            args.n,
            args.p,
            args.positive_fraction,
            args.separation,
            args.sigma,
            args.seed,
        )?,
        other => {
            return Err(Error::Config(format!(
                "unknown generator {other:?} (expected blobs or twoclass)"
            )))
        }
    };
    write_dataset_csv(&ds, &args.out)?;
    println!(
        "wrote {} samples x {} features, {} classes to {}",
        ds.n(),
        ds.p(),
        ds.k(),
        args.out.display()
    );
    Ok(())
}
