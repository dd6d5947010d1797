//! Experiment orchestration: cross-validation, regularization-path grids,
//! two-dimensional heatmap grids, nested proximal-weight selection and the
//! decomposition-versus-monolithic benchmark.
//!
//! All randomness flows from a single top-level seed through a fixed
//! derivation: the fold split uses `mix(mix(seed, hash(dataset)), FOLDS)`,
//! run `i` of fold `f` in grid cell `c` draws from
//! `mix(mix(mix(mix(seed, hash(dataset)), f), c), i)`, where `mix` is one
//! splitmix64 round. Reruns with the same seed therefore reproduce every
//! record except wall-clock durations.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{default_costs, encode_and_scale, kfold_split, Dataset, RawTable, Transform};
use crate::decomp::{c_nb_dec, s_nb_dec_traced, DecompConfig, DecompVariant};
use crate::error::{Error, Result};
use crate::objective::{
    sparsity_indices, CostMatrix, PenaltySpec, RegScope, RegularizerSpec, SPARSITY_TOL,
};
use crate::solver::{prepared_start, start_rng, train, SolverConfig, TrainResult};
use crate::tree::{predict, LogisticCdf, TreeParams, TreeTopology};

/// One splitmix64 round, the seed-derivation primitive.
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable FNV-1a hash of the dataset id.
fn hash_id(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

const FOLD_SALT: u64 = 0xF01D;

/// A complete training recipe: tree shape, regularizers, penalties and the
/// optimizer (monolithic multistart, or decomposition when `decomp` is
/// set).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Method {
    pub depth: usize,
    pub gamma: f64,
    pub regs: Vec<RegularizerSpec>,
    pub pen: PenaltySpec,
    pub solver: SolverConfig,
    pub decomp: Option<DecompConfig>,
}

impl Method {
    pub fn id(&self) -> String {
        let base = match &self.decomp {
            None => "multistart",
            Some(cfg) => match cfg.variant {
                DecompVariant::SNbDec => "s-nb-dec",
                DecompVariant::CNbDec => "c-nb-dec",
            },
        };
        let mut id = base.to_string();
        for spec in &self.regs {
            let kind = serde_json::to_value(spec.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            let scope = match spec.scope {
                RegScope::Local => "local",
                RegScope::Global => "global",
            };
            id.push_str(&format!("+{kind}-{scope}"));
        }
        id
    }

    fn lambda_of(&self, scope: RegScope) -> f64 {
        self.regs
            .iter()
            .find(|s| s.scope == scope)
            .map_or(0.0, |s| s.lambda)
    }
}

/// One training run inside an experiment, the unit every aggregate is a
/// plain mean of.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub fold: usize,
    pub start_index: usize,
    pub lambda_local: f64,
    pub lambda_global: f64,
    pub psi: f64,
    pub accuracy: f64,
    pub delta_local: f64,
    pub delta_global: f64,
    pub final_objective: f64,
    pub elapsed_secs: f64,
    pub seed: u64,
}

/// Per-fold means over the runs of that fold.
#[derive(Debug, Clone, Serialize)]
pub struct FoldAggregate {
    pub fold: usize,
    pub accuracy: f64,
    pub delta_local: f64,
    pub delta_global: f64,
}

/// Cross-validation outcome: fold means of run means, plus every record.
#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    pub mean_accuracy: f64,
    pub mean_delta_local: f64,
    pub mean_delta_global: f64,
    pub folds: Vec<FoldAggregate>,
    pub records: Vec<RunRecord>,
}

pub(crate) struct FoldData {
    pub fold: usize,
    pub train: Dataset,
    pub test: Dataset,
    #[allow(dead_code)]
    pub transform: Transform,
}

/// Splits, fits the per-fold scaling on the training part only and
/// materializes train/test datasets.
pub(crate) fn prepare_folds(
    raw: &RawTable,
    k: usize,
    seed: u64,
    dataset_id: &str,
) -> Result<Vec<FoldData>> {
    if k < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    let n = raw.n_rows();
    let fold_seed = mix(mix(seed, hash_id(dataset_id)), FOLD_SALT);
    let folds = kfold_split(n, k, fold_seed)?;
    let mut out = Vec::with_capacity(k);
    for (f, test_rows) in folds.iter().enumerate() {
        let train_rows: Vec<usize> = (0..n).filter(|i| !test_rows.contains(i)).collect();
        let (ds, transform) = encode_and_scale(raw, &train_rows)?;
        out.push(FoldData {
            fold: f,
            train: ds.select(&train_rows),
            test: ds.select(test_rows),
            transform,
        });
    }
    Ok(out)
}

/// Hard test accuracy of a (rounded) model.
pub fn accuracy(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    data: &Dataset,
) -> Result<f64> {
    let mut hits = 0usize;
    for i in 0..data.n() {
        if predict(params, cdf, topo, data.row(i))? == data.y[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.n() as f64)
}

/// Trains one run (one start) of the method on a fold's training part.
fn run_once(
    method: &Method,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    fold: &FoldData,
    start: &TreeParams,
    run_seed: u64,
) -> Result<TrainResult> {
    match &method.decomp {
        None => train(
            &fold.train,
            topo,
            cdf,
            costs,
            &method.regs,
            &method.pen,
            &method.solver,
            start,
        ),
        Some(cfg) => {
            let mut cfg = *cfg;
            cfg.seed = run_seed;
            match cfg.variant {
                DecompVariant::SNbDec => s_nb_dec_traced(
                    &fold.train,
                    topo,
                    cdf,
                    costs,
                    &method.regs,
                    &method.pen,
                    &cfg,
                    Some(start),
                )
                .map(|(result, _)| result),
                DecompVariant::CNbDec => c_nb_dec(
                    &fold.train,
                    topo,
                    cdf,
                    costs,
                    &method.regs,
                    &method.pen,
                    &cfg,
                    start,
                ),
            }
        }
    }
}

/// Runs the method on one fold from the given starts (in parallel) and
/// converts each run into a record.
fn run_fold(
    method: &Method,
    fold: &FoldData,
    starts: &[(u64, TreeParams)],
    dataset_id: &str,
) -> Result<Vec<RunRecord>> {
    let topo = TreeTopology::new(method.depth)?;
    let cdf = LogisticCdf::new(method.gamma)?;
    let costs = default_costs(fold.train.k())?;
    let method_id = method.id();
    starts
        .par_iter()
        .enumerate()
        .map(|(i, (run_seed, start))| {
            let result = run_once(method, &topo, &cdf, &costs, fold, start, *run_seed)?;
            let acc = accuracy(&result.params, &cdf, &topo, &fold.test)?;
            let (dl, dg) = sparsity_indices(&result.params.a, SPARSITY_TOL);
            Ok(RunRecord {
                dataset: dataset_id.to_string(),
                method: method_id.clone(),
                fold: fold.fold,
                start_index: i,
                lambda_local: method.lambda_of(RegScope::Local),
                lambda_global: method.lambda_of(RegScope::Global),
                psi: method.decomp.map_or(0.0, |d| d.psi),
                accuracy: acc,
                delta_local: dl,
                delta_global: dg,
                final_objective: result.final_objective,
                elapsed_secs: result.elapsed_secs,
                seed: *run_seed,
            })
        })
        .collect()
}

/// Seeded random starts for one fold/cell: `(run seed, start params)`,
/// each draw refined by the solver's smooth warm-up.
fn fresh_starts(
    method: &Method,
    train: &Dataset,
    base_seed: u64,
    count: usize,
) -> Result<Vec<(u64, TreeParams)>> {
    let topo = TreeTopology::new(method.depth)?;
    let cdf = LogisticCdf::new(method.gamma)?;
    let costs = default_costs(train.k())?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let run_seed = mix(base_seed, i as u64);
            let mut rng = start_rng(run_seed, 0);
            let start = prepared_start(
                train,
                &topo,
                &cdf,
                &costs,
                &method.regs,
                &method.pen,
                &method.solver,
                &mut rng,
            )?;
            Ok((run_seed, start))
        })
        .collect()
}

fn aggregate(records: &[RunRecord], k: usize) -> CvOutcome {
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let of_fold: Vec<&RunRecord> = records.iter().filter(|r| r.fold == f).collect();
        let n = of_fold.len().max(1) as f64;
        folds.push(FoldAggregate {
            fold: f,
            accuracy: of_fold.iter().map(|r| r.accuracy).sum::<f64>() / n,
            delta_local: of_fold.iter().map(|r| r.delta_local).sum::<f64>() / n,
            delta_global: of_fold.iter().map(|r| r.delta_global).sum::<f64>() / n,
        });
    }
    let kf = folds.len() as f64;
    CvOutcome {
        mean_accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / kf,
        mean_delta_local: folds.iter().map(|f| f.delta_local).sum::<f64>() / kf,
        mean_delta_global: folds.iter().map(|f| f.delta_global).sum::<f64>() / kf,
        folds,
        records: records.to_vec(),
    }
}

/// k-fold cross-validation of a method: per fold, scaling is fit on the
/// training part, the method is trained from `solver.restarts` seeded
/// starts, and every start's rounded model is scored on the test part.
/// Fold accuracy is the mean over starts; the overall numbers are means
/// over folds.
pub fn cross_validate(
    raw: &RawTable,
    method: &Method,
    k: usize,
    seed: u64,
    dataset_id: &str,
) -> Result<CvOutcome> {
    let folds = prepare_folds(raw, k, seed, dataset_id)?;
    let ds_hash = hash_id(dataset_id);
    let mut records = Vec::new();
    for fold in &folds {
        let base = mix(mix(mix(seed, ds_hash), fold.fold as u64), 0);
        let starts = fresh_starts(method, &fold.train, base, method.solver.restarts)?;
        records.extend(run_fold(method, fold, &starts, dataset_id)?);
    }
    Ok(aggregate(&records, k))
}

/// The customary regularization path: `2^r` for `r = -8..=5`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-8..=5).map(|r| (r as f64).exp2()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub lambda: f64,
    pub outcome: CvOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSearch1d {
    pub rows: Vec<GridRow>,
    /// Index of the best row: highest mean accuracy, ties toward the
    /// larger lambda.
    pub best: usize,
}

/// Cross-validates the method at every grid value of its single
/// regularizer's weight.
pub fn grid_search_1d(
    raw: &RawTable,
    base: &Method,
    grid: &[f64],
    k: usize,
    seed: u64,
    dataset_id: &str,
) -> Result<GridSearch1d> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid must be nonempty".into()));
    }
    if base.regs.len() != 1 {
        return Err(Error::Config(format!(
            "the 1-d grid search varies exactly one regularizer, got {}",
            base.regs.len()
        )));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut method = base.clone();
        method.regs[0].lambda = lambda;
        rows.push(GridRow {
            lambda,
            outcome: cross_validate(raw, &method, k, seed, dataset_id)?,
        });
    }
    let mut best = 0;
    for (i, row) in rows.iter().enumerate().skip(1) {
        let cur = &rows[best];
        if row.outcome.mean_accuracy > cur.outcome.mean_accuracy
            || (row.outcome.mean_accuracy == cur.outcome.mean_accuracy && row.lambda > cur.lambda)
        {
            best = i;
        }
    }
    Ok(GridSearch1d { rows, best })
}

/// How each heatmap cell treats the previous cell's solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStart {
    /// Start from the previous cell's solutions (the default protocol).
    Replace,
    /// Previous solutions plus the fresh seeded starts.
    Augment,
    /// Fresh seeded starts only.
    Off,
}

#[derive(Debug, Clone, Serialize)]
pub struct Heatmap {
    pub lambda_local: Vec<f64>,
    pub lambda_global: Vec<f64>,
    /// Cell grids indexed `(local, global)`.
    pub accuracy: Array2<f64>,
    pub delta_local: Array2<f64>,
    pub delta_global: Array2<f64>,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

/// Cross-validates every `(lambda_local, lambda_global)` pair. Cells are
/// traversed row-major in the local weight; within each fold the restarts
/// of a cell warm-start from that fold's solutions of the previously
/// traversed cell (per `warm`).
#[allow(clippy::too_many_arguments)]
pub fn grid_search_2d(
    raw: &RawTable,
    base: &Method,
    local_spec: RegularizerSpec,
    global_spec: RegularizerSpec,
    grid_local: &[f64],
    grid_global: &[f64],
    k: usize,
    seed: u64,
    dataset_id: &str,
    warm: WarmStart,
) -> Result<Heatmap> {
    if grid_local.is_empty() || grid_global.is_empty() {
        return Err(Error::Config("both lambda grids must be nonempty".into()));
    }
    if local_spec.scope != RegScope::Local || global_spec.scope != RegScope::Global {
        return Err(Error::Config(
            "grid_search_2d needs one local and one global regularizer".into(),
        ));
    }
    let folds = prepare_folds(raw, k, seed, dataset_id)?;
    let ds_hash = hash_id(dataset_id);
    let (nl, ng) = (grid_local.len(), grid_global.len());
    let mut acc = Array2::zeros((nl, ng));
    let mut dl = Array2::zeros((nl, ng));
    let mut dg = Array2::zeros((nl, ng));
    let mut records = Vec::new();
    // per-fold solutions of the previously traversed cell
    let mut carried: Vec<Vec<TreeParams>> = vec![Vec::new(); k];

    let topo = TreeTopology::new(base.depth)?;
    let cdf = LogisticCdf::new(base.gamma)?;

    for (il, &ll) in grid_local.iter().enumerate() {
        for (ig, &lg) in grid_global.iter().enumerate() {
            let cell = (il * ng + ig) as u64;
            let mut method = base.clone();
            method.regs = vec![
                RegularizerSpec {
                    lambda: ll,
                    ..local_spec
                },
                RegularizerSpec {
                    lambda: lg,
                    ..global_spec
                },
            ];
            let mut cell_records = Vec::new();
            for fold in &folds {
                let base_seed = mix(mix(mix(seed, ds_hash), fold.fold as u64), cell);
                let fresh =
                    fresh_starts(&method, &fold.train, base_seed, method.solver.restarts)?;
                let mut starts: Vec<(u64, TreeParams)> = Vec::new();
                let warm_pool = &carried[fold.fold];
                match warm {
                    WarmStart::Replace if !warm_pool.is_empty() => {
                        for (i, params) in warm_pool.iter().enumerate() {
                            starts.push((mix(base_seed, i as u64), params.clone()));
                        }
                    }
                    WarmStart::Augment => {
                        starts.extend(fresh.iter().cloned());
                        for (i, params) in warm_pool.iter().enumerate() {
                            starts.push((
                                mix(base_seed, (fresh.len() + i) as u64),
                                params.clone(),
                            ));
                        }
                    }
                    _ => starts.extend(fresh.iter().cloned()),
                }

                let costs = default_costs(fold.train.k())?;
                let results: Result<Vec<TrainResult>> = starts
                    .par_iter()
                    .map(|(run_seed, start)| {
                        run_once(&method, &topo, &cdf, &costs, fold, start, *run_seed)
                    })
                    .collect();
                let results = results?;
                // carry at most `restarts` solutions forward, best first
                let mut order: Vec<usize> = (0..results.len()).collect();
                order.sort_by(|&a, &b| {
                    let fa = results[a].final_objective;
                    let fb = results[b].final_objective;
                    fa.partial_cmp(&fb).unwrap_or(std::cmp::Ordering::Equal)
                });
                carried[fold.fold] = order
                    .into_iter()
                    .take(method.solver.restarts)
                    .map(|i| results[i].relaxed_params.clone())
                    .collect();
                for (i, result) in results.iter().enumerate() {
                    let a = accuracy(&result.params, &cdf, &topo, &fold.test)?;
                    let (rdl, rdg) = sparsity_indices(&result.params.a, SPARSITY_TOL);
                    cell_records.push(RunRecord {
                        dataset: dataset_id.to_string(),
                        method: method.id(),
                        fold: fold.fold,
                        start_index: i,
                        lambda_local: ll,
                        lambda_global: lg,
                        psi: 0.0,
                        accuracy: a,
                        delta_local: rdl,
                        delta_global: rdg,
                        final_objective: result.final_objective,
                        elapsed_secs: result.elapsed_secs,
                        seed: starts[i].0,
                    });
                }
            }
            let outcome = aggregate(&cell_records, k);
            acc[(il, ig)] = outcome.mean_accuracy;
            dl[(il, ig)] = outcome.mean_delta_local;
            dg[(il, ig)] = outcome.mean_delta_global;
            records.extend(cell_records);
        }
    }

    Ok(Heatmap {
        lambda_local: grid_local.to_vec(),
        lambda_global: grid_global.to_vec(),
        accuracy: acc,
        delta_local: dl,
        delta_global: dg,
        records,
    })
}

/// Writes the three heatmap grids as `{id}_acc.csv`, `{id}_deltaL.csv`,
/// `{id}_deltaG.csv`: global weights across the header, one row per local
/// weight.
pub fn write_heatmap_csvs(dir: &Path, dataset_id: &str, map: &Heatmap) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (tag, grid) in [
        ("acc", &map.accuracy),
        ("deltaL", &map.delta_local),
        ("deltaG", &map.delta_global),
    ] {
        let mut out = String::new();
        out.push_str("lambda_local/lambda_global");
        for lg in &map.lambda_global {
            out.push_str(&format!(",{lg}"));
        }
        out.push('\n');
        for (il, ll) in map.lambda_local.iter().enumerate() {
            out.push_str(&ll.to_string());
            for ig in 0..map.lambda_global.len() {
                out.push_str(&format!(",{}", grid[(il, ig)]));
            }
            out.push('\n');
        }
        std::fs::write(dir.join(format!("{dataset_id}_{tag}.csv")), out)?;
    }
    Ok(())
}

/// The proximal-weight grid used for nested selection.
pub fn default_psi_grid() -> Vec<f64> {
    vec![1.25e-3, 1.25e-4, 1.25e-5, 1.25e-6]
}

#[derive(Debug, Clone, Serialize)]
pub struct NestedCvOutcome {
    pub best_psi: f64,
    /// Mean validation accuracy per grid value, in grid order.
    pub selection_accuracy: Vec<f64>,
    pub selection_records: Vec<RunRecord>,
    pub final_outcome: CvOutcome,
}

/// Nested proximal-weight selection: an inner cross-validation inside each
/// outer training block scores every grid value; the best one (by mean
/// validation accuracy over runs, then inner folds, then outer folds) is
/// used for the final outer cross-validation.
#[allow(clippy::too_many_arguments)]
pub fn nested_cv_psi(
    raw: &RawTable,
    method: &Method,
    psi_grid: &[f64],
    outer_k: usize,
    inner_k: usize,
    seed: u64,
    dataset_id: &str,
) -> Result<NestedCvOutcome> {
    if psi_grid.is_empty() {
        return Err(Error::Config("psi grid must be nonempty".into()));
    }
    let decomp = method
        .decomp
        .ok_or_else(|| Error::Config("nested psi selection needs a decomposition method".into()))?;

    let mut selection_records = Vec::new();
    let mut selection_accuracy = vec![0.0; psi_grid.len()];

    if psi_grid.len() > 1 {
        let n = raw.n_rows();
        let ds_hash = hash_id(dataset_id);
        let fold_seed = mix(mix(seed, ds_hash), FOLD_SALT);
        let outer_folds = kfold_split(n, outer_k, fold_seed)?;
        let mut per_psi_outer: Vec<Vec<f64>> = vec![Vec::new(); psi_grid.len()];

        for (of, outer_test) in outer_folds.iter().enumerate() {
            let outer_train: Vec<usize> = (0..n).filter(|i| !outer_test.contains(i)).collect();
            let inner_seed = mix(fold_seed, of as u64 + 1);
            let inner_folds = kfold_split(outer_train.len(), inner_k, inner_seed)?;
            for (pi, &psi) in psi_grid.iter().enumerate() {
                let mut method_psi = method.clone();
                method_psi.decomp = Some(DecompConfig { psi, ..decomp });
                let mut inner_means = Vec::with_capacity(inner_k);
                for (inf, val_positions) in inner_folds.iter().enumerate() {
                    let val_rows: Vec<usize> =
                        val_positions.iter().map(|&pos| outer_train[pos]).collect();
                    let fit_rows: Vec<usize> = outer_train
                        .iter()
                        .copied()
                        .filter(|r| !val_rows.contains(r))
                        .collect();
                    let (ds, transform) = encode_and_scale(raw, &fit_rows)?;
                    let fold = FoldData {
                        fold: inf,
                        train: ds.select(&fit_rows),
                        test: ds.select(&val_rows),
                        transform,
                    };
                    let base_seed = mix(
                        mix(mix(mix(seed, ds_hash), of as u64), pi as u64 + 1),
                        inf as u64,
                    );
                    let starts =
                        fresh_starts(&method_psi, &fold.train, base_seed, method.solver.restarts)?;
                    let mut recs = run_fold(&method_psi, &fold, &starts, dataset_id)?;
                    let mean =
                        recs.iter().map(|r| r.accuracy).sum::<f64>() / recs.len().max(1) as f64;
                    inner_means.push(mean);
                    // tag records with the outer fold for traceability
                    for r in &mut recs {
                        r.fold = of * inner_k + inf;
                    }
                    selection_records.extend(recs);
                }
                let inner_mean =
                    inner_means.iter().sum::<f64>() / inner_means.len().max(1) as f64;
                per_psi_outer[pi].push(inner_mean);
            }
        }
        for (pi, outer_means) in per_psi_outer.iter().enumerate() {
            selection_accuracy[pi] =
                outer_means.iter().sum::<f64>() / outer_means.len().max(1) as f64;
        }
    }

    let best_index = if psi_grid.len() == 1 {
        0
    } else {
        let mut best = 0;
        for i in 1..psi_grid.len() {
            if selection_accuracy[i] > selection_accuracy[best] {
                best = i;
            }
        }
        best
    };
    let best_psi = psi_grid[best_index];

    let mut final_method = method.clone();
    final_method.decomp = Some(DecompConfig {
        psi: best_psi,
        ..decomp
    });
    let final_outcome = cross_validate(raw, &final_method, outer_k, seed, dataset_id)?;

    Ok(NestedCvOutcome {
        best_psi,
        selection_accuracy,
        selection_records,
        final_outcome,
    })
}

/// One aggregated point of the decomposition benchmark series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchPoint {
    pub macro_index: usize,
    /// Total seconds spent by the decomposition runs up to this point.
    pub seconds: f64,
    /// Mean test accuracy of the rounded per-run snapshots.
    pub accuracy: f64,
    /// CPU-time saving versus the monolithic total, in percent.
    pub saving_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub series: Vec<BenchPoint>,
    /// Mean test accuracy of the monolithic runs.
    pub reference_accuracy: f64,
    /// Total seconds of the monolithic runs.
    pub reference_secs: f64,
}

/// Benchmarks single-branch decomposition against monolithic multistart
/// training on one split (fold 0 of a k-fold partition holds out the test
/// set): identical starts, sequential execution for clean timing, test
/// accuracy recorded after every macro-iteration.
pub fn compare_decomposition(
    raw: &RawTable,
    method: &Method,
    k: usize,
    seed: u64,
    dataset_id: &str,
) -> Result<BenchOutcome> {
    let decomp = method
        .decomp
        .ok_or_else(|| Error::Config("the benchmark needs a decomposition config".into()))?;
    let folds = prepare_folds(raw, k, seed, dataset_id)?;
    let fold = &folds[0];
    let topo = TreeTopology::new(method.depth)?;
    let cdf = LogisticCdf::new(method.gamma)?;
    let costs = default_costs(fold.train.k())?;
    let ds_hash = hash_id(dataset_id);
    let base_seed = mix(mix(mix(seed, ds_hash), 0), 0);
    let starts = fresh_starts(method, &fold.train, base_seed, method.solver.restarts)?;

    // monolithic reference, sequential for honest timing
    let mut reference_secs = 0.0;
    let mut reference_acc = 0.0;
    for (_, start) in &starts {
        let result = train(
            &fold.train,
            &topo,
            &cdf,
            &costs,
            &method.regs,
            &method.pen,
            &method.solver,
            start,
        )?;
        reference_secs += result.elapsed_secs;
        reference_acc += accuracy(&result.params, &cdf, &topo, &fold.test)?;
    }
    reference_acc /= starts.len() as f64;

    // decomposition runs from the same starts
    let mut per_run_records = Vec::with_capacity(starts.len());
    for (run_seed, start) in &starts {
        let mut cfg = decomp;
        cfg.seed = *run_seed;
        let (_, records) = s_nb_dec_traced(
            &fold.train,
            &topo,
            &cdf,
            &costs,
            &method.regs,
            &method.pen,
            &cfg,
            Some(start),
        )?;
        per_run_records.push(records);
    }

    // round each snapshot on the training data and score it on the test set
    let regs = crate::objective::RegSet::from_specs(&method.regs)?;
    let mut ev =
        crate::objective::Evaluator::new(&fold.train, &topo, &cdf, &costs, regs, method.pen)?;
    let n_macro = per_run_records
        .iter()
        .map(Vec::len)
        .min()
        .unwrap_or(0);
    let mut series = Vec::with_capacity(n_macro);
    for m in 0..n_macro {
        let mut secs = 0.0;
        let mut acc = 0.0;
        for records in &per_run_records {
            let record = &records[m];
            secs += record.cumulative_secs;
            let (rounded, _) = crate::solver::round_leaf_labels(&record.params, &mut ev)?;
            acc += accuracy(&rounded, &cdf, &topo, &fold.test)?;
        }
        acc /= per_run_records.len() as f64;
        series.push(BenchPoint {
            macro_index: m,
            seconds: secs,
            accuracy: acc,
            saving_pct: (1.0 - secs / reference_secs) * 100.0,
        });
    }

    Ok(BenchOutcome {
        series,
        reference_accuracy: reference_acc,
        reference_secs,
    })
}

/// Writes the benchmark series as CSV: `macro,seconds,accuracy,saving_pct`.
pub fn write_bench_csv(path: &Path, outcome: &BenchOutcome) -> Result<()> {
    let mut out = String::from("macro,seconds,accuracy,saving_pct\n");
    for point in &outcome.series {
        out.push_str(&format!(
            "{},{},{},{}\n",
            point.macro_index, point.seconds, point.accuracy, point.saving_pct
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Appends records as JSON lines.
pub fn write_records_jsonl(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
