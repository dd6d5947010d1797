//! Multistart projected-gradient minimization of the smoothed objective
//! over box constraints on the splits and per-leaf simplex constraints on
//! the class weights.
//!
//! Projection onto the feasible set is exact and cheap (clamp plus simplex
//! projection), so a projected gradient with Armijo backtracking along the
//! projected arc replaces any external NLP solver. Every accepted iterate
//! is feasible and the objective trace is non-increasing by construction.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objective::{
    BlockMask, CostMatrix, Evaluator, Gradient, PenaltySpec, RegSet, RegularizerSpec,
};
use crate::tree::{best_leaf_labels, branch_activation, one_hot_leaf_weights, LogisticCdf, TreeParams, TreeTopology};

/// Projected-gradient settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Iteration budget per start.
    pub max_iters: usize,
    /// Stop when `||x - P(x - g)||` falls below this.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Step shrink factor during backtracking.
    pub backtrack: f64,
    /// Initial (and maximal) line-search step.
    pub init_step: f64,
    /// Number of random starts for multistart training.
    pub restarts: usize,
    /// Master seed; start `i` draws from stream `i`.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 3000,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            init_step: 1.0,
            restarts: 10,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config("grad_tol must be positive".into()));
        }
        if !(0.0 < self.armijo_c && self.armijo_c < 1.0) {
            return Err(Error::Config("armijo_c must lie in (0, 1)".into()));
        }
        if !(0.0 < self.backtrack && self.backtrack < 1.0) {
            return Err(Error::Config("backtrack must lie in (0, 1)".into()));
        }
        if !(self.init_step > 0.0) {
            return Err(Error::Config("init_step must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Converged,
    IterBudget,
    StepFailure,
}

/// Outcome of one training run. `params` carries the reported model with
/// integer leaf labels; `relaxed_params` the raw solver iterate it was
/// rounded from.
#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    #[serde(skip)]
    pub params: TreeParams,
    #[serde(skip)]
    pub relaxed_params: TreeParams,
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub status: TrainStatus,
    pub elapsed_secs: f64,
    pub start_index: usize,
}

/// Euclidean projection onto the probability simplex `{u >= 0, sum u = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

pub(crate) fn project_simplex_in_place(v: &mut [f64]) {
    debug_assert!(v.iter().all(|x| x.is_finite()));
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Entrywise clamp to `[lo, hi]`.
pub fn project_box(v: &mut [f64], lo: f64, hi: f64) -> Result<()> {
    if lo > hi {
        return Err(Error::Config(format!("empty box: lo {lo} > hi {hi}")));
    }
    for x in v.iter_mut() {
        *x = x.clamp(lo, hi);
    }
    Ok(())
}

/// Projects the free blocks of `params` onto the feasible set. Frozen
/// blocks are left bit-identical.
pub(crate) fn project_params(params: &mut TreeParams, mask: &BlockMask) {
    for (t, &free) in mask.branch.iter().enumerate() {
        if !free {
            continue;
        }
        for j in 0..params.n_features() {
            params.a[(j, t)] = params.a[(j, t)].clamp(-1.0, 1.0);
        }
        params.mu[t] = params.mu[t].clamp(-1.0, 1.0);
    }
    let k = params.n_classes();
    let mut col = vec![0.0; k];
    for (t, &free) in mask.leaf.iter().enumerate() {
        if !free {
            continue;
        }
        for class in 0..k {
            col[class] = params.c[(class, t)];
        }
        project_simplex_in_place(&mut col);
        for class in 0..k {
            params.c[(class, t)] = col[class];
        }
    }
}

/// Optional proximal tie to an anchor point, applied to free blocks only.
pub(crate) struct Proximal<'p> {
    pub psi: f64,
    pub anchor: &'p TreeParams,
}

impl Proximal<'_> {
    fn value(&self, params: &TreeParams, mask: &BlockMask) -> f64 {
        if self.psi == 0.0 {
            return 0.0;
        }
        let mut sq = 0.0;
        for (t, &free) in mask.branch.iter().enumerate() {
            if !free {
                continue;
            }
            for j in 0..params.n_features() {
                let d = params.a[(j, t)] - self.anchor.a[(j, t)];
                sq += d * d;
            }
            let d = params.mu[t] - self.anchor.mu[t];
            sq += d * d;
        }
        for (t, &free) in mask.leaf.iter().enumerate() {
            if !free {
                continue;
            }
            for class in 0..params.n_classes() {
                let d = params.c[(class, t)] - self.anchor.c[(class, t)];
                sq += d * d;
            }
        }
        0.5 * self.psi * sq
    }

    fn add_grad(&self, params: &TreeParams, mask: &BlockMask, grad: &mut Gradient) {
        if self.psi == 0.0 {
            return;
        }
        for (t, &free) in mask.branch.iter().enumerate() {
            if !free {
                continue;
            }
            for j in 0..params.n_features() {
                grad.a[(j, t)] += self.psi * (params.a[(j, t)] - self.anchor.a[(j, t)]);
            }
            grad.mu[t] += self.psi * (params.mu[t] - self.anchor.mu[t]);
        }
        for (t, &free) in mask.leaf.iter().enumerate() {
            if !free {
                continue;
            }
            for class in 0..params.n_classes() {
                grad.c[(class, t)] +=
                    self.psi * (params.c[(class, t)] - self.anchor.c[(class, t)]);
            }
        }
    }
}

/// `x - alpha g` on the free blocks, projected, written into `out`.
/// Frozen blocks keep the bits of `x`.
fn step_and_project(
    x: &TreeParams,
    grad: &Gradient,
    alpha: f64,
    mask: &BlockMask,
    out: &mut TreeParams,
) {
    out.clone_from(x);
    for (t, &free) in mask.branch.iter().enumerate() {
        if !free {
            continue;
        }
        for j in 0..x.n_features() {
            out.a[(j, t)] = x.a[(j, t)] - alpha * grad.a[(j, t)];
        }
        out.mu[t] = x.mu[t] - alpha * grad.mu[t];
    }
    for (t, &free) in mask.leaf.iter().enumerate() {
        if !free {
            continue;
        }
        for class in 0..x.n_classes() {
            out.c[(class, t)] = x.c[(class, t)] - alpha * grad.c[(class, t)];
        }
    }
    project_params(out, mask);
}

/// `<g, x - y>` and `||x - y||^2` over the free blocks.
fn gap_inner_products(
    x: &TreeParams,
    y: &TreeParams,
    grad: &Gradient,
    mask: &BlockMask,
) -> (f64, f64) {
    let mut inner = 0.0;
    let mut sq = 0.0;
    for (t, &free) in mask.branch.iter().enumerate() {
        if !free {
            continue;
        }
        for j in 0..x.n_features() {
            let d = x.a[(j, t)] - y.a[(j, t)];
            inner += grad.a[(j, t)] * d;
            sq += d * d;
        }
        let d = x.mu[t] - y.mu[t];
        inner += grad.mu[t] * d;
        sq += d * d;
    }
    for (t, &free) in mask.leaf.iter().enumerate() {
        if !free {
            continue;
        }
        for class in 0..x.n_classes() {
            let d = x.c[(class, t)] - y.c[(class, t)];
            inner += grad.c[(class, t)] * d;
            sq += d * d;
        }
    }
    (inner, sq)
}

/// Line-search failures tolerated before giving up.
const MAX_CONSECUTIVE_FAILURES: usize = 50;
/// Backtracking halvings per line search.
const MAX_BACKTRACKS: usize = 60;

pub(crate) struct DescentOutcome {
    pub status: TrainStatus,
    pub final_value: f64,
}

/// Projected-gradient descent with Armijo backtracking along the projected
/// arc. Mutates `params` in place; appends the objective value after every
/// iteration to `trace` when given (the caller seeds it with the starting
/// value). Line-search step memory lives only within one call, so separate
/// calls with split budgets reproduce an unsplit call's trajectory.
pub(crate) fn descend(
    ev: &mut Evaluator<'_>,
    params: &mut TreeParams,
    mask: &BlockMask,
    prox: Option<&Proximal<'_>>,
    max_iters: usize,
    grad_tol: f64,
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<DescentOutcome> {
    let mut grad = Gradient::zeros_like(params);
    let mut candidate = params.clone();
    let mut f_cur = ev.value(params) + prox.map_or(0.0, |pr| pr.value(params, mask));
    if !f_cur.is_finite() {
        return Err(Error::Numerical(format!(
            "objective is not finite at the starting point ({f_cur})"
        )));
    }
    if mask.is_empty() || max_iters == 0 {
        return Ok(DescentOutcome {
            status: TrainStatus::IterBudget,
            final_value: f_cur,
        });
    }

    let mut consecutive_failures = 0usize;
    let mut step_memory = cfg.init_step;
    let mut status = TrainStatus::IterBudget;

    for _ in 0..max_iters {
        let base = ev.value_and_grad(params, mask, &mut grad);
        if let Some(pr) = prox {
            pr.add_grad(params, mask, &mut grad);
        }
        let _ = base;

        // stationarity: distance to the unit-step projected point
        step_and_project(params, &grad, 1.0, mask, &mut candidate);
        let (_, sq) = gap_inner_products(params, &candidate, &grad, mask);
        if sq.sqrt() <= grad_tol {
            status = TrainStatus::Converged;
            break;
        }

        let mut alpha = (2.0 * step_memory).min(cfg.init_step);
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            step_and_project(params, &grad, alpha, mask, &mut candidate);
            let (inner, _) = gap_inner_products(params, &candidate, &grad, mask);
            let f_new =
                ev.value(&candidate) + prox.map_or(0.0, |pr| pr.value(&candidate, mask));
            // sufficient decrease along the projected arc
            if f_new.is_finite() && f_new <= f_cur - cfg.armijo_c * inner {
                std::mem::swap(params, &mut candidate);
                f_cur = f_new;
                step_memory = alpha;
                accepted = true;
                break;
            }
            alpha *= cfg.backtrack;
        }

        if accepted {
            consecutive_failures = 0;
        } else {
            consecutive_failures += 1;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(f_cur);
        }
        if consecutive_failures >= MAX_CONSECUTIVE_FAILURES {
            status = TrainStatus::StepFailure;
            break;
        }
    }

    Ok(DescentOutcome {
        status,
        final_value: f_cur,
    })
}

/// Replaces the class weights by the optimal integer leaf labels for this
/// training set and re-evaluates the objective.
pub fn round_leaf_labels(params: &TreeParams, ev: &mut Evaluator<'_>) -> Result<(TreeParams, f64)> {
    // refresh the routing buffers at the final iterate
    let _ = ev.value(params);
    let labels = best_leaf_labels(ev.leaf_probs(), &ev.dataset().y, ev.costs())?;
    let mut rounded = params.clone();
    rounded.c = one_hot_leaf_weights(&labels, ev.costs().n_classes());
    let objective = ev.value(&rounded);
    Ok((rounded, objective))
}

/// Trains from one starting point. The start is projected onto the
/// feasible set first; the reported model carries integer leaf labels.
#[allow(clippy::too_many_arguments)]
pub fn train(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &SolverConfig,
    start: &TreeParams,
) -> Result<TrainResult> {
    cfg.validate()?;
    if costs.n_classes() > topo.n_leaves() {
        return Err(Error::Infeasible(format!(
            "{} classes cannot be covered by {} leaves; need 2^D >= K",
            costs.n_classes(),
            topo.n_leaves()
        )));
    }
    let started = Instant::now();
    let regs = RegSet::from_specs(specs)?;
    let mut ev = Evaluator::new(data, topo, cdf, costs, regs, *pen)?;

    let mask = BlockMask::full(topo);
    let mut params = start.clone();
    project_params(&mut params, &mask);

    let mut trace = vec![ev.value(&params)];
    let outcome = descend(
        &mut ev,
        &mut params,
        &mask,
        None,
        cfg.max_iters,
        cfg.grad_tol,
        cfg,
        Some(&mut trace),
    )?;

    // discrete repair moves that plain projected-gradient steps cannot
    // make: recenter starved splits, drop feature rows whose removal pays
    let mut anneal = AnnealedPolish::new(data, topo, cdf, costs, specs, pen)?;
    for _ in 0..2 {
        let revived = revive_nodes(&mut ev, &mut anneal, &mut params, &mask, cfg, &mut trace)?;
        let pruned = if specs.iter().any(|s| s.lambda > 0.0) {
            prune_features(&mut ev, &mut anneal, &mut params, &mask, cfg, &mut trace)?
        } else {
            false
        };
        if !revived && !pruned {
            break;
        }
    }

    let (rounded, final_objective) = round_leaf_labels(&params, &mut ev)?;
    Ok(TrainResult {
        params: rounded,
        relaxed_params: params,
        objective_trace: trace,
        final_objective,
        status: outcome.status,
        elapsed_secs: started.elapsed().as_secs_f64(),
        start_index: 0,
    })
}

/// Re-polish budget per tentative repair move (per anneal stage).
const REPAIR_POLISH_ITERS: usize = 60;
/// A feature row counts as active when any coefficient exceeds this.
const PRUNE_ACTIVE_TOL: f64 = 1e-5;
/// A split is starved when the lighter side carries less than this share
/// of the mass reaching the node.
const STARVED_SHARE: f64 = 0.02;

/// Two-stage polish for repair candidates: first on the smooth warm
/// objective (capped steepness, sparsity weights scaled accordingly), then
/// on the true one. After a discrete move the stale intercepts usually sit
/// in the steep logistic's saturated region where gradients vanish, so a
/// purely steep polish cannot judge the move.
struct AnnealedPolish<'a> {
    warm_ev: Evaluator<'a>,
    warm_needed: bool,
}

impl<'a> AnnealedPolish<'a> {
    fn new(
        data: &'a Dataset,
        topo: &'a TreeTopology,
        cdf: &LogisticCdf,
        costs: &'a CostMatrix,
        specs: &[RegularizerSpec],
        pen: &PenaltySpec,
    ) -> Result<Self> {
        let warm_needed = cdf.gamma() > PRESOLVE_GAMMA_CAP;
        let (warm_cdf, warm_specs) = if warm_needed {
            let scale = PRESOLVE_GAMMA_CAP / cdf.gamma();
            (
                LogisticCdf::new(PRESOLVE_GAMMA_CAP)?,
                specs
                    .iter()
                    .map(|s| RegularizerSpec {
                        lambda: s.lambda * scale,
                        ..*s
                    })
                    .collect(),
            )
        } else {
            (*cdf, specs.to_vec())
        };
        let warm_regs = RegSet::from_specs(&warm_specs)?;
        // the warm evaluator borrows the same data/topology/costs; only the
        // steepness and weights differ
        let warm_ev = Evaluator::new(data, topo, &warm_cdf, costs, warm_regs, *pen)?;
        Ok(Self {
            warm_ev,
            warm_needed,
        })
    }

    /// Polishes `candidate` (warm stage, then the caller's steep stage is
    /// run by `descend` on `ev`); returns the steep objective value.
    fn polish(
        &mut self,
        ev: &mut Evaluator<'_>,
        candidate: &mut TreeParams,
        mask: &BlockMask,
        cfg: &SolverConfig,
    ) -> Result<f64> {
        if self.warm_needed {
            descend(
                &mut self.warm_ev,
                candidate,
                mask,
                None,
                REPAIR_POLISH_ITERS,
                cfg.grad_tol,
                cfg,
                None,
            )?;
        }
        let out = descend(
            ev,
            candidate,
            mask,
            None,
            REPAIR_POLISH_ITERS,
            cfg.grad_tol,
            cfg,
            None,
        )?;
        Ok(out.final_value)
    }
}

/// Discrete descent over feature patterns: tentatively zeroes one active
/// feature row at a time, re-polishes, and keeps the removal iff the
/// objective improved. The concave sparsity surrogates flatten between
/// patterns, so plain gradient steps cannot hop from a dense local minimum
/// to a sparser, better one; this pass can. Accepted values extend the
/// trace, preserving its monotone decrease. Returns whether any move was
/// accepted.
fn prune_features(
    ev: &mut Evaluator<'_>,
    anneal: &mut AnnealedPolish<'_>,
    params: &mut TreeParams,
    mask: &BlockMask,
    cfg: &SolverConfig,
    trace: &mut Vec<f64>,
) -> Result<bool> {
    let p = params.n_features();
    let b = params.n_branches();
    let mut current_value = ev.value(params);
    let mut any = false;
    for _pass in 0..2 {
        // weakest active features first
        let mut rows: Vec<(f64, usize)> = (0..p)
            .filter_map(|j| {
                let row_max = (0..b).fold(0.0f64, |m, t| m.max(params.a[(j, t)].abs()));
                (row_max > PRUNE_ACTIVE_TOL).then_some((row_max, j))
            })
            .collect();
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        if rows.len() <= 1 {
            break;
        }
        let mut improved = false;
        for &(_, j) in &rows {
            let mut candidate = params.clone();
            for t in 0..b {
                candidate.a[(j, t)] = 0.0;
            }
            let value = anneal.polish(ev, &mut candidate, mask, cfg)?;
            if value < current_value - 1e-12 {
                *params = candidate;
                current_value = value;
                trace.push(current_value);
                improved = true;
                any = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(any)
}

/// Split-recentering repair: a branch node whose lighter side receives
/// almost none of its incoming probability mass is stuck in the logistic's
/// saturated region and cannot recover by gradient steps. Moving its
/// intercept to the weighted median of the incoming activations re-splits
/// the mass evenly; the move is kept iff the polished objective improves.
/// Returns whether any move was accepted.
fn revive_nodes(
    ev: &mut Evaluator<'_>,
    anneal: &mut AnnealedPolish<'_>,
    params: &mut TreeParams,
    mask: &BlockMask,
    cfg: &SolverConfig,
    trace: &mut Vec<f64>,
) -> Result<bool> {
    let topo = ev.topology();
    let data = ev.dataset();
    let n = data.n();
    let b = topo.n_branches();
    let mut current_value = ev.value(params);
    let mut any = false;

    for _pass in 0..2 {
        let mut improved = false;
        for t in 0..b {
            // reach-weighted split shares from the current leaf table
            let _ = ev.value(params); // refresh routing buffers
            let mut reach = 0.0;
            let mut left_mass = 0.0;
            let mut weighted: Vec<(f64, f64)> = Vec::with_capacity(n);
            for i in 0..n {
                let probs = ev.leaf_probs().row(i);
                let mut r_it = 0.0;
                let mut l_it = 0.0;
                for &leaf in topo.leaves_under(t) {
                    r_it += probs[leaf];
                    let took_left = topo
                        .path(leaf)
                        .iter()
                        .any(|&(node, left)| node == t && left);
                    if took_left {
                        l_it += probs[leaf];
                    }
                }
                reach += r_it;
                left_mass += l_it;
                if r_it > 0.0 {
                    weighted.push((branch_activation(params, data.row(i), t), r_it));
                }
            }
            if reach < 1.0 {
                // starved from upstream; fixing this node cannot help yet
                continue;
            }
            let share = (left_mass / reach).min(1.0 - left_mass / reach);
            if share >= STARVED_SHARE {
                continue;
            }
            // weighted median of incoming activations
            weighted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let half = reach / 2.0;
            let mut acc = 0.0;
            let mut median = weighted.last().map_or(0.0, |w| w.0);
            for &(v, w) in &weighted {
                acc += w;
                if acc >= half {
                    median = v;
                    break;
                }
            }
            let mut candidate = params.clone();
            candidate.mu[t] = median.clamp(-1.0, 1.0);
            let value = anneal.polish(ev, &mut candidate, mask, cfg)?;
            if value < current_value - 1e-12 {
                *params = candidate;
                current_value = value;
                trace.push(current_value);
                improved = true;
                any = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(any)
}

/// Draws a random feasible start: split coefficients uniform in their
/// boxes, leaf columns uniform on the simplex (normalized exponentials of
/// uniforms). Each intercept is drawn uniformly over the empirical
/// activation range of its branch's coefficients on the training data — a
/// subinterval of the `[-1, 1]` box — so the split boundary crosses the
/// data and the steep logistic keeps a live gradient at every start.
pub fn random_start(
    data: &Dataset,
    n_classes: usize,
    topo: &TreeTopology,
    rng: &mut impl Rng,
) -> TreeParams {
    let n_features = data.p();
    let b = topo.n_branches();
    let l = topo.n_leaves();
    let mut a = Array2::zeros((n_features, b));
    a.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..=1.0));

    let mut mu = Array1::zeros(b);
    for t in 0..b {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..data.n() {
            let x = data.row(i);
            let mut act = 0.0;
            for j in 0..n_features {
                act += a[(j, t)] * x[j];
            }
            act /= n_features as f64;
            lo = lo.min(act);
            hi = hi.max(act);
        }
        mu[t] = if lo < hi {
            rng.gen_range(lo..=hi)
        } else {
            lo.clamp(-1.0, 1.0)
        };
    }

    let mut c = Array2::zeros((n_classes, l));
    for mut col in c.columns_mut() {
        let mut raw: Vec<f64> = (0..n_classes)
            .map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.iter_mut().for_each(|v| *v /= sum);
        for (i, v) in raw.into_iter().enumerate() {
            col[i] = v;
        }
    }
    TreeParams { a, mu, c }
}

/// The seeded generator for start `index`: one ChaCha stream per start, so
/// starts are independent and any subset is reproducible.
pub fn start_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Steepness cap, candidate count and iteration budgets of the smooth
/// warm-up applied to random draws before steep training.
const PRESOLVE_GAMMA_CAP: f64 = 32.0;
const PRESOLVE_CANDIDATES: usize = 6;
const PRESOLVE_SELECT_ITERS: usize = 80;
const PRESOLVE_ITERS: usize = 200;
const PRESOLVE_TOL: f64 = 1e-5;

/// Prepares one start slot: draws several random candidates, runs a short
/// projected-gradient warm-up on each at a capped steepness, keeps the one
/// with the lowest warm objective and polishes it a little further.
///
/// At steepness 512 a raw draw is usually numerically stationary (the
/// logistic saturates away from the split boundary) and the relaxed
/// problem also has coarse spurious basins that route all mass to one
/// side, so descending from a single unvetted draw frequently freezes at a
/// majority-class model. Selecting among a handful of warmed draws makes
/// each start slot land in a gradient-active, non-degenerate basin with
/// high probability while staying fully deterministic per slot.
#[allow(clippy::too_many_arguments)]
pub fn prepared_start(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<TreeParams> {
    let mask = BlockMask::full(topo);
    // loss gradients scale with the steepness, so the warm phase also
    // scales the sparsity weights by gamma_warm / gamma to keep the
    // loss-versus-regularizer balance of the target problem
    let (warm_cdf, warm_specs): (LogisticCdf, Vec<RegularizerSpec>) =
        if cdf.gamma() <= PRESOLVE_GAMMA_CAP {
            (*cdf, specs.to_vec())
        } else {
            let scale = PRESOLVE_GAMMA_CAP / cdf.gamma();
            let scaled = specs
                .iter()
                .map(|s| RegularizerSpec {
                    lambda: s.lambda * scale,
                    ..*s
                })
                .collect();
            (LogisticCdf::new(PRESOLVE_GAMMA_CAP)?, scaled)
        };
    let regs = RegSet::from_specs(&warm_specs)?;
    let mut ev = Evaluator::new(data, topo, &warm_cdf, costs, regs, *pen)?;

    // a candidate that cannot beat the best constant classifier's loss has
    // collapsed into a degenerate basin; draw another round if they all did
    let majority_loss = (0..costs.n_classes())
        .map(|label| data.y.iter().map(|&y| costs.cost(y, label)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let floor = 0.9 * majority_loss;

    let mut best: Option<(f64, TreeParams)> = None;
    for round in 0..3 {
        for _ in 0..PRESOLVE_CANDIDATES {
            let mut draw = random_start(data, costs.n_classes(), topo, rng);
            project_params(&mut draw, &mask);
            let out = descend(
                &mut ev,
                &mut draw,
                &mask,
                None,
                PRESOLVE_SELECT_ITERS,
                PRESOLVE_TOL,
                cfg,
                None,
            )?;
            if best.as_ref().is_none_or(|(f, _)| out.final_value < *f) {
                best = Some((out.final_value, draw));
            }
        }
        let good_enough = best.as_ref().is_some_and(|(f, _)| *f < floor);
        if good_enough || round == 2 {
            break;
        }
    }
    let (_, mut start) = best.expect("at least one candidate");
    descend(
        &mut ev,
        &mut start,
        &mask,
        None,
        PRESOLVE_ITERS,
        PRESOLVE_TOL,
        cfg,
        None,
    )?;
    Ok(start)
}

/// Trains from each of the given starts (in parallel) and returns the best
/// result by final objective, ties broken toward the lowest start index,
/// together with all per-start results in start order.
#[allow(clippy::too_many_arguments)]
pub fn train_with_starts(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &SolverConfig,
    starts: &[TreeParams],
) -> Result<(TrainResult, Vec<TrainResult>)> {
    if starts.is_empty() {
        return Err(Error::Config("need at least one start".into()));
    }
    let all: Result<Vec<TrainResult>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut result = train(data, topo, cdf, costs, specs, pen, cfg, start)?;
            result.start_index = i;
            Ok(result)
        })
        .collect();
    let all = all?;
    let best_idx = pick_best(&all);
    Ok((all[best_idx].clone(), all))
}

/// Index of the best run: smallest final objective, ties toward the lowest
/// start index; non-finite objectives sort last.
pub(crate) fn pick_best(results: &[TrainResult]) -> usize {
    let key = |r: &TrainResult| {
        if r.final_objective.is_nan() {
            f64::INFINITY
        } else {
            r.final_objective
        }
    };
    let mut best = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        if key(r) < key(&results[best]) {
            best = i;
        }
    }
    best
}

/// Multistart training from `cfg.restarts` seeded random draws, each
/// refined by the smooth warm-up before the steep run.
pub fn multistart_train(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &SolverConfig,
) -> Result<(TrainResult, Vec<TrainResult>)> {
    cfg.validate()?;
    let starts: Result<Vec<TreeParams>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = start_rng(cfg.seed, i);
            prepared_start(data, topo, cdf, costs, specs, pen, cfg, &mut rng)
        })
        .collect();
    train_with_starts(data, topo, cdf, costs, specs, pen, cfg, &starts?)
}
