//! Proximal node-based decomposition training.
//!
//! Each decomposition step optimizes only the variable blocks of a chosen
//! working set of tree nodes, with a quadratic proximal tie to the current
//! point, then merges the partial solution back. Because the inner solver
//! is a descent method and the proximal weight is non-negative, the full
//! objective decreases monotonically across merges.
//!
//! Three drivers are provided: the generic scheme with a pluggable working
//! set policy (`nb_dec`), the single-branch-node variant that visits every
//! branch node once per macro-iteration in seeded random order
//! (`s_nb_dec`), and the branch/leaf alternation whose limit points are
//! stationary when the proximal weight is positive (`c_nb_dec`).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objective::{BlockMask, CostMatrix, Evaluator, PenaltySpec, RegSet, RegularizerSpec};
use crate::solver::{
    descend, project_params, round_leaf_labels, Proximal, SolverConfig, TrainResult, TrainStatus,
};
use crate::tree::{LogisticCdf, TreeParams, TreeTopology};

/// Node blocks optimized in one decomposition step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorkingSet {
    pub branch: Vec<usize>,
    pub leaf: Vec<usize>,
}

impl WorkingSet {
    pub fn full(topo: &TreeTopology) -> Self {
        Self {
            branch: (0..topo.n_branches()).collect(),
            leaf: (0..topo.n_leaves()).collect(),
        }
    }

    pub fn branches_only(topo: &TreeTopology) -> Self {
        Self {
            branch: (0..topo.n_branches()).collect(),
            leaf: Vec::new(),
        }
    }

    pub fn leaves_only(topo: &TreeTopology) -> Self {
        Self {
            branch: Vec::new(),
            leaf: (0..topo.n_leaves()).collect(),
        }
    }

    /// One branch node plus every leaf column.
    pub fn single_branch(branch: usize, topo: &TreeTopology) -> Self {
        Self {
            branch: vec![branch],
            leaf: (0..topo.n_leaves()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.branch.is_empty() && self.leaf.is_empty()
    }

    pub fn to_mask(&self, topo: &TreeTopology) -> Result<BlockMask> {
        let mut mask = BlockMask {
            branch: vec![false; topo.n_branches()],
            leaf: vec![false; topo.n_leaves()],
        };
        for &b in &self.branch {
            *mask
                .branch
                .get_mut(b)
                .ok_or_else(|| Error::Structure(format!("branch index {b} out of range")))? = true;
        }
        for &l in &self.leaf {
            *mask
                .leaf
                .get_mut(l)
                .ok_or_else(|| Error::Structure(format!("leaf index {l} out of range")))? = true;
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompVariant {
    #[serde(rename = "s-nb-dec")]
    SNbDec,
    #[serde(rename = "c-nb-dec")]
    CNbDec,
}

fn default_inner_iters() -> usize {
    40
}
fn default_init_iters() -> usize {
    5
}
fn default_inner_grad_tol() -> f64 {
    1e-8
}

/// Decomposition settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompConfig {
    /// Proximal weight tying each subproblem to the current point.
    pub psi: f64,
    /// Macro-iteration budget (the stopping criterion).
    pub max_macro: usize,
    /// Inner projected-gradient iteration cap per subproblem.
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
    /// Inner stationarity tolerance.
    #[serde(default = "default_inner_grad_tol")]
    pub inner_grad_tol: f64,
    /// Whether to run full-variable iterations before decomposing.
    pub initialization: bool,
    /// Iteration cap of the initialization phase.
    #[serde(default = "default_init_iters")]
    pub init_iters: usize,
    pub variant: DecompVariant,
    /// Seed for the per-macro branch visit order.
    pub seed: u64,
}

impl Default for DecompConfig {
    fn default() -> Self {
        Self {
            psi: 1.25e-4,
            max_macro: 10,
            inner_iters: default_inner_iters(),
            inner_grad_tol: default_inner_grad_tol(),
            initialization: true,
            init_iters: default_init_iters(),
            variant: DecompVariant::SNbDec,
            seed: 0,
        }
    }
}

impl DecompConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.psi.is_finite() && self.psi >= 0.0) {
            return Err(Error::Config(format!("psi must be >= 0, got {}", self.psi)));
        }
        if self.inner_iters == 0 {
            return Err(Error::Config("inner_iters must be positive".into()));
        }
        if self.initialization && self.init_iters == 0 {
            return Err(Error::Config("init_iters must be positive".into()));
        }
        Ok(())
    }

    fn inner_solver(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.inner_iters,
            grad_tol: self.inner_grad_tol,
            restarts: 1,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

/// State after one macro-iteration, for benchmarking. `params` is the raw
/// (un-rounded) iterate at that point.
#[derive(Debug, Clone)]
pub struct MacroRecord {
    pub macro_index: usize,
    pub objective: f64,
    pub cumulative_secs: f64,
    pub params: TreeParams,
}

/// Approximately minimizes the proximal subproblem restricted to the
/// working set, freezing the complement at `current`. The result never has
/// a larger proximal objective than `current`, hence never a larger full
/// objective either.
#[allow(clippy::too_many_arguments)]
pub fn subproblem_solve(
    current: &TreeParams,
    ws: &WorkingSet,
    psi: f64,
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    inner: &SolverConfig,
) -> Result<TreeParams> {
    if ws.is_empty() {
        return Ok(current.clone());
    }
    let regs = RegSet::from_specs(specs)?;
    let mut ev = Evaluator::new(data, topo, cdf, costs, regs, *pen)?;
    let mask = ws.to_mask(topo)?;
    let mut params = current.clone();
    let prox = Proximal {
        psi,
        anchor: current,
    };
    descend(
        &mut ev,
        &mut params,
        &mask,
        Some(&prox),
        inner.max_iters,
        inner.grad_tol,
        inner,
        None,
    )?;
    Ok(params)
}

/// Copies the working-set blocks of `partial` over `current`; everything
/// else keeps the exact bits of `current`.
pub fn merge_update(current: &TreeParams, partial: &TreeParams, ws: &WorkingSet) -> TreeParams {
    let mut merged = current.clone();
    for &t in &ws.branch {
        for j in 0..current.n_features() {
            merged.a[(j, t)] = partial.a[(j, t)];
        }
        merged.mu[t] = partial.mu[t];
    }
    for &t in &ws.leaf {
        for class in 0..current.n_classes() {
            merged.c[(class, t)] = partial.c[(class, t)];
        }
    }
    merged
}

/// Shared driver: projects the start, optionally runs the full-variable
/// initialization, then repeatedly selects working sets, solves the
/// proximal subproblems and merges. Records the objective after every
/// merge and a `MacroRecord` at every macro boundary.
#[allow(clippy::too_many_arguments)]
fn run_decomposition(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &DecompConfig,
    start: Option<&TreeParams>,
    steps_per_macro: &mut dyn FnMut(usize, &TreeTopology) -> Vec<WorkingSet>,
) -> Result<(TrainResult, Vec<MacroRecord>)> {
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
    let inner = cfg.inner_solver();

    let mut current = match start {
        Some(p) => p.clone(),
        None => TreeParams::cold_start(data.p(), costs.n_classes(), topo),
    };
    project_params(&mut current, &BlockMask::full(topo));

    let mut trace = vec![ev.value(&current)];
    if cfg.initialization {
        // full-variable warm-up with the proximal term anchored at the start
        let anchor = current.clone();
        let prox = Proximal {
            psi: cfg.psi,
            anchor: &anchor,
        };
        let mask = BlockMask::full(topo);
        descend(
            &mut ev,
            &mut current,
            &mask,
            Some(&prox),
            cfg.init_iters,
            cfg.inner_grad_tol,
            &inner,
            None,
        )?;
        trace.push(ev.value(&current));
    }

    let mut records = vec![MacroRecord {
        macro_index: 0,
        objective: *trace.last().expect("seeded trace"),
        cumulative_secs: started.elapsed().as_secs_f64(),
        params: current.clone(),
    }];

    for macro_idx in 1..=cfg.max_macro {
        for ws in steps_per_macro(macro_idx, topo) {
            let partial = subproblem_solve(
                &current, &ws, cfg.psi, data, topo, cdf, costs, specs, pen, &inner,
            )?;
            current = merge_update(&current, &partial, &ws);
            trace.push(ev.value(&current));
        }
        records.push(MacroRecord {
            macro_index: macro_idx,
            objective: *trace.last().expect("nonempty trace"),
            cumulative_secs: started.elapsed().as_secs_f64(),
            params: current.clone(),
        });
    }

    let (rounded, final_objective) = round_leaf_labels(&current, &mut ev)?;
    let result = TrainResult {
        params: rounded,
        relaxed_params: current,
        objective_trace: trace,
        final_objective,
        status: TrainStatus::IterBudget,
        elapsed_secs: started.elapsed().as_secs_f64(),
        start_index: 0,
    };
    Ok((result, records))
}

/// Generic node-based decomposition with a caller-supplied working-set
/// policy; one policy call per macro-iteration.
#[allow(clippy::too_many_arguments)]
pub fn nb_dec(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &DecompConfig,
    select: &mut dyn FnMut(usize, &TreeTopology) -> WorkingSet,
    start: &TreeParams,
) -> Result<TrainResult> {
    let mut per_macro = |macro_idx: usize, topo: &TreeTopology| vec![select(macro_idx, topo)];
    run_decomposition(
        data,
        topo,
        cdf,
        costs,
        specs,
        pen,
        cfg,
        Some(start),
        &mut per_macro,
    )
    .map(|(result, _)| result)
}

/// Seeded uniform visit order of the branch nodes for one macro-iteration.
fn macro_permutation(rng: &mut ChaCha8Rng, n_branches: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_branches).collect();
    order.shuffle(rng);
    order
}

/// Single-branch decomposition: each macro-iteration visits every branch
/// node exactly once in seeded random order, pairing the visited branch
/// block with all leaf columns. Falls back to the neutral feasible point
/// (`a = 0`, `mu = 0`, uniform class weights) when no start is given.
#[allow(clippy::too_many_arguments)]
pub fn s_nb_dec(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &DecompConfig,
    start: Option<&TreeParams>,
) -> Result<TrainResult> {
    s_nb_dec_traced(data, topo, cdf, costs, specs, pen, cfg, start).map(|(result, _)| result)
}

/// As `s_nb_dec`, also returning the per-macro-iteration records consumed
/// by benchmarking.
#[allow(clippy::too_many_arguments)]
pub fn s_nb_dec_traced(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &DecompConfig,
    start: Option<&TreeParams>,
) -> Result<(TrainResult, Vec<MacroRecord>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_macro = move |_macro_idx: usize, topo: &TreeTopology| {
        macro_permutation(&mut rng, topo.n_branches())
            .into_iter()
            .map(|b| WorkingSet::single_branch(b, topo))
            .collect()
    };
    run_decomposition(
        data,
        topo,
        cdf,
        costs,
        specs,
        pen,
        cfg,
        start,
        &mut per_macro,
    )
}

/// Branch/leaf alternation: each macro-iteration solves the full branch
/// block with leaves frozen, then the full leaf block with branches
/// frozen. Limit points are stationary only with a positive proximal
/// weight, so `psi = 0` draws a warning.
#[allow(clippy::too_many_arguments)]
pub fn c_nb_dec(
    data: &Dataset,
    topo: &TreeTopology,
    cdf: &LogisticCdf,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
    cfg: &DecompConfig,
    start: &TreeParams,
) -> Result<TrainResult> {
    if cfg.psi == 0.0 {
        log::warn!(
            "c-nb-dec with psi = 0: without the proximal term the alternation's \
             limit points need not be stationary"
        );
    }
    let mut per_macro = |_macro_idx: usize, topo: &TreeTopology| {
        vec![
            WorkingSet::branches_only(topo),
            WorkingSet::leaves_only(topo),
        ]
    };
    run_decomposition(
        data,
        topo,
        cdf,
        costs,
        specs,
        pen,
        cfg,
        Some(start),
        &mut per_macro,
    )
    .map(|(result, _)| result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{RegKind, RegScope};
    use crate::solver::{random_start, start_rng, train};
    use ndarray::Array2;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    fn random_setup(
        seed: u64,
        n: usize,
        p: usize,
        depth: usize,
    ) -> (Dataset, TreeTopology, LogisticCdf, CostMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = TreeTopology::new(depth).unwrap();
        let k = 2;
        let mut x = Array2::zeros((n, p));
        x.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
        let y: Vec<usize> = (0..n).map(|i| i % k).collect();
        let data = Dataset::new(
            x,
            y,
            (0..p).map(|j| format!("f{j}")).collect(),
            (0..k).map(|c| format!("c{c}")).collect(),
        )
        .unwrap();
        (
            data,
            topo,
            LogisticCdf::new(32.0).unwrap(),
            CostMatrix::uniform(k, 0.5).unwrap(),
        )
    }

    fn l0_spec(lambda: f64) -> RegularizerSpec {
        RegularizerSpec::new(RegKind::L0Exp, RegScope::Global, lambda)
    }

    #[test]
    fn empty_working_set_is_a_no_op() {
        let (data, topo, cdf, costs) = random_setup(1, 12, 3, 2);
        let start = random_start(&data, 2, &topo, &mut start_rng(4, 0));
        let inner = SolverConfig::default();
        let out = subproblem_solve(
            &start,
            &WorkingSet::default(),
            0.1,
            &data,
            &topo,
            &cdf,
            &costs,
            &[],
            &PenaltySpec::off(),
            &inner,
        )
        .unwrap();
        assert_eq!(out, start);
    }

    #[test]
    fn full_set_psi_zero_matches_monolithic_train() {
        // one subproblem with everything free and no proximal term is the
        // same iteration as the monolithic solver with an equal budget
        let (data, topo, cdf, costs) = random_setup(2, 25, 4, 2);
        let mut start = random_start(&data, 2, &topo, &mut start_rng(7, 0));
        crate::solver::project_params(&mut start, &BlockMask::full(&topo));
        let budget = 15;
        let inner = SolverConfig {
            max_iters: budget,
            grad_tol: 1e-12,
            ..SolverConfig::default()
        };
        let sub = subproblem_solve(
            &start,
            &WorkingSet::full(&topo),
            0.0,
            &data,
            &topo,
            &cdf,
            &costs,
            &[],
            &PenaltySpec::off(),
            &inner,
        )
        .unwrap();
        let mono = train(
            &data,
            &topo,
            &cdf,
            &costs,
            &[],
            &PenaltySpec::off(),
            &inner,
            &start,
        )
        .unwrap();
        for (x, y) in sub.a.iter().zip(mono.relaxed_params.a.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in sub.c.iter().zip(mono.relaxed_params.c.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn huge_psi_pins_blocks_to_current() {
        let (data, topo, cdf, costs) = random_setup(3, 20, 3, 1);
        let mut start = random_start(&data, 2, &topo, &mut start_rng(8, 0));
        crate::solver::project_params(&mut start, &BlockMask::full(&topo));
        let inner = SolverConfig {
            max_iters: 40,
            ..SolverConfig::default()
        };
        let out = subproblem_solve(
            &start,
            &WorkingSet::full(&topo),
            1e9,
            &data,
            &topo,
            &cdf,
            &costs,
            &[],
            &PenaltySpec::off(),
            &inner,
        )
        .unwrap();
        for (x, y) in out.a.iter().zip(start.a.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
        for (x, y) in out.c.iter().zip(start.c.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn single_branch_subproblem_decreases_objective() {
        let (data, topo, cdf, costs) = random_setup(4, 30, 4, 2);
        let mut start = random_start(&data, 2, &topo, &mut start_rng(9, 0));
        crate::solver::project_params(&mut start, &BlockMask::full(&topo));
        let specs = [l0_spec(0.02)];
        let pen = PenaltySpec::default();
        let inner = SolverConfig {
            max_iters: 40,
            ..SolverConfig::default()
        };
        let before =
            crate::objective::objective_value(&start, &cdf, &topo, &data, &costs, &specs, &pen)
                .unwrap();
        let ws = WorkingSet::single_branch(1, &topo);
        let partial = subproblem_solve(
            &start, &ws, 1.25e-4, &data, &topo, &cdf, &costs, &specs, &pen, &inner,
        )
        .unwrap();
        let merged = merge_update(&start, &partial, &ws);
        let after =
            crate::objective::objective_value(&merged, &cdf, &topo, &data, &costs, &specs, &pen)
                .unwrap();
        assert!(
            after < before - 1e-10,
            "expected strict decrease: {before} -> {after}"
        );
    }

    #[test]
    fn merge_preserves_complement_bits() {
        let (data, topo, _, _) = random_setup(5, 4, 3, 2);
        let current = random_start(&data, 2, &topo, &mut start_rng(1, 0));
        let partial = random_start(&data, 2, &topo, &mut start_rng(1, 1));

        // empty set: unchanged
        let merged = merge_update(&current, &partial, &WorkingSet::default());
        assert_eq!(merged, current);

        // full set: partial
        let merged = merge_update(&current, &partial, &WorkingSet::full(&topo));
        assert_eq!(merged, partial);

        // single branch, no leaves: exactly p+1 coefficients differ
        let ws = WorkingSet {
            branch: vec![1],
            leaf: Vec::new(),
        };
        let merged = merge_update(&current, &partial, &ws);
        let mut diff = 0;
        for t in 0..topo.n_branches() {
            for j in 0..3 {
                if merged.a[(j, t)].to_bits() != current.a[(j, t)].to_bits() {
                    diff += 1;
                    assert_eq!(t, 1);
                }
            }
            if merged.mu[t].to_bits() != current.mu[t].to_bits() {
                diff += 1;
                assert_eq!(t, 1);
            }
        }
        assert!(merged.c == current.c);
        assert_eq!(diff, 3 + 1);
    }

    #[test]
    fn zero_macro_budget_returns_start() {
        let (data, topo, cdf, costs) = random_setup(6, 10, 2, 1);
        let mut start = random_start(&data, 2, &topo, &mut start_rng(2, 0));
        crate::solver::project_params(&mut start, &BlockMask::full(&topo));
        let cfg = DecompConfig {
            max_macro: 0,
            initialization: false,
            ..DecompConfig::default()
        };
        let mut select = |_: usize, topo: &TreeTopology| WorkingSet::full(topo);
        let result = nb_dec(
            &data,
            &topo,
            &cdf,
            &costs,
            &[],
            &PenaltySpec::off(),
            &cfg,
            &mut select,
            &start,
        )
        .unwrap();
        assert_eq!(result.relaxed_params, start);
    }

    #[test]
    fn traces_never_increase_across_variants_and_psis() {
        for seed in 0..5u64 {
            let (data, topo, cdf, costs) = random_setup(seed + 10, 25, 3, 2);
            let specs = [l0_spec(0.05)];
            let pen = PenaltySpec::default();
            for psi in [0.0, 1.25e-4, 1.25e-6] {
                let cfg = DecompConfig {
                    psi,
                    max_macro: 3,
                    inner_iters: 8,
                    initialization: seed % 2 == 0,
                    init_iters: 3,
                    seed,
                    ..DecompConfig::default()
                };
                let start = random_start(&data, 2, &topo, &mut start_rng(seed, 3));
                let s = s_nb_dec(
                    &data,
                    &topo,
                    &cdf,
                    &costs,
                    &specs,
                    &pen,
                    &cfg,
                    Some(&start),
                )
                .unwrap();
                for w in s.objective_trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-10, "s-nb-dec trace increased");
                }
                let c = c_nb_dec(&data, &topo, &cdf, &costs, &specs, &pen, &cfg, &start).unwrap();
                for w in c.objective_trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-10, "c-nb-dec trace increased");
                }
            }
        }
    }

    #[test]
    fn macro_permutation_covers_all_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..8 {
            let mut order = macro_permutation(&mut rng, n);
            order.sort_unstable();
            assert_eq!(order, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_seed_same_result() {
        let (data, topo, cdf, costs) = random_setup(20, 20, 3, 2);
        let cfg = DecompConfig {
            max_macro: 2,
            inner_iters: 6,
            initialization: false,
            seed: 42,
            ..DecompConfig::default()
        };
        let run = || {
            s_nb_dec(
                &data,
                &topo,
                &cdf,
                &costs,
                &[],
                &PenaltySpec::off(),
                &cfg,
                None,
            )
            .unwrap()
        };
        let r1 = run();
        let r2 = run();
        assert_eq!(r1.final_objective.to_bits(), r2.final_objective.to_bits());
        for (x, y) in r1.params.a.iter().zip(r2.params.a.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn cold_start_is_uniform_and_feasible() {
        let topo = TreeTopology::new(2).unwrap();
        let p = TreeParams::cold_start(5, 3, &topo);
        assert!(p.a.iter().all(|&v| v == 0.0));
        assert!(p.mu.iter().all(|&v| v == 0.0));
        assert!(p.c.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        p.validate().unwrap();
    }

    #[test]
    fn alternation_never_touches_both_block_kinds_in_one_step() {
        let topo = TreeTopology::new(2).unwrap();
        let b = WorkingSet::branches_only(&topo);
        let l = WorkingSet::leaves_only(&topo);
        assert!(b.leaf.is_empty() && !b.branch.is_empty());
        assert!(l.branch.is_empty() && !l.leaf.is_empty());
    }

    #[test]
    fn displacement_shrinks_as_psi_grows() {
        let (data, topo, cdf, costs) = random_setup(30, 30, 4, 2);
        let mut start = random_start(&data, 2, &topo, &mut start_rng(11, 0));
        crate::solver::project_params(&mut start, &BlockMask::full(&topo));
        let inner = SolverConfig {
            max_iters: 25,
            ..SolverConfig::default()
        };
        let mut last = f64::INFINITY;
        for psi in [1.0, 1e3, 1e6, 1e9] {
            let out = subproblem_solve(
                &start,
                &WorkingSet::full(&topo),
                psi,
                &data,
                &topo,
                &cdf,
                &costs,
                &[],
                &PenaltySpec::off(),
                &inner,
            )
            .unwrap();
            let mut sq = 0.0;
            for (x, y) in out.a.iter().zip(start.a.iter()) {
                sq += (x - y) * (x - y);
            }
            for (x, y) in out.mu.iter().zip(start.mu.iter()) {
                sq += (x - y) * (x - y);
            }
            for (x, y) in out.c.iter().zip(start.c.iter()) {
                sq += (x - y) * (x - y);
            }
            let disp = sq.sqrt();
            assert!(
                disp < last,
                "displacement must shrink with psi: {disp} !< {last}"
            );
            last = disp;
        }
    }

    #[test]
    fn alternation_stationarity_improves_with_budget() {
        let (data, topo, cdf, costs) = random_setup(31, 40, 3, 2);
        let start = {
            let mut s = random_start(&data, 2, &topo, &mut start_rng(13, 0));
            crate::solver::project_params(&mut s, &BlockMask::full(&topo));
            s
        };
        let residual = |max_macro: usize| {
            let cfg = DecompConfig {
                psi: 1e-4,
                max_macro,
                inner_iters: 30,
                initialization: false,
                variant: DecompVariant::CNbDec,
                seed: 5,
                ..DecompConfig::default()
            };
            let r = c_nb_dec(
                &data,
                &topo,
                &cdf,
                &costs,
                &[],
                &PenaltySpec::off(),
                &cfg,
                &start,
            )
            .unwrap();
            // projected-gradient norm at the final relaxed iterate
            let g = crate::objective::gradient(
                &r.relaxed_params,
                &cdf,
                &topo,
                &data,
                &costs,
                &[],
                &PenaltySpec::off(),
            )
            .unwrap();
            let mut probe = r.relaxed_params.clone();
            for t in 0..topo.n_branches() {
                for j in 0..3 {
                    probe.a[(j, t)] = (probe.a[(j, t)] - g.a[(j, t)]).clamp(-1.0, 1.0);
                }
                probe.mu[t] = (probe.mu[t] - g.mu[t]).clamp(-1.0, 1.0);
            }
            for t in 0..topo.n_leaves() {
                let col: Vec<f64> = (0..2).map(|k| probe.c[(k, t)] - g.c[(k, t)]).collect();
                let proj = crate::solver::project_simplex(&col);
                for k in 0..2 {
                    probe.c[(k, t)] = proj[k];
                }
            }
            let mut sq = 0.0;
            for (x, y) in probe.a.iter().zip(r.relaxed_params.a.iter()) {
                sq += (x - y) * (x - y);
            }
            for (x, y) in probe.mu.iter().zip(r.relaxed_params.mu.iter()) {
                sq += (x - y) * (x - y);
            }
            for (x, y) in probe.c.iter().zip(r.relaxed_params.c.iter()) {
                sq += (x - y) * (x - y);
            }
            sq.sqrt()
        };
        let r1 = residual(1);
        let r8 = residual(8);
        assert!(
            r8 < r1,
            "stationarity residual should fall with budget: {r8} !< {r1}"
        );
    }
}
