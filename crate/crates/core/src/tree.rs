//! Randomized classification trees: topology, probabilistic routing,
//! class posteriors and closed-form leaf labeling.
//!
//! A tree of depth `D` is maximal: it has `2^D - 1` branch nodes and `2^D`
//! leaves, numbered breadth-first. Every sample reaches every leaf with a
//! probability given by the product of logistic branch probabilities along
//! the root-to-leaf path.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::CostMatrix;

/// Largest supported depth. `2^D` leaves are materialized eagerly, so this
/// is a guard against absurd allocations, not a tight limit.
pub const MAX_DEPTH: usize = 20;

/// Static shape of a maximal binary tree of given depth.
///
/// Branch nodes are indexed `0..2^D-1` and leaves `0..2^D`, both in
/// breadth-first order. The indexing is fixed, so serialized models are
/// portable across runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    depth: usize,
    n_branches: usize,
    n_leaves: usize,
    /// Root-to-leaf path per leaf: `(branch index, took left edge)`.
    paths: Vec<Vec<(usize, bool)>>,
    /// Leaves below each branch node.
    leaves_under: Vec<Vec<usize>>,
}

impl TreeTopology {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        if depth > MAX_DEPTH {
            return Err(Error::Config(format!(
                "tree depth {depth} exceeds the supported maximum {MAX_DEPTH}"
            )));
        }
        let n_branches = (1usize << depth) - 1;
        let n_leaves = 1usize << depth;

        // Heap ids: branch node b has id b+1; leaf l has id 2^D + l.
        // Parent of id t is t/2; t is a left child iff t is even.
        let mut paths = Vec::with_capacity(n_leaves);
        for leaf in 0..n_leaves {
            let mut id = n_leaves + leaf;
            let mut path = Vec::with_capacity(depth);
            while id > 1 {
                let left = id % 2 == 0;
                id /= 2;
                path.push((id - 1, left));
            }
            path.reverse();
            paths.push(path);
        }

        let mut leaves_under = vec![Vec::new(); n_branches];
        for (leaf, path) in paths.iter().enumerate() {
            for &(branch, _) in path {
                leaves_under[branch].push(leaf);
            }
        }

        Ok(Self {
            depth,
            n_branches,
            n_leaves,
            paths,
            leaves_under,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_branches(&self) -> usize {
        self.n_branches
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Ancestors of `leaf` as `(branch index, took left edge)`, root first.
    pub fn path(&self, leaf: usize) -> &[(usize, bool)] {
        &self.paths[leaf]
    }

    /// Ancestors of `leaf` reached through their left edge.
    pub fn ancestors_left(&self, leaf: usize) -> impl Iterator<Item = usize> + '_ {
        self.paths[leaf]
            .iter()
            .filter(|&&(_, left)| left)
            .map(|&(b, _)| b)
    }

    /// Ancestors of `leaf` reached through their right edge.
    pub fn ancestors_right(&self, leaf: usize) -> impl Iterator<Item = usize> + '_ {
        self.paths[leaf]
            .iter()
            .filter(|&&(_, left)| !left)
            .map(|&(b, _)| b)
    }

    /// Leaves in the subtree rooted at `branch`.
    pub fn leaves_under(&self, branch: usize) -> &[usize] {
        &self.leaves_under[branch]
    }

    fn check_branch(&self, branch: usize) -> Result<()> {
        if branch >= self.n_branches {
            return Err(Error::Structure(format!(
                "unknown branch index {branch} (tree has {} branch nodes)",
                self.n_branches
            )));
        }
        Ok(())
    }
}

/// Logistic CDF `F(v) = 1 / (1 + exp(-gamma v))` used as the soft routing
/// rule. The exponent is clamped to +-500 before exponentiation: with the
/// customary steepness `gamma = 512` an activation of magnitude 2 would
/// otherwise overflow the double exponent range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticCdf {
    gamma: f64,
}

const EXP_CLAMP: f64 = 500.0;

impl LogisticCdf {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!(
                "logistic steepness must be a positive finite number, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `F(v)`, the probability of the left branch at activation `v`.
    pub fn value(&self, v: f64) -> f64 {
        let z = (self.gamma * v).clamp(-EXP_CLAMP, EXP_CLAMP);
        1.0 / (1.0 + (-z).exp())
    }

    /// `1 - F(v)` computed as `F(-v)`, accurate when `F(v)` is close to 1.
    pub fn complement(&self, v: f64) -> f64 {
        let z = (self.gamma * v).clamp(-EXP_CLAMP, EXP_CLAMP);
        1.0 / (1.0 + z.exp())
    }

    /// `dF/dv = gamma F(v) (1 - F(v))`.
    pub fn slope(&self, v: f64) -> f64 {
        self.gamma * self.value(v) * self.complement(v)
    }
}

impl Default for LogisticCdf {
    fn default() -> Self {
        Self { gamma: 512.0 }
    }
}

/// Trainable parameters of a randomized tree.
///
/// * `a`: `p x |branches|` split coefficients, each in `[-1, 1]`;
/// * `mu`: per-branch intercepts in `[-1, 1]`;
/// * `c`: `K x |leaves|` class weights, every leaf column on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub a: Array2<f64>,
    pub mu: Array1<f64>,
    pub c: Array2<f64>,
}

/// Slack used when validating box and simplex membership. Projections keep
/// iterates feasible to machine precision; this only guards external input.
const FEAS_TOL: f64 = 1e-9;

impl TreeParams {
    pub fn new(a: Array2<f64>, mu: Array1<f64>, c: Array2<f64>) -> Result<Self> {
        let params = Self { a, mu, c };
        params.validate()?;
        Ok(params)
    }

    /// The feasible point with all splits inactive: `a = 0`, `mu = 0` and
    /// uniform class weights `1/K` at every leaf.
    pub fn cold_start(n_features: usize, n_classes: usize, topo: &TreeTopology) -> Self {
        Self {
            a: Array2::zeros((n_features, topo.n_branches())),
            mu: Array1::zeros(topo.n_branches()),
            c: Array2::from_elem((n_classes, topo.n_leaves()), 1.0 / n_classes as f64),
        }
    }

    pub fn n_features(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_branches(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_leaves(&self) -> usize {
        self.c.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.n_branches() {
            return Err(Error::Structure(format!(
                "intercept count {} does not match branch count {}",
                self.mu.len(),
                self.n_branches()
            )));
        }
        for &v in self.a.iter().chain(self.mu.iter()) {
            if !v.is_finite() || v.abs() > 1.0 + FEAS_TOL {
                return Err(Error::Structure(format!(
                    "split parameter {v} outside the box [-1, 1]"
                )));
            }
        }
        for col in self.c.columns() {
            let mut sum = 0.0;
            for &v in col {
                if !v.is_finite() || !(-FEAS_TOL..=1.0 + FEAS_TOL).contains(&v) {
                    return Err(Error::Structure(format!(
                        "class weight {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Structure(format!(
                    "leaf class weights sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    fn check_shape(&self, topo: &TreeTopology) -> Result<()> {
        if self.n_branches() != topo.n_branches() || self.n_leaves() != topo.n_leaves() {
            return Err(Error::Structure(format!(
                "parameter shape ({} branches, {} leaves) does not match topology ({}, {})",
                self.n_branches(),
                self.n_leaves(),
                topo.n_branches(),
                topo.n_leaves()
            )));
        }
        Ok(())
    }
}

/// Split activation `(1/p) sum_j a_jt x_j - mu_t` at branch `t`.
pub fn branch_activation(params: &TreeParams, x: &[f64], branch: usize) -> f64 {
    let p = params.n_features();
    let mut dot = 0.0;
    for j in 0..p {
        dot += params.a[(j, branch)] * x[j];
    }
    dot / p as f64 - params.mu[branch]
}

/// Probability of taking the left edge at `branch` for sample `x`.
pub fn branch_prob(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    x: &[f64],
    branch: usize,
) -> Result<f64> {
    topo.check_branch(branch)?;
    params.check_shape(topo)?;
    Ok(cdf.value(branch_activation(params, x, branch)))
}

/// Fills `left[t] = F(v_t)` and `right[t] = 1 - F(v_t)` for every branch.
/// The complement is evaluated independently so both stay accurate when one
/// of them is within rounding error of 1.
pub(crate) fn branch_probs_into(
    params: &TreeParams,
    cdf: &LogisticCdf,
    x: &[f64],
    left: &mut [f64],
    right: &mut [f64],
) {
    for t in 0..params.n_branches() {
        let v = branch_activation(params, x, t);
        left[t] = cdf.value(v);
        right[t] = cdf.complement(v);
    }
}

/// Fills `out[leaf]` with the path probability of every leaf given per-branch
/// left/right probabilities.
pub(crate) fn leaf_probs_from_branches(
    topo: &TreeTopology,
    left: &[f64],
    right: &[f64],
    out: &mut [f64],
) {
    for (leaf, path) in topo.paths.iter().enumerate() {
        let mut prob = 1.0;
        for &(branch, took_left) in path {
            prob *= if took_left { left[branch] } else { right[branch] };
        }
        out[leaf] = prob;
    }
}

/// Probability of each leaf for sample `x`. Entries are positive and sum to
/// one up to rounding.
pub fn leaf_path_probs(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    x: &[f64],
) -> Result<Vec<f64>> {
    params.check_shape(topo)?;
    let b = topo.n_branches();
    let mut left = vec![0.0; b];
    let mut right = vec![0.0; b];
    branch_probs_into(params, cdf, x, &mut left, &mut right);
    let mut out = vec![0.0; topo.n_leaves()];
    leaf_probs_from_branches(topo, &left, &right, &mut out);
    Ok(out)
}

/// Posterior class probabilities `sum_t c_kt P_xt` for sample `x`.
pub fn class_posterior(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    x: &[f64],
) -> Result<Vec<f64>> {
    let leaf_probs = leaf_path_probs(params, cdf, topo, x)?;
    let k = params.n_classes();
    let mut posterior = vec![0.0; k];
    for (leaf, &prob) in leaf_probs.iter().enumerate() {
        for (class, post) in posterior.iter_mut().enumerate() {
            *post += params.c[(class, leaf)] * prob;
        }
    }
    Ok(posterior)
}

/// Predicted class index: the posterior argmax, ties broken toward the
/// lowest class index.
pub fn predict(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    x: &[f64],
) -> Result<usize> {
    Ok(argmax_lowest(&class_posterior(params, cdf, topo, x)?))
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Optimal integer class assignment per leaf.
///
/// Given the leaf probability table `P` (`N x |leaves|`), labels `y` and the
/// misclassification cost matrix, each leaf takes the class minimizing its
/// expected cost `sum_i P_it w(y_i, k)`, subject to every class being
/// assigned to at least one leaf. The coverage-constrained optimum is found
/// exactly by dynamic programming over class subsets; among cost ties the
/// lexicographically smallest label vector (lowest class first, leaf by
/// leaf) is returned, which in particular breaks per-leaf ties toward the
/// lowest class index.
pub fn best_leaf_labels(p_table: &Array2<f64>, y: &[usize], w: &CostMatrix) -> Result<Vec<usize>> {
    let n_leaves = p_table.ncols();
    let k = w.n_classes();
    if k > n_leaves {
        return Err(Error::Infeasible(format!(
            "{k} classes cannot all be covered by {n_leaves} leaves; need 2^D >= K"
        )));
    }
    if k > 20 {
        return Err(Error::Config(format!(
            "leaf labeling supports at most 20 classes, got {k}"
        )));
    }
    if y.len() != p_table.nrows() {
        return Err(Error::Structure(format!(
            "label count {} does not match probability rows {}",
            y.len(),
            p_table.nrows()
        )));
    }

    // Expected cost of labeling leaf t with class c.
    let mut score = Array2::<f64>::zeros((k, n_leaves));
    for (i, &yi) in y.iter().enumerate() {
        if yi >= k {
            return Err(Error::Data(format!(
                "label index {yi} of sample {i} outside 0..{k}"
            )));
        }
        for t in 0..n_leaves {
            let p = p_table[(i, t)];
            for class in 0..k {
                score[(class, t)] += p * w.cost(yi, class);
            }
        }
    }

    // g[i][mask]: least cost of labeling leaves i.. so that every class in
    // `mask` appears among them. Processed back to front.
    let full: u32 = if k == 32 { u32::MAX } else { (1u32 << k) - 1 };
    let n_masks = 1usize << k;
    let mut suffix = vec![vec![f64::INFINITY; n_masks]; n_leaves + 1];
    suffix[n_leaves][0] = 0.0;
    for i in (0..n_leaves).rev() {
        for mask in 0..n_masks as u32 {
            let mut best = f64::INFINITY;
            for class in 0..k {
                let rest = mask & !(1u32 << class);
                let cand = score[(class, i)] + suffix[i + 1][rest as usize];
                if cand < best {
                    best = cand;
                }
            }
            suffix[i][mask as usize] = best;
        }
    }

    // Reconstruct the lexicographically smallest optimal assignment.
    let mut labels = Vec::with_capacity(n_leaves);
    let mut mask = full;
    for i in 0..n_leaves {
        let target = suffix[i][mask as usize];
        for class in 0..k {
            let rest = mask & !(1u32 << class);
            let cand = score[(class, i)] + suffix[i + 1][rest as usize];
            if cand <= target {
                labels.push(class);
                mask = rest;
                break;
            }
        }
        debug_assert_eq!(labels.len(), i + 1, "no class matched the DP optimum");
    }
    Ok(labels)
}

/// One-hot class weight table from integer per-leaf labels.
pub fn one_hot_leaf_weights(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut c = Array2::zeros((n_classes, labels.len()));
    for (leaf, &class) in labels.iter().enumerate() {
        c[(class, leaf)] = 1.0;
    }
    c
}

/// Serialized model: a single JSON document. Coefficient tables are stored
/// column-major, one inner vector per branch (for `a`) or leaf (for `c`),
/// in breadth-first node order. Round-trips are bit-exact for finite values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    pub depth: usize,
    pub gamma: f64,
    pub a: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

impl ModelDoc {
    pub fn from_parts(params: &TreeParams, cdf: &LogisticCdf, topo: &TreeTopology) -> Self {
        Self {
            depth: topo.depth(),
            gamma: cdf.gamma(),
            a: params.a.columns().into_iter().map(|c| c.to_vec()).collect(),
            mu: params.mu.to_vec(),
            c: params.c.columns().into_iter().map(|c| c.to_vec()).collect(),
        }
    }

    pub fn into_parts(self) -> Result<(TreeTopology, LogisticCdf, TreeParams)> {
        let topo = TreeTopology::new(self.depth)?;
        let cdf = LogisticCdf::new(self.gamma)?;
        if self.a.len() != topo.n_branches() || self.c.len() != topo.n_leaves() {
            return Err(Error::Structure(format!(
                "model has {} branch and {} leaf columns, expected {} and {}",
                self.a.len(),
                self.c.len(),
                topo.n_branches(),
                topo.n_leaves()
            )));
        }
        let p = self.a.first().map_or(0, Vec::len);
        let k = self.c.first().map_or(0, Vec::len);
        let mut a = Array2::zeros((p, topo.n_branches()));
        for (t, col) in self.a.iter().enumerate() {
            if col.len() != p {
                return Err(Error::Structure("ragged coefficient column".into()));
            }
            for (j, &v) in col.iter().enumerate() {
                a[(j, t)] = v;
            }
        }
        let mut c = Array2::zeros((k, topo.n_leaves()));
        for (t, col) in self.c.iter().enumerate() {
            if col.len() != k {
                return Err(Error::Structure("ragged class weight column".into()));
            }
            for (class, &v) in col.iter().enumerate() {
                c[(class, t)] = v;
            }
        }
        let params = TreeParams::new(a, Array1::from_vec(self.mu), c)?;
        Ok((topo, cdf, params))
    }
}
