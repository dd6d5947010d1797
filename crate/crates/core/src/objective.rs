//! The smoothed training objective: expected misclassification loss,
//! sparsity-inducing regularizers, constraint penalties and their analytic
//! gradients.
//!
//! The auxiliary variables of the constrained formulation are eliminated:
//! `|a_jt|` is smoothed as `sqrt(a^2 + eps^2) - eps` and the per-feature
//! bound `beta_j = max_t |a_jt|` as a high-order power mean of the smoothed
//! absolute values, so the feasible set handled by the solver is just boxes
//! and per-leaf simplices.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tree::{
    branch_probs_into, leaf_probs_from_branches, one_hot_leaf_weights, LogisticCdf, TreeParams,
    TreeTopology,
};

/// Misclassification costs `w(true, assigned)`: zero diagonal, non-negative
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    w: Array2<f64>,
}

impl CostMatrix {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() == 0 {
            return Err(Error::Config(format!(
                "cost matrix must be square and nonempty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        for i in 0..w.nrows() {
            if w[(i, i)] != 0.0 {
                return Err(Error::Config("cost matrix diagonal must be zero".into()));
            }
        }
        if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Config("cost entries must be finite and >= 0".into()));
        }
        Ok(Self { w })
    }

    /// Constant off-diagonal cost.
    pub fn uniform(k: usize, off_diagonal: f64) -> Result<Self> {
        let mut w = Array2::from_elem((k, k), off_diagonal);
        for i in 0..k {
            w[(i, i)] = 0.0;
        }
        Self::new(w)
    }

    pub fn n_classes(&self) -> usize {
        self.w.nrows()
    }

    #[inline]
    pub fn cost(&self, true_class: usize, assigned: usize) -> f64 {
        self.w[(true_class, assigned)]
    }
}

/// Which surrogate of the nonzero count (or which norm) penalizes the split
/// coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    L1,
    #[serde(rename = "linf")]
    LInf,
    #[serde(rename = "l0exp")]
    L0Exp,
    Appr1,
    Appr2,
    #[serde(rename = "logeps")]
    LogEps,
}

/// Whether the surrogate is summed over all coefficients (local sparsity)
/// or over per-feature maxima across branch nodes (global sparsity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegScope {
    Local,
    Global,
}

fn default_alpha() -> f64 {
    5.0
}
fn default_q() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    1e-5
}
fn default_smooth_abs_eps() -> f64 {
    1e-8
}
fn default_smooth_max_rho() -> f64 {
    64.0
}

/// A sparsity regularizer: surrogate kind, scope, weight and shape
/// parameters. All surrogates are shifted to vanish at `a = 0`, so weights
/// are comparable across kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    pub scope: RegScope,
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_smooth_abs_eps")]
    pub smooth_abs_eps: f64,
    #[serde(default = "default_smooth_max_rho")]
    pub smooth_max_rho: f64,
}

impl RegularizerSpec {
    pub fn new(kind: RegKind, scope: RegScope, lambda: f64) -> Self {
        Self {
            kind,
            scope,
            lambda,
            alpha: default_alpha(),
            q: default_q(),
            eps: default_eps(),
            smooth_abs_eps: default_smooth_abs_eps(),
            smooth_max_rho: default_smooth_max_rho(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::Config(format!("q must be > 0, got {}", self.q)));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.smooth_abs_eps > 0.0 && self.smooth_max_rho > 1.0) {
            return Err(Error::Config("invalid smoothing parameters".into()));
        }
        Ok(())
    }

    /// Surrogate value at `u >= 0`, shifted so the value at 0 is 0.
    pub fn surrogate(&self, u: f64) -> f64 {
        match self.kind {
            RegKind::L1 | RegKind::LInf => u,
            RegKind::L0Exp => -(-self.alpha * u).exp_m1(),
            RegKind::Appr1 => (u + self.eps).powf(self.q) - self.eps.powf(self.q),
            RegKind::Appr2 => self.eps.powf(-self.q) - (u + self.eps).powf(-self.q),
            RegKind::LogEps => (u / self.eps).ln_1p(),
        }
    }

    /// Derivative of the surrogate with respect to `u`.
    pub fn surrogate_deriv(&self, u: f64) -> f64 {
        match self.kind {
            RegKind::L1 | RegKind::LInf => 1.0,
            RegKind::L0Exp => self.alpha * (-self.alpha * u).exp(),
            RegKind::Appr1 => self.q * (u + self.eps).powf(self.q - 1.0),
            RegKind::Appr2 => self.q * (u + self.eps).powf(-self.q - 1.0),
            RegKind::LogEps => 1.0 / (u + self.eps),
        }
    }
}

fn default_coverage_weight() -> f64 {
    10.0
}
fn default_min_rate() -> f64 {
    0.10
}
fn default_min_rate_weight() -> f64 {
    10.0
}

/// Quadratic penalty weights for the class-coverage constraint
/// (`sum_t c_kt >= 1`) and the minimum expected correct classification rate
/// per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltySpec {
    #[serde(default = "default_coverage_weight")]
    pub coverage_weight: f64,
    #[serde(default = "default_min_rate")]
    pub min_rate: f64,
    #[serde(default = "default_min_rate_weight")]
    pub min_rate_weight: f64,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self {
            coverage_weight: default_coverage_weight(),
            min_rate: default_min_rate(),
            min_rate_weight: default_min_rate_weight(),
        }
    }
}

impl PenaltySpec {
    /// All penalties disabled.
    pub fn off() -> Self {
        Self {
            coverage_weight: 0.0,
            min_rate: 0.0,
            min_rate_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coverage_weight < 0.0 || self.min_rate_weight < 0.0 {
            return Err(Error::Config("penalty weights must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_rate) {
            return Err(Error::Config(format!(
                "min_rate must lie in [0, 1], got {}",
                self.min_rate
            )));
        }
        Ok(())
    }
}

/// At most one local and one global regularizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegSet {
    pub local: Option<RegularizerSpec>,
    pub global: Option<RegularizerSpec>,
}

impl RegSet {
    pub fn from_specs(specs: &[RegularizerSpec]) -> Result<Self> {
        let mut set = RegSet::default();
        for spec in specs {
            spec.validate()?;
            let slot = match spec.scope {
                RegScope::Local => &mut set.local,
                RegScope::Global => &mut set.global,
            };
            if slot.is_some() {
                return Err(Error::Config(format!(
                    "duplicate {:?}-scope regularizer",
                    spec.scope
                )));
            }
            *slot = Some(*spec);
        }
        Ok(set)
    }

    fn iter(&self) -> impl Iterator<Item = &RegularizerSpec> {
        self.local.iter().chain(self.global.iter())
    }
}

/// Gradient of the objective over all parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub a: Array2<f64>,
    pub mu: Array1<f64>,
    pub c: Array2<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &TreeParams) -> Self {
        Self {
            a: Array2::zeros(params.a.raw_dim()),
            mu: Array1::zeros(params.mu.len()),
            c: Array2::zeros(params.c.raw_dim()),
        }
    }

    pub fn fill_zero(&mut self) {
        self.a.fill(0.0);
        self.mu.fill(0.0);
        self.c.fill(0.0);
    }
}

/// Which branch blocks (a column + intercept) and leaf columns are free.
/// Frozen blocks are never written, so their bits stay identical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    pub branch: Vec<bool>,
    pub leaf: Vec<bool>,
}

impl BlockMask {
    pub fn full(topo: &TreeTopology) -> Self {
        Self {
            branch: vec![true; topo.n_branches()],
            leaf: vec![true; topo.n_leaves()],
        }
    }

    pub fn any_branch(&self) -> bool {
        self.branch.iter().any(|&b| b)
    }

    pub fn any_leaf(&self) -> bool {
        self.leaf.iter().any(|&l| l)
    }

    pub fn is_empty(&self) -> bool {
        !self.any_branch() && !self.any_leaf()
    }
}

#[inline]
fn smooth_abs(x: f64, eps: f64) -> f64 {
    (x * x + eps * eps).sqrt() - eps
}

#[inline]
fn smooth_abs_deriv(x: f64, eps: f64) -> f64 {
    x / (x * x + eps * eps).sqrt()
}

/// Smoothed per-feature maximum: the rho-power mean of the smoothed
/// absolute values of one feature row, with the largest entry factored out
/// so high powers neither overflow nor vanish.
fn smooth_row_max(row: impl Iterator<Item = f64> + Clone, eps: f64, rho: f64) -> f64 {
    let mut m = 0.0f64;
    for v in row.clone() {
        m = m.max(smooth_abs(v, eps));
    }
    if m == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for v in row {
        sum += (smooth_abs(v, eps) / m).powf(rho);
    }
    m * sum.powf(1.0 / rho)
}

/// Value of one regularizer on a coefficient table. Local scope sums the
/// surrogate of every smoothed `|a_jt|`; global scope sums it over the
/// smoothed per-feature maxima.
pub fn reg_value(a: &Array2<f64>, spec: &RegularizerSpec) -> f64 {
    match spec.scope {
        RegScope::Local => a
            .iter()
            .map(|&v| spec.surrogate(smooth_abs(v, spec.smooth_abs_eps)))
            .sum(),
        RegScope::Global => (0..a.nrows())
            .map(|j| {
                spec.surrogate(smooth_row_max(
                    a.row(j).iter().copied(),
                    spec.smooth_abs_eps,
                    spec.smooth_max_rho,
                ))
            })
            .sum(),
    }
}

/// Adds `lambda * d(reg)/d(a)` to `grad` for the branch columns enabled in
/// `mask`. The global surrogate couples all columns through the smoothed
/// maxima, so those are always computed over the full table.
fn reg_grad_into(
    a: &Array2<f64>,
    spec: &RegularizerSpec,
    mask: &BlockMask,
    grad: &mut Array2<f64>,
) {
    let (p, b) = (a.nrows(), a.ncols());
    let eps = spec.smooth_abs_eps;
    match spec.scope {
        RegScope::Local => {
            for t in 0..b {
                if !mask.branch[t] {
                    continue;
                }
                for j in 0..p {
                    let s = smooth_abs(a[(j, t)], eps);
                    grad[(j, t)] +=
                        spec.lambda * spec.surrogate_deriv(s) * smooth_abs_deriv(a[(j, t)], eps);
                }
            }
        }
        RegScope::Global => {
            let rho = spec.smooth_max_rho;
            for j in 0..p {
                let mut m = 0.0f64;
                for t in 0..b {
                    m = m.max(smooth_abs(a[(j, t)], eps));
                }
                if m == 0.0 {
                    continue;
                }
                let mut sum = 0.0;
                for t in 0..b {
                    sum += (smooth_abs(a[(j, t)], eps) / m).powf(rho);
                }
                let beta = m * sum.powf(1.0 / rho);
                let outer = spec.lambda * spec.surrogate_deriv(beta) * sum.powf(1.0 / rho - 1.0);
                for t in 0..b {
                    if !mask.branch[t] {
                        continue;
                    }
                    let s = smooth_abs(a[(j, t)], eps);
                    grad[(j, t)] +=
                        outer * (s / m).powf(rho - 1.0) * smooth_abs_deriv(a[(j, t)], eps);
                }
            }
        }
    }
}

/// Evaluator for the full smoothed objective. Holds per-dataset routing
/// buffers so repeated evaluations do not allocate; the loss, gradient and
/// penalty passes all read the same buffers.
pub struct Evaluator<'a> {
    data: &'a Dataset,
    topo: &'a TreeTopology,
    cdf: LogisticCdf,
    costs: &'a CostMatrix,
    regs: RegSet,
    pen: PenaltySpec,
    class_counts: Vec<usize>,
    left: Array2<f64>,
    right: Array2<f64>,
    leaf_p: Array2<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        data: &'a Dataset,
        topo: &'a TreeTopology,
        cdf: &LogisticCdf,
        costs: &'a CostMatrix,
        regs: RegSet,
        pen: PenaltySpec,
    ) -> Result<Self> {
        pen.validate()?;
        let k = costs.n_classes();
        let mut class_counts = vec![0usize; k];
        for (i, &y) in data.y.iter().enumerate() {
            if y >= k {
                return Err(Error::Data(format!(
                    "label index {y} of sample {i} outside 0..{k}"
                )));
            }
            class_counts[y] += 1;
        }
        let n = data.n();
        Ok(Self {
            data,
            topo,
            cdf: *cdf,
            costs,
            regs,
            pen,
            class_counts,
            left: Array2::zeros((n, topo.n_branches())),
            right: Array2::zeros((n, topo.n_branches())),
            leaf_p: Array2::zeros((n, topo.n_leaves())),
        })
    }

    pub fn topology(&self) -> &'a TreeTopology {
        self.topo
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.data
    }

    pub fn costs(&self) -> &'a CostMatrix {
        self.costs
    }

    /// Leaf probability table of the last evaluation (`N x |leaves|`).
    pub fn leaf_probs(&self) -> &Array2<f64> {
        &self.leaf_p
    }

    /// Fills the routing buffers; returns the expected loss and the
    /// per-class expected correct rates.
    fn routing_pass(&mut self, params: &TreeParams) -> (f64, Vec<f64>) {
        let data = self.data;
        let topo = self.topo;
        let cdf = &self.cdf;
        let costs = self.costs;
        let k = costs.n_classes();
        let n_leaves = topo.n_leaves();
        let mut loss = 0.0;
        let mut rate_num = vec![0.0; k];
        for i in 0..data.n() {
            let x = data.row(i);
            let lrow = self.left.row_mut(i).into_slice().expect("row-major");
            let rrow = self.right.row_mut(i).into_slice().expect("row-major");
            branch_probs_into(params, cdf, x, lrow, rrow);
            let lrow = self.left.row(i);
            let rrow = self.right.row(i);
            let prow = self.leaf_p.row_mut(i).into_slice().expect("row-major");
            leaf_probs_from_branches(
                topo,
                lrow.to_slice().expect("row-major"),
                rrow.to_slice().expect("row-major"),
                prow,
            );
            let yi = data.y[i];
            for t in 0..n_leaves {
                let mut q = 0.0;
                for class in 0..k {
                    q += costs.cost(yi, class) * params.c[(class, t)];
                }
                loss += prow[t] * q;
                rate_num[yi] += prow[t] * params.c[(yi, t)];
            }
        }
        let rates = rate_num
            .iter()
            .zip(&self.class_counts)
            .map(|(&num, &cnt)| if cnt > 0 { num / cnt as f64 } else { 0.0 })
            .collect();
        (loss, rates)
    }

    /// Coverage shortfalls `max(0, 1 - sum_t c_kt)` per class.
    fn coverage_gaps(&self, params: &TreeParams) -> Vec<f64> {
        (0..self.costs.n_classes())
            .map(|class| {
                let row_sum: f64 = (0..params.n_leaves()).map(|t| params.c[(class, t)]).sum();
                (1.0 - row_sum).max(0.0)
            })
            .collect()
    }

    /// Rate shortfalls `max(0, min_rate - r_k)`, zero for empty classes.
    fn rate_gaps(&self, rates: &[f64]) -> Vec<f64> {
        rates
            .iter()
            .zip(&self.class_counts)
            .map(|(&r, &cnt)| {
                if cnt > 0 {
                    (self.pen.min_rate - r).max(0.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn reg_total(&self, params: &TreeParams) -> f64 {
        self.regs
            .iter()
            .map(|spec| spec.lambda * reg_value(&params.a, spec))
            .sum()
    }

    /// Full objective value.
    pub fn value(&mut self, params: &TreeParams) -> f64 {
        let (loss, rates) = self.routing_pass(params);
        let cov: f64 = self
            .coverage_gaps(params)
            .iter()
            .map(|&u| u * u)
            .sum::<f64>()
            * self.pen.coverage_weight;
        let rate: f64 = self
            .rate_gaps(&rates)
            .iter()
            .map(|&h| h * h)
            .sum::<f64>()
            * self.pen.min_rate_weight;
        loss + self.reg_total(params) + cov + rate
    }

    /// Full objective value and its gradient over the blocks enabled in
    /// `mask`. Disabled blocks are left untouched in `grad` (zero after
    /// `fill_zero`).
    pub fn value_and_grad(
        &mut self,
        params: &TreeParams,
        mask: &BlockMask,
        grad: &mut Gradient,
    ) -> f64 {
        grad.fill_zero();
        let (loss, rates) = self.routing_pass(params);
        let cov_gaps = self.coverage_gaps(params);
        let rate_gaps = self.rate_gaps(&rates);
        let cov: f64 = cov_gaps.iter().map(|&u| u * u).sum::<f64>() * self.pen.coverage_weight;
        let rate: f64 = rate_gaps.iter().map(|&h| h * h).sum::<f64>() * self.pen.min_rate_weight;
        let value = loss + self.reg_total(params) + cov + rate;

        let data = self.data;
        let topo = self.topo;
        let costs = self.costs;
        let k = costs.n_classes();
        let n_leaves = topo.n_leaves();
        let p = params.n_features();
        let inv_p = 1.0 / p as f64;
        let gamma = self.cdf.gamma();

        // d(min-rate penalty)/d(r_k) spread over that class's samples
        let rate_coeff: Vec<f64> = rate_gaps
            .iter()
            .zip(&self.class_counts)
            .map(|(&h, &cnt)| {
                if cnt > 0 {
                    -2.0 * self.pen.min_rate_weight * h / cnt as f64
                } else {
                    0.0
                }
            })
            .collect();

        let mut leaf_w = vec![0.0; n_leaves];
        for i in 0..data.n() {
            let yi = data.y[i];
            let prow = self.leaf_p.row(i);
            let prow = prow.to_slice().expect("row-major");

            // combined per-leaf weight: loss cost plus min-rate chain term
            for (t, w) in leaf_w.iter_mut().enumerate() {
                let mut q = 0.0;
                for class in 0..k {
                    q += costs.cost(yi, class) * params.c[(class, t)];
                }
                *w = q + rate_coeff[yi] * params.c[(yi, t)];
            }

            if mask.any_leaf() {
                for t in 0..n_leaves {
                    if !mask.leaf[t] {
                        continue;
                    }
                    let pit = prow[t];
                    for class in 0..k {
                        grad.c[(class, t)] += pit * costs.cost(yi, class);
                    }
                    grad.c[(yi, t)] += rate_coeff[yi] * pit;
                }
            }

            if mask.any_branch() {
                let x = data.row(i);
                let lrow = self.left.row(i);
                let lrow = lrow.to_slice().expect("row-major");
                let rrow = self.right.row(i);
                let rrow = rrow.to_slice().expect("row-major");
                for t_bar in 0..topo.n_branches() {
                    if !mask.branch[t_bar] {
                        continue;
                    }
                    // product-rule derivative of every descendant leaf's
                    // path probability with respect to this node's split
                    let mut acc = 0.0;
                    for &leaf in topo.leaves_under(t_bar) {
                        let mut prod = 1.0;
                        let mut sign = 1.0;
                        for &(b, took_left) in topo.path(leaf) {
                            if b == t_bar {
                                if !took_left {
                                    sign = -1.0;
                                }
                            } else {
                                prod *= if took_left { lrow[b] } else { rrow[b] };
                            }
                        }
                        acc += sign * prod * leaf_w[leaf];
                    }
                    let s = acc * gamma * lrow[t_bar] * rrow[t_bar];
                    for j in 0..p {
                        grad.a[(j, t_bar)] += s * x[j] * inv_p;
                    }
                    grad.mu[t_bar] -= s;
                }
            }
        }

        // coverage penalty gradient over class weights
        if mask.any_leaf() && self.pen.coverage_weight > 0.0 {
            for class in 0..k {
                let d = -2.0 * self.pen.coverage_weight * cov_gaps[class];
                if d != 0.0 {
                    for t in 0..n_leaves {
                        if mask.leaf[t] {
                            grad.c[(class, t)] += d;
                        }
                    }
                }
            }
        }

        if mask.any_branch() {
            for spec in self.regs.clone().iter() {
                reg_grad_into(&params.a, spec, mask, &mut grad.a);
            }
        }

        value
    }
}

/// Expected misclassification loss `sum_i sum_t P_it sum_k w(y_i, k) c_kt`.
pub fn expected_loss(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    data: &Dataset,
    costs: &CostMatrix,
) -> Result<f64> {
    let mut ev = Evaluator::new(data, topo, cdf, costs, RegSet::default(), PenaltySpec::off())?;
    Ok(ev.routing_pass(params).0)
}

/// Full smoothed objective: loss plus regularizers plus penalties.
pub fn objective_value(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    data: &Dataset,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
) -> Result<f64> {
    let regs = RegSet::from_specs(specs)?;
    let mut ev = Evaluator::new(data, topo, cdf, costs, regs, *pen)?;
    Ok(ev.value(params))
}

/// Analytic gradient of the full smoothed objective over `(a, mu, c)`.
pub fn gradient(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    data: &Dataset,
    costs: &CostMatrix,
    specs: &[RegularizerSpec],
    pen: &PenaltySpec,
) -> Result<Gradient> {
    let regs = RegSet::from_specs(specs)?;
    let mut ev = Evaluator::new(data, topo, cdf, costs, regs, *pen)?;
    let mut grad = Gradient::zeros_like(params);
    ev.value_and_grad(params, &BlockMask::full(topo), &mut grad);
    Ok(grad)
}

/// Partial derivatives of the expected loss with respect to every split
/// coefficient, evaluated at `a = 0` with integer leaf labels and the given
/// intercepts.
pub fn loss_grad_at_zero(
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    data: &Dataset,
    costs: &CostMatrix,
    leaf_labels: &[usize],
    mu: &Array1<f64>,
) -> Result<Array2<f64>> {
    if leaf_labels.len() != topo.n_leaves() {
        return Err(Error::Structure(format!(
            "{} leaf labels for {} leaves",
            leaf_labels.len(),
            topo.n_leaves()
        )));
    }
    let params = TreeParams::new(
        Array2::zeros((data.p(), topo.n_branches())),
        mu.clone(),
        one_hot_leaf_weights(leaf_labels, costs.n_classes()),
    )?;
    let mut ev = Evaluator::new(data, topo, cdf, costs, RegSet::default(), PenaltySpec::off())?;
    let mut grad = Gradient::zeros_like(&params);
    ev.value_and_grad(&params, &BlockMask::full(topo), &mut grad);
    Ok(grad.a)
}

/// The smallest total sparsity weight at which `a = 0` is coordinate-wise
/// stationary for the exact (non-smoothed) exponential surrogate: the
/// largest `|dLoss/da_jt|` at zero divided by the surrogate steepness.
pub fn zero_stationarity_threshold(
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    data: &Dataset,
    costs: &CostMatrix,
    leaf_labels: &[usize],
    mu: &Array1<f64>,
    alpha: f64,
) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    let xi = loss_grad_at_zero(cdf, topo, data, costs, leaf_labels, mu)?;
    Ok(xi.iter().fold(0.0f64, |m, &v| m.max(v.abs())) / alpha)
}

/// Percentage of unused features per branch node (averaged) and across the
/// whole tree. A coefficient counts as unused when `|a_jt| <= tol`.
pub fn sparsity_indices(a: &Array2<f64>, tol: f64) -> (f64, f64) {
    let (p, b) = (a.nrows(), a.ncols());
    if p == 0 || b == 0 {
        return (100.0, 100.0);
    }
    let mut local = 0.0;
    for t in 0..b {
        let zeros = (0..p).filter(|&j| a[(j, t)].abs() <= tol).count();
        local += zeros as f64 / p as f64;
    }
    let delta_local = local / b as f64 * 100.0;
    let global_zeros = (0..p)
        .filter(|&j| (0..b).all(|t| a[(j, t)].abs() <= tol))
        .count();
    let delta_global = global_zeros as f64 / p as f64 * 100.0;
    (delta_local, delta_global)
}

/// Default tolerance for counting a coefficient as zero in sparsity
/// reports.
pub const SPARSITY_TOL: f64 = 1e-5;

/// Minimum-rate penalty alone: `weight * sum_k max(0, min_rate - r_k)^2`
/// where `r_k` is the expected correct classification rate of class `k`.
/// Classes without samples are skipped.
pub fn min_rate_penalty(
    params: &TreeParams,
    cdf: &LogisticCdf,
    topo: &TreeTopology,
    data: &Dataset,
    costs: &CostMatrix,
    pen: &PenaltySpec,
) -> Result<f64> {
    let mut ev = Evaluator::new(data, topo, cdf, costs, RegSet::default(), *pen)?;
    let (_, rates) = ev.routing_pass(params);
    Ok(ev.rate_gaps(&rates).iter().map(|&h| h * h).sum::<f64>() * pen.min_rate_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{seq::SliceRandom as _, Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn topo(depth: usize) -> TreeTopology {
        TreeTopology::new(depth).unwrap()
    }

    /// Dataset wrapper for hand-built instances.
    fn dataset(x: Vec<Vec<f64>>, y: Vec<usize>, k: usize) -> Dataset {
        let n = x.len();
        let p = x[0].len();
        let mut m = Array2::zeros((n, p));
        for (i, row) in x.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Dataset::new(
            m,
            y,
            (0..p).map(|j| format!("f{j}")).collect(),
            (0..k).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    /// Single sample routed 0.8/0.2 at depth 1; leaves labeled (own, other).
    fn single_sample_instance() -> (TreeParams, LogisticCdf, TreeTopology, Dataset, CostMatrix) {
        let t = topo(1);
        let cdf = LogisticCdf::new(8.0).unwrap();
        // p = 1, a = 0.2, x = 0.5: activation 0.2*0.5 - mu; want F = 0.8
        let mu = 0.1 - (4.0f64).ln() / 8.0;
        let params = TreeParams::new(
            array![[0.2]],
            array![mu],
            one_hot_leaf_weights(&[0, 1], 2),
        )
        .unwrap();
        let data = dataset(vec![vec![0.5]], vec![0], 2);
        let costs = CostMatrix::uniform(2, 0.5).unwrap();
        (params, cdf, t, data, costs)
    }

    #[test]
    fn expected_loss_single_sample() {
        let (params, cdf, t, data, costs) = single_sample_instance();
        let loss = expected_loss(&params, &cdf, &t, &data, &costs).unwrap();
        assert_abs_diff_eq!(loss, 0.10, epsilon = 1e-9);
    }

    #[test]
    fn expected_loss_two_samples() {
        // routing 0.9 left for x=1, 0.2 left for x=0; leaves labeled (0, 1)
        let t = topo(1);
        let gamma = 8.0;
        let cdf = LogisticCdf::new(gamma).unwrap();
        let v1 = (9.0f64).ln() / gamma; // F = 0.9
        let v2 = (0.25f64).ln() / gamma; // F = 0.2
        let a = v1 - v2;
        let mu = -v2;
        let params = TreeParams::new(
            array![[a]],
            array![mu],
            one_hot_leaf_weights(&[0, 1], 2),
        )
        .unwrap();
        let data = dataset(vec![vec![1.0], vec![0.0]], vec![0, 1], 2);
        let costs = CostMatrix::uniform(2, 0.5).unwrap();
        let loss = expected_loss(&params, &cdf, &t, &data, &costs).unwrap();
        assert_abs_diff_eq!(loss, 0.15, epsilon = 1e-9);
    }

    #[test]
    fn zero_costs_zero_loss() {
        let (params, cdf, t, data, _) = single_sample_instance();
        let w0 = CostMatrix::uniform(2, 0.0).unwrap();
        assert_eq!(expected_loss(&params, &cdf, &t, &data, &w0).unwrap(), 0.0);
    }

    #[test]
    fn bad_label_is_data_error() {
        let (params, cdf, t, mut data, costs) = single_sample_instance();
        data.y[0] = 5;
        assert!(matches!(
            expected_loss(&params, &cdf, &t, &data, &costs),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn reg_values_at_zero_and_closed_forms() {
        let zero = Array2::zeros((3, 2));
        for kind in [
            RegKind::L1,
            RegKind::LInf,
            RegKind::L0Exp,
            RegKind::Appr1,
            RegKind::Appr2,
            RegKind::LogEps,
        ] {
            for scope in [RegScope::Local, RegScope::Global] {
                let spec = RegularizerSpec::new(kind, scope, 1.0);
                assert_eq!(reg_value(&zero, &spec), 0.0, "{kind:?} {scope:?}");
            }
        }

        // exponential surrogate: alpha = 5, single entry 0.2 -> 1 - e^-1
        let a = array![[0.2]];
        let spec = RegularizerSpec::new(RegKind::L0Exp, RegScope::Local, 1.0);
        assert_abs_diff_eq!(reg_value(&a, &spec), 0.632_120_558_828_557_7, epsilon = 1e-6);

        // l1 local just sums absolute values
        let a = array![[0.5, -0.25]];
        let spec = RegularizerSpec::new(RegKind::L1, RegScope::Local, 1.0);
        assert_abs_diff_eq!(reg_value(&a, &spec), 0.75, epsilon = 1e-6);
    }

    #[test]
    fn global_scope_tracks_row_maxima() {
        // one feature large in a single node: global sees it once
        let a = array![[0.8, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let spec = RegularizerSpec::new(RegKind::LInf, RegScope::Global, 1.0);
        let v = reg_value(&a, &spec);
        assert_abs_diff_eq!(v, 0.8, epsilon = 1e-2);
        // local counts it the same here, but triples for a repeated entry
        let a3 = array![[0.8, 0.8, 0.8], [0.0, 0.0, 0.0]];
        let local = RegularizerSpec::new(RegKind::L1, RegScope::Local, 1.0);
        assert_abs_diff_eq!(reg_value(&a3, &local), 2.4, epsilon = 1e-6);
        let global = reg_value(&a3, &spec);
        assert!(global < 0.9, "smooth max should stay near 0.8, got {global}");
    }

    #[test]
    fn objective_composes_loss_and_reg() {
        let (params, cdf, t, data, costs) = single_sample_instance();
        // no regularizers, no penalties: objective equals the loss
        let v = objective_value(&params, &cdf, &t, &data, &costs, &[], &PenaltySpec::off()).unwrap();
        assert_abs_diff_eq!(
            v,
            expected_loss(&params, &cdf, &t, &data, &costs).unwrap(),
            epsilon = 1e-12
        );

        let mut spec = RegularizerSpec::new(RegKind::L0Exp, RegScope::Local, 0.1);
        spec.alpha = 5.0;
        let v = objective_value(&params, &cdf, &t, &data, &costs, &[spec], &PenaltySpec::off())
            .unwrap();
        assert_abs_diff_eq!(v, 0.10 + 0.1 * 0.632_120_558_828_557_7, epsilon = 1e-6);
    }

    #[test]
    fn covered_classes_incur_no_penalty() {
        // balanced two-class sample, one-hot leaves, coverage satisfied and
        // both rates 0.5 >= 0.1: active penalties contribute nothing
        let t = topo(1);
        let cdf = LogisticCdf::new(8.0).unwrap();
        let params = TreeParams::new(
            array![[0.0]],
            array![0.0],
            one_hot_leaf_weights(&[0, 1], 2),
        )
        .unwrap();
        let data = dataset(vec![vec![0.3], vec![0.7]], vec![0, 1], 2);
        let costs = CostMatrix::uniform(2, 0.5).unwrap();
        let pen = PenaltySpec::default();
        let with = objective_value(&params, &cdf, &t, &data, &costs, &[], &pen).unwrap();
        let without =
            objective_value(&params, &cdf, &t, &data, &costs, &[], &PenaltySpec::off()).unwrap();
        assert_abs_diff_eq!(with, without, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_scope_rejected() {
        let s1 = RegularizerSpec::new(RegKind::L1, RegScope::Local, 0.1);
        let s2 = RegularizerSpec::new(RegKind::L0Exp, RegScope::Local, 0.2);
        assert!(matches!(
            RegSet::from_specs(&[s1, s2]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn min_rate_penalty_examples() {
        let t = topo(1);
        let cdf = LogisticCdf::new(8.0).unwrap();
        let costs = CostMatrix::uniform(2, 0.5).unwrap();
        // all weight on class 0: class 1's rate is 0
        let params = TreeParams::new(
            array![[0.0]],
            array![0.0],
            one_hot_leaf_weights(&[0, 0], 2),
        )
        .unwrap();
        let data = dataset(vec![vec![0.2], vec![0.8]], vec![0, 1], 2);
        let pen = PenaltySpec {
            coverage_weight: 0.0,
            min_rate: 0.1,
            min_rate_weight: 10.0,
        };
        let v = min_rate_penalty(&params, &cdf, &t, &data, &costs, &pen).unwrap();
        assert_abs_diff_eq!(v, 0.1, epsilon = 1e-12);

        // perfect classifier: no shortfall
        let perfect = TreeParams::new(
            array![[0.0]],
            array![0.0],
            one_hot_leaf_weights(&[0, 1], 2),
        )
        .unwrap();
        let v = min_rate_penalty(&perfect, &cdf, &t, &data, &costs, &pen).unwrap();
        assert_eq!(v, 0.0);

        // min_rate zero: always zero
        let none = PenaltySpec {
            coverage_weight: 0.0,
            min_rate: 0.0,
            min_rate_weight: 10.0,
        };
        let v = min_rate_penalty(&params, &cdf, &t, &data, &costs, &none).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn sparsity_index_examples() {
        let a = array![[0.5, 0.0], [0.0, 0.0]];
        let (dl, dg) = sparsity_indices(&a, SPARSITY_TOL);
        assert_abs_diff_eq!(dl, 75.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dg, 50.0, epsilon = 1e-12);

        let zero = Array2::zeros((4, 3));
        assert_eq!(sparsity_indices(&zero, SPARSITY_TOL), (100.0, 100.0));

        let ones = Array2::from_elem((4, 3), 1.0);
        assert_eq!(sparsity_indices(&ones, SPARSITY_TOL), (0.0, 0.0));
    }

    /// Random smooth instance bounded away from every kink so central
    /// differences resolve the analytic gradient.
    fn random_instance(
        rng: &mut ChaCha8Rng,
        max_n: usize,
        max_p: usize,
        max_depth: usize,
    ) -> (TreeParams, LogisticCdf, TreeTopology, Dataset, CostMatrix) {
        let depth = rng.gen_range(1..=max_depth);
        let t = TreeTopology::new(depth).unwrap();
        let p = rng.gen_range(1..=max_p);
        let k = rng.gen_range(2..=3usize.min(t.n_leaves()));
        let n = rng.gen_range(k.max(4)..=max_n);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        // every class represented at least once
        let y: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { rng.gen_range(0..k) })
            .collect();
        let data = dataset(x, y, k);
        let costs = CostMatrix::uniform(k, 0.5).unwrap();
        let cdf = LogisticCdf::new(rng.gen_range(1.0..32.0)).unwrap();

        let mut a = Array2::zeros((p, t.n_branches()));
        a.iter_mut().for_each(|v| {
            let mag = rng.gen_range(0.05..0.9);
            *v = if rng.gen_bool(0.5) { mag } else { -mag };
        });
        let mu = Array1::from_vec(
            (0..t.n_branches())
                .map(|_| rng.gen_range(-0.8..0.8))
                .collect(),
        );
        let mut c = Array2::zeros((k, t.n_leaves()));
        for mut col in c.columns_mut() {
            let mut raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|v| *v /= s);
            for (i, v) in raw.into_iter().enumerate() {
                col[i] = v;
            }
        }
        let params = TreeParams::new(a, mu, c).unwrap();
        (params, cdf, t, data, costs)
    }

    /// Central finite differences of the full objective; the independent
    /// oracle for the analytic gradient.
    fn finite_diff_gradient(
        params: &TreeParams,
        cdf: &LogisticCdf,
        t: &TreeTopology,
        data: &Dataset,
        costs: &CostMatrix,
        specs: &[RegularizerSpec],
        pen: &PenaltySpec,
        h: f64,
    ) -> Gradient {
        let mut fd = Gradient::zeros_like(params);
        let eval = |p: &TreeParams| objective_value(p, cdf, t, data, costs, specs, pen).unwrap();
        let mut probe = params.clone();
        for t_idx in 0..params.n_branches() {
            for j in 0..params.n_features() {
                let orig = probe.a[(j, t_idx)];
                probe.a[(j, t_idx)] = orig + h;
                let fp = eval(&probe);
                probe.a[(j, t_idx)] = orig - h;
                let fm = eval(&probe);
                probe.a[(j, t_idx)] = orig;
                fd.a[(j, t_idx)] = (fp - fm) / (2.0 * h);
            }
            let orig = probe.mu[t_idx];
            probe.mu[t_idx] = orig + h;
            let fp = eval(&probe);
            probe.mu[t_idx] = orig - h;
            let fm = eval(&probe);
            probe.mu[t_idx] = orig;
            fd.mu[t_idx] = (fp - fm) / (2.0 * h);
        }
        for t_idx in 0..params.n_leaves() {
            for class in 0..params.n_classes() {
                let orig = probe.c[(class, t_idx)];
                probe.c[(class, t_idx)] = orig + h;
                let fp = eval(&probe);
                probe.c[(class, t_idx)] = orig - h;
                let fm = eval(&probe);
                probe.c[(class, t_idx)] = orig;
                fd.c[(class, t_idx)] = (fp - fm) / (2.0 * h);
            }
        }
        fd
    }

    /// Central differences cannot resolve the penalty hinges; accept an
    /// instance only when every rate and coverage hinge is at least
    /// `margin` away from its kink.
    fn hinge_margins_ok(
        params: &TreeParams,
        cdf: &LogisticCdf,
        t: &TreeTopology,
        data: &Dataset,
        costs: &CostMatrix,
        pen: &PenaltySpec,
        margin: f64,
    ) -> bool {
        let mut ev =
            Evaluator::new(data, t, cdf, costs, RegSet::default(), *pen).unwrap();
        let (_, rates) = ev.routing_pass(params);
        for (k, &r) in rates.iter().enumerate() {
            if ev.class_counts[k] > 0 && (r - pen.min_rate).abs() < margin {
                return false;
            }
        }
        for class in 0..costs.n_classes() {
            let row_sum: f64 = (0..params.n_leaves()).map(|t| params.c[(class, t)]).sum();
            if (row_sum - 1.0).abs() < margin {
                return false;
            }
        }
        true
    }

    fn assert_grad_close(analytic: &Gradient, fd: &Gradient, rel: f64) {
        let check = |g: f64, f: f64, what: &str| {
            let err = (g - f).abs() / f.abs().max(1.0);
            assert!(err <= rel, "{what}: analytic {g} vs fd {f} (rel err {err:.3e})");
        };
        for (g, f) in analytic.a.iter().zip(fd.a.iter()) {
            check(*g, *f, "a");
        }
        for (g, f) in analytic.mu.iter().zip(fd.mu.iter()) {
            check(*g, *f, "mu");
        }
        for (g, f) in analytic.c.iter().zip(fd.c.iter()) {
            check(*g, *f, "c");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let kinds = [
            RegKind::L1,
            RegKind::LInf,
            RegKind::L0Exp,
            RegKind::Appr1,
            RegKind::Appr2,
            RegKind::LogEps,
        ];
        let pen = PenaltySpec {
            coverage_weight: 3.0,
            min_rate: 0.25,
            min_rate_weight: 2.0,
        };
        let mut trial = 0;
        while trial < 20 {
            let (params, cdf, t, data, costs) = random_instance(&mut rng, 30, 6, 2);
            if !hinge_margins_ok(&params, &cdf, &t, &data, &costs, &pen, 1e-3) {
                continue;
            }
            let kind = kinds[trial % kinds.len()];
            let scope = if trial % 2 == 0 {
                RegScope::Local
            } else {
                RegScope::Global
            };
            let mut spec = RegularizerSpec::new(kind, scope, rng.gen_range(0.01..0.5));
            if trial % 3 == 0 {
                spec.q = 0.5;
            }
            if kind == RegKind::Appr2 {
                // the default near-singular shift eps^-q ~ 1e5 per entry
                // swamps the difference quotient in rounding noise; the
                // oracle needs a resolvable setting
                spec.eps = 0.05;
            }
            let specs = vec![spec];
            let analytic =
                gradient(&params, &cdf, &t, &data, &costs, &specs, &pen).unwrap();
            let fd = finite_diff_gradient(&params, &cdf, &t, &data, &costs, &specs, &pen, 1e-6);
            assert_grad_close(&analytic, &fd, 1e-5);
            trial += 1;
        }
    }

    #[test]
    fn gradient_with_both_scopes_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let (params, cdf, t, data, costs) = random_instance(&mut rng, 20, 4, 2);
            let specs = vec![
                RegularizerSpec::new(RegKind::L0Exp, RegScope::Local, 0.05),
                RegularizerSpec::new(RegKind::L0Exp, RegScope::Global, 0.08),
            ];
            let pen = PenaltySpec::off();
            let analytic = gradient(&params, &cdf, &t, &data, &costs, &specs, &pen).unwrap();
            let fd = finite_diff_gradient(&params, &cdf, &t, &data, &costs, &specs, &pen, 1e-6);
            assert_grad_close(&analytic, &fd, 1e-5);
        }
    }

    #[test]
    fn symmetric_instance_has_vanishing_split_gradient() {
        // coincident samples with opposite classes at a = 0, mu = 0: their
        // pulls on every split coefficient cancel exactly
        let t = topo(1);
        let cdf = LogisticCdf::new(8.0).unwrap();
        let params = TreeParams::new(
            array![[0.0], [0.0]],
            array![0.0],
            one_hot_leaf_weights(&[0, 1], 2),
        )
        .unwrap();
        let data = dataset(vec![vec![0.2, 0.8], vec![0.2, 0.8]], vec![0, 1], 2);
        let costs = CostMatrix::uniform(2, 0.5).unwrap();
        let g = gradient(&params, &cdf, &t, &data, &costs, &[], &PenaltySpec::off()).unwrap();
        for &v in g.a.iter() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(g.mu[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_costs_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (params, cdf, t, data, _) = random_instance(&mut rng, 10, 3, 2);
        let w0 = CostMatrix::uniform(data.k(), 0.0).unwrap();
        let g = gradient(&params, &cdf, &t, &data, &w0, &[], &PenaltySpec::off()).unwrap();
        assert!(g.a.iter().chain(g.c.iter()).all(|&v| v == 0.0));
        assert!(g.mu.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_grad_at_zero_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let (params, cdf, t, data, costs) = random_instance(&mut rng, 15, 4, 2);
            let labels: Vec<usize> = (0..t.n_leaves()).map(|l| l % data.k()).collect();
            let xi =
                loss_grad_at_zero(&cdf, &t, &data, &costs, &labels, &params.mu).unwrap();
            // compare against differences of the loss with a = 0
            let zero_params = TreeParams::new(
                Array2::zeros((data.p(), t.n_branches())),
                params.mu.clone(),
                one_hot_leaf_weights(&labels, costs.n_classes()),
            )
            .unwrap();
            let fd = finite_diff_gradient(
                &zero_params,
                &cdf,
                &t,
                &data,
                &costs,
                &[],
                &PenaltySpec::off(),
                1e-6,
            );
            for (g, f) in xi.iter().zip(fd.a.iter()) {
                let err = (g - f).abs() / f.abs().max(1.0);
                assert!(err < 1e-5, "xi {g} vs fd {f}");
            }
        }
    }

    #[test]
    fn grad_at_zero_trivial_cases() {
        let t = topo(1);
        let cdf = LogisticCdf::new(8.0).unwrap();
        let data = dataset(vec![vec![0.0], vec![0.0]], vec![0, 1], 2);
        let costs = CostMatrix::uniform(2, 0.5).unwrap();
        // all-zero features with mu = 0 annihilate every term
        let xi = loss_grad_at_zero(&cdf, &t, &data, &costs, &[0, 1], &array![0.0]).unwrap();
        assert!(xi.iter().all(|&v| v == 0.0));
        // zero costs
        let w0 = CostMatrix::uniform(2, 0.0).unwrap();
        let data2 = dataset(vec![vec![0.4], vec![0.9]], vec![0, 1], 2);
        let xi = loss_grad_at_zero(&cdf, &t, &data2, &w0, &[0, 1], &array![0.3]).unwrap();
        assert!(xi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_scales_inversely_with_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (params, cdf, t, data, costs) = random_instance(&mut rng, 15, 4, 2);
        let labels: Vec<usize> = (0..t.n_leaves()).map(|l| l % data.k()).collect();
        let t1 =
            zero_stationarity_threshold(&cdf, &t, &data, &costs, &labels, &params.mu, 5.0).unwrap();
        let t2 = zero_stationarity_threshold(&cdf, &t, &data, &costs, &labels, &params.mu, 10.0)
            .unwrap();
        assert_abs_diff_eq!(t1, 2.0 * t2, epsilon = 1e-12);

        let w0 = CostMatrix::uniform(data.k(), 0.0).unwrap();
        let t0 =
            zero_stationarity_threshold(&cdf, &t, &data, &w0, &labels, &params.mu, 5.0).unwrap();
        assert_eq!(t0, 0.0);
    }

    /// One-sided directional derivatives of the exact (non-smoothed)
    /// exponential-surrogate objective at `a = 0` along +-coordinate
    /// directions: `xi +- lambda alpha`.
    #[test]
    fn threshold_blocks_descent_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tested = 0;
        while tested < 10 {
            let (params, cdf, t, data, costs) = random_instance(&mut rng, 20, 5, 2);
            let labels: Vec<usize> = (0..t.n_leaves()).map(|l| l % data.k()).collect();
            let alpha = 5.0;
            let thr = zero_stationarity_threshold(
                &cdf, &t, &data, &costs, &labels, &params.mu, alpha,
            )
            .unwrap();
            if thr < 1e-8 {
                continue;
            }
            tested += 1;
            let xi = loss_grad_at_zero(&cdf, &t, &data, &costs, &labels, &params.mu).unwrap();

            let lam_hi = 1.01 * thr;
            for &v in xi.iter() {
                // derivative along +e is xi + lambda alpha, along -e it is
                // -xi + lambda alpha; both must be non-negative
                assert!(v + lam_hi * alpha >= -1e-9);
                assert!(-v + lam_hi * alpha >= -1e-9);
            }

            let lam_lo = 0.5 * thr;
            let descent = xi
                .iter()
                .any(|&v| v + lam_lo * alpha < 0.0 || -v + lam_lo * alpha < 0.0);
            assert!(descent, "expected a descent direction at half threshold");
        }
    }

    proptest! {
        #[test]
        fn surrogates_monotone_and_zero_at_origin(
            u1 in 0.0..1.0f64,
            u2 in 0.0..1.0f64,
            kind_idx in 0usize..6,
        ) {
            let kinds = [RegKind::L1, RegKind::LInf, RegKind::L0Exp,
                         RegKind::Appr1, RegKind::Appr2, RegKind::LogEps];
            let spec = RegularizerSpec::new(kinds[kind_idx], RegScope::Local, 1.0);
            prop_assert!(spec.surrogate(0.0).abs() < 1e-12);
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(spec.surrogate(lo) <= spec.surrogate(hi) + 1e-12);
        }

        #[test]
        fn delta_global_never_exceeds_delta_local(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(1..6usize);
            let b = rng.gen_range(1..7usize);
            let mut a = Array2::zeros((p, b));
            a.iter_mut().for_each(|v| {
                *v = if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(-1.0..1.0) };
            });
            let (dl, dg) = sparsity_indices(&a, SPARSITY_TOL);
            prop_assert!((0.0..=100.0).contains(&dl));
            prop_assert!((0.0..=100.0).contains(&dg));
            prop_assert!(dg <= dl + 1e-9);
        }

        #[test]
        fn objective_invariant_under_sample_permutation(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (params, cdf, t, data, costs) = random_instance(&mut rng, 12, 3, 2);
            let spec = RegularizerSpec::new(RegKind::L0Exp, RegScope::Global, 0.1);
            let pen = PenaltySpec::default();
            let v1 = objective_value(&params, &cdf, &t, &data, &costs, &[spec], &pen).unwrap();
            let mut order: Vec<usize> = (0..data.n()).collect();
            order.shuffle(&mut rng);
            let shuffled = data.select(&order);
            let v2 = objective_value(&params, &cdf, &t, &shuffled, &costs, &[spec], &pen).unwrap();
            prop_assert!((v1 - v2).abs() <= 1e-9 * v1.abs().max(1.0));
        }
    }
}
