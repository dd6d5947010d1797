//! Closed-form VC-dimension bounds for maximal randomized classification
//! trees, plus a constructive verifier for the depth-2 shattering split.
//!
//! Lower bounds: depth 1 matches a perceptron (`p + 1`); depth 2 doubles it;
//! for depth `D >= 3` each of the `2^(D-2)` depth-(D-1) nodes contributes a
//! depth-2 subtree on `p - (D - 2)` effective inputs, giving
//! `2^(D-1) (p - D + 3)` whenever the construction fits (`D <= p + 2` and
//! `p - D <= 2^(p-D+1) - 3`). The upper bound is the order-of-magnitude
//! witness `2^(4(D-1)) p^2` from the mixture-of-experts view; it is a big-O
//! argument, so the witness is reported but never compared numerically to
//! the lower bounds.

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::tree::LogisticCdf;

/// A tree family: `inputs` features, depth `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VcQuery {
    pub inputs: usize,
    pub depth: usize,
}

impl VcQuery {
    pub fn new(inputs: usize, depth: usize) -> Result<Self> {
        if inputs == 0 || depth == 0 {
            return Err(Error::Config(
                "inputs and depth must both be at least 1".into(),
            ));
        }
        Ok(Self { inputs, depth })
    }
}

/// Result of the lower-bound formulas: either a bound or the name of the
/// violated applicability condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VcLower {
    Bound(BigUint),
    NoBound { violated: String },
}

/// Constructive VC-dimension lower bound.
pub fn vc_lower(q: VcQuery) -> VcLower {
    let p = q.inputs;
    match q.depth {
        1 => VcLower::Bound(BigUint::from(p + 1)),
        2 => VcLower::Bound(BigUint::from(2 * (p + 1))),
        d => {
            if d > p + 2 {
                return VcLower::NoBound {
                    violated: format!("D <= p + 2 (depth {d} exceeds {} for p = {p})", p + 2),
                };
            }
            // binary-input capacity: p - D <= 2^(p-D+1) - 3
            let m = p as i64 - d as i64;
            let holds = if m >= 1 {
                if m + 1 >= 127 {
                    true
                } else {
                    m <= (1i64 << (m + 1)) - 3
                }
            } else {
                // 2^(m+1) - 3 < m for every m <= 0
                false
            };
            if !holds {
                return VcLower::NoBound {
                    violated: format!(
                        "p - D <= 2^(p-D+1) - 3 (fails for p = {p}, D = {d})"
                    ),
                };
            }
            let factor = BigUint::from((p - d) + 3);
            VcLower::Bound(factor << (d - 1))
        }
    }
}

/// The order-of-magnitude upper-bound witness `2^(4(D-1)) p^2`.
pub fn vc_upper_witness(q: VcQuery) -> BigUint {
    let p2 = BigUint::from(q.inputs) * BigUint::from(q.inputs);
    p2 << (4 * (q.depth - 1))
}

/// The explicit depth-2 root split that separates the two perceptron point
/// sets: uniform coefficients `(p-1)/p`, intercept `1/p`, and the smallest
/// steepness at which both sides clear the probability threshold `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShatterConstruction {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub gamma_min: f64,
}

fn check_construction_inputs(p: usize, eps: f64) -> Result<()> {
    // denominator p^2 - 3p + 1 must be positive; p = 3 gives exactly 1 and
    // is admitted, p <= 2 makes the construction inapplicable
    let denom = (p * p) as i64 - 3 * p as i64 + 1;
    if denom <= 0 {
        return Err(Error::Config(format!(
            "construction inapplicable for p = {p}: p^2 - 3p + 1 = {denom} <= 0"
        )));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Config(format!(
            "eps must lie in (0, 0.5), got {eps}"
        )));
    }
    Ok(())
}

/// Root-node parameters and the minimal steepness separating the two
/// point sets with per-point error at most `eps`.
pub fn shatter_construction(p: usize, eps: f64) -> Result<ShatterConstruction> {
    check_construction_inputs(p, eps)?;
    let pf = p as f64;
    let ratio = ((1.0 - eps) / eps).ln();
    let denom = pf * pf - 3.0 * pf + 1.0;
    let gamma_min = (pf * pf * ratio).max(pf * pf / denom * ratio);
    Ok(ShatterConstruction {
        coefficients: vec![(pf - 1.0) / pf; p],
        intercept: 1.0 / pf,
        gamma_min,
    })
}

/// Separation check of the construction at a given steepness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationReport {
    pub separated: bool,
    /// Largest probability of a right-set point slipping left.
    pub worst_right_set: f64,
    /// Largest probability of a left-set point slipping right.
    pub worst_left_set: f64,
}

/// Evaluates the construction on the two vertex sets: the right set holds
/// the origin and the unit vectors, the left set their complements. Returns
/// whether every point clears the `eps` threshold on its own side, with the
/// worst offending probability per side.
pub fn verify_separation(p: usize, eps: f64, gamma: f64) -> Result<SeparationReport> {
    check_construction_inputs(p, eps)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let construction = shatter_construction(p, eps)?;
    let cdf = LogisticCdf::new(gamma)?;
    let pf = p as f64;

    let activation = |x: &[f64]| {
        let dot: f64 = construction
            .coefficients
            .iter()
            .zip(x)
            .map(|(a, v)| a * v)
            .sum();
        dot / pf - construction.intercept
    };

    let mut worst_right_set: f64 = 0.0;
    let mut worst_left_set: f64 = 0.0;
    let mut point = vec![0.0; p];

    // right set: origin and each unit vector; offending prob is F (left)
    worst_right_set = worst_right_set.max(cdf.value(activation(&point)));
    for i in 0..p {
        point.fill(0.0);
        point[i] = 1.0;
        worst_right_set = worst_right_set.max(cdf.value(activation(&point)));
    }
    // left set: all-ones and its unit complements; offending prob is 1 - F
    point.fill(1.0);
    worst_left_set = worst_left_set.max(cdf.complement(activation(&point)));
    for i in 0..p {
        point.fill(1.0);
        point[i] = 0.0;
        worst_left_set = worst_left_set.max(cdf.complement(activation(&point)));
    }

    Ok(SeparationReport {
        separated: worst_right_set <= eps && worst_left_set <= eps,
        worst_right_set,
        worst_left_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn q(p: usize, d: usize) -> VcQuery {
        VcQuery::new(p, d).unwrap()
    }

    fn bound(v: VcLower) -> u64 {
        match v {
            VcLower::Bound(b) => u64::try_from(&b).unwrap(),
            VcLower::NoBound { violated } => panic!("expected bound, got: {violated}"),
        }
    }

    #[test]
    fn lower_bound_values() {
        assert_eq!(bound(vc_lower(q(4, 1))), 5);
        assert_eq!(bound(vc_lower(q(4, 2))), 10);
        assert_eq!(bound(vc_lower(q(5, 3))), 20);
        assert_eq!(bound(vc_lower(q(11, 2))), 24);
    }

    #[test]
    fn lower_bound_conditions() {
        // depth too large for the input count
        match vc_lower(q(4, 8)) {
            VcLower::NoBound { violated } => assert!(violated.contains("D <= p + 2")),
            VcLower::Bound(_) => panic!("expected rejection"),
        }
        // p - D <= 0 fails the binary-input condition
        match vc_lower(q(5, 5)) {
            VcLower::NoBound { violated } => {
                assert!(violated.contains("2^(p-D+1) - 3"), "{violated}")
            }
            VcLower::Bound(_) => panic!("expected rejection"),
        }
    }

    #[test]
    fn depth_two_doubles_depth_one() {
        for p in 1..40 {
            assert_eq!(bound(vc_lower(q(p, 1))) * 2, bound(vc_lower(q(p, 2))));
        }
    }

    /// Recursion consistency: 2^(D-2) depth-2 subtrees, each on p-(D-2)
    /// inputs, contribute 2((p - (D-2)) + 1) apiece.
    #[test]
    fn deep_bound_matches_subtree_recursion() {
        for p in 4..20usize {
            for d in 3..=(p - 1).min(8) {
                let direct = bound(vc_lower(q(p, d)));
                let per_subtree = 2 * ((p - (d - 2)) + 1);
                let expect = (1u64 << (d - 2)) * per_subtree as u64;
                assert_eq!(direct, expect, "p={p} D={d}");
            }
        }
    }

    #[test]
    fn bounds_respect_binary_cube_size() {
        for p in 4..24usize {
            for d in 3..=(p + 2).min(10) {
                if let VcLower::Bound(b) = vc_lower(q(p, d)) {
                    assert!(b <= BigUint::from(1u64) << p, "p={p} D={d}");
                }
            }
        }
    }

    #[test]
    fn upper_witness_values() {
        assert_eq!(vc_upper_witness(q(4, 2)), BigUint::from(256u32));
        assert_eq!(vc_upper_witness(q(1, 1)), BigUint::from(1u32));
        assert_eq!(vc_upper_witness(q(10, 3)), BigUint::from(25_600u32));
        // no overflow at large depth
        let big = vc_upper_witness(q(100, 40));
        assert!(big > BigUint::from(u128::MAX));
    }

    #[test]
    fn construction_values() {
        let c = shatter_construction(4, 0.05).unwrap();
        assert_eq!(c.coefficients, vec![0.75; 4]);
        assert_abs_diff_eq!(c.intercept, 0.25, epsilon = 1e-15);
        // 16 ln 19 (frozen from a 50-digit evaluation: 47.11102366666...)
        assert_abs_diff_eq!(c.gamma_min, 47.111_023_666_663_05, epsilon = 1e-9);

        let c3 = shatter_construction(3, 0.25).unwrap();
        // 9 ln 3 = 9.88751059801...
        assert_abs_diff_eq!(c3.gamma_min, 9.887_510_598_012_987, epsilon = 1e-9);

        // eps -> 0.5 drives the threshold to zero
        let c = shatter_construction(4, 0.499_999_999).unwrap();
        assert!(c.gamma_min < 1e-6);
    }

    #[test]
    fn construction_rejects_small_p() {
        assert!(shatter_construction(2, 0.05).is_err());
        assert!(shatter_construction(1, 0.05).is_err());
        assert!(shatter_construction(3, 0.05).is_ok());
        assert!(shatter_construction(4, 0.6).is_err());
    }

    #[test]
    fn separation_verdicts() {
        // comfortably above the threshold
        let r = verify_separation(4, 0.05, 48.0).unwrap();
        assert!(r.separated);
        // far below it
        let r = verify_separation(4, 0.05, 10.0).unwrap();
        assert!(!r.separated);
        assert!(r.worst_right_set > 0.05);
    }

    #[test]
    fn separation_tight_at_gamma_min() {
        for p in 3..=12 {
            for eps in [0.01, 0.05, 0.1] {
                let c = shatter_construction(p, eps).unwrap();
                let r = verify_separation(p, eps, c.gamma_min * (1.0 + 1e-9)).unwrap();
                assert!(r.separated, "p={p} eps={eps}");
                // the binding side sits exactly at eps
                let worst = r.worst_right_set.max(r.worst_left_set);
                assert_abs_diff_eq!(worst, eps, epsilon = 1e-9);
            }
        }
    }
}
