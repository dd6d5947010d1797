//! Sparse multivariate randomized classification trees.
//!
//! A randomized tree of fixed depth routes every sample probabilistically
//! at each branch node through a logistic CDF of a linear split, and labels
//! it by the resulting posterior over leaves. Training minimizes the
//! expected misclassification cost plus concave sparsity surrogates by
//! projected gradient over box and simplex constraints, either monolithically
//! with multistarts or by proximal node-based decomposition. The crate also
//! computes closed-form VC-dimension bounds for these trees and ships the
//! cross-validation and grid-search machinery used to benchmark them.

pub mod data;
pub mod decomp;
pub mod error;
pub mod harness;
pub mod objective;
pub mod solver;
pub mod synth;
pub mod tree;
pub mod vc;

pub use error::{Error, Result};
