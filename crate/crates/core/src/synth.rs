//! Deterministic synthetic dataset generators for benchmarks and tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Gaussian class blobs in the unit box. Only the first `informative`
/// features carry class signal; the rest share a common center. A
/// `label_noise` fraction of samples is relabeled uniformly at random,
/// putting a floor under the achievable error.
pub fn gaussian_blobs(
    n: usize,
    p: usize,
    k: usize,
    informative: usize,
    sigma: f64,
    label_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || p == 0 || k < 2 || informative == 0 || informative > p {
        return Err(Error::Config(
            "blob generator needs n, p >= 1, k >= 2 and 1 <= informative <= p".into(),
        ));
    }
    if !(sigma > 0.0) || !(0.0..1.0).contains(&label_noise) {
        return Err(Error::Config(
            "sigma must be positive and label_noise in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..p)
                .map(|j| {
                    if j < informative {
                        rng.gen_range(0.15..0.85)
                    } else {
                        0.5
                    }
                })
                .collect()
        })
        .collect();

    let mut x = Array2::zeros((n, p));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        for j in 0..p {
            x[(i, j)] = (centers[class][j] + sigma * standard_normal(&mut rng)).clamp(0.0, 1.0);
        }
        let label = if label_noise > 0.0 && rng.gen_bool(label_noise) {
            rng.gen_range(0..k)
        } else {
            class
        };
        y.push(label);
    }
    Dataset::new(
        x,
        y,
        (0..p).map(|j| format!("x{j}")).collect(),
        (0..k).map(|c| format!("class{c}")).collect(),
    )
}

/// Two elongated Gaussian clusters with controlled overlap, sized by a
/// class balance. The centers sit `separation` apart along every feature,
/// so a single oblique split separates the classes up to the overlap.
pub fn two_cluster_overlap(
    n: usize,
    p: usize,
    positive_fraction: f64,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 || p == 0 {
        return Err(Error::Config("need n >= 2 and p >= 1".into()));
    }
    if !(0.0 < positive_fraction && positive_fraction < 1.0) || !(sigma > 0.0) {
        return Err(Error::Config(
            "positive_fraction must lie in (0, 1) and sigma be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = ((n as f64) * positive_fraction).round() as usize;
    let lo = 0.5 - separation / 2.0;
    let hi = 0.5 + separation / 2.0;
    let mut x = Array2::zeros((n, p));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i < n_pos);
        let center = if class == 1 { hi } else { lo };
        for j in 0..p {
            x[(i, j)] = (center + sigma * standard_normal(&mut rng)).clamp(0.0, 1.0);
        }
        y.push(class);
    }
    Dataset::new(
        x,
        y,
        (0..p).map(|j| format!("x{j}")).collect(),
        vec!["negative".into(), "positive".into()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_have_requested_shape_and_are_deterministic() {
        let d1 = gaussian_blobs(60, 5, 3, 2, 0.1, 0.05, 7).unwrap();
        let d2 = gaussian_blobs(60, 5, 3, 2, 0.1, 0.05, 7).unwrap();
        assert_eq!(d1.n(), 60);
        assert_eq!(d1.p(), 5);
        assert_eq!(d1.k(), 3);
        for (a, b) in d1.x.iter().zip(d2.x.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(d1.y, d2.y);
        d1.validate().unwrap();
    }

    #[test]
    fn two_clusters_respect_balance() {
        let d = two_cluster_overlap(100, 4, 0.56, 0.3, 0.1, 3).unwrap();
        let pos = d.y.iter().filter(|&&y| y == 1).count();
        assert_eq!(pos, 56);
        d.validate().unwrap();
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(gaussian_blobs(10, 3, 1, 1, 0.1, 0.0, 0).is_err());
        assert!(gaussian_blobs(10, 3, 2, 5, 0.1, 0.0, 0).is_err());
        assert!(two_cluster_overlap(10, 2, 1.5, 0.3, 0.1, 0).is_err());
    }
}
