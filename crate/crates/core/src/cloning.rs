//! Cloning decomposition: random partition of a cloud into `L` disjoint,
//! union-complete subsets of near-equal size whose differential entropies
//! agree within a tolerance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::neighbors::KdTree;
use crate::scalar::Scalar;

pub const DEFAULT_TOL_NATS: f64 = 0.2;
pub const DEFAULT_MAX_RETRIES: usize = 8;

/// Assignment of every point to one of `levels` subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub levels: usize,
    pub seed: u64,
    /// Kozachenko–Leonenko estimate per subset, in nats.
    pub subset_entropies: Vec<f64>,
    /// False when no attempt met the entropy tolerance; the partition is
    /// then the attempt with the smallest gap.
    pub within_tolerance: bool,
    pub attempts: usize,
}

impl Partition {
    /// Point indices of each subset, ascending.
    pub fn subsets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.levels];
        for (i, &l) in self.assignment.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.levels];
        for &l in &self.assignment {
            s[l] += 1;
        }
        s
    }

    pub fn max_entropy_gap(&self) -> f64 {
        entropy_gap(&self.subset_entropies)
    }

    /// Checks disjointness, coverage and size balance on materialized
    /// index lists.
    pub fn verify(&self, m: usize) -> Result<()> {
        let subsets = self.subsets();
        let mut seen = vec![false; m];
        for s in &subsets {
            if s.is_empty() {
                return Err(Error::Data("empty cloning subset".into()));
            }
            for &i in s {
                if i >= m || seen[i] {
                    return Err(Error::Data(format!("point {i} assigned twice or out of range")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) || self.assignment.len() != m {
            return Err(Error::Data("subsets do not cover the cloud".into()));
        }
        let sizes = self.sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if hi - lo > 1 {
            return Err(Error::Data(format!("unbalanced subset sizes {sizes:?}")));
        }
        Ok(())
    }
}

fn entropy_gap(h: &[f64]) -> f64 {
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

fn sub_seed(seed: u64, attempt: usize) -> u64 {
    seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffles point ids with a seeded RNG and deals them round-robin to `levels`
/// subsets, reshuffling with derived seeds until the largest pairwise
/// entropy gap is at most `tol_nats` or `max_retries` reshuffles are spent.
pub fn clone_partition<T: Scalar>(
    cloud: &PointCloud<T>,
    levels: usize,
    seed: u64,
    tol_nats: f64,
    max_retries: usize,
) -> Result<Partition> {
    let m = cloud.len();
    if levels == 0 {
        return Err(Error::Parameter("need at least one cloning level".into()));
    }
    if !(tol_nats > 0.0) {
        return Err(Error::Parameter("entropy tolerance must be positive".into()));
    }
    if m < 2 * levels {
        return Err(Error::InsufficientPoints { needed: 2 * levels, levels, got: m });
    }
    let mut best: Option<Partition> = None;
    for attempt in 0..=max_retries {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, attempt));
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let mut assignment = vec![0; m];
        for (t, &i) in perm.iter().enumerate() {
            assignment[i] = t % levels;
        }
        let mut p = Partition {
            assignment,
            levels,
            seed,
            subset_entropies: Vec::new(),
            within_tolerance: false,
            attempts: attempt + 1,
        };
        p.subset_entropies = p
            .subsets()
            .iter()
            .map(|idx| kl_entropy(&idx.iter().map(|&i| cloud.points[i]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        let gap = p.max_entropy_gap();
        if gap <= tol_nats {
            p.within_tolerance = true;
            return Ok(p);
        }
        if best.as_ref().is_none_or(|b| gap < b.max_entropy_gap()) {
            best = Some(p);
        }
    }
    let mut best = best.expect("at least one attempt");
    best.attempts = max_retries + 1;
    Ok(best)
}

/// `ψ(N) − ψ(1)`, the harmonic number `H_{N−1}`.
fn digamma_gap(n: usize) -> f64 {
    (1..n).map(|j| 1.0 / j as f64).sum()
}

/// Kozachenko–Leonenko differential entropy (nats) from first
/// nearest-neighbor distances, for `N ≥ 8` points in 3-D.
pub fn entropy_knn<T: Scalar>(points: &[[T; 3]]) -> Result<f64> {
    if points.len() < 8 {
        return Err(Error::Parameter(format!("entropy estimate needs at least 8 points, got {}", points.len())));
    }
    kl_entropy(points)
}

/// Estimator core, defined from two points on. Points whose nearest
/// neighbor coincides with them are left out of the log-distance mean.
pub(crate) fn kl_entropy<T: Scalar>(points: &[[T; 3]]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Parameter("entropy needs at least two points".into()));
    }
    let flat: Vec<T> = points.iter().flatten().copied().collect();
    let tree = KdTree::new(&flat, 3);
    let mut sum_log = 0.0;
    let mut positive = 0usize;
    for i in 0..n {
        let hit = tree.knn(&flat[i * 3..i * 3 + 3], 1, Some(i));
        let d2 = hit[0].0.as_f64();
        if d2 > 0.0 {
            sum_log += 0.5 * d2.ln();
            positive += 1;
        }
    }
    if positive == 0 {
        return Err(Error::DegenerateEntropy);
    }
    let unit_ball = 4.0 * std::f64::consts::PI / 3.0;
    Ok(digamma_gap(n) + unit_ball.ln() + 3.0 * sum_log / positive as f64)
}

/// Plug-in histogram entropy split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramEntropy {
    /// `−Σ pᵢ ln pᵢ` over occupied voxels.
    pub shannon: f64,
    /// `ln` of one voxel's volume; `−∞` when the cloud has zero extent.
    pub log_voxel_volume: f64,
}

impl HistogramEntropy {
    pub fn total(&self) -> f64 {
        self.shannon + self.log_voxel_volume
    }
}

/// Voxel-occupancy entropy over the cloud's bounding cube (side = largest
/// axis extent, anchored at the minimum corner) with `bins` cells per axis.
pub fn histogram_entropy<T: Scalar>(points: &[[T; 3]], bins: usize) -> Result<HistogramEntropy> {
    if points.is_empty() {
        return Err(Error::Parameter("histogram entropy of an empty cloud".into()));
    }
    if bins < 2 {
        return Err(Error::Parameter("need at least 2 bins per axis".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            let v = p[a].as_f64();
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let side = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let mut counts = std::collections::HashMap::<[usize; 3], usize>::new();
    for p in points {
        let cell = std::array::from_fn(|a| {
            if side > 0.0 {
                (((p[a].as_f64() - lo[a]) / side * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        });
        *counts.entry(cell).or_default() += 1;
    }
    let n = points.len() as f64;
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable();
    let shannon = -c.iter().map(|&k| k as f64 / n).map(|p| p * p.ln()).sum::<f64>();
    let log_voxel_volume = 3.0 * (side / bins as f64).ln();
    Ok(HistogramEntropy { shannon, log_voxel_volume })
}

/// [`histogram_entropy`] total, in nats.
pub fn entropy_hist<T: Scalar>(points: &[[T; 3]], bins: usize) -> Result<f64> {
    histogram_entropy(points, bins).map(|h| h.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_cloud(m: usize, side: f64, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..m).map(|_| std::array::from_fn(|_| rng.random::<f64>() * side)).collect()).unwrap()
    }

    #[test]
    fn forced_sizes() {
        let c = uniform_cloud(8, 1.0, 1);
        let p = clone_partition(&c, 2, 3, 10.0, 0).unwrap();
        assert_eq!(p.sizes(), vec![4, 4]);
        p.verify(8).unwrap();
        let c = uniform_cloud(10, 1.0, 1);
        let p = clone_partition(&c, 4, 3, 10.0, 0).unwrap();
        assert_eq!(p.sizes(), vec![3, 3, 2, 2]);
        p.verify(10).unwrap();
    }

    #[test]
    fn single_level_is_whole_cloud() {
        let c = uniform_cloud(50, 1.0, 2);
        let p = clone_partition(&c, 1, 0, 0.2, 8).unwrap();
        assert_eq!(p.subsets(), vec![(0..50).collect::<Vec<_>>()]);
        assert!(p.within_tolerance);
    }

    #[test]
    fn too_few_points() {
        let c = uniform_cloud(5, 1.0, 2);
        assert!(matches!(clone_partition(&c, 3, 0, 0.2, 8), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn deterministic_in_seed() {
        let c = uniform_cloud(300, 1.0, 4);
        assert_eq!(clone_partition(&c, 3, 9, 0.2, 8).unwrap(), clone_partition(&c, 3, 9, 0.2, 8).unwrap());
        assert_ne!(
            clone_partition(&c, 3, 9, 0.2, 8).unwrap().assignment,
            clone_partition(&c, 3, 10, 0.2, 8).unwrap().assignment
        );
    }

    #[test]
    fn tiny_tolerance_is_flagged_not_fatal() {
        let c = uniform_cloud(200, 1.0, 5);
        let p = clone_partition(&c, 4, 1, 1e-9, 3).unwrap();
        assert!(!p.within_tolerance);
        assert_eq!(p.attempts, 4);
        p.verify(200).unwrap();
    }

    #[test]
    fn duplicate_only_cloud_is_degenerate() {
        let pts = vec![[0.5f64; 3]; 16];
        assert!(matches!(entropy_knn(&pts), Err(Error::DegenerateEntropy)));
        assert!(entropy_knn(&pts[..7]).is_err());
    }

    #[test]
    fn single_voxel_has_zero_shannon_term() {
        let pts = vec![[0.1f64, 0.2, 0.3]; 10];
        assert_eq!(histogram_entropy(&pts, 4).unwrap().shannon, 0.0);
        assert!(histogram_entropy(&pts, 1).is_err());
    }

    #[test]
    fn histogram_uniform_unit_cube() {
        let c = uniform_cloud(100_000, 1.0, 6);
        let h = entropy_hist(&c.points, 8).unwrap();
        assert!(h.abs() <= 0.15, "{h}");
    }
}
