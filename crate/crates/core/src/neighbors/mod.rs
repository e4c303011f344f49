//! Relation search: distance measures and K-nearest-neighbor graphs over
//! coordinates or learned features.

mod kdtree;
mod metric;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kdtree::KdTree;
pub use metric::{euclidean_sq, hilbert_dist, hilbert_dist_strict, unit_normalize, Metric, NORM_FLOOR};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use metric::{dot, floored_norm, hilbert_from_parts, sq_dist};

/// How [`knn_with`] searches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnnMethod {
    BruteForce,
    /// k-d tree; Hilbert queries run on unit-normalized rows, falling back
    /// to the scan when a row has (near-)zero norm.
    KdTree,
}

/// Row `i` lists the `K` nearest other rows, closest first, ties by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborIndex {
    pub indices: Vec<usize>,
    pub n: usize,
    pub k: usize,
    pub metric: Metric,
}

impl NeighborIndex {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Checks shape, id range and the absence of self-loops.
    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.n * self.k || self.k >= self.n {
            return Err(Error::Graph(format!("{} ids for {}x{}", self.indices.len(), self.n, self.k)));
        }
        for i in 0..self.n {
            for &j in self.row(i) {
                if j >= self.n || j == i {
                    return Err(Error::Graph(format!("row {i} holds invalid neighbor {j}")));
                }
            }
        }
        Ok(())
    }

    /// CSV with header `row,n1,..,nK`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row");
        for c in 1..=self.k {
            s.push_str(&format!(",n{c}"));
        }
        s.push('\n');
        for i in 0..self.n {
            s.push_str(&i.to_string());
            for j in self.row(i) {
                s.push_str(&format!(",{j}"));
            }
            s.push('\n');
        }
        s
    }
}

fn by_dist_then_id<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

fn check_inputs<T: Scalar>(features: &Tensor<T>, k: usize) -> Result<(usize, usize)> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("need 1 ≤ K < N, got K = {k}, N = {n}")));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("non-finite features in KNN".into()));
    }
    Ok((n, features.cols()))
}

/// Brute-force K-nearest-neighbor graph over the rows of `features`.
pub fn knn<T: Scalar>(features: &Tensor<T>, k: usize, metric: Metric) -> Result<NeighborIndex> {
    knn_with(features, k, metric, KnnMethod::BruteForce)
}

pub fn knn_with<T: Scalar>(features: &Tensor<T>, k: usize, metric: Metric, method: KnnMethod) -> Result<NeighborIndex> {
    let (n, f) = check_inputs(features, k)?;
    // chordal distances between unit rows equal the floored Hilbert values
    // only while no norm sits below the floor
    let floor = T::of(NORM_FLOOR);
    let method = match (method, metric) {
        (KnnMethod::KdTree, Metric::Hilbert) if (0..n).any(|i| dot(features.row(i), features.row(i)).sqrt() < floor) => {
            KnnMethod::BruteForce
        }
        _ => method,
    };
    let mut indices = vec![0usize; n * k];
    match method {
        KnnMethod::BruteForce => {
            let x = features.data();
            let norms: Vec<T> = match metric {
                Metric::Hilbert => (0..n).map(|i| floored_norm(&x[i * f..(i + 1) * f])).collect(),
                Metric::Euclidean => Vec::new(),
            };
            indices.par_chunks_mut(k).enumerate().for_each(|(i, out)| {
                let xi = &x[i * f..(i + 1) * f];
                let mut cand: Vec<(T, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let xj = &x[j * f..(j + 1) * f];
                        let d = match metric {
                            Metric::Euclidean => sq_dist(xi, xj),
                            Metric::Hilbert => hilbert_from_parts(dot(xi, xj), norms[i], norms[j]),
                        };
                        (d, j)
                    })
                    .collect();
                if cand.len() > k {
                    cand.select_nth_unstable_by(k - 1, by_dist_then_id);
                    cand.truncate(k);
                }
                cand.sort_unstable_by(by_dist_then_id);
                out.iter_mut().zip(&cand).for_each(|(o, c)| *o = c.1);
            });
        }
        KnnMethod::KdTree => {
            let owned;
            let data = match metric {
                Metric::Euclidean => features.data(),
                Metric::Hilbert => {
                    owned = (0..n).flat_map(|i| unit_normalize(features.row(i))).collect::<Vec<T>>();
                    &owned
                }
            };
            let tree = KdTree::new(data, f);
            indices.par_chunks_mut(k).enumerate().for_each(|(i, out)| {
                let hits = tree.knn(&data[i * f..(i + 1) * f], k, Some(i));
                out.iter_mut().zip(&hits).for_each(|(o, h)| *o = h.1);
            });
        }
    }
    Ok(NeighborIndex { indices, n, k, metric })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn collinear_points_use_lowest_id_on_ties() {
        let x = t(&[&[0.0], &[1.0], &[2.0]]);
        for method in [KnnMethod::BruteForce, KnnMethod::KdTree] {
            let g = knn_with(&x, 1, Metric::Euclidean, method).unwrap();
            assert_eq!(g.indices, vec![1, 0, 1]);
        }
    }

    #[test]
    fn hilbert_scale_invariance_and_ties() {
        let x = t(&[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 1.0]]);
        for method in [KnnMethod::BruteForce, KnnMethod::KdTree] {
            let g = knn_with(&x, 1, Metric::Hilbert, method).unwrap();
            assert_eq!(g.indices, vec![1, 0, 0]);
            g.validate().unwrap();
        }
    }

    #[test]
    fn k_must_be_below_n() {
        let x = t(&[&[0.0], &[1.0]]);
        assert!(matches!(knn(&x, 2, Metric::Euclidean), Err(Error::Parameter(_))));
        assert!(matches!(knn(&x, 0, Metric::Euclidean), Err(Error::Parameter(_))));
    }

    #[test]
    fn csv_layout() {
        let x = t(&[&[0.0], &[1.0], &[2.0]]);
        let g = knn(&x, 2, Metric::Euclidean).unwrap();
        assert_eq!(g.to_csv(), "row,n1,n2\n0,1,2\n1,0,2\n2,1,0\n");
    }
}
