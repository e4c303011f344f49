//! Exact k-d tree over rows of a feature matrix.
//!
//! Queries return exactly the brute-force answer under the
//! `(distance, id)` order: a subtree is pruned only when its lower bound
//! strictly exceeds the current K-th distance, so equal-distance
//! candidates with lower ids are never skipped.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::metric::sq_dist;
use crate::scalar::Scalar;

const LEAF_SIZE: usize = 8;

enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: T, left: usize, right: usize },
}

pub struct KdTree<'a, T> {
    data: &'a [T],
    dim: usize,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

/// Candidate ordered by `(distance, id)`; the heap keeps the worst on top.
#[derive(Clone, Copy)]
struct Cand<T> {
    d: T,
    id: usize,
}

impl<T: Scalar> PartialEq for Cand<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Cand<T> {}
impl<T: Scalar> PartialOrd for Cand<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Cand<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.partial_cmp(&other.d).unwrap_or(Ordering::Equal).then(self.id.cmp(&other.id))
    }
}

impl<'a, T: Scalar> KdTree<'a, T> {
    /// Indexes the `n = data.len() / dim` rows of a row-major matrix.
    pub fn new(data: &'a [T], dim: usize) -> Self {
        let n = data.len() / dim;
        let mut tree = Self { data, dim, order: (0..n).collect(), nodes: Vec::new() };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    fn point(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return slot;
        }
        let dim = (0..self.dim)
            .map(|d| {
                let (lo, hi) = self.order[start..end].iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &i| {
                    let v = self.data[i * self.dim + d];
                    (lo.min(v), hi.max(v))
                });
                (d, hi - lo)
            })
            .fold((0, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        if !(self.spread(start, end, dim) > T::zero()) {
            return slot;
        }
        let mid = start + (end - start) / 2;
        let (data, d) = (self.data, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * d + dim].partial_cmp(&data[b * d + dim]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        let value = self.data[self.order[mid] * self.dim + dim];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[slot] = Node::Split { dim, value, left, right };
        slot
    }

    fn spread(&self, start: usize, end: usize, dim: usize) -> T {
        let vals = self.order[start..end].iter().map(|&i| self.data[i * self.dim + dim]);
        let (lo, hi) = vals.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    /// The `k` nearest rows to `query` by squared Euclidean distance,
    /// skipping row `exclude`, sorted by `(distance, id)`.
    pub fn knn(&self, query: &[T], k: usize, exclude: Option<usize>) -> Vec<(T, usize)> {
        let mut heap: BinaryHeap<Cand<T>> = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut heap);
        }
        let mut out: Vec<(T, usize)> = heap.into_vec().into_iter().map(|c| (c.d, c.id)).collect();
        out.sort_by(|a, b| Cand { d: a.0, id: a.1 }.cmp(&Cand { d: b.0, id: b.1 }));
        out
    }

    fn search(&self, node: usize, q: &[T], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Cand<T>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Cand { d: sq_dist(q, self.point(i)), id: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let (near, far, gap) =
                    if q[dim] < value { (left, right, value - q[dim]) } else { (right, left, q[dim] - value) };
                self.search(near, q, k, exclude, heap);
                let bound = gap * gap;
                if heap.len() < k || !(bound > heap.peek().unwrap().d) {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}
