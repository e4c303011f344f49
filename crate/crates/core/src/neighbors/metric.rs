use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norms below this are raised to it before normalizing.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Hilbert,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "hilbert" => Ok(Metric::Hilbert),
            _ => Err(Error::Parameter(format!("unknown metric '{s}'"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Hilbert => "hilbert",
        })
    }
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut s = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let d = a - b;
        s += d * d;
    }
    s
}

#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut s = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        s += a * b;
    }
    s
}

#[inline]
pub(crate) fn floored_norm<T: Scalar>(x: &[T]) -> T {
    dot(x, x).sqrt().max(T::of(NORM_FLOOR))
}

/// `2(1 − ⟨x, y⟩ / (‖x‖‖y‖))` from precomputed floored norms, clamped to `[0, 4]`.
#[inline]
pub(crate) fn hilbert_from_parts<T: Scalar>(dot_xy: T, nx: T, ny: T) -> T {
    let two = T::of(2.0);
    (two * (T::one() - dot_xy / (nx * ny))).max(T::zero()).min(T::of(4.0))
}

/// Squared Euclidean distance `Σ(xᵢ − yᵢ)²`.
pub fn euclidean_sq<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(sq_dist(x, y))
}

/// Hilbert-kernel distance `2(1 − cos∠(x, y))`, in `[0, 4]`.
///
/// Norms are floored at [`NORM_FLOOR`], so a zero vector sits at distance 2
/// from everything non-zero.
pub fn hilbert_dist<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(hilbert_from_parts(dot(x, y), floored_norm(x), floored_norm(y)))
}

/// [`hilbert_dist`] that refuses vectors whose norm falls below the floor.
pub fn hilbert_dist_strict<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let floor = T::of(NORM_FLOOR);
    if dot(x, x).sqrt() < floor || dot(y, y).sqrt() < floor {
        return Err(Error::Numeric("zero vector has no direction".into()));
    }
    hilbert_dist(x, y)
}

/// Scales `x` to unit norm (floored), the embedding under which
/// [`hilbert_dist`] equals squared chordal distance.
pub fn unit_normalize<T: Scalar>(x: &[T]) -> Vec<T> {
    let n = floored_norm(x);
    x.iter().map(|&v| v / n).collect()
}
