use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

pub const TORUS_MAJOR: f64 = 0.7;
pub const TORUS_MINOR: f64 = 0.3;

/// Synthetic surface classes; the discriminant is the class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Torus,
    CrossPlanes,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus, ShapeKind::CrossPlanes];

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn part_count(self) -> usize {
        match self {
            ShapeKind::Cube => 3,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Torus => "torus",
            ShapeKind::CrossPlanes => "cross-planes",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown shape kind '{s}'")))
    }
}

/// Samples `n_points` uniformly over the surface of `kind` with geometric
/// part labels:
///
/// * sphere (unit): upper (`z ≥ 0`) = 0, lower = 1
/// * cube (`[−1, 1]³`): part = axis of the face normal
/// * torus (R = 0.7, r = 0.3, axis z): inner half = 0, outer half = 1
/// * cross-planes (`z = 0` and `x = 0` squares of side 2): part = plane
pub fn gen_shape(kind: ShapeKind, n_points: usize, seed: u64) -> Result<PointCloud<f64>> {
    if n_points < 32 {
        return Err(Error::Parameter(format!("need at least 32 points, got {n_points}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    let mut parts = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let (p, part) = match kind {
            ShapeKind::Sphere => sphere_point(&mut rng),
            ShapeKind::Cube => cube_point(&mut rng),
            ShapeKind::Torus => torus_point(&mut rng),
            ShapeKind::CrossPlanes => cross_point(&mut rng),
        };
        points.push(p);
        parts.push(part);
    }
    Ok(PointCloud::new(points)?
        .with_class(kind.class_id())
        .with_parts(parts)?
        .with_id(format!("{kind}-{seed}")))
}

fn sphere_point(rng: &mut impl Rng) -> ([f64; 3], usize) {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            let p = v.map(|c| c / n);
            return (p, usize::from(p[2] < 0.0));
        }
    }
}

fn cube_point(rng: &mut impl Rng) -> ([f64; 3], usize) {
    let face = rng.random_range(0..6);
    let axis = face / 2;
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let mut p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
    p[axis] = sign;
    (p, axis)
}

fn torus_point(rng: &mut impl Rng) -> ([f64; 3], usize) {
    let u = rng.random_range(0.0..std::f64::consts::TAU);
    // tube angle density ∝ R + r·cos θ
    let theta = loop {
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let accept = (TORUS_MAJOR + TORUS_MINOR * t.cos()) / (TORUS_MAJOR + TORUS_MINOR);
        if rng.random::<f64>() < accept {
            break t;
        }
    };
    let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
    let p = [ring * u.cos(), ring * u.sin(), TORUS_MINOR * theta.sin()];
    (p, usize::from(theta.cos() >= 0.0))
}

fn cross_point(rng: &mut impl Rng) -> ([f64; 3], usize) {
    let a = rng.random_range(-1.0..=1.0);
    let b = rng.random_range(-1.0..=1.0);
    if rng.random::<bool>() {
        ([a, b, 0.0], 0)
    } else {
        ([0.0, a, b], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn sphere_points_have_unit_norm() {
        let c = gen_shape(ShapeKind::Sphere, 500, 3).unwrap();
        for p in &c.points {
            assert!(((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(c.class_label, Some(0));
    }

    #[test]
    fn cube_has_three_parts() {
        let c = gen_shape(ShapeKind::Cube, 100, 8).unwrap();
        let parts: BTreeSet<_> = c.part_labels.unwrap().into_iter().collect();
        assert_eq!(parts.len(), 3);
    }

    #[test]
    fn torus_points_on_implicit_surface() {
        let c = gen_shape(ShapeKind::Torus, 2000, 11).unwrap();
        for p in &c.points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let residual = (r - TORUS_MAJOR).powi(2) + p[2] * p[2] - TORUS_MINOR * TORUS_MINOR;
            assert!(residual.abs() <= 1e-10);
        }
        let parts = c.part_labels.unwrap();
        assert!(parts.contains(&0) && parts.contains(&1));
    }

    #[test]
    fn cross_planes_membership_matches_part() {
        let c = gen_shape(ShapeKind::CrossPlanes, 300, 2).unwrap();
        for (p, &part) in c.points.iter().zip(c.part_labels.as_ref().unwrap()) {
            if part == 0 {
                assert_eq!(p[2], 0.0);
            } else {
                assert_eq!(p[0], 0.0);
            }
        }
    }

    #[test]
    fn reproducible_and_validated() {
        for kind in ShapeKind::ALL {
            assert_eq!(gen_shape(kind, 64, 5).unwrap(), gen_shape(kind, 64, 5).unwrap());
            assert_eq!(kind.to_string().parse::<ShapeKind>().unwrap(), kind);
        }
        assert!(gen_shape(ShapeKind::Cube, 31, 0).is_err());
        assert!("pyramid".parse::<ShapeKind>().is_err());
    }
}
