use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ranges for training-time augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Uniform rotation over SO(3) instead of about the z (gravity) axis.
    pub full_so3: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Per-axis translation bound.
    pub translate: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { full_so3: false, scale_min: 0.8, scale_max: 1.25, translate: 0.1 }
    }
}

/// A concrete similarity transform `p ↦ s·R·p + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmentation {
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Augmentation {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn about_z(angle: f64) -> [[f64; 3]; 3] {
        let (s, c) = angle.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let rotation = if cfg.full_so3 {
            // unit quaternion from a normalized 4-D Gaussian is uniform on SO(3)
            let mut q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.iter_mut().for_each(|v| *v /= n);
            let [w, x, y, z] = q;
            [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ]
        } else {
            Self::about_z(rng.random_range(0.0..std::f64::consts::TAU))
        };
        let scale = rng.random_range(cfg.scale_min..=cfg.scale_max);
        let translation = std::array::from_fn(|_| rng.random_range(-cfg.translate..=cfg.translate));
        Self { rotation, scale, translation }
    }

    pub fn apply<T: Scalar>(&self, cloud: &PointCloud<T>) -> PointCloud<T> {
        let r = &self.rotation;
        let points = cloud
            .points
            .iter()
            .map(|p| {
                let v = p.map(|c| c.as_f64());
                std::array::from_fn(|i| {
                    let rot = r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
                    T::of(self.scale * rot + self.translation[i])
                })
            })
            .collect();
        PointCloud { points, ..cloud.clone() }
    }
}

/// Random rotation about z, isotropic scale in [0.8, 1.25] and translation
/// in ±0.1 per axis, in that order. Deterministic in `seed`.
pub fn augment<T: Scalar>(cloud: &PointCloud<T>, seed: u64) -> PointCloud<T> {
    augment_with(cloud, seed, &AugmentConfig::default())
}

pub fn augment_with<T: Scalar>(cloud: &PointCloud<T>, seed: u64, cfg: &AugmentConfig) -> PointCloud<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Augmentation::sample(cfg, &mut rng).apply(cloud)
}

/// Adds independent `N(0, sigma²)` noise to every coordinate.
pub fn add_gaussian_noise<T: Scalar>(cloud: &PointCloud<T>, sigma: f64, seed: u64) -> Result<PointCloud<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points
        .iter()
        .map(|p| p.map(|c| T::of(c.as_f64() + normal.sample(&mut rng))))
        .collect();
    Ok(PointCloud { points, ..cloud.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        PointCloud::new(pts).unwrap().with_class(1).with_parts((0..n).map(|i| i % 3).collect()).unwrap()
    }

    fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn deterministic_and_label_preserving() {
        let c = random_cloud(64, 1);
        let a = augment(&c, 42);
        assert_eq!(a, augment(&c, 42));
        assert_ne!(a.points, augment(&c, 43).points);
        assert_eq!(a.len(), c.len());
        assert_eq!(a.part_labels, c.part_labels);
        assert_eq!(a.class_label, c.class_label);
    }

    #[test]
    fn unit_scale_is_identity() {
        let c = random_cloud(16, 2);
        assert_eq!(Augmentation::identity().apply(&c).points, c.points);
    }

    #[test]
    fn rigid_part_preserves_distances() {
        let c = random_cloud(40, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for full_so3 in [false, true] {
            let cfg = AugmentConfig { full_so3, ..Default::default() };
            let mut aug = Augmentation::sample(&cfg, &mut rng);
            aug.scale = 1.0;
            let t = aug.apply(&c);
            for i in 0..c.len() {
                for j in 0..c.len() {
                    let d0 = dist(&c.points[i], &c.points[j]);
                    let d1 = dist(&t.points[i], &t.points[j]);
                    assert!((d0 - d1).abs() <= 1e-10 * d0.max(1.0));
                }
            }
        }
    }

    #[test]
    fn sampled_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = AugmentConfig::default();
        for _ in 0..200 {
            let a = Augmentation::sample(&cfg, &mut rng);
            assert!((0.8..=1.25).contains(&a.scale));
            assert!(a.translation.iter().all(|t| t.abs() <= 0.1));
            assert_eq!(a.rotation[2], [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn noise_statistics() {
        let c = random_cloud(10_000, 5);
        assert_eq!(add_gaussian_noise(&c, 0.0, 1).unwrap(), c);
        let n = add_gaussian_noise(&c, 0.05, 1).unwrap();
        let d: Vec<f64> =
            n.points.iter().zip(&c.points).flat_map(|(a, b)| (0..3).map(move |k| a[k] - b[k])).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((0.049..=0.051).contains(&std), "{std}");
        let other = add_gaussian_noise(&c, 0.05, 2).unwrap();
        assert!(other.points.iter().zip(&n.points).any(|(a, b)| a != b));
        assert!(matches!(add_gaussian_noise(&c, -1.0, 1), Err(Error::Parameter(_))));
    }
}
