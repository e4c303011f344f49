use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{gen_shape, save_cloud, DatasetManifest, ManifestEntry, PointCloud, ShapeKind};
use crate::scalar::Scalar;

/// Labeled clouds with their label names.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub clouds: Vec<PointCloud<T>>,
    pub class_names: Vec<String>,
    /// Present for part-labeled data.
    pub part_names: Option<Vec<String>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(clouds: Vec<PointCloud<T>>, class_names: Vec<String>, part_names: Option<Vec<String>>) -> Result<Self> {
        let d = Self { clouds, class_names, part_names };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        for cloud in &self.clouds {
            cloud.validate()?;
            match cloud.class_label {
                Some(l) if l < c => {}
                Some(l) => return Err(Error::Label { label: l, classes: c }),
                None => return Err(Error::Data(format!("cloud '{}' has no class label", cloud.id))),
            }
            if let (Some(parts), Some(names)) = (&cloud.part_labels, &self.part_names) {
                if let Some(&p) = parts.iter().find(|&&p| p >= names.len()) {
                    return Err(Error::Label { label: p, classes: names.len() });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_parts(&self) -> usize {
        self.part_names.as_ref().map_or(0, Vec::len)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clouds.iter().map(|c| c.class_label.expect("validated")).collect()
    }

    /// Loads the clouds a manifest lists, resolving paths against the
    /// manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = DatasetManifest::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let clouds = manifest.load_clouds(base)?;
        Self::new(clouds, manifest.class_names, manifest.part_names)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            clouds: self.clouds.iter().map(PointCloud::cast).collect(),
            class_names: self.class_names.clone(),
            part_names: self.part_names.clone(),
        }
    }
}

/// Offset of each shape's local part ids in the dataset-wide part space.
pub fn part_offset(kind: ShapeKind) -> usize {
    ShapeKind::ALL.iter().take_while(|&&k| k != kind).map(|k| k.part_count()).sum()
}

pub fn synthetic_part_names() -> Vec<String> {
    ShapeKind::ALL.iter().flat_map(|k| (0..k.part_count()).map(move |p| format!("{}.{p}", k.name()))).collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Four-class synthetic shapes normalized to the unit sphere, with
/// dataset-wide part ids, split 80/20 (train/test) by a seeded shuffle.
pub fn synthetic_split(n_per_class: usize, n_points: usize, seed: u64) -> Result<(Dataset<f64>, Dataset<f64>)> {
    if n_per_class == 0 {
        return Err(Error::Parameter("need at least one cloud per class".into()));
    }
    let mut clouds = Vec::with_capacity(4 * n_per_class);
    for kind in ShapeKind::ALL {
        for i in 0..n_per_class {
            let s = splitmix(seed ^ splitmix((kind.class_id() * n_per_class + i) as u64));
            let raw = gen_shape(kind, n_points, s)?;
            let offset = part_offset(kind);
            let parts = raw.part_labels.as_ref().map(|p| p.iter().map(|&l| l + offset).collect());
            let mut cloud = raw.normalize_unit_sphere()?.with_id(format!("{}-{i:04}", kind.name()));
            cloud.part_labels = parts;
            clouds.push(cloud);
        }
    }
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = clouds.len() * 4 / 5;
    let names: Vec<String> = ShapeKind::ALL.iter().map(|k| k.name().to_string()).collect();
    let pick = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        Dataset::new(ids.iter().map(|&i| clouds[i].clone()).collect(), names.clone(), Some(synthetic_part_names()))
    };
    Ok((pick(&order[..n_train])?, pick(&order[n_train..])?))
}

/// Writes a synthetic split as native cloud files plus `train.json` and
/// `test.json` manifests under `out_dir`. Returns the manifest paths.
pub fn write_synthetic(out_dir: &Path, n_per_class: usize, n_points: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = synthetic_split(n_per_class, n_points, seed)?;
    fs::create_dir_all(out_dir.join("clouds"))?;
    let mut out = Vec::new();
    for (name, ds) in [("train", &train), ("test", &test)] {
        let mut entries = Vec::with_capacity(ds.len());
        for cloud in &ds.clouds {
            let rel = PathBuf::from("clouds").join(format!("{}.pnpc", cloud.id));
            save_cloud(&cloud.cast::<f32>(), out_dir.join(&rel))?;
            entries.push(ManifestEntry { path: rel, class_id: cloud.class_label.expect("labeled"), part_label_path: None });
        }
        let manifest =
            DatasetManifest { entries, class_names: ds.class_names.clone(), part_names: ds.part_names.clone(), seed };
        let path = out_dir.join(format!("{name}.json"));
        manifest.write(&path)?;
        out.push(path);
    }
    Ok((out[0].clone(), out[1].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_balance_of_labels() {
        let (train, test) = synthetic_split(10, 64, 3).unwrap();
        assert_eq!((train.len(), test.len()), (32, 8));
        let mut all: Vec<String> = train.clouds.iter().chain(&test.clouds).map(|c| c.id.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 40);
        assert_eq!(train.num_parts(), 9);
    }

    #[test]
    fn part_ids_stay_within_their_category() {
        let (train, _) = synthetic_split(3, 64, 1).unwrap();
        for c in &train.clouds {
            let kind = ShapeKind::ALL[c.class_label.unwrap()];
            let lo = part_offset(kind);
            assert!(c.part_labels.as_ref().unwrap().iter().all(|&p| p >= lo && p < lo + kind.part_count()));
        }
    }

    #[test]
    fn clouds_are_unit_normalized() {
        let (train, _) = synthetic_split(2, 64, 5).unwrap();
        for c in &train.clouds {
            let r = c.points.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
            assert!((r - 1.0).abs() < 1e-12);
        }
    }
}
