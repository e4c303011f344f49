use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One cloud file of a dataset. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_id: usize,
    #[serde(default)]
    pub part_label_path: Option<PathBuf>,
}

/// JSON description of a labeled dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub part_names: Option<Vec<String>>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Class ids must lie in `[0, C)` and every class must be named.
    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Data("manifest declares no classes".into()));
        }
        if let Some(e) = self.entries.iter().find(|e| e.class_id >= self.class_names.len()) {
            return Err(Error::Data(format!(
                "entry {} has class {} but only {} classes are named",
                e.path.display(),
                e.class_id,
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Loads every referenced cloud, checking that the class stored in the
    /// file (when present) agrees with the manifest.
    pub fn load_clouds<T: Scalar>(&self, base: &Path) -> Result<Vec<PointCloud<T>>> {
        self.validate()?;
        self.entries
            .iter()
            .map(|e| {
                let p = base.join(&e.path);
                if !p.exists() {
                    return Err(Error::Data(format!("missing dataset file {}", p.display())));
                }
                let mut cloud: PointCloud<T> = load_cloud(&p)?;
                if let Some(c) = cloud.class_label {
                    if c != e.class_id {
                        return Err(Error::Data(format!(
                            "{} stores class {c}, manifest says {}",
                            p.display(),
                            e.class_id
                        )));
                    }
                }
                cloud.class_label = Some(e.class_id);
                if let Some(pp) = &e.part_label_path {
                    cloud = cloud.with_parts(read_part_labels(&base.join(pp))?)?;
                }
                Ok(cloud)
            })
            .collect()
    }
}

/// One integer part label per line.
fn read_part_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                location: format!("line {}", i + 1),
                message: format!("invalid part label '{}'", l.trim()),
            })
        })
        .collect()
}
