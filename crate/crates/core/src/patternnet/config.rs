use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::Metric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

/// Architecture and loss hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternNetConfig {
    /// Number of cloning subsets `L`.
    pub levels: usize,
    /// Neighbors per point `K`.
    pub k: usize,
    /// Widths of the four edge-convolution stages.
    pub branch_widths: Vec<usize>,
    /// Length of each cloning description vector; the sum of `branch_widths`.
    pub psi_dim: usize,
    /// Length of the global description vector; must equal `psi_dim`.
    pub global_dim: usize,
    /// Hidden widths of the decoding heads.
    pub head_widths: Vec<usize>,
    /// Point-wise widths of the segmentation encoder.
    pub seg_widths: Vec<usize>,
    pub num_classes: usize,
    /// Part count `S`; used by the segmentation task.
    pub num_parts: usize,
    pub task: Task,
    /// Weight of the linear-mapping loss.
    pub lambda: f64,
    /// Label smoothing.
    pub eps_ls: f64,
    pub dropout: f64,
    /// Rebuild the neighbor graph in feature space before every stage.
    pub dynamic_graph: bool,
    /// Metric of the first (coordinate-space) graph.
    pub layer1_metric: Metric,
    /// Per-point MLP before pooling each cloning description vector.
    pub psi_mlp: bool,
    /// Ridge of the pseudoinverse solve.
    pub ridge: f64,
}

impl Default for PatternNetConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            k: 30,
            branch_widths: vec![64; 4],
            psi_dim: 256,
            global_dim: 256,
            head_widths: vec![256, 256],
            seg_widths: vec![64; 4],
            num_classes: 40,
            num_parts: 0,
            task: Task::Classification,
            lambda: 0.2,
            eps_ls: 0.2,
            dropout: 0.5,
            dynamic_graph: true,
            layer1_metric: Metric::Hilbert,
            psi_mlp: false,
            ridge: crate::linalg::DEFAULT_RIDGE,
        }
    }
}

impl PatternNetConfig {
    /// Default widths with the given class count, levels and K.
    pub fn toy(num_classes: usize, levels: usize, k: usize) -> Self {
        Self { num_classes, levels, k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels == 0 || self.k == 0 {
            return bad("levels and k must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.branch_widths.is_empty() || self.branch_widths.contains(&0) {
            return bad("branch widths must be non-empty and positive".into());
        }
        if self.psi_dim != self.branch_widths.iter().sum::<usize>() {
            return bad(format!(
                "psi_dim {} differs from the branch width sum {}",
                self.psi_dim,
                self.branch_widths.iter().sum::<usize>()
            ));
        }
        if self.global_dim != self.psi_dim {
            return bad("global_dim must equal psi_dim for the linear mapping".into());
        }
        if self.head_widths.contains(&0) || self.seg_widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.task == Task::Segmentation && (self.num_parts < 2 || self.seg_widths.is_empty()) {
            return bad("segmentation needs num_parts ≥ 2 and a point-wise encoder".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.eps_ls) {
            return bad("dropout and eps_ls must lie in [0, 1)".into());
        }
        if !(self.lambda >= 0.0) || !(self.ridge > 0.0) {
            return bad("lambda must be ≥ 0 and ridge > 0".into());
        }
        Ok(())
    }

    pub fn descriptor_dim(&self) -> usize {
        self.psi_dim + self.global_dim
    }
}
