//! Loss assembly, optimization loop, evaluation metrics and checkpoints.

mod checkpoint;
mod dataset;
mod eval;
mod fit;
mod loss;
mod optim;

pub use checkpoint::{metrics_jsonl, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{part_offset, synthetic_part_names, synthetic_split, write_synthetic, Dataset};
pub use eval::{
    category_part_sets, eval_subsets, evaluate, evaluate_iou, id_hash, infer, prepare_cloud, shape_iou,
    subset_consistency, summarize_iou, EvalReport, IouReport,
};
pub use fit::{fit, fit_from, EpochRecord, FitOutput, TrainConfig};
pub use loss::{linear_mapping_loss, mapping_value, total_loss, LossBreakdown};
pub use optim::{Adam, AdamConfig};
