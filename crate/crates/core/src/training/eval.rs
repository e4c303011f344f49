use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::fit::{argmax_rows, check_label_space, derive_seed};
use super::loss::mapping_value;
use crate::autodiff::Tape;
use crate::cloning::{clone_partition, DEFAULT_MAX_RETRIES, DEFAULT_TOL_NATS};
use crate::error::{Error, Result};
use crate::geometry::{add_gaussian_noise, PointCloud};
use crate::patternnet::{PatternNet, Pass, Task};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Evaluation summary; every rate lies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of clouds (points, for segmentation) labeled correctly.
    pub overall_accuracy: f64,
    /// Mean of the per-class accuracies over classes present in the data.
    pub per_class_accuracy: f64,
    /// Accuracy per class id; `None` for classes with no samples.
    pub class_accuracies: Vec<Option<f64>>,
    pub mean_iou: Option<f64>,
    pub subset_consistency_rate: Option<f64>,
    pub mapping_loss_mean: f64,
    pub clouds: usize,
}

/// Per-shape and per-category part IoU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// Mean over categories present in the data.
    pub mean_iou: f64,
    pub per_category: Vec<Option<f64>>,
    pub shape_ious: Vec<f64>,
}

/// FNV-1a of a cloud id, so per-cloud randomness does not depend on the
/// dataset order.
pub fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Normalizes the clean cloud, then adds noise of standard deviation
/// `sigma` seeded by the cloud id.
pub fn prepare_cloud<T: Scalar>(cloud: &PointCloud<T>, sigma: f64, seed: u64) -> Result<PointCloud<T>> {
    let clean = cloud.normalize_unit_sphere()?;
    if sigma == 0.0 {
        return Ok(clean);
    }
    add_gaussian_noise(&clean, sigma, derive_seed(seed, 3, id_hash(&cloud.id)))
}

/// Cloning subsets used at evaluation time, seeded by the cloud id.
pub fn eval_subsets<T: Scalar>(cloud: &PointCloud<T>, levels: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let p = clone_partition(cloud, levels, derive_seed(seed, 4, id_hash(&cloud.id)), DEFAULT_TOL_NATS, DEFAULT_MAX_RETRIES)?;
    Ok(p.subsets())
}

/// Eval-mode logits and mapping loss of one prepared cloud.
pub fn infer<T: Scalar>(model: &PatternNet<T>, cloud: &PointCloud<T>, seed: u64) -> Result<(Tensor<T>, f64)> {
    let subsets = eval_subsets(cloud, model.config.levels, seed)?;
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let out = model.forward(&mut tape, &vars, &[cloud], &[subsets], Pass::Eval)?;
    let mapping = mapping_value(&tape, &out, model.config.ridge)?;
    Ok((tape.value(out.logits).clone(), mapping))
}

fn restricted_argmax<T: Scalar>(row: &[T], allowed: &[usize]) -> usize {
    let mut best = allowed[0];
    for &p in allowed {
        if row[p] > row[best] {
            best = p;
        }
    }
    best
}

/// Mean over `parts` of `|pred ∩ gt| / |pred ∪ gt|`; a part absent from
/// both scores 1.
pub fn shape_iou(pred: &[usize], gt: &[usize], parts: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predictions for {} points", pred.len(), gt.len())));
    }
    if parts.is_empty() {
        return Err(Error::Data("empty part set".into()));
    }
    let sum: f64 = parts
        .iter()
        .map(|&p| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&a, &b) in pred.iter().zip(gt) {
                inter += (a == p && b == p) as usize;
                union += (a == p || b == p) as usize;
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .sum();
    Ok(sum / parts.len() as f64)
}

/// Union of ground-truth part ids per category.
pub fn category_part_sets<T>(data: &Dataset<T>) -> Result<Vec<Vec<usize>>> {
    let mut sets = vec![Vec::new(); data.class_names.len()];
    for c in &data.clouds {
        let parts = c.part_labels.as_ref().ok_or_else(|| Error::Data(format!("cloud '{}' has no part labels", c.id)))?;
        let set = &mut sets[c.class_label.expect("validated")];
        set.extend_from_slice(parts);
        set.sort_unstable();
        set.dedup();
    }
    Ok(sets)
}

/// Averages shape IoUs per category, then over categories present.
pub fn summarize_iou(categories: &[usize], shape_ious: &[f64], num_classes: usize) -> IouReport {
    let mut sum = vec![0.0; num_classes];
    let mut count = vec![0usize; num_classes];
    for (&c, &v) in categories.iter().zip(shape_ious) {
        sum[c] += v;
        count[c] += 1;
    }
    let per_category: Vec<Option<f64>> =
        sum.iter().zip(&count).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect();
    let present: Vec<f64> = per_category.iter().flatten().copied().collect();
    let mean_iou = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    IouReport { mean_iou, per_category, shape_ious: shape_ious.to_vec() }
}

/// Accuracy over the dataset at noise level `sigma`.
pub fn evaluate<T: Scalar>(data: &Dataset<T>, model: &PatternNet<T>, sigma: f64, seed: u64) -> Result<EvalReport> {
    check_label_space(data, &model.config)?;
    if data.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let part_sets = match model.config.task {
        Task::Segmentation => Some(category_part_sets(data)?),
        Task::Classification => None,
    };
    let rows: Vec<(usize, usize, f64, Option<f64>)> = data
        .clouds
        .par_iter()
        .map(|cloud| {
            let prepared = prepare_cloud(cloud, sigma, seed)?;
            let (logits, mapping) = infer(model, &prepared, seed)?;
            let class = cloud.class_label.expect("validated");
            match &part_sets {
                None => {
                    let pred = argmax_rows(logits.data(), logits.cols())[0];
                    Ok((usize::from(pred == class), 1, mapping, None))
                }
                Some(sets) => {
                    let gt = cloud.part_labels.as_ref().expect("checked by part sets");
                    let pred: Vec<usize> =
                        logits.data().chunks(logits.cols()).map(|r| restricted_argmax(r, &sets[class])).collect();
                    let correct = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
                    Ok((correct, gt.len(), mapping, Some(shape_iou(&pred, gt, &sets[class])?)))
                }
            }
        })
        .collect::<Result<_>>()?;
    let c = data.num_classes();
    let (mut hit, mut tot) = (vec![0usize; c], vec![0usize; c]);
    for (cloud, r) in data.clouds.iter().zip(&rows) {
        let k = cloud.class_label.expect("validated");
        hit[k] += r.0;
        tot[k] += r.1;
    }
    let class_accuracies: Vec<Option<f64>> =
        hit.iter().zip(&tot).map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64)).collect();
    let present: Vec<f64> = class_accuracies.iter().flatten().copied().collect();
    let mean_iou = part_sets.map(|_| {
        let ious: Vec<f64> = rows.iter().map(|r| r.3.expect("segmentation")).collect();
        summarize_iou(&data.labels(), &ious, c).mean_iou
    });
    Ok(EvalReport {
        overall_accuracy: hit.iter().sum::<usize>() as f64 / tot.iter().sum::<usize>() as f64,
        per_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        class_accuracies,
        mean_iou,
        subset_consistency_rate: None,
        mapping_loss_mean: rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64,
        clouds: data.len(),
    })
}

/// Part IoU of a segmentation model; predictions are restricted to the
/// parts seen in each category.
pub fn evaluate_iou<T: Scalar>(data: &Dataset<T>, model: &PatternNet<T>, seed: u64) -> Result<IouReport> {
    check_label_space(data, &model.config)?;
    if model.config.task != Task::Segmentation {
        return Err(Error::Config("IoU needs a segmentation model".into()));
    }
    let sets = category_part_sets(data)?;
    let ious: Vec<f64> = data
        .clouds
        .par_iter()
        .map(|cloud| {
            let prepared = prepare_cloud(cloud, 0.0, seed)?;
            let (logits, _) = infer(model, &prepared, seed)?;
            let class = cloud.class_label.expect("validated");
            let pred: Vec<usize> =
                logits.data().chunks(logits.cols()).map(|r| restricted_argmax(r, &sets[class])).collect();
            shape_iou(&pred, cloud.part_labels.as_ref().expect("checked"), &sets[class])
        })
        .collect::<Result<_>>()?;
    Ok(summarize_iou(&data.labels(), &ious, data.num_classes()))
}

/// Fraction of clouds whose every cloning subset, classified alone as a
/// single-level cloud, gets the full cloud's label.
pub fn subset_consistency<T: Scalar>(data: &Dataset<T>, model: &PatternNet<T>, sigma: f64, seed: u64) -> Result<f64> {
    check_label_space(data, &model.config)?;
    if model.config.task != Task::Classification {
        return Err(Error::Config("subset consistency needs a classification model".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let agree: Vec<bool> = data
        .clouds
        .par_iter()
        .map(|cloud| {
            let prepared = prepare_cloud(cloud, sigma, seed)?;
            let subsets = eval_subsets(&prepared, model.config.levels, seed)?;
            let full = model.predict(&[&prepared], std::slice::from_ref(&subsets))?;
            let label = argmax_rows(full.data(), full.cols())[0];
            for s in &subsets {
                let sub = prepared.select(s);
                let logits = model.predict(&[&sub], &[vec![(0..sub.len()).collect()]])?;
                if argmax_rows(logits.data(), logits.cols())[0] != label {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<_>>()?;
    Ok(agree.iter().filter(|&&a| a).count() as f64 / agree.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let gt = [0, 0, 1, 1];
        assert_eq!(shape_iou(&gt, &gt, &[0, 1]).unwrap(), 1.0);
        assert_eq!(shape_iou(&[1, 1, 0, 0], &gt, &[0, 1]).unwrap(), 0.0);
        // part 2 is absent from both and scores 1
        assert_eq!(shape_iou(&gt, &gt, &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(shape_iou(&[0, 1, 1, 1], &gt, &[0, 1]).unwrap(), (0.5 + 2.0 / 3.0) / 2.0);
    }

    #[test]
    fn summary_skips_absent_categories() {
        let r = summarize_iou(&[0, 0, 2], &[1.0, 0.5, 0.25], 3);
        assert_eq!(r.per_category, vec![Some(0.75), None, Some(0.25)]);
        assert_eq!(r.mean_iou, 0.5);
    }

    #[test]
    fn id_hash_is_fnv1a() {
        assert_eq!(id_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(id_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
