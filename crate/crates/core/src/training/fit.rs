use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::dataset::Dataset;
use super::eval::evaluate;
use super::loss::{total_loss, LossBreakdown};
use super::optim::{Adam, AdamConfig};
use crate::autodiff::Tape;
use crate::cloning::{clone_partition, Partition};
use crate::error::{Error, Result};
use crate::geometry::{augment_with, AugmentConfig, PointCloud};
use crate::patternnet::{PatternNet, PatternNetConfig, Pass, Task};
use crate::scalar::Scalar;

/// Optimization-loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    /// Draw fresh cloning subsets every epoch instead of once.
    pub repartition_every_epoch: bool,
    pub entropy_tol: f64,
    pub max_retries: usize,
    /// Where to write a checkpoint when the loss stops being finite.
    pub diagnostic_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
            augment: Some(AugmentConfig::default()),
            repartition_every_epoch: true,
            entropy_tol: crate::cloning::DEFAULT_TOL_NATS,
            max_retries: crate::cloning::DEFAULT_MAX_RETRIES,
            diagnostic_path: None,
        }
    }
}

/// One line of the metrics history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub mapping: f64,
    pub total: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

pub struct FitOutput<T> {
    pub model: PatternNet<T>,
    pub optimizer: Adam<T>,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> FitOutput<T> {
    pub fn checkpoint(&self, train: &TrainConfig) -> Checkpoint {
        Checkpoint::capture(&self.model, &self.optimizer, train, self.history.len(), &self.history)
    }
}

pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x243F_6A88_85A3_08D3;
    for v in [a, b] {
        h = (h ^ v).wrapping_mul(0x1000_0000_01B3).rotate_left(29) ^ v.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
    h
}

/// Groups `order` into batches of `size`, folding a trailing single cloud
/// into the previous batch so batch norm always sees two rows.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(2)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax_rows<T: Scalar>(data: &[T], cols: usize) -> Vec<usize> {
    data.chunks(cols).map(argmax).collect()
}

/// Trains a fresh network initialized from `train.seed`.
pub fn fit<T: Scalar>(
    data: &Dataset<T>,
    test: Option<&Dataset<T>>,
    config: &PatternNetConfig,
    train: &TrainConfig,
) -> Result<FitOutput<T>> {
    let model = PatternNet::new(config.clone(), train.seed)?;
    fit_from(model, None, data, test, train, 0, Vec::new())
}

/// Continues training `model` from `start_epoch`.
pub fn fit_from<T: Scalar>(
    mut model: PatternNet<T>,
    optimizer: Option<Adam<T>>,
    data: &Dataset<T>,
    test: Option<&Dataset<T>>,
    train: &TrainConfig,
    start_epoch: usize,
    mut history: Vec<EpochRecord>,
) -> Result<FitOutput<T>> {
    let config = model.config.clone();
    check_label_space(data, &config)?;
    if data.len() < 2 {
        return Err(Error::Data("training needs at least two clouds".into()));
    }
    if train.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut optimizer = optimizer.unwrap_or_else(|| {
        let named = model.params.named_tensors();
        let shapes: Vec<&[usize]> = named.iter().filter(|t| t.2).map(|t| t.1.shape()).collect();
        Adam::new(&shapes)
    });
    let normalized: Vec<PointCloud<T>> =
        data.clouds.iter().map(PointCloud::normalize_unit_sphere).collect::<Result<_>>()?;
    let mut fixed: Vec<Option<Partition>> = vec![None; data.len()];
    for epoch in start_epoch..train.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, 1, epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let lr = train.adam.lr_at(epoch);
        let (mut ce, mut mapping, mut seen, mut correct, mut total_rows) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for batch in batches(&order, train.batch_size) {
            let mut clouds = Vec::with_capacity(batch.len());
            let mut subsets = Vec::with_capacity(batch.len());
            for &i in &batch {
                let cloud = &normalized[i];
                let part_seed = if train.repartition_every_epoch {
                    derive_seed(train.seed, 2, ((epoch as u64) << 32) | i as u64)
                } else {
                    derive_seed(train.seed, 2, i as u64)
                };
                let partition = match &fixed[i] {
                    Some(p) if !train.repartition_every_epoch => p.clone(),
                    _ => clone_partition(cloud, config.levels, part_seed, train.entropy_tol, train.max_retries)?,
                };
                subsets.push(partition.subsets());
                if !train.repartition_every_epoch {
                    fixed[i] = Some(partition);
                }
                clouds.push(match &train.augment {
                    Some(cfg) => augment_with(cloud, rng.random(), cfg),
                    None => cloud.clone(),
                });
            }
            let refs: Vec<&PointCloud<T>> = clouds.iter().collect();
            let labels: Vec<usize> = match config.task {
                Task::Classification => refs.iter().map(|c| c.class_label.expect("validated")).collect(),
                Task::Segmentation => refs
                    .iter()
                    .map(|c| c.part_labels.clone().ok_or_else(|| Error::Data(format!("cloud '{}' has no part labels", c.id))))
                    .collect::<Result<Vec<_>>>()?
                    .concat(),
            };
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let fwd = model.forward(&mut tape, &vars, &refs, &subsets, Pass::Train(&mut dropout_rng))?;
            let (root, loss) = total_loss(&mut tape, &fwd, &labels, &config)?;
            if !loss.is_finite() {
                return Err(diverged(&model, &optimizer, train, epoch, &history, format!("loss {loss:?}")));
            }
            let grads = match tape.backward(root) {
                Ok(g) => g,
                Err(e) => return Err(diverged(&model, &optimizer, train, epoch, &history, e.to_string())),
            };
            let grads: Vec<Vec<T>> =
                vars.all().iter().map(|&v| grads.get(v).map_or_else(|| vec![T::zero(); tape.value(v).len()], <[T]>::to_vec)).collect();
            optimizer.update(&train.adam, lr, model.params.trainable_mut(), &grads)?;
            model.update_running(&fwd.bn_stats);
            if !model.params.is_finite() {
                return Err(diverged(&model, &optimizer, train, epoch, &history, "non-finite parameters".into()));
            }
            let logits = tape.value(fwd.logits);
            let pred = argmax_rows(logits.data(), logits.cols());
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            total_rows += labels.len();
            ce += loss.ce * batch.len() as f64;
            mapping += loss.mapping * batch.len() as f64;
            seen += batch.len();
        }
        let (ce, mapping) = (ce / seen as f64, mapping / seen as f64);
        let test_acc = match test {
            Some(t) => Some(evaluate(t, &model, 0.0, train.seed)?.overall_accuracy),
            None => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            ce,
            mapping,
            total: LossBreakdown::new(ce, mapping, config.lambda).total,
            train_acc: correct as f64 / total_rows as f64,
            test_acc,
        };
        log::info!(
            "epoch {} ce {:.4} mapping {:.4} train_acc {:.3} test_acc {:?}",
            record.epoch,
            record.ce,
            record.mapping,
            record.train_acc,
            record.test_acc
        );
        history.push(record);
    }
    Ok(FitOutput { model, optimizer, history })
}

fn diverged<T: Scalar>(
    model: &PatternNet<T>,
    optimizer: &Adam<T>,
    train: &TrainConfig,
    epoch: usize,
    history: &[EpochRecord],
    message: String,
) -> Error {
    let mut message = message;
    if let Some(path) = &train.diagnostic_path {
        let ckpt = Checkpoint::capture(model, optimizer, train, epoch, history);
        match ckpt.save(path) {
            Ok(()) => message.push_str(&format!("; diagnostic checkpoint at {}", path.display())),
            Err(e) => message.push_str(&format!("; diagnostic checkpoint failed: {e}")),
        }
    }
    Error::Diverged { epoch: epoch + 1, message }
}

pub(crate) fn check_label_space<T: Scalar>(data: &Dataset<T>, config: &PatternNetConfig) -> Result<()> {
    if data.num_classes() != config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes(),
            config.num_classes
        )));
    }
    if config.task == Task::Segmentation && data.num_parts() != config.num_parts {
        return Err(Error::Config(format!("dataset has {} parts, model expects {}", data.num_parts(), config.num_parts)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&order, 3).len(), 3);
        assert_eq!(batches(&order[..2], 1), vec![vec![0, 1]]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
        assert_eq!(derive_seed(7, 1, 1), derive_seed(7, 1, 1));
    }
}
