//! Network assembly: shared edge-convolution branches over cloning subsets,
//! the global descriptor, max aggregation across subsets and the decoding
//! heads.

mod config;
mod params;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{PatternNetConfig, Task};
pub use params::{count_params, Head, HeadVars, LayerId, ParamCount, ParamVars, PatternNetParams};

use crate::autodiff::{BnStats, Tape, Var};
use crate::cloning::Partition;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::layers::{dropout, MlpLayerParams, MlpVars};
use crate::neighbors::{knn, Metric};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward-pass mode. Training uses batch statistics and seeded dropout.
pub enum Pass<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Pass<'_> {
    pub fn training(&self) -> bool {
        matches!(self, Pass::Train(_))
    }
}

/// Per-cloud description produced by [`PatternNet::describe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct Descriptor<T> {
    /// `psi_dim × L`, column `l` is ψ_l.
    pub psi_matrix: Tensor<T>,
    pub phi: Tensor<T>,
    /// `[max over columns of Ψ, φ]`.
    pub cloud_descriptor: Tensor<T>,
}

/// Tape handles of one batched forward pass.
pub struct Forward<T> {
    /// `B×C` for classification, `(ΣM_b)×S` for segmentation (cloud-major,
    /// original point order).
    pub logits: Var,
    /// `(B·L)×psi_dim`, cloud-major.
    pub psi: Var,
    /// `B×global_dim`.
    pub phi: Var,
    /// `B×descriptor_dim`.
    pub descriptor: Var,
    pub levels: usize,
    /// Batch statistics of every normalized layer, for running updates.
    pub bn_stats: Vec<(LayerId, BnStats<T>)>,
}

/// Subset index lists of one cloud.
pub type Subsets = Vec<Vec<usize>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct PatternNet<T> {
    pub config: PatternNetConfig,
    pub params: PatternNetParams<T>,
}

fn mlp<T: Scalar>(
    tape: &mut Tape<T>,
    p: &MlpLayerParams<T>,
    v: &MlpVars,
    x: Var,
    id: LayerId,
    pass: &Pass<'_>,
    stats: &mut Vec<(LayerId, BnStats<T>)>,
) -> Result<Var> {
    let (y, s) = p.forward(tape, v, x, pass.training())?;
    if let Some(s) = s {
        stats.push((id, s));
    }
    Ok(y)
}

fn segment_knn<T: Scalar>(x: &Tensor<T>, offsets: &[usize], k: usize, metric: Metric) -> Result<Vec<usize>> {
    let f = x.cols();
    let mut out = Vec::with_capacity(x.rows() * k);
    for w in offsets.windows(2) {
        let n = w[1] - w[0];
        if n <= k {
            return Err(Error::SubsetTooSmall { size: n, k });
        }
        let seg = Tensor::new(vec![n, f], x.data()[w[0] * f..w[1] * f].to_vec())?;
        let graph = knn(&seg, k, metric)?;
        out.extend(graph.indices.iter().map(|&j| j + w[0]));
    }
    Ok(out)
}

impl<T: Scalar> PatternNet<T> {
    pub fn new(config: PatternNetConfig, seed: u64) -> Result<Self> {
        let params = PatternNetParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: PatternNetConfig, params: PatternNetParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running(&mut self, stats: &[(LayerId, BnStats<T>)]) {
        for (id, s) in stats {
            if let Some(layer) = self.params.layer_mut(*id) {
                layer.update_running(s);
            }
        }
    }

    /// Four edge-convolution stages over the rows of `coords`, each subset
    /// `offsets[s]..offsets[s+1]` holding its own neighbor graph. Returns the
    /// concatenated per-point features.
    fn encode(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        coords: Tensor<T>,
        offsets: &[usize],
        pass: &Pass<'_>,
        stats: &mut Vec<(LayerId, BnStats<T>)>,
    ) -> Result<Var> {
        let k = self.config.k;
        let first_graph = segment_knn(&coords, offsets, k, self.config.layer1_metric)?;
        let mut x = tape.constant(coords);
        let mut stages = Vec::with_capacity(self.params.branch.len());
        for (s, (p, v)) in self.params.branch.iter().zip(&vars.branch).enumerate() {
            let graph = if s > 0 && self.config.dynamic_graph {
                segment_knn(tape.value(x), offsets, k, Metric::Hilbert)?
            } else {
                first_graph.clone()
            };
            let e = tape.edge_features(x, &graph, k)?;
            let h = mlp(tape, p, v, e, LayerId::Branch(s), pass, stats)?;
            x = tape.group_max(h, k)?;
            stages.push(x);
        }
        tape.concat_cols(&stages)
    }

    fn head(
        &self,
        tape: &mut Tape<T>,
        head: &Head<T>,
        vars: &HeadVars,
        mut x: Var,
        id: fn(usize) -> LayerId,
        pass: &mut Pass<'_>,
        stats: &mut Vec<(LayerId, BnStats<T>)>,
    ) -> Result<Var> {
        for (i, (p, v)) in head.hidden.iter().zip(&vars.hidden).enumerate() {
            x = mlp(tape, p, v, x, id(i), pass, stats)?;
            if let Pass::Train(rng) = pass {
                x = dropout(tape, x, self.config.dropout, *rng)?;
            }
        }
        head.out.forward(tape, &vars.out, x)
    }

    /// Subset branches, ψ, φ and descriptor for a batch. Every cloud must
    /// come with the same number of non-empty subsets; subset rows keep
    /// ascending point order.
    fn trunk(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        clouds: &[&PointCloud<T>],
        subsets: &[Subsets],
        pass: &Pass<'_>,
        stats: &mut Vec<(LayerId, BnStats<T>)>,
    ) -> Result<(Var, Var, Var, usize)> {
        if clouds.is_empty() || clouds.len() != subsets.len() {
            return Err(Error::Dimension(format!("{} clouds with {} partitions", clouds.len(), subsets.len())));
        }
        let levels = subsets[0].len();
        if levels == 0 || subsets.iter().any(|s| s.len() != levels) {
            return Err(Error::Dimension("every cloud needs the same positive number of subsets".into()));
        }
        let mut coords = Vec::new();
        let mut sub_offsets = vec![0];
        let mut cloud_offsets = vec![0];
        for (cloud, subs) in clouds.iter().zip(subsets) {
            for sub in subs {
                for &i in sub {
                    let p = cloud.points.get(i).ok_or_else(|| Error::Graph(format!("point {i} out of range")))?;
                    coords.extend_from_slice(p);
                }
                sub_offsets.push(coords.len() / 3);
            }
            cloud_offsets.push(coords.len() / 3);
        }
        let rows = coords.len() / 3;
        let pointfeat = self.encode(tape, vars, Tensor::new(vec![rows, 3], coords)?, &sub_offsets, pass, stats)?;
        let pooled_in = match (&self.params.psi_mlp, &vars.psi_mlp) {
            (Some(p), Some(v)) => mlp(tape, p, v, pointfeat, LayerId::PsiMlp, pass, stats)?,
            _ => pointfeat,
        };
        let psi = tape.segment_max(pooled_in, &sub_offsets)?;
        let g = mlp(tape, &self.params.global_mlp, &vars.global_mlp, pointfeat, LayerId::Global, pass, stats)?;
        let phi = tape.segment_max(g, &cloud_offsets)?;
        let lp = tape.group_max(psi, levels)?;
        let descriptor = tape.concat_cols(&[lp, phi])?;
        Ok((psi, phi, descriptor, levels))
    }

    fn classify_on(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        descriptor: Var,
        pass: &mut Pass<'_>,
        stats: &mut Vec<(LayerId, BnStats<T>)>,
    ) -> Result<Var> {
        match (&self.params.cls_head, &vars.cls_head) {
            (Some(h), Some(v)) => self.head(tape, h, v, descriptor, LayerId::ClsHidden, pass, stats),
            _ => Err(Error::Config("network has no classification head".into())),
        }
    }

    fn segment_on(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        clouds: &[&PointCloud<T>],
        descriptor: Var,
        pass: &mut Pass<'_>,
        stats: &mut Vec<(LayerId, BnStats<T>)>,
    ) -> Result<Var> {
        let (Some(h), Some(hv)) = (&self.params.seg_head, &vars.seg_head) else {
            return Err(Error::Config("network has no segmentation head".into()));
        };
        if tape.value(descriptor).rows() != clouds.len() {
            return Err(Error::Dimension("one descriptor row per cloud".into()));
        }
        let mut pts = Vec::new();
        let mut owner = Vec::new();
        for (b, cloud) in clouds.iter().enumerate() {
            pts.extend(cloud.points.iter().flatten().copied());
            owner.extend(std::iter::repeat_n(b, cloud.len()));
        }
        let mut x = tape.constant(Tensor::new(vec![owner.len(), 3], pts)?);
        for (i, (p, v)) in self.params.seg_branch.iter().zip(&vars.seg_branch).enumerate() {
            x = mlp(tape, p, v, x, LayerId::SegBranch(i), pass, stats)?;
        }
        let tiled = tape.gather_rows(descriptor, &owner)?;
        let fused = tape.concat_cols(&[x, tiled])?;
        self.head(tape, h, hv, fused, LayerId::SegHidden, pass, stats)
    }

    /// Batched forward pass through the trunk and the configured head.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        clouds: &[&PointCloud<T>],
        subsets: &[Subsets],
        mut pass: Pass<'_>,
    ) -> Result<Forward<T>> {
        let mut stats = Vec::new();
        let (psi, phi, descriptor, levels) = self.trunk(tape, vars, clouds, subsets, &pass, &mut stats)?;
        let logits = match self.config.task {
            Task::Classification => self.classify_on(tape, vars, descriptor, &mut pass, &mut stats)?,
            Task::Segmentation => self.segment_on(tape, vars, clouds, descriptor, &mut pass, &mut stats)?,
        };
        Ok(Forward { logits, psi, phi, descriptor, levels, bn_stats: stats })
    }

    /// Per-point features and ψ of one subset given as `N×3` coordinates.
    pub fn branch_forward(&self, subset_points: &Tensor<T>, pass: Pass<'_>) -> Result<(Tensor<T>, Tensor<T>)> {
        if subset_points.shape().len() != 2 || subset_points.cols() != 3 {
            return Err(Error::Dimension(format!("expected N×3 points, got {:?}", subset_points.shape())));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let offsets = [0, subset_points.rows()];
        let pf = self.encode(&mut tape, &vars, subset_points.clone(), &offsets, &pass, &mut Vec::new())?;
        let psi = tape.segment_max(pf, &offsets)?;
        let d = self.config.psi_dim;
        Ok((tape.value(pf).clone(), tape.value(psi).clone().reshape(&[d])?))
    }

    /// φ from per-point features of all subsets.
    pub fn global_descriptor(&self, all_pointfeat: &Tensor<T>, pass: Pass<'_>) -> Result<Tensor<T>> {
        if all_pointfeat.shape().len() != 2 || all_pointfeat.rows() == 0 {
            return Err(Error::EmptyPool);
        }
        let mut tape = Tape::new();
        let vars = self.params.global_mlp.bind(&mut tape);
        let x = tape.constant(all_pointfeat.clone());
        let (g, _) = self.params.global_mlp.forward(&mut tape, &vars, x, pass.training())?;
        let phi = tape.segment_max(g, &[0, all_pointfeat.rows()])?;
        tape.value(phi).clone().reshape(&[self.config.global_dim])
    }

    /// Ψ, φ and the cloud descriptor of one partitioned cloud.
    pub fn describe(&self, cloud: &PointCloud<T>, partition: &Partition, pass: Pass<'_>) -> Result<Descriptor<T>> {
        if partition.assignment.len() != cloud.len() {
            return Err(Error::Dimension("partition does not match the cloud".into()));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let subsets = [partition.subsets()];
        let (psi, phi, desc, _) = self.trunk(&mut tape, &vars, &[cloud], &subsets, &pass, &mut Vec::new())?;
        Ok(Descriptor {
            psi_matrix: tape.value(psi).transpose(),
            phi: tape.value(phi).clone().reshape(&[self.config.global_dim])?,
            cloud_descriptor: tape.value(desc).clone().reshape(&[self.config.descriptor_dim()])?,
        })
    }

    fn descriptor_var(&self, tape: &mut Tape<T>, descriptor: &Tensor<T>) -> Result<Var> {
        let d = self.config.descriptor_dim();
        if descriptor.len() != d {
            return Err(Error::Dimension(format!("descriptor of length {} where {d} expected", descriptor.len())));
        }
        Ok(tape.constant(descriptor.clone().reshape(&[1, d])?))
    }

    /// Raw class scores for one descriptor.
    pub fn classify_logits(&self, descriptor: &Tensor<T>, mut pass: Pass<'_>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = self.descriptor_var(&mut tape, descriptor)?;
        let y = self.classify_on(&mut tape, &vars, x, &mut pass, &mut Vec::new())?;
        tape.value(y).clone().reshape(&[self.config.num_classes])
    }

    /// Per-point part scores `M×S` for one cloud and its descriptor.
    pub fn segment_logits(&self, cloud: &PointCloud<T>, descriptor: &Tensor<T>, mut pass: Pass<'_>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = self.descriptor_var(&mut tape, descriptor)?;
        let y = self.segment_on(&mut tape, &vars, &[cloud], x, &mut pass, &mut Vec::new())?;
        Ok(tape.value(y).clone())
    }

    /// Eval-mode logits for a batch of partitioned clouds.
    pub fn predict(&self, clouds: &[&PointCloud<T>], subsets: &[Subsets]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, clouds, subsets, Pass::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    pub fn cast<U: Scalar>(&self) -> PatternNet<U> {
        PatternNet { config: self.config.clone(), params: self.params.cast() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn small(task: Task) -> PatternNetConfig {
        PatternNetConfig {
            levels: 2,
            k: 4,
            branch_widths: vec![8; 4],
            psi_dim: 32,
            global_dim: 32,
            head_widths: vec![16, 16],
            seg_widths: vec![8; 4],
            num_classes: 3,
            num_parts: if task == Task::Segmentation { 5 } else { 0 },
            task,
            ..PatternNetConfig::default()
        }
    }

    fn cloud(m: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..m).map(|_| std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0)).collect()).unwrap()
    }

    #[test]
    fn default_count_matches_layer_sums() {
        let c = count_params(&PatternNetConfig::default()).unwrap();
        assert_eq!(c.branch, 576 + 3 * 8_384);
        assert_eq!(c.global, 66_304);
        assert_eq!(c.head, 131_840 + 66_304 + 10_280);
        assert_eq!(c.total, 300_456);
        let wider = PatternNetConfig { num_classes: 80, ..PatternNetConfig::default() };
        assert_eq!(count_params(&wider).unwrap().total - c.total, 256 * 40 + 40);
        let psi = PatternNetConfig { psi_mlp: true, ..PatternNetConfig::default() };
        assert_eq!(count_params(&psi).unwrap().total - c.total, 66_304);
    }

    #[test]
    fn count_is_independent_of_levels_and_matches_materialized_weights() {
        for task in [Task::Classification, Task::Segmentation] {
            for levels in [1, 3] {
                let cfg = PatternNetConfig { levels, ..small(task) };
                let net = PatternNet::<f32>::new(cfg.clone(), 1).unwrap();
                assert_eq!(net.param_count(), count_params(&cfg).unwrap().total);
            }
        }
        let seg = PatternNetConfig { num_parts: 50, task: Task::Segmentation, ..PatternNetConfig::default() };
        let c = count_params(&seg).unwrap();
        assert_eq!(c.head, 576 * 256 + 3 * 256 + 66_304 + 256 * 50 + 50);
        assert_eq!(c.seg_branch, (3 * 64 + 192) + 3 * (64 * 64 + 192));
    }

    #[test]
    fn branch_shapes_and_subset_size_error() {
        let net = PatternNet::<f64>::new(small(Task::Classification), 2).unwrap();
        let pts = cloud(20, 1).to_tensor();
        let (pf, psi) = net.branch_forward(&pts, Pass::Eval).unwrap();
        assert_eq!(pf.shape(), &[20, 32]);
        assert_eq!(psi.shape(), &[32]);
        let tiny = cloud(4, 1).to_tensor();
        assert!(matches!(net.branch_forward(&tiny, Pass::Eval), Err(Error::SubsetTooSmall { size: 4, k: 4 })));
    }

    #[test]
    fn static_branch_is_permutation_equivariant() {
        let cfg = PatternNetConfig { dynamic_graph: false, ..small(Task::Classification) };
        let net = PatternNet::<f64>::new(cfg, 3).unwrap();
        let c = cloud(30, 4);
        let mut perm: Vec<usize> = (0..30).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let (pf, psi) = net.branch_forward(&c.to_tensor(), Pass::Eval).unwrap();
        let (pf2, psi2) = net.branch_forward(&c.select(&perm).to_tensor(), Pass::Eval).unwrap();
        for (r, &p) in perm.iter().enumerate() {
            for (a, b) in pf2.row(r).iter().zip(pf.row(p)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(psi.max_abs_diff(&psi2) <= 1e-12);
    }

    #[test]
    fn identical_subsets_give_identical_psi() {
        let net = PatternNet::<f64>::new(small(Task::Classification), 6).unwrap();
        let half = cloud(16, 7);
        let doubled = PointCloud::new(half.points.iter().chain(&half.points).copied().collect()).unwrap();
        let partition = Partition {
            assignment: (0..32).map(|i| i / 16).collect(),
            levels: 2,
            seed: 0,
            subset_entropies: vec![0.0; 2],
            within_tolerance: true,
            attempts: 1,
        };
        let d = net.describe(&doubled, &partition, Pass::Eval).unwrap();
        assert_eq!(d.psi_matrix.shape(), &[32, 2]);
        for r in 0..32 {
            assert_eq!(d.psi_matrix.at(r, 0), d.psi_matrix.at(r, 1));
        }
        assert_eq!(&d.cloud_descriptor.data()[..32], &d.psi_matrix.transpose().row(0)[..]);
        assert_eq!(&d.cloud_descriptor.data()[32..], d.phi.data());
    }

    #[test]
    fn global_descriptor_ignores_row_order() {
        let net = PatternNet::<f64>::new(small(Task::Classification), 8).unwrap();
        let x = Tensor::from_fn(&[10, 32], |i| ((i * 37) % 11) as f64 - 5.0);
        let mut rows: Vec<Vec<f64>> = (0..10).map(|r| x.row(r).to_vec()).collect();
        rows.reverse();
        let y = Tensor::from_rows(&rows).unwrap();
        let a = net.global_descriptor(&x, Pass::Eval).unwrap();
        assert_eq!(a.shape(), &[32]);
        assert_eq!(a, net.global_descriptor(&y, Pass::Eval).unwrap());
        assert!(matches!(net.global_descriptor(&Tensor::zeros(&[0, 32]), Pass::Eval), Err(Error::EmptyPool)));
    }

    #[test]
    fn single_level_descriptor_is_psi() {
        let net = PatternNet::<f64>::new(PatternNetConfig { levels: 1, ..small(Task::Classification) }, 9).unwrap();
        let c = cloud(24, 10);
        let p = crate::cloning::clone_partition(&c, 1, 0, 0.2, 0).unwrap();
        let d = net.describe(&c, &p, Pass::Eval).unwrap();
        assert_eq!(&d.cloud_descriptor.data()[..32], d.psi_matrix.data());
    }

    #[test]
    fn classify_eval_is_deterministic_and_train_is_seeded() {
        let net = PatternNet::<f64>::new(small(Task::Classification), 11).unwrap();
        let desc = Tensor::from_fn(&[64], |i| (i as f64).cos());
        let a = net.classify_logits(&desc, Pass::Eval).unwrap();
        assert_eq!(a.shape(), &[3]);
        assert_eq!(a, net.classify_logits(&desc, Pass::Eval).unwrap());
        // training-mode batch norm needs a batch, so drive the batched path
        let clouds = [cloud(24, 1), cloud(24, 2)];
        let refs: Vec<&PointCloud<f64>> = clouds.iter().collect();
        let subsets: Vec<Subsets> = clouds.iter().map(|_| vec![(0..12).collect(), (12..24).collect()]).collect();
        let run = |seed| {
            let mut tape = Tape::new();
            let vars = net.params.bind(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = net.forward(&mut tape, &vars, &refs, &subsets, Pass::Train(&mut rng)).unwrap();
            tape.value(out.logits).clone()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn segmentation_logits_are_pointwise() {
        let net = PatternNet::<f64>::new(small(Task::Segmentation), 12).unwrap();
        let c = cloud(20, 13);
        let desc = Tensor::from_fn(&[64], |i| (i as f64 * 0.3).sin());
        let y = net.segment_logits(&c, &desc, Pass::Eval).unwrap();
        assert_eq!(y.shape(), &[20, 5]);
        let rev: Vec<usize> = (0..20).rev().collect();
        let y2 = net.segment_logits(&c.select(&rev), &desc, Pass::Eval).unwrap();
        for r in 0..20 {
            assert_eq!(y.row(r), y2.row(19 - r));
        }
        let same = PointCloud::new(vec![[0.1, 0.2, 0.3]; 4]).unwrap();
        let z = net.segment_logits(&same, &desc, Pass::Eval).unwrap();
        assert!((1..4).all(|r| z.row(r) == z.row(0)));
    }

    #[test]
    fn batched_forward_matches_single_cloud_in_eval() {
        let net = PatternNet::<f64>::new(small(Task::Classification), 14).unwrap();
        let clouds = [cloud(24, 1), cloud(30, 2)];
        let subs: Vec<Subsets> = vec![vec![(0..12).collect(), (12..24).collect()], vec![(0..15).collect(), (15..30).collect()]];
        let both = net.predict(&[&clouds[0], &clouds[1]], &subs).unwrap();
        for b in 0..2 {
            let one = net.predict(&[&clouds[b]], &subs[b..b + 1]).unwrap();
            for (x, y) in one.data().iter().zip(both.row(b)) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
