use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{PatternNetConfig, Task};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{LinearParams, LinearVars, MlpLayerParams, MlpVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decoding head: hidden `ReLU(BN(·))` layers with dropout, then an affine output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct Head<T> {
    pub hidden: Vec<MlpLayerParams<T>>,
    pub out: LinearParams<T>,
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub hidden: Vec<MlpVars>,
    pub out: LinearVars,
}

impl<T: Scalar> Head<T> {
    fn init(fan_in: usize, widths: &[usize], fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut hidden = Vec::new();
        let mut prev = fan_in;
        for &w in widths {
            hidden.push(MlpLayerParams::init(prev, w, rng));
            prev = w;
        }
        Self { hidden, out: LinearParams::init(prev, fan_out, rng) }
    }

    fn bind(&self, tape: &mut Tape<T>) -> HeadVars {
        HeadVars { hidden: self.hidden.iter().map(|l| l.bind(tape)).collect(), out: self.out.bind(tape) }
    }
}

/// Identifies a batch-normalized layer for running-statistics updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerId {
    Branch(usize),
    PsiMlp,
    Global,
    ClsHidden(usize),
    SegBranch(usize),
    SegHidden(usize),
}

/// All weights of the network. Branch weights are shared by every cloning
/// subset, so the parameter count does not depend on `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct PatternNetParams<T> {
    pub branch: Vec<MlpLayerParams<T>>,
    pub psi_mlp: Option<MlpLayerParams<T>>,
    pub global_mlp: MlpLayerParams<T>,
    pub cls_head: Option<Head<T>>,
    pub seg_branch: Vec<MlpLayerParams<T>>,
    pub seg_head: Option<Head<T>>,
}

/// Tape handles mirroring [`PatternNetParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub branch: Vec<MlpVars>,
    pub psi_mlp: Option<MlpVars>,
    pub global_mlp: MlpVars,
    pub cls_head: Option<HeadVars>,
    pub seg_branch: Vec<MlpVars>,
    pub seg_head: Option<HeadVars>,
}

impl ParamVars {
    /// Trainable handles in the canonical order of
    /// [`PatternNetParams::trainable`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let mlp = |v: &MlpVars, out: &mut Vec<Var>| out.extend([v.weight, v.bias, v.gamma, v.beta]);
        let head = |h: &HeadVars, out: &mut Vec<Var>| {
            h.hidden.iter().for_each(|v| mlp(v, out));
            out.extend([h.out.weight, h.out.bias]);
        };
        self.branch.iter().for_each(|v| mlp(v, &mut out));
        if let Some(v) = &self.psi_mlp {
            mlp(v, &mut out);
        }
        mlp(&self.global_mlp, &mut out);
        if let Some(h) = &self.cls_head {
            head(h, &mut out);
        }
        self.seg_branch.iter().for_each(|v| mlp(v, &mut out));
        if let Some(h) = &self.seg_head {
            head(h, &mut out);
        }
        out
    }
}

impl<T: Scalar> PatternNetParams<T> {
    pub fn init(config: &PatternNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut branch = Vec::new();
        let mut prev = 3;
        for &w in &config.branch_widths {
            branch.push(MlpLayerParams::init(2 * prev, w, &mut rng));
            prev = w;
        }
        let psi_mlp = config.psi_mlp.then(|| MlpLayerParams::init(config.psi_dim, config.psi_dim, &mut rng));
        let global_mlp = MlpLayerParams::init(config.psi_dim, config.global_dim, &mut rng);
        let desc = config.descriptor_dim();
        let (cls_head, seg_branch, seg_head) = match config.task {
            Task::Classification => {
                (Some(Head::init(desc, &config.head_widths, config.num_classes, &mut rng)), Vec::new(), None)
            }
            Task::Segmentation => {
                let mut seg = Vec::new();
                let mut prev = 3;
                for &w in &config.seg_widths {
                    seg.push(MlpLayerParams::init(prev, w, &mut rng));
                    prev = w;
                }
                let head = Head::init(prev + desc, &config.head_widths, config.num_parts, &mut rng);
                (None, seg, Some(head))
            }
        };
        Ok(Self { branch, psi_mlp, global_mlp, cls_head, seg_branch, seg_head })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            branch: self.branch.iter().map(|l| l.bind(tape)).collect(),
            psi_mlp: self.psi_mlp.as_ref().map(|l| l.bind(tape)),
            global_mlp: self.global_mlp.bind(tape),
            cls_head: self.cls_head.as_ref().map(|h| h.bind(tape)),
            seg_branch: self.seg_branch.iter().map(|l| l.bind(tape)).collect(),
            seg_head: self.seg_head.as_ref().map(|h| h.bind(tape)),
        }
    }

    /// Handles over already-recorded trainable nodes, taken in
    /// [`ParamVars::all`] order.
    pub fn vars_from(&self, flat: &[Var]) -> Result<ParamVars> {
        let expected = self.named_tensors().iter().filter(|t| t.2).count();
        if flat.len() != expected {
            return Err(Error::Dimension(format!("expected {expected} parameter handles, got {}", flat.len())));
        }
        fn mlp(it: &mut impl Iterator<Item = Var>) -> MlpVars {
            let mut next = || it.next().expect("counted");
            MlpVars { weight: next(), bias: next(), gamma: next(), beta: next() }
        }
        fn head<T>(h: &Head<T>, it: &mut impl Iterator<Item = Var>) -> HeadVars {
            let hidden = h.hidden.iter().map(|_| mlp(it)).collect();
            let mut next = || it.next().expect("counted");
            HeadVars { hidden, out: LinearVars { weight: next(), bias: next() } }
        }
        let it = &mut flat.iter().copied();
        let branch = self.branch.iter().map(|_| mlp(it)).collect();
        let psi_mlp = self.psi_mlp.as_ref().map(|_| mlp(it));
        let global_mlp = mlp(it);
        let cls_head = self.cls_head.as_ref().map(|h| head(h, it));
        let seg_branch = self.seg_branch.iter().map(|_| mlp(it)).collect();
        let seg_head = self.seg_head.as_ref().map(|h| head(h, it));
        Ok(ParamVars { branch, psi_mlp, global_mlp, cls_head, seg_branch, seg_head })
    }

    pub fn layer_mut(&mut self, id: LayerId) -> Option<&mut MlpLayerParams<T>> {
        match id {
            LayerId::Branch(i) => self.branch.get_mut(i),
            LayerId::PsiMlp => self.psi_mlp.as_mut(),
            LayerId::Global => Some(&mut self.global_mlp),
            LayerId::ClsHidden(i) => self.cls_head.as_mut().and_then(|h| h.hidden.get_mut(i)),
            LayerId::SegBranch(i) => self.seg_branch.get_mut(i),
            LayerId::SegHidden(i) => self.seg_head.as_mut().and_then(|h| h.hidden.get_mut(i)),
        }
    }

    /// Every tensor with its dotted name, trainable ones flagged. The order is
    /// fixed and shared with [`ParamVars::all`] for the trainable subset.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>, bool)> {
        let mut out = Vec::new();
        fn mlp<'a, T>(p: &'a MlpLayerParams<T>, name: &str, out: &mut Vec<(String, &'a Tensor<T>, bool)>) {
            out.push((format!("{name}.weight"), &p.weight, true));
            out.push((format!("{name}.bias"), &p.bias, true));
            out.push((format!("{name}.bn_gamma"), &p.bn_gamma, true));
            out.push((format!("{name}.bn_beta"), &p.bn_beta, true));
            out.push((format!("{name}.bn_running_mean"), &p.bn_running_mean, false));
            out.push((format!("{name}.bn_running_var"), &p.bn_running_var, false));
        }
        fn head<'a, T>(h: &'a Head<T>, name: &str, out: &mut Vec<(String, &'a Tensor<T>, bool)>) {
            for (i, l) in h.hidden.iter().enumerate() {
                mlp(l, &format!("{name}.{i}"), out);
            }
            out.push((format!("{name}.out.weight"), &h.out.weight, true));
            out.push((format!("{name}.out.bias"), &h.out.bias, true));
        }
        for (i, l) in self.branch.iter().enumerate() {
            mlp(l, &format!("branch.{i}"), &mut out);
        }
        if let Some(l) = &self.psi_mlp {
            mlp(l, "psi_mlp", &mut out);
        }
        mlp(&self.global_mlp, "global", &mut out);
        if let Some(h) = &self.cls_head {
            head(h, "cls_head", &mut out);
        }
        for (i, l) in self.seg_branch.iter().enumerate() {
            mlp(l, &format!("seg_branch.{i}"), &mut out);
        }
        if let Some(h) = &self.seg_head {
            head(h, "seg_head", &mut out);
        }
        out
    }

    /// Mutable access to all tensors, in [`named_tensors`](Self::named_tensors) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        fn mlp<'a, T>(p: &'a mut MlpLayerParams<T>, out: &mut Vec<&'a mut Tensor<T>>) {
            out.extend([
                &mut p.weight,
                &mut p.bias,
                &mut p.bn_gamma,
                &mut p.bn_beta,
                &mut p.bn_running_mean,
                &mut p.bn_running_var,
            ]);
        }
        fn head<'a, T>(h: &'a mut Head<T>, out: &mut Vec<&'a mut Tensor<T>>) {
            h.hidden.iter_mut().for_each(|l| mlp(l, out));
            out.extend([&mut h.out.weight, &mut h.out.bias]);
        }
        self.branch.iter_mut().for_each(|l| mlp(l, &mut out));
        if let Some(l) = &mut self.psi_mlp {
            mlp(l, &mut out);
        }
        mlp(&mut self.global_mlp, &mut out);
        if let Some(h) = &mut self.cls_head {
            head(h, &mut out);
        }
        self.seg_branch.iter_mut().for_each(|l| mlp(l, &mut out));
        if let Some(h) = &mut self.seg_head {
            head(h, &mut out);
        }
        out
    }

    /// Trainable tensors only, in [`ParamVars::all`] order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let flags: Vec<bool> = self.named_tensors().iter().map(|t| t.2).collect();
        self.tensors_mut().into_iter().zip(flags).filter_map(|(t, f)| f.then_some(t)).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.named_tensors().iter().filter(|t| t.2).map(|t| t.1.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|t| t.1.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> PatternNetParams<U> {
        let mut out = PatternNetParams::<U> {
            branch: self.branch.iter().map(cast_mlp).collect(),
            psi_mlp: self.psi_mlp.as_ref().map(cast_mlp),
            global_mlp: cast_mlp(&self.global_mlp),
            cls_head: None,
            seg_branch: self.seg_branch.iter().map(cast_mlp).collect(),
            seg_head: None,
        };
        let cast_head = |h: &Head<T>| Head {
            hidden: h.hidden.iter().map(cast_mlp).collect(),
            out: LinearParams { weight: h.out.weight.cast(), bias: h.out.bias.cast() },
        };
        out.cls_head = self.cls_head.as_ref().map(cast_head);
        out.seg_head = self.seg_head.as_ref().map(cast_head);
        out
    }

    /// Checks every tensor shape against the architecture `config` implies.
    pub fn check_against(&self, config: &PatternNetConfig) -> Result<()> {
        let reference = PatternNetParams::<T>::init(config, 0)?;
        let mine = self.named_tensors();
        let theirs = reference.named_tensors();
        if mine.len() != theirs.len()
            || mine.iter().zip(&theirs).any(|(a, b)| a.0 != b.0 || a.1.shape() != b.1.shape())
        {
            return Err(Error::Config("parameters do not match the configured architecture".into()));
        }
        Ok(())
    }
}

fn cast_mlp<T: Scalar, U: Scalar>(p: &MlpLayerParams<T>) -> MlpLayerParams<U> {
    MlpLayerParams {
        weight: p.weight.cast(),
        bias: p.bias.cast(),
        bn_gamma: p.bn_gamma.cast(),
        bn_beta: p.bn_beta.cast(),
        bn_running_mean: p.bn_running_mean.cast(),
        bn_running_var: p.bn_running_var.cast(),
    }
}

/// Trainable scalars per block (weights, biases, BN γ/β; running statistics
/// excluded).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub branch: usize,
    pub psi_mlp: usize,
    pub global: usize,
    pub head: usize,
    pub seg_branch: usize,
    pub total: usize,
}

/// Layer-by-layer count from the configuration alone.
pub fn count_params(config: &PatternNetConfig) -> Result<ParamCount> {
    config.validate()?;
    let mlp = |fin: usize, fout: usize| fin * fout + 3 * fout;
    let affine = |fin: usize, fout: usize| fin * fout + fout;
    let mut c = ParamCount::default();
    let mut prev = 3;
    for &w in &config.branch_widths {
        c.branch += mlp(2 * prev, w);
        prev = w;
    }
    if config.psi_mlp {
        c.psi_mlp = mlp(config.psi_dim, config.psi_dim);
    }
    c.global = mlp(config.psi_dim, config.global_dim);
    let (head_in, head_out) = match config.task {
        Task::Classification => (config.descriptor_dim(), config.num_classes),
        Task::Segmentation => {
            let mut prev = 3;
            for &w in &config.seg_widths {
                c.seg_branch += mlp(prev, w);
                prev = w;
            }
            (prev + config.descriptor_dim(), config.num_parts)
        }
    };
    let mut prev = head_in;
    for &w in &config.head_widths {
        c.head += mlp(prev, w);
        prev = w;
    }
    c.head += affine(prev, head_out);
    c.total = c.branch + c.psi_mlp + c.global + c.head + c.seg_branch;
    Ok(c)
}
