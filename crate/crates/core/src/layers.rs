//! Shared MLP layers: affine map, batch norm and ReLU applied row-wise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, BnStats, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Momentum of the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;
/// Lower bound kept on every running variance.
pub const BN_VAR_FLOOR: f64 = 1e-5;

/// Parameters of one `ReLU(BN(x·W + b))` layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct MlpLayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn_gamma: Tensor<T>,
    pub bn_beta: Tensor<T>,
    pub bn_running_mean: Tensor<T>,
    pub bn_running_var: Tensor<T>,
}

/// Tape handles for the trainable tensors of an [`MlpLayerParams`].
#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub weight: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl<T: Scalar> MlpLayerParams<T> {
    /// He-normal weights, zero bias, unit γ, zero β, unit running variance.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        Self {
            weight: Tensor::from_fn(&[fan_in, fan_out], |_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            }),
            bias: Tensor::zeros(&[fan_out]),
            bn_gamma: Tensor::full(&[fan_out], T::one()),
            bn_beta: Tensor::zeros(&[fan_out]),
            bn_running_mean: Tensor::zeros(&[fan_out]),
            bn_running_var: Tensor::full(&[fan_out], T::one()),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    /// Count of trainable scalars (running statistics excluded).
    pub fn trainable_count(&self) -> usize {
        self.weight.len() + self.bias.len() + self.bn_gamma.len() + self.bn_beta.len()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> MlpVars {
        MlpVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
            gamma: tape.param(self.bn_gamma.clone()),
            beta: tape.param(self.bn_beta.clone()),
        }
    }

    /// Records `ReLU(BN(x·W + b))` on the tape. In training mode the batch
    /// statistics are returned for a later [`update_running`](Self::update_running).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &MlpVars,
        x: Var,
        training: bool,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let fin = tape.value(x).cols();
        if fin != self.fan_in() {
            return Err(Error::Dimension(format!("layer expects {} inputs, got {fin}", self.fan_in())));
        }
        let h = tape.matmul(x, vars.weight)?;
        let h = tape.add_bias(h, vars.bias)?;
        let mode = if training {
            BnMode::Batch
        } else {
            BnMode::Running { mean: self.bn_running_mean.data(), var: self.bn_running_var.data() }
        };
        let (h, stats) = tape.batch_norm(h, vars.gamma, vars.beta, mode)?;
        Ok((tape.relu(h), stats))
    }

    pub fn update_running(&mut self, stats: &BnStats<T>) {
        let m = T::of(BN_MOMENTUM);
        let floor = T::of(BN_VAR_FLOOR);
        for (r, &b) in self.bn_running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (T::one() - m) * b;
        }
        for (r, &b) in self.bn_running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (m * *r + (T::one() - m) * b).max(floor);
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.weight, &self.bias, &self.bn_gamma, &self.bn_beta, &self.bn_running_mean, &self.bn_running_var]
            .iter()
            .all(|t| t.is_finite())
    }
}

/// Plain affine output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct LinearParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> LinearParams<T> {
    /// Glorot-normal weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Tensor::from_fn(&[fan_in, fan_out], |_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            }),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LinearVars {
        LinearVars { weight: tape.param(self.weight.clone()), bias: tape.param(self.bias.clone()) }
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &LinearVars, x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars.weight)?;
        tape.add_bias(h, vars.bias)
    }
}

/// Inverted dropout: zeroes each entry with probability `p` and scales the
/// survivors by `1/(1−p)`.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout rate {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - p));
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    tape.mul_mask(x, mask)
}

/// Value-level `ReLU(BN(features·W + b))`, updating running statistics when
/// `training` is set.
pub fn shared_mlp_forward<T: Scalar>(
    params: &mut MlpLayerParams<T>,
    features: &Tensor<T>,
    training: bool,
) -> Result<Tensor<T>> {
    if features.shape().len() != 2 {
        return Err(Error::Dimension(format!("expected N×F features, got {:?}", features.shape())));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let x = tape.constant(features.clone());
    let (y, stats) = params.forward(&mut tape, &vars, x, training)?;
    if let Some(stats) = stats {
        params.update_running(&stats);
    }
    Ok(tape.value(y).clone())
}

/// Value-level column max over all rows.
pub fn max_pool_rows<T: Scalar>(features: &Tensor<T>) -> Result<Tensor<T>> {
    if features.is_empty() {
        return Err(Error::EmptyPool);
    }
    let f = features.cols();
    let mut out = features.row(0).to_vec();
    for r in 1..features.rows() {
        for (o, &v) in out.iter_mut().zip(features.row(r)) {
            if v > *o {
                *o = v;
            }
        }
    }
    Tensor::new(vec![f], out)
}
