use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::patternnet::{Forward, PatternNetConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss components of one batch. `total == ce + lambda·mapping`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub mapping: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, mapping: f64, lambda: f64) -> Self {
        Self { total: ce + lambda * mapping, ce, mapping, lambda }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.ce.is_finite() && self.mapping.is_finite()
    }
}

/// σ of the ridge-regularized least-squares weights mapping the columns of
/// `psi` (`D×L`) onto `phi` (`D`). Zero for a single column.
pub fn linear_mapping_loss<T: Scalar>(psi: &Tensor<T>, phi: &Tensor<T>, ridge: f64) -> Result<f64> {
    if psi.shape().len() != 2 || phi.len() != psi.rows() {
        return Err(Error::Dimension(format!("Ψ {:?} against φ of length {}", psi.shape(), phi.len())));
    }
    let levels = psi.cols();
    if levels == 1 {
        log::warn!("mapping loss with a single cloning level is identically zero");
    }
    let mut tape = Tape::new();
    let p = tape.constant(psi.transpose());
    let f = tape.constant(phi.clone().reshape(&[1, phi.len()])?);
    let s = tape.mapping_loss(p, f, levels, ridge)?;
    Ok(tape.value(s).data()[0].as_f64())
}

/// Records the training objective on the tape and returns its root with
/// the component values. The mapping term is left off the tape when
/// `lambda == 0`, so gradients are those of plain smoothed cross-entropy.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    forward: &Forward<T>,
    labels: &[usize],
    config: &PatternNetConfig,
) -> Result<(Var, LossBreakdown)> {
    let ce = tape.softmax_cross_entropy(forward.logits, labels, T::of(config.eps_ls))?;
    let ce_value = tape.value(ce).data()[0].as_f64();
    if config.lambda == 0.0 {
        let mapping = mapping_value(tape, forward, config.ridge)?;
        return Ok((ce, LossBreakdown::new(ce_value, mapping, 0.0)));
    }
    let m = tape.mapping_loss(forward.psi, forward.phi, forward.levels, config.ridge)?;
    let mapping = tape.value(m).data()[0].as_f64();
    let weighted = tape.scale(m, T::of(config.lambda));
    let total = tape.add(ce, weighted)?;
    Ok((total, LossBreakdown::new(ce_value, mapping, config.lambda)))
}

/// Mapping-loss value of a forward pass without recording it.
pub fn mapping_value<T: Scalar>(tape: &Tape<T>, forward: &Forward<T>, ridge: f64) -> Result<f64> {
    let mut side = Tape::new();
    let p = side.constant(tape.value(forward.psi).clone());
    let f = side.constant(tape.value(forward.phi).clone());
    let m = side.mapping_loss(p, f, forward.levels, ridge)?;
    Ok(side.value(m).data()[0].as_f64())
}
