//! Least-squares mapping between description vectors.
//!
//! The forward path is the ridge-regularized normal-equation solve
//! `ω = (ΨᵀΨ + εI)⁻¹Ψᵀφ`, which tends to the Moore–Penrose solution `Ψ†φ`
//! as `ε → 0` for full-column-rank `Ψ` and has a closed-form gradient. The
//! SVD pseudoinverse is kept as an independent reference.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default ridge used by the mapping loss.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// In-place lower Cholesky factor of a symmetric positive-definite `n×n` matrix.
fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numeric(format!("normal matrix not positive definite (pivot {d:e})")));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], n: usize, rhs: &[f64]) -> Vec<f64> {
    let mut y = rhs.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One solved instance of `ω = (ΨᵀΨ + εI)⁻¹Ψᵀφ`.
///
/// `cols` stores the `L` columns of `Ψ` as consecutive length-`D` slices.
#[derive(Clone, Debug)]
pub struct RidgeSolve {
    levels: usize,
    dim: usize,
    chol: Vec<f64>,
    omega: Vec<f64>,
}

impl RidgeSolve {
    pub fn new(cols: &[f64], levels: usize, dim: usize, target: &[f64], ridge: f64) -> Result<Self> {
        if cols.len() != levels * dim || target.len() != dim || levels == 0 {
            return Err(Error::Dimension(format!("ridge solve with L = {levels}, D = {dim}")));
        }
        if !(ridge > 0.0) {
            return Err(Error::Parameter("ridge must be positive".into()));
        }
        if cols.iter().chain(target).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input to ridge solve".into()));
        }
        let col = |l: usize| &cols[l * dim..(l + 1) * dim];
        let mut gram = vec![0.0; levels * levels];
        for a in 0..levels {
            for b in 0..=a {
                let v = dot(col(a), col(b));
                gram[a * levels + b] = v;
                gram[b * levels + a] = v;
            }
            gram[a * levels + a] += ridge;
        }
        let rhs: Vec<f64> = (0..levels).map(|l| dot(col(l), target)).collect();
        cholesky(&mut gram, levels)?;
        let omega = cholesky_solve(&gram, levels, &rhs);
        if omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("ridge solve produced non-finite coefficients".into()));
        }
        Ok(Self { levels, dim, chol: gram, omega })
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// Population standard deviation of the coefficients.
    pub fn std_dev(&self) -> f64 {
        population_std(&self.omega)
    }

    /// `∂σ/∂ω`; zero where σ vanishes (including `L = 1`).
    pub fn std_dev_grad(&self) -> Vec<f64> {
        let n = self.levels as f64;
        let mean = self.omega.iter().sum::<f64>() / n;
        let sd = self.std_dev();
        if sd == 0.0 {
            return vec![0.0; self.levels];
        }
        self.omega.iter().map(|w| (w - mean) / (n * sd)).collect()
    }

    /// Pulls `g = ∂ℓ/∂ω` back to `(∂ℓ/∂cols, ∂ℓ/∂φ)`.
    ///
    /// With `u = A⁻¹g`: `∂φ = Ψu` and column `l` of `∂Ψ` is
    /// `φ·u_l − (Ψω)·u_l − (Ψu)·ω_l`.
    pub fn backward(&self, cols: &[f64], target: &[f64], g_omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (levels, dim) = (self.levels, self.dim);
        let u = cholesky_solve(&self.chol, levels, g_omega);
        let mut psi_u = vec![0.0; dim];
        let mut psi_w = vec![0.0; dim];
        for l in 0..levels {
            let c = &cols[l * dim..(l + 1) * dim];
            for t in 0..dim {
                psi_u[t] += c[t] * u[l];
                psi_w[t] += c[t] * self.omega[l];
            }
        }
        let mut dcols = vec![0.0; levels * dim];
        for l in 0..levels {
            let row = &mut dcols[l * dim..(l + 1) * dim];
            for t in 0..dim {
                row[t] = (target[t] - psi_w[t]) * u[l] - psi_u[t] * self.omega[l];
            }
        }
        (dcols, psi_u)
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n).sqrt()
}

/// `ω = (ΨᵀΨ + ridge·I)⁻¹Ψᵀφ` for `Ψ: D×L`, `φ: D`, with `D ≥ L`.
pub fn ridge_pinv_solve<T: Scalar>(psi: &Tensor<T>, phi: &Tensor<T>, ridge: f64) -> Result<Tensor<T>> {
    let (d, l) = (psi.rows(), psi.cols());
    if phi.len() != d {
        return Err(Error::Dimension(format!("Ψ is {d}x{l} but φ has {} entries", phi.len())));
    }
    if d < l {
        return Err(Error::Dimension(format!("need D ≥ L, got {d}x{l}")));
    }
    let cols: Vec<f64> = psi.transpose().data().iter().map(|v| v.as_f64()).collect();
    let target: Vec<f64> = phi.data().iter().map(|v| v.as_f64()).collect();
    let solve = RidgeSolve::new(&cols, l, d, &target, ridge)?;
    Ok(Tensor::vector(solve.omega().iter().map(|&w| T::of(w)).collect()))
}

/// Moore–Penrose pseudoinverse of a `D×L` matrix via SVD, zeroing singular
/// values below `rcond·σ_max`. Returns an `L×D` tensor.
pub fn svd_pinv<T: Scalar>(psi: &Tensor<T>, rcond: f64) -> Result<Tensor<T>> {
    let (d, l) = (psi.rows(), psi.cols());
    if psi.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to SVD".into()));
    }
    let m = DMatrix::from_row_iterator(d, l, psi.data().iter().map(|v| v.as_f64()));
    let svd = m
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let (u, vt) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numeric("SVD factors missing".into())),
    };
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    let k = svd.singular_values.len();
    let mut out = vec![T::zero(); l * d];
    for i in 0..l {
        for j in 0..d {
            let mut acc = 0.0;
            for s in 0..k {
                let sv = svd.singular_values[s];
                if sv > cutoff && sv > 0.0 {
                    acc += vt[(s, i)] * u[(j, s)] / sv;
                }
            }
            out[i * d + j] = T::of(acc);
        }
    }
    Tensor::new(vec![l, d], out)
}
