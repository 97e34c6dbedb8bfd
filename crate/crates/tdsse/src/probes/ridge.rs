//! Linear ridge-regression attacker (Att-LR).
//!
//! Fits `W = (Xcᵀ Xc + λ I)⁻¹ Xcᵀ Yc` on mean-centered proxy pairs via
//! normal equations and a Cholesky factorization, with the intercept
//! recovered from the means. The λ sweep refits on a shared Gram matrix
//! and keeps the value with the lowest training error.

use crate::error::{Error, Result};
use crate::probes::{LowFreqTile, LOWFREQ_DIM};

/// Ridge penalties tried by the sweep, in evaluation order.
pub const LAMBDA_SWEEP: [f64; 3] = [0.1, 1.0, 10.0];

/// Trained linear map. `weights[i * 256 + o]` sends input feature `i`
/// to output feature `o`; `bias` is the per-output intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub lambda: f64,
}

struct Gram {
    /// Xcᵀ Xc, 256×256 row-major.
    xtx: Vec<f64>,
    /// Xcᵀ Yc, 256×256 row-major.
    xty: Vec<f64>,
    x_mean: Vec<f64>,
    y_mean: Vec<f64>,
}

fn check_dataset(inputs: &[LowFreqTile], targets: &[LowFreqTile]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("ridge fit needs at least one sample".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::InvalidParameter(format!(
            "ridge fit got {} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    Ok(())
}

fn build_gram(inputs: &[LowFreqTile], targets: &[LowFreqTile]) -> Gram {
    let n = inputs.len() as f64;
    let d = LOWFREQ_DIM;
    let mut x_mean = vec![0.0; d];
    let mut y_mean = vec![0.0; d];
    for (x, y) in inputs.iter().zip(targets) {
        for k in 0..d {
            x_mean[k] += x.values[k];
            y_mean[k] += y.values[k];
        }
    }
    for k in 0..d {
        x_mean[k] /= n;
        y_mean[k] /= n;
    }

    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d * d];
    let mut xc = [0.0; LOWFREQ_DIM];
    let mut yc = [0.0; LOWFREQ_DIM];
    for (x, y) in inputs.iter().zip(targets) {
        for k in 0..d {
            xc[k] = x.values[k] - x_mean[k];
            yc[k] = y.values[k] - y_mean[k];
        }
        for i in 0..d {
            let xi = xc[i];
            if xi == 0.0 {
                continue;
            }
            let row_a = &mut xtx[i * d..(i + 1) * d];
            for (a, &v) in row_a.iter_mut().zip(&xc[..]) {
                *a += xi * v;
            }
            let row_b = &mut xty[i * d..(i + 1) * d];
            for (b, &v) in row_b.iter_mut().zip(&yc[..]) {
                *b += xi * v;
            }
        }
    }
    Gram { xtx, xty, x_mean, y_mean }
}

/// In-place lower-triangular Cholesky factorization of a symmetric
/// positive-definite matrix. Fails on non-positive pivots.
fn cholesky(a: &mut [f64], d: usize) -> Result<()> {
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= a[i * d + k] * a[j * d + k];
            }
            if i == j {
                if sum <= 1e-12 {
                    return Err(Error::Numerical(format!(
                        "normal equations not positive definite (pivot {sum:.3e} at {i})"
                    )));
                }
                a[i * d + j] = sum.sqrt();
            } else {
                a[i * d + j] = sum / a[j * d + j];
            }
        }
    }
    Ok(())
}

/// Solves `A W = B` for all columns of `B` given the Cholesky factor of `A`.
fn cholesky_solve(l: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let cols = b.len() / d;
    let mut w = b.to_vec();
    // Forward: L z = b, column-wise over the row-major layout.
    for i in 0..d {
        for k in 0..i {
            let lik = l[i * d + k];
            if lik == 0.0 {
                continue;
            }
            let (prev, cur) = w.split_at_mut(i * cols);
            let src = &prev[k * cols..(k + 1) * cols];
            for (c, s) in cur[..cols].iter_mut().zip(src) {
                *c -= lik * s;
            }
        }
        let inv = 1.0 / l[i * d + i];
        for v in &mut w[i * cols..(i + 1) * cols] {
            *v *= inv;
        }
    }
    // Backward: Lᵀ w = z.
    for i in (0..d).rev() {
        for k in (i + 1)..d {
            let lki = l[k * d + i];
            if lki == 0.0 {
                continue;
            }
            let (cur, later) = w.split_at_mut((i + 1) * cols);
            let src = &later[(k - i - 1) * cols..(k - i) * cols];
            for (c, s) in cur[i * cols..].iter_mut().zip(src) {
                *c -= lki * s;
            }
        }
        let inv = 1.0 / l[i * d + i];
        for v in &mut w[i * cols..(i + 1) * cols] {
            *v *= inv;
        }
    }
    w
}

fn solve_for_lambda(gram: &Gram, lambda: f64) -> Result<RidgeModel> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "ridge penalty must be finite and non-negative, got {lambda}"
        )));
    }
    let d = LOWFREQ_DIM;
    let mut a = gram.xtx.clone();
    for i in 0..d {
        a[i * d + i] += lambda;
    }
    cholesky(&mut a, d)?;
    let weights = cholesky_solve(&a, &gram.xty, d);
    let mut bias = gram.y_mean.clone();
    for o in 0..d {
        let mut dot = 0.0;
        for i in 0..d {
            dot += gram.x_mean[i] * weights[i * d + o];
        }
        bias[o] -= dot;
    }
    Ok(RidgeModel { weights, bias, lambda })
}

/// Fits a single ridge model with the given penalty.
pub fn fit_ridge(
    inputs: &[LowFreqTile],
    targets: &[LowFreqTile],
    lambda: f64,
) -> Result<RidgeModel> {
    check_dataset(inputs, targets)?;
    solve_for_lambda(&build_gram(inputs, targets), lambda)
}

/// Fits one model per penalty in `LAMBDA_SWEEP` on a shared Gram matrix
/// and returns the one with the lowest training MSE (ties keep the
/// earlier penalty).
pub fn fit_ridge_swept(inputs: &[LowFreqTile], targets: &[LowFreqTile]) -> Result<RidgeModel> {
    check_dataset(inputs, targets)?;
    let gram = build_gram(inputs, targets);
    let mut best: Option<(f64, RidgeModel)> = None;
    for &lambda in &LAMBDA_SWEEP {
        let model = solve_for_lambda(&gram, lambda)?;
        let mse = train_mse(&model, inputs, targets);
        let better = match &best {
            None => true,
            Some((cur, _)) => mse < *cur,
        };
        if better {
            best = Some((mse, model));
        }
    }
    Ok(best.expect("sweep is non-empty").1)
}

/// Mean squared error of clamped predictions over a dataset.
pub fn train_mse(model: &RidgeModel, inputs: &[LowFreqTile], targets: &[LowFreqTile]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let p = predict_ridge(model, x);
        for k in 0..LOWFREQ_DIM {
            let e = p.values[k] - y.values[k];
            acc += e * e;
        }
    }
    acc / (inputs.len() * LOWFREQ_DIM) as f64
}

/// Applies the linear map and clamps each output to [0, 1].
pub fn predict_ridge(model: &RidgeModel, x: &LowFreqTile) -> LowFreqTile {
    let d = LOWFREQ_DIM;
    let mut out = LowFreqTile::zeros();
    out.values.copy_from_slice(&model.bias);
    for i in 0..d {
        let xi = x.values[i];
        if xi == 0.0 {
            continue;
        }
        let row = &model.weights[i * d..(i + 1) * d];
        for (o, &w) in out.values.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
    for v in &mut out.values {
        *v = v.clamp(0.0, 1.0);
    }
    out
}
