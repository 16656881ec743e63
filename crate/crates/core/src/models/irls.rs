//! Newton / IRLS solver for (optionally ridge-penalized) logistic regression.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use super::design::StdDesign;
use super::{softplus, FittedModel, PenaltySpec, DIVERGENCE_NORM};
use crate::error::{Error, Result};
use crate::math::{expit, logit};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Largest Newton step (relative to the coefficient scale) that counts as converged.
    pub tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 25,
            tol: 1e-8,
        }
    }
}

pub fn fit_logistic_irls(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    ridge_lambda: f64,
    opts: &IrlsOptions,
) -> Result<FittedModel> {
    fit_logistic_irls_offset(x, y, None, ridge_lambda, opts)
}

/// Logistic regression with an optional fixed offset added to the linear predictor.
///
/// Minimizes `-(1/n) sum loglik + (ridge_lambda / 2) |beta|^2` on standardized
/// covariates; the intercept is not penalized.
pub fn fit_logistic_irls_offset(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    offset: Option<&[f64]>,
    ridge_lambda: f64,
    opts: &IrlsOptions,
) -> Result<FittedModel> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if let Some(o) = offset {
        if o.len() != y.len() {
            return Err(Error::Dimension {
                expected: y.len(),
                got: o.len(),
            });
        }
    }
    if !(ridge_lambda >= 0.0) {
        return Err(crate::error::domain("ridge_lambda must be nonnegative"));
    }
    let design = StdDesign::new(x);
    Ok(irls_std(&design, y, offset, ridge_lambda, opts))
}

pub(crate) fn irls_std(
    design: &StdDesign,
    y: &[f64],
    offset: Option<&[f64]>,
    ridge_lambda: f64,
    opts: &IrlsOptions,
) -> FittedModel {
    let n = design.n;
    let p = design.p();
    let nf = n as f64;
    let penalty = PenaltySpec::ridge(ridge_lambda, p);
    let ybar = y.iter().sum::<f64>() / nf;

    // active (non-constant) columns; constant ones keep a zero coefficient
    let active: Vec<usize> = (0..p).filter(|&j| !design.constant[j]).collect();
    let k = active.len() + 1;

    let degenerate = ybar <= 0.0 || ybar >= 1.0;
    let mut b0 = if degenerate { 0.0 } else { logit(ybar) };
    if let (Some(o), false) = (offset, degenerate) {
        // a reasonable start for offset models is the offset itself
        b0 = logit(ybar) - o.iter().sum::<f64>() / nf;
    }
    let mut beta = vec![0.0; p];
    let eta_of = |b0: f64, beta: &[f64]| {
        let mut eta = design.linear_predictor(b0, beta);
        if let Some(o) = offset {
            eta.iter_mut().zip(o).for_each(|(e, v)| *e += v);
        }
        eta
    };
    let objective = |eta: &[f64], beta: &[f64]| {
        let nll = eta
            .iter()
            .zip(y)
            .map(|(e, yi)| softplus(*e) - yi * e)
            .sum::<f64>()
            / nf;
        nll + 0.5 * ridge_lambda * beta.iter().map(|b| b * b).sum::<f64>()
    };

    let mut eta = eta_of(b0, &beta);
    let mut obj = objective(&eta, &beta);
    let mut converged = false;
    let mut iterations = 0;

    if !degenerate {
        for it in 1..=opts.max_iter {
            iterations = it;
            let mut grad = DVector::<f64>::zeros(k);
            let mut hess = DMatrix::<f64>::zeros(k, k);
            let mut wcol = vec![0.0; n];
            let mut resid = vec![0.0; n];
            for i in 0..n {
                let mu = expit(eta[i]);
                wcol[i] = mu * (1.0 - mu);
                resid[i] = y[i] - mu;
            }
            // gradient of the objective (to be minimized)
            grad[0] = -resid.iter().sum::<f64>() / nf;
            hess[(0, 0)] = wcol.iter().sum::<f64>() / nf;
            for (a, &j) in active.iter().enumerate() {
                let cj = &design.cols[j];
                grad[a + 1] = -cj.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / nf
                    + ridge_lambda * beta[j];
                let h0 = cj.iter().zip(&wcol).map(|(x, w)| x * w).sum::<f64>() / nf;
                hess[(0, a + 1)] = h0;
                hess[(a + 1, 0)] = h0;
                for (b, &l) in active.iter().enumerate().skip(a) {
                    let cl = &design.cols[l];
                    let h = cj
                        .iter()
                        .zip(cl)
                        .zip(&wcol)
                        .map(|((xj, xl), w)| xj * xl * w)
                        .sum::<f64>()
                        / nf;
                    hess[(a + 1, b + 1)] = h;
                    hess[(b + 1, a + 1)] = h;
                }
                hess[(a + 1, a + 1)] += ridge_lambda;
            }
            let Some(chol) = hess.cholesky() else {
                break;
            };
            let step = chol.solve(&grad);
            if step.iter().any(|s| !s.is_finite()) {
                break;
            }

            let old_b0 = b0;
            let old_beta = beta.clone();
            let mut t = 1.0;
            let mut new_obj = f64::INFINITY;
            for _ in 0..30 {
                b0 = old_b0 - t * step[0];
                for (a, &j) in active.iter().enumerate() {
                    beta[j] = old_beta[j] - t * step[a + 1];
                }
                eta = eta_of(b0, &beta);
                new_obj = objective(&eta, &beta);
                if new_obj.is_finite() && new_obj <= obj + 1e-12 * obj.abs().max(1.0) {
                    break;
                }
                t *= 0.5;
            }
            obj = new_obj;
            let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            if norm > DIVERGENCE_NORM || !norm.is_finite() {
                break;
            }
            let scale = beta.iter().fold(b0.abs(), |m, b| m.max(b.abs())).max(1.0);
            let moved = step.iter().fold(0.0_f64, |m, s| m.max((t * s).abs()));
            if moved <= opts.tol * scale {
                converged = true;
                break;
            }
        }
    }

    FittedModel::from_std(design, b0, &beta, penalty, converged, iterations, obj)
}
