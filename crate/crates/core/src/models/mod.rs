//! Logistic regression and the weighted elastic-net family.

mod cv;
pub(crate) mod design;
mod enet;
mod irls;
mod methods;
mod weights;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate_en, fit_cv_elastic_net, CvCurve, CvRule, CvSelection};
pub use design::Standardization;
pub use enet::{
    fit_weighted_elastic_net, lambda_max, make_lambda_path, penalized_objective, soft_threshold,
    EnetOptions,
};
pub use irls::{fit_logistic_irls, fit_logistic_irls_offset, IrlsOptions};
pub use methods::{
    fit_method, predict_proba, FailureStage, FitFailure, FittedPredictor, MethodConfig, MethodId,
    MethodStreams,
};
pub(crate) use methods::TrainingContext;
pub use weights::{adaptive_weights_from_glm, ainet_weights_from_importance};

use crate::error::{Error, Result};
use crate::math::expit;
use design::StdDesign;

/// Coefficient vectors whose standardized-scale Euclidean norm exceeds this
/// are treated as diverging (separation).
pub const DIVERGENCE_NORM: f64 = 1e3;

/// `log(1 + exp(z))` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Penalty `lambda * (alpha * sum_j w_j |b_j| + (1 - alpha) / 2 * sum_j b_j^2)`.
///
/// A weight of `+inf` excludes the variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn new(lambda: f64, alpha: f64, weights: Vec<f64>) -> Self {
        PenaltySpec {
            lambda,
            alpha,
            gamma: 1.0,
            weights,
        }
    }

    /// Pure L2 penalty `(lambda / 2) |b|^2`.
    pub fn ridge(lambda: f64, p: usize) -> Self {
        PenaltySpec::new(lambda, 0.0, vec![1.0; p])
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.weights.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: self.weights.len(),
            });
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(crate::error::domain("lambda must be a finite nonnegative number"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(crate::error::domain("alpha must lie in [0, 1]"));
        }
        if !(self.gamma >= 0.0) {
            return Err(crate::error::domain("gamma must be nonnegative"));
        }
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(crate::error::domain("penalty weights must be nonnegative"));
        }
        Ok(())
    }

    /// Penalty value for standardized-scale coefficients.
    pub fn value(&self, beta: &[f64]) -> f64 {
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for (b, w) in beta.iter().zip(&self.weights) {
            if *b != 0.0 {
                l1 += w * b.abs();
            }
            l2 += b * b;
        }
        self.lambda * (self.alpha * l1 + 0.5 * (1.0 - self.alpha) * l2)
    }
}

/// A fitted linear-logistic model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub intercept: f64,
    /// Coefficients on the original covariate scale.
    pub coefficients: Vec<f64>,
    pub std_intercept: f64,
    /// Coefficients on the internal standardized scale.
    pub std_coefficients: Vec<f64>,
    pub penalty: PenaltySpec,
    pub standardization: Standardization,
    pub converged: bool,
    pub iterations: usize,
    /// Final `-(1/n) loglik + penalty` on the standardized scale.
    pub objective: f64,
}

impl FittedModel {
    pub(crate) fn from_std(
        design: &StdDesign,
        b0: f64,
        beta: &[f64],
        penalty: PenaltySpec,
        converged: bool,
        iterations: usize,
        objective: f64,
    ) -> Self {
        let (intercept, coefficients) = design.scale.destandardize(b0, beta);
        FittedModel {
            intercept,
            coefficients,
            std_intercept: b0,
            std_coefficients: beta.to_vec(),
            penalty,
            standardization: design.scale.clone(),
            converged,
            iterations,
            objective,
        }
    }

    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                got: x.ncols(),
            });
        }
        Ok(x
            .rows()
            .into_iter()
            .map(|row| {
                let eta = self.intercept
                    + row
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                expit(eta)
            })
            .collect())
    }
}
