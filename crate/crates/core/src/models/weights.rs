//! Penalty weights for the adaptive elastic net and for AINET.

use super::FittedModel;
use crate::error::{domain, Result};

/// `w_j = |theta_j|^(-gamma)`; a zero estimate excludes the variable (`+inf`).
pub fn adaptive_weights_from_glm(glm_fit: &FittedModel, gamma: f64) -> Result<Vec<f64>> {
    if !glm_fit.converged {
        return Err(domain("adaptive weights need a converged source fit"));
    }
    if !(gamma >= 0.0) {
        return Err(domain("gamma must be nonnegative"));
    }
    Ok(glm_fit
        .coefficients
        .iter()
        .map(|t| {
            if gamma == 0.0 {
                1.0
            } else if *t == 0.0 {
                f64::INFINITY
            } else {
                t.abs().powf(-gamma)
            }
        })
        .collect())
}

/// `w_j = 1 - (IMP_j / sum_k IMP_k)^gamma` with `IMP_j = max(0, raw_j)`.
///
/// When no variable has positive importance every weight is 1, which turns
/// AINET into the plain elastic net.
pub fn ainet_weights_from_importance(raw_importance: &[f64], gamma: f64) -> Vec<f64> {
    let imp: Vec<f64> = raw_importance.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = imp.iter().sum();
    if !(total > 0.0) {
        return vec![1.0; imp.len()];
    }
    imp.iter().map(|v| 1.0 - (v / total).powf(gamma)).collect()
}
