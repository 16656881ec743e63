//! Test-set estimands: Brier score, scaled Brier, log-score, AUC and the two
//! calibration parameters, plus their oracle-corrected versions.
//!
//! Estimands that are undefined for the given inputs (single-class outcomes,
//! constant predictions for the calibration slope, non-converged calibration
//! fits) are `None` rather than a made-up number.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::math::logit;
use crate::models::{fit_logistic_irls, fit_logistic_irls_offset, IrlsOptions};

pub const LOG_SCORE_EPS: f64 = 1e-15;
pub const CALIBRATION_CLIP: f64 = 1e-10;

fn check(y: &[f64], probs: &[f64]) -> Result<()> {
    if y.len() != probs.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: probs.len(),
        });
    }
    if y.is_empty() {
        return Err(domain("metrics need at least one observation"));
    }
    Ok(())
}

pub fn brier(y: &[f64], probs: &[f64]) -> Result<f64> {
    check(y, probs)?;
    Ok(y.iter().zip(probs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Sample variance of the per-observation squared errors `(y - p)^2`.
pub fn squared_error_variance(y: &[f64], probs: &[f64]) -> Result<f64> {
    check(y, probs)?;
    let se: Vec<f64> = y.iter().zip(probs).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(crate::math::sample_var(&se))
}

/// `1 - BS / (ybar (1 - ybar))`; `None` when the outcome is single-class.
pub fn scaled_brier(y: &[f64], probs: &[f64]) -> Result<Option<f64>> {
    let bs = brier(y, probs)?;
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let bs0 = ybar * (1.0 - ybar);
    Ok(if bs0 > 0.0 { Some(1.0 - bs / bs0) } else { None })
}

pub fn log_score(y: &[f64], probs: &[f64], eps: f64) -> Result<f64> {
    check(y, probs)?;
    let s: f64 = y
        .iter()
        .zip(probs)
        .map(|(yi, p)| {
            let p = p.clamp(eps, 1.0 - eps);
            yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / y.len() as f64)
}

/// Concordance probability of cases over non-cases (ties count one half).
pub fn concordance(y: &[f64], probs: &[f64]) -> Result<Option<f64>> {
    check(y, probs)?;
    let n1 = y.iter().filter(|v| **v >= 0.5).count();
    let n0 = y.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum_cases = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie block i..j
        let midrank = (i + j + 1) as f64 / 2.0;
        let cases = order[i..j].iter().filter(|&&k| y[k] >= 0.5).count();
        rank_sum_cases += midrank * cases as f64;
        i = j;
    }
    let u = rank_sum_cases - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(Some(u / (n1 as f64 * n0 as f64)))
}

/// `max(PI, 1 - PI)` with `PI` the case/non-case concordance.
pub fn auc(y: &[f64], probs: &[f64]) -> Result<Option<f64>> {
    Ok(concordance(y, probs)?.map(|pi| pi.max(1.0 - pi)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Calibration-in-the-large `a` (slope fixed at 1).
    pub intercept: Option<f64>,
    /// Calibration slope `b`.
    pub slope: Option<f64>,
}

pub fn calibration(y: &[f64], probs: &[f64]) -> Result<Calibration> {
    check(y, probs)?;
    let n = y.len();
    let lp: Vec<f64> = probs
        .iter()
        .map(|p| logit(p.clamp(CALIBRATION_CLIP, 1.0 - CALIBRATION_CLIP)))
        .collect();
    let two_class = y.iter().any(|v| *v >= 0.5) && y.iter().any(|v| *v < 0.5);
    if !two_class {
        return Ok(Calibration {
            intercept: None,
            slope: None,
        });
    }
    let opts = IrlsOptions::default();

    let empty = Array2::<f64>::zeros((n, 0));
    let citl = fit_logistic_irls_offset(empty.view(), y, Some(&lp), 0.0, &opts)?;
    let intercept = citl.converged.then_some(citl.intercept);

    let sd = crate::math::sample_sd(&lp);
    let slope = if sd.is_finite() && sd > 1e-10 {
        let x = Array2::from_shape_vec((n, 1), lp).expect("n x 1");
        let fit = fit_logistic_irls(x.view(), y, 0.0, &opts)?;
        fit.converged.then(|| fit.coefficients[0])
    } else {
        None
    };
    Ok(Calibration { intercept, slope })
}

/// All estimands of one prediction vector on one test set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub brier: Option<f64>,
    pub brier_scaled: Option<f64>,
    pub log_score: Option<f64>,
    pub auc: Option<f64>,
    pub calib_intercept: Option<f64>,
    pub calib_slope: Option<f64>,
}

impl MetricSet {
    pub fn all_valid(&self) -> bool {
        self.brier.is_some()
            && self.brier_scaled.is_some()
            && self.log_score.is_some()
            && self.auc.is_some()
            && self.calib_intercept.is_some()
            && self.calib_slope.is_some()
    }
}

pub fn compute_metrics(y: &[f64], probs: &[f64]) -> Result<MetricSet> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(domain("predicted probabilities must lie in [0, 1]"));
    }
    let cal = calibration(y, probs)?;
    Ok(MetricSet {
        brier: Some(brier(y, probs)?),
        brier_scaled: scaled_brier(y, probs)?,
        log_score: Some(log_score(y, probs, LOG_SCORE_EPS)?),
        auc: auc(y, probs)?,
        calib_intercept: cal.intercept,
        calib_slope: cal.slope,
    })
}

/// Field-wise `method - oracle`; invalid if either side is invalid.
pub fn oracle_correct(method: &MetricSet, oracle: &MetricSet) -> MetricSet {
    let d = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
    MetricSet {
        brier: d(method.brier, oracle.brier),
        brier_scaled: d(method.brier_scaled, oracle.brier_scaled),
        log_score: d(method.log_score, oracle.log_score),
        auc: d(method.auc, oracle.auc),
        calib_intercept: d(method.calib_intercept, oracle.calib_intercept),
        calib_slope: d(method.calib_slope, oracle.calib_slope),
    }
}
