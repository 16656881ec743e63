//! K-fold cross-validation over `(alpha, lambda)` with the one-standard-error rule.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::design::StdDesign;
use super::enet::{cd_solve, lambda_path_std, CdState, EnetOptions};
use super::{FittedModel, PenaltySpec};
use crate::error::{Error, Result};
use crate::math::expit;
use crate::rng::RngStream;

/// Held-out probabilities are clipped to `[DEV_CLIP, 1 - DEV_CLIP]` before the deviance.
const DEV_CLIP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvRule {
    Min,
    OneSe,
}

/// CV deviance curve for one `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    /// False where at least one fold fit failed to converge.
    pub valid: Vec<bool>,
    pub index_min: Option<usize>,
    pub index_1se: Option<usize>,
}

impl CvCurve {
    pub fn selected(&self, rule: CvRule) -> Option<usize> {
        match rule {
            CvRule::Min => self.index_min,
            CvRule::OneSe => self.index_1se,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub curves: Vec<CvCurve>,
    pub rule: CvRule,
    pub chosen_alpha: f64,
    pub chosen_lambda: f64,
    pub chosen_curve: usize,
    pub chosen_index: usize,
    /// Some fold fits on the chosen curve failed; selection was restricted to the rest.
    pub restricted: bool,
    /// Set when no `(alpha, lambda)` could be selected.
    pub failed: Option<String>,
}

impl CvSelection {
    fn failure(rule: CvRule, msg: impl Into<String>) -> Self {
        CvSelection {
            curves: Vec::new(),
            rule,
            chosen_alpha: f64::NAN,
            chosen_lambda: f64::NAN,
            chosen_curve: 0,
            chosen_index: 0,
            restricted: false,
            failed: Some(msg.into()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }
}

/// Stratified fold labels: each class is shuffled and dealt round-robin.
pub(crate) fn stratified_folds(y: &[f64], k: usize, stream: &RngStream) -> Vec<usize> {
    let mut rng = stream.rng();
    let mut controls: Vec<usize> = (0..y.len()).filter(|&i| y[i] < 0.5).collect();
    let mut cases: Vec<usize> = (0..y.len()).filter(|&i| y[i] >= 0.5).collect();
    controls.shuffle(&mut rng);
    cases.shuffle(&mut rng);
    let mut folds = vec![0; y.len()];
    for (pos, i) in controls.iter().chain(cases.iter()).enumerate() {
        folds[*i] = pos % k;
    }
    folds
}

fn min_ratio_for(n: usize, p: usize) -> f64 {
    if n < p {
        1e-2
    } else {
        1e-4
    }
}

pub(crate) struct CvConfig<'a> {
    pub alphas: &'a [f64],
    pub weights: &'a [f64],
    pub k: usize,
    pub rule: CvRule,
    pub n_lambda: usize,
    pub opts: &'a EnetOptions,
}

pub(crate) fn cross_validate_std(
    x: ArrayView2<'_, f64>,
    full: &StdDesign,
    y: &[f64],
    fold_stream: &RngStream,
    cfg: &CvConfig<'_>,
) -> CvSelection {
    let n = y.len();
    let k = cfg.k;
    if k < 2 || n < 2 * k {
        return CvSelection::failure(cfg.rule, format!("need n >= 2k, got n={n}, k={k}"));
    }
    let folds = stratified_folds(y, k, fold_stream);

    // per-fold training designs are shared across alphas
    let mut train_sets = Vec::with_capacity(k);
    for f in 0..k {
        let tr: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let te: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
        let cases = ytr.iter().filter(|v| **v >= 0.5).count();
        if cases == 0 || cases == ytr.len() {
            return CvSelection::failure(cfg.rule, format!("training fold {f} contains a single class"));
        }
        let design = StdDesign::from_rows(x, Some(&tr));
        train_sets.push((design, ytr, te));
    }

    let min_ratio = min_ratio_for(n, full.p());
    let mut curves = Vec::with_capacity(cfg.alphas.len());
    for &alpha in cfg.alphas {
        let lambdas = match lambda_path_std(full, y, alpha, cfg.weights, cfg.n_lambda, min_ratio) {
            Ok(l) => l,
            Err(e) => return CvSelection::failure(cfg.rule, e.to_string()),
        };
        let nl = lambdas.len();
        let mut fold_dev = vec![vec![f64::NAN; nl]; k];
        let mut valid = vec![true; nl];
        for (f, (design, ytr, te)) in train_sets.iter().enumerate() {
            let mut state = CdState::null(ytr, design.p());
            let mut alive = true;
            for (li, &lam) in lambdas.iter().enumerate() {
                if !alive {
                    valid[li] = false;
                    continue;
                }
                let out = cd_solve(design, ytr, lam, alpha, cfg.weights, &mut state, cfg.opts);
                if !out.converged {
                    valid[li] = false;
                    if state.beta.iter().any(|b| !b.is_finite()) {
                        alive = false;
                    }
                    continue;
                }
                let (b0, beta) = design.scale.destandardize(state.b0, &state.beta);
                let mut dev = 0.0;
                for &i in te {
                    let eta = b0 + x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                    let mu = expit(eta).clamp(DEV_CLIP, 1.0 - DEV_CLIP);
                    dev -= 2.0 * (y[i] * mu.ln() + (1.0 - y[i]) * (1.0 - mu).ln());
                }
                fold_dev[f][li] = dev / te.len() as f64;
            }
        }
        // fold-size weighted mean and standard error
        let sizes: Vec<f64> = train_sets.iter().map(|t| t.2.len() as f64).collect();
        let wtot: f64 = sizes.iter().sum();
        let mut cv_mean = vec![f64::NAN; nl];
        let mut cv_se = vec![f64::NAN; nl];
        for li in 0..nl {
            if !valid[li] {
                continue;
            }
            let m = (0..k).map(|f| sizes[f] * fold_dev[f][li]).sum::<f64>() / wtot;
            let v = (0..k)
                .map(|f| sizes[f] * (fold_dev[f][li] - m).powi(2))
                .sum::<f64>()
                / wtot;
            cv_mean[li] = m;
            cv_se[li] = (v / (k - 1) as f64).sqrt();
        }
        let index_min = (0..nl)
            .filter(|&i| valid[i])
            .min_by(|&a, &b| cv_mean[a].total_cmp(&cv_mean[b]));
        let index_1se = index_min.and_then(|im| {
            let thr = cv_mean[im] + cv_se[im];
            (0..nl).find(|&i| valid[i] && cv_mean[i] <= thr)
        });
        curves.push(CvCurve {
            alpha,
            lambdas,
            cv_mean,
            cv_se,
            valid,
            index_min,
            index_1se,
        });
    }

    let mut best: Option<(usize, usize)> = None;
    for (ci, c) in curves.iter().enumerate() {
        if let Some(li) = c.selected(cfg.rule) {
            let better = match best {
                None => true,
                Some((bc, bl)) => c.cv_mean[li] < curves[bc].cv_mean[bl],
            };
            if better {
                best = Some((ci, li));
            }
        }
    }
    match best {
        None => {
            let mut s = CvSelection::failure(cfg.rule, "no converged (alpha, lambda) on any curve");
            s.curves = curves;
            s
        }
        Some((ci, li)) => CvSelection {
            chosen_alpha: curves[ci].alpha,
            chosen_lambda: curves[ci].lambdas[li],
            chosen_curve: ci,
            chosen_index: li,
            restricted: curves[ci].valid.iter().any(|v| !v),
            rule: cfg.rule,
            failed: None,
            curves,
        },
    }
}

/// Cross-validates the weighted elastic net over `alphas` and a data-driven
/// lambda path of 100 values.
pub fn cross_validate_en(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    alphas: &[f64],
    weights: &[f64],
    fold_stream: &RngStream,
    k: usize,
    rule: CvRule,
) -> Result<CvSelection> {
    validate_inputs(x, y, alphas, weights)?;
    let full = StdDesign::new(x);
    let opts = EnetOptions::default();
    let cfg = CvConfig {
        alphas,
        weights,
        k,
        rule,
        n_lambda: 100,
        opts: &opts,
    };
    Ok(cross_validate_std(x, &full, y, fold_stream, &cfg))
}

fn validate_inputs(x: ArrayView2<'_, f64>, y: &[f64], alphas: &[f64], weights: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.ncols() != weights.len() {
        return Err(Error::Dimension {
            expected: x.ncols(),
            got: weights.len(),
        });
    }
    if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(crate::error::domain("alphas must be a non-empty subset of [0, 1]"));
    }
    Ok(())
}

/// Refits the chosen `(alpha, lambda)` on the full data, walking the chosen
/// curve's path from its start with warm starts.
pub(crate) fn refit_selected(
    full: &StdDesign,
    y: &[f64],
    sel: &CvSelection,
    weights: &[f64],
    opts: &EnetOptions,
) -> FittedModel {
    let curve = &sel.curves[sel.chosen_curve];
    let mut state = CdState::null(y, full.p());
    let mut last = None;
    for &lam in &curve.lambdas[..=sel.chosen_index] {
        last = Some(cd_solve(full, y, lam, curve.alpha, weights, &mut state, opts));
    }
    let out = last.expect("non-empty path prefix");
    let penalty = PenaltySpec::new(sel.chosen_lambda, sel.chosen_alpha, weights.to_vec());
    FittedModel::from_std(
        full,
        state.b0,
        &state.beta,
        penalty,
        out.converged,
        out.iterations,
        out.objective,
    )
}

/// Cross-validation followed by the full-data refit at the selected penalty.
#[allow(clippy::too_many_arguments)]
pub fn fit_cv_elastic_net(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    alphas: &[f64],
    weights: &[f64],
    fold_stream: &RngStream,
    k: usize,
    rule: CvRule,
    opts: &EnetOptions,
) -> Result<(Option<FittedModel>, CvSelection)> {
    validate_inputs(x, y, alphas, weights)?;
    let full = StdDesign::new(x);
    let cfg = CvConfig {
        alphas,
        weights,
        k,
        rule,
        n_lambda: 100,
        opts,
    };
    let sel = cross_validate_std(x, &full, y, fold_stream, &cfg);
    if sel.is_failed() {
        return Ok((None, sel));
    }
    let model = refit_selected(&full, y, &sel, weights, opts);
    Ok((Some(model), sel))
}
