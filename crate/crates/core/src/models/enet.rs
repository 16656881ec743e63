//! Weighted elastic-net logistic regression by cyclic coordinate descent.
//!
//! The objective, on internally standardized covariates, is
//!
//! ```text
//! -(1/n) sum_i loglik(b0, b; y_i, x_i) + lambda * (alpha * sum_j w_j |b_j| + (1 - alpha)/2 * sum_j b_j^2)
//! ```
//!
//! An outer loop forms the IRLS quadratic approximation of the log-likelihood,
//! an inner loop minimizes the penalized weighted least-squares problem one
//! coordinate at a time. Inner sweeps alternate between the full coordinate set
//! and the current active set. Once a sweep leaves the active set and signs in
//! place, the sign-fixed quadratic on that set is solved directly and the next
//! full sweep checks the optimality conditions.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::design::StdDesign;
use super::{softplus, FittedModel, PenaltySpec, DIVERGENCE_NORM};
use crate::error::{domain, Error, Result};
use crate::math::{expit, logit};

/// Smallest working weight `mu (1 - mu)` used in the quadratic approximation.
const MIN_WORKING_WEIGHT: f64 = 1e-5;

/// Active-set sweeps between attempts at a direct solve.
const ACTIVE_SWEEPS: usize = 20;

/// Stand-in mixing value used to bound the path when `alpha = 0`.
pub(crate) const RIDGE_ALPHA_SURROGATE: f64 = 1e-3;

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnetOptions {
    pub max_outer: usize,
    pub max_sweeps: usize,
    /// Converged when no coefficient (standardized scale) moves more than this.
    pub tol: f64,
}

impl Default for EnetOptions {
    fn default() -> Self {
        EnetOptions {
            max_outer: 100,
            max_sweeps: 100_000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CdState {
    pub b0: f64,
    pub beta: Vec<f64>,
}

impl CdState {
    pub fn null(y: &[f64], p: usize) -> Self {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        CdState {
            b0: logit(ybar.clamp(1e-10, 1.0 - 1e-10)),
            beta: vec![0.0; p],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct CdOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

pub(crate) fn objective_std(design: &StdDesign, y: &[f64], state: &CdState, penalty: &PenaltySpec) -> f64 {
    let eta = design.linear_predictor(state.b0, &state.beta);
    nll(&eta, y) + penalty.value(&state.beta)
}

fn nll(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(e, yi)| softplus(*e) - yi * e)
        .sum::<f64>()
        / y.len() as f64
}

fn is_degenerate(y: &[f64]) -> bool {
    let s = y.iter().sum::<f64>();
    s <= 0.0 || s >= y.len() as f64
}

/// Weighted cross products of `[1, X]` for one IRLS quadratic; index 0 is the
/// intercept, index `j + 1` covariate `j`.
struct WeightedGram {
    gram: Array2<f64>,
    proj: Array1<f64>,
}

impl WeightedGram {
    fn new(design: &StdDesign, w: &[f64], z: &[f64]) -> Self {
        let n = design.n;
        let nf = n as f64;
        let p = design.p();
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let mut xt = Array2::<f64>::zeros((p + 1, n));
        xt.row_mut(0).assign(&ArrayView1::from(&sw[..]));
        for j in 0..p {
            for ((o, x), s) in xt.row_mut(j + 1).iter_mut().zip(&design.cols[j]).zip(&sw) {
                *o = s * x;
            }
        }
        let zw = Array1::from_iter(z.iter().zip(&sw).map(|(zi, s)| zi * s));
        WeightedGram {
            gram: xt.dot(&xt.t()) / nf,
            proj: xt.dot(&zw) / nf,
        }
    }
}

/// Moves toward the minimizer of the weighted least-squares subproblem over the
/// intercept and `active` with the current signs held fixed. If a penalized
/// coefficient would change sign, the step stops where the first one reaches
/// zero. Returns false (leaving `state` untouched) when the system is singular.
#[allow(clippy::too_many_arguments)]
fn active_set_step(
    design: &StdDesign,
    wg: &WeightedGram,
    z: &[f64],
    l1: &[f64],
    l2: f64,
    active: &[usize],
    state: &mut CdState,
    r: &mut [f64],
) -> bool {
    let m = active.len() + 1;
    let idx = |k: usize| if k == 0 { 0 } else { active[k - 1] + 1 };
    let mut a = DMatrix::from_fn(m, m, |k, l| wg.gram[(idx(k), idx(l))]);
    let mut rhs = DVector::from_fn(m, |k, _| wg.proj[idx(k)]);
    for (k, &j) in active.iter().enumerate() {
        a[(k + 1, k + 1)] += l2;
        rhs[k + 1] -= l1[j] * state.beta[j].signum();
    }
    let Some(chol) = a.cholesky() else {
        return false;
    };
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return false;
    }
    // largest step along the segment that keeps every penalized sign
    let mut t = 1.0;
    let mut hit = None;
    for (k, &j) in active.iter().enumerate() {
        let (b, s) = (state.beta[j], sol[k + 1]);
        if l1[j] > 0.0 && !(s * b > 0.0) {
            let tj = b / (b - s);
            if tj < t {
                t = tj;
                hit = Some(j);
            }
        }
    }
    state.b0 += t * (sol[0] - state.b0);
    for (k, &j) in active.iter().enumerate() {
        state.beta[j] += t * (sol[k + 1] - state.beta[j]);
    }
    if let Some(j) = hit {
        state.beta[j] = 0.0;
    }
    r.copy_from_slice(z);
    for ri in r.iter_mut() {
        *ri -= state.b0;
    }
    for &j in active {
        let bj = state.beta[j];
        if bj != 0.0 {
            for (ri, x) in r.iter_mut().zip(&design.cols[j]) {
                *ri -= bj * x;
            }
        }
    }
    true
}

/// Solves one penalty setting starting from (and overwriting) `state`.
pub(crate) fn cd_solve(
    design: &StdDesign,
    y: &[f64],
    lambda: f64,
    alpha: f64,
    weights: &[f64],
    state: &mut CdState,
    opts: &EnetOptions,
) -> CdOutcome {
    let n = design.n;
    let nf = n as f64;
    let p = design.p();
    let penalty = PenaltySpec::new(lambda, alpha, weights.to_vec());
    let excluded: Vec<bool> = (0..p)
        .map(|j| design.constant[j] || !weights[j].is_finite())
        .collect();
    for j in 0..p {
        if excluded[j] {
            state.beta[j] = 0.0;
        }
    }
    let l1: Vec<f64> = weights.iter().map(|w| lambda * alpha * w).collect();
    let l2 = lambda * (1.0 - alpha);

    if is_degenerate(y) {
        return CdOutcome {
            converged: false,
            iterations: 0,
            objective: f64::NAN,
        };
    }

    let mut eta = design.linear_predictor(state.b0, &state.beta);
    let mut obj = nll(&eta, y) + penalty.value(&state.beta);
    let mut w = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut xv = vec![0.0; p];
    let mut sweeps = 0usize;

    for outer in 1..=opts.max_outer {
        for i in 0..n {
            let mu = expit(eta[i]);
            let wi = (mu * (1.0 - mu)).max(MIN_WORKING_WEIGHT);
            w[i] = wi;
            r[i] = (y[i] - mu) / wi;
        }
        let wsum = w.iter().sum::<f64>();
        for j in 0..p {
            xv[j] = if excluded[j] {
                0.0
            } else {
                design.cols[j]
                    .iter()
                    .zip(&w)
                    .map(|(x, wi)| wi * x * x)
                    .sum::<f64>()
                    / nf
            };
        }
        let old = state.clone();

        // z = eta + r stays fixed during the inner problem
        let z: Vec<f64> = eta.iter().zip(&r).map(|(e, ri)| e + ri).collect();
        let sweep = |coords: &[usize], state: &mut CdState, r: &mut [f64]| -> f64 {
            let d = r.iter().zip(w.iter()).map(|(ri, wi)| ri * wi).sum::<f64>() / wsum;
            let mut max_move = d.abs() * (wsum / nf).sqrt();
            if d != 0.0 {
                state.b0 += d;
                r.iter_mut().for_each(|ri| *ri -= d);
            }
            for &j in coords {
                let col = &design.cols[j];
                let bj = state.beta[j];
                let g = col
                    .iter()
                    .zip(r.iter())
                    .zip(w.iter())
                    .map(|((x, ri), wi)| wi * x * ri)
                    .sum::<f64>()
                    / nf
                    + xv[j] * bj;
                let nb = soft_threshold(g, l1[j]) / (xv[j] + l2);
                let delta = nb - bj;
                if delta != 0.0 {
                    state.beta[j] = nb;
                    for (ri, x) in r.iter_mut().zip(col) {
                        *ri -= delta * x;
                    }
                    max_move = max_move.max(delta.abs() * xv[j].sqrt());
                }
            }
            max_move
        };

        let all: Vec<usize> = (0..p).filter(|&j| !excluded[j]).collect();
        let inner_tol = opts.tol * 0.1;
        let mut wg: Option<WeightedGram> = None;
        loop {
            let m = sweep(&all, state, &mut r);
            sweeps += 1;
            if m < inner_tol || sweeps >= opts.max_sweeps {
                break;
            }
            let active: Vec<usize> = (0..p).filter(|&j| state.beta[j] != 0.0).collect();
            if !active.is_empty() {
                let wg = wg.get_or_insert_with(|| WeightedGram::new(design, &w, &z));
                if active_set_step(design, wg, &z, &l1, l2, &active, state, &mut r) {
                    continue;
                }
            }
            for _ in 0..ACTIVE_SWEEPS {
                let m = sweep(&active, state, &mut r);
                sweeps += 1;
                if m < inner_tol || sweeps >= opts.max_sweeps {
                    break;
                }
            }
        }

        // recover eta = z - r from the working response
        eta = design.linear_predictor(state.b0, &state.beta);
        let mut new_obj = nll(&eta, y) + penalty.value(&state.beta);
        let mut halvings = 0;
        while !(new_obj <= obj + 1e-12 * obj.abs().max(1.0)) && halvings < 30 {
            state.b0 = 0.5 * (state.b0 + old.b0);
            for (b, o) in state.beta.iter_mut().zip(&old.beta) {
                *b = 0.5 * (*b + o);
            }
            eta = design.linear_predictor(state.b0, &state.beta);
            new_obj = nll(&eta, y) + penalty.value(&state.beta);
            halvings += 1;
        }
        obj = new_obj;

        let norm = state.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return CdOutcome {
                converged: false,
                iterations: outer,
                objective: obj,
            };
        }
        let moved = state
            .beta
            .iter()
            .zip(&old.beta)
            .fold((state.b0 - old.b0).abs(), |m, (a, b)| m.max((a - b).abs()));
        if moved < opts.tol {
            return CdOutcome {
                converged: sweeps < opts.max_sweeps,
                iterations: outer,
                objective: obj,
            };
        }
        if sweeps >= opts.max_sweeps {
            break;
        }
    }
    CdOutcome {
        converged: false,
        iterations: opts.max_outer,
        objective: obj,
    }
}

/// Smallest `lambda` at which every penalized coefficient is zero, on the
/// standardized scale. `alpha = 0` uses a small surrogate mixing value.
pub(crate) fn lambda_max_std(design: &StdDesign, y: &[f64], alpha: f64, weights: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let a = alpha.max(RIDGE_ALPHA_SURROGATE);
    let mut best: Option<f64> = None;
    for (j, col) in design.cols.iter().enumerate() {
        let wj = weights[j];
        if design.constant[j] || !wj.is_finite() || wj <= 0.0 {
            continue;
        }
        let g = col.iter().zip(y).map(|(x, yi)| x * (yi - ybar)).sum::<f64>() / n;
        let v = g.abs() / (a * wj);
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    }
    match best {
        None => Err(domain("no penalized variable: all weights infinite or zero")),
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(_) => Err(domain("lambda_max is zero (degenerate outcome or covariates)")),
    }
}

pub(crate) fn lambda_path_std(
    design: &StdDesign,
    y: &[f64],
    alpha: f64,
    weights: &[f64],
    n_lambda: usize,
    min_ratio: f64,
) -> Result<Vec<f64>> {
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(domain(format!("min_ratio must lie in (0, 1), got {min_ratio}")));
    }
    if n_lambda < 2 {
        return Err(domain("n_lambda must be at least 2"));
    }
    let lmax = lambda_max_std(design, y, alpha, weights)?;
    let step = min_ratio.ln() / (n_lambda - 1) as f64;
    Ok((0..n_lambda).map(|k| lmax * (step * k as f64).exp()).collect())
}

pub fn lambda_max(x: ArrayView2<'_, f64>, y: &[f64], alpha: f64, weights: &[f64]) -> Result<f64> {
    check_dims(x, y, weights)?;
    lambda_max_std(&StdDesign::new(x), y, alpha, weights)
}

/// Log-spaced decreasing path from `lambda_max` to `lambda_max * min_ratio`.
pub fn make_lambda_path(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    alpha: f64,
    weights: &[f64],
    n_lambda: usize,
    min_ratio: f64,
) -> Result<Vec<f64>> {
    check_dims(x, y, weights)?;
    lambda_path_std(&StdDesign::new(x), y, alpha, weights, n_lambda, min_ratio)
}

fn check_dims(x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64]) -> Result<()> {
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
    Ok(())
}

pub fn fit_weighted_elastic_net(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    penalty: &PenaltySpec,
    opts: &EnetOptions,
) -> Result<FittedModel> {
    check_dims(x, y, &penalty.weights)?;
    penalty.validate(x.ncols())?;
    let design = StdDesign::new(x);
    Ok(fit_std(&design, y, penalty, opts))
}

pub(crate) fn fit_std(design: &StdDesign, y: &[f64], penalty: &PenaltySpec, opts: &EnetOptions) -> FittedModel {
    let mut state = CdState::null(y, design.p());
    let out = cd_solve(
        design,
        y,
        penalty.lambda,
        penalty.alpha,
        &penalty.weights,
        &mut state,
        opts,
    );
    FittedModel::from_std(
        design,
        state.b0,
        &state.beta,
        penalty.clone(),
        out.converged,
        out.iterations,
        out.objective,
    )
}

/// Recomputes a fitted model's penalized objective on `(x, y)` using the
/// model's own standardization.
pub fn penalized_objective(x: ArrayView2<'_, f64>, y: &[f64], model: &FittedModel) -> f64 {
    let design = StdDesign::new(x);
    let state = CdState {
        b0: model.std_intercept,
        beta: model.std_coefficients.clone(),
    };
    objective_std(&design, y, &state, &model.penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    }
}
