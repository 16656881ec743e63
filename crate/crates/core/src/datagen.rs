//! Scenario grid and the data-generating process.
//!
//! Covariates are equi-correlated standard normals, outcomes are Bernoulli with
//! a logistic link. The optional [`TweakConfig`] switches on sparsity and a
//! centered quadratic effect.

use std::fmt;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::math::{expit, logit, snapped_ceil};
use crate::rng::RngStream;

/// Probabilities are kept this far away from 0 and 1 so that the oracle
/// predictor always has finite log-odds.
pub const PROB_FLOOR: f64 = 1e-15;

/// Factorial simulation design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridDesign {
    pub sample_sizes: Vec<usize>,
    pub epv_values: Vec<f64>,
    pub correlations: Vec<f64>,
    pub prevalences: Vec<f64>,
    pub p_min: usize,
    pub p_max: usize,
    pub n_test: usize,
}

impl Default for GridDesign {
    fn default() -> Self {
        GridDesign {
            sample_sizes: vec![100, 500, 1000, 5000],
            epv_values: vec![20.0, 10.0, 1.0, 0.5],
            correlations: vec![0.0, 0.3, 0.6, 0.95],
            prevalences: vec![0.01, 0.05, 0.1],
            p_min: 2,
            p_max: 100,
            n_test: 10_000,
        }
    }
}

impl GridDesign {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            errs.push("grid.sample_sizes must be non-empty positive integers".to_string());
        }
        if self.epv_values.is_empty() || self.epv_values.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            errs.push("grid.epv_values must be non-empty positive numbers".to_string());
        }
        if self.correlations.is_empty() || self.correlations.iter().any(|r| !(0.0..1.0).contains(r)) {
            errs.push("grid.correlations must be non-empty values in [0, 1)".to_string());
        }
        if self.prevalences.is_empty() || self.prevalences.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            errs.push("grid.prevalences must be non-empty values in (0, 1)".to_string());
        }
        if self.p_min < 1 || self.p_max < self.p_min {
            errs.push("grid requires 1 <= p_min <= p_max".to_string());
        }
        if self.n_test == 0 {
            errs.push("grid.n_test must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Protocol(errs))
        }
    }
}

/// Dimension implied by `n * prev / epv`, rounded up.
pub fn implied_dimension(n: usize, epv: f64, prev: f64) -> usize {
    snapped_ceil(n as f64 * prev / epv) as usize
}

/// One cell of the factorial design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub n: usize,
    pub epv: f64,
    pub rho: f64,
    pub prev: f64,
    pub beta0: f64,
    pub p: usize,
}

impl ScenarioSpec {
    /// Builds the scenario without applying the grid's dimension limits.
    pub fn new(n: usize, epv: f64, rho: f64, prev: f64) -> Result<Self> {
        if n == 0 || !(epv > 0.0) || !(0.0..1.0).contains(&rho) || !(prev > 0.0 && prev < 1.0) {
            return Err(domain(format!(
                "invalid scenario parameters n={n} epv={epv} rho={rho} prev={prev}"
            )));
        }
        let p = implied_dimension(n, epv, prev);
        if p == 0 {
            return Err(domain("scenario implies zero covariates"));
        }
        Ok(ScenarioSpec {
            scenario_id: scenario_id(n, epv, rho, prev),
            n,
            epv,
            rho,
            prev,
            beta0: logit(prev),
            p,
        })
    }

    /// Recovers the scenario from its id.
    pub fn from_id(id: &str) -> Result<Self> {
        let bad = || domain(format!("malformed scenario id `{id}`"));
        let mut n = None;
        let mut epv = None;
        let mut rho = None;
        let mut prev = None;
        for part in id.split('_') {
            if let Some(v) = part.strip_prefix("epv") {
                epv = v.parse::<f64>().ok();
            } else if let Some(v) = part.strip_prefix("rho") {
                rho = v.parse::<f64>().ok();
            } else if let Some(v) = part.strip_prefix("prev") {
                prev = v.parse::<f64>().ok();
            } else if let Some(v) = part.strip_prefix('n') {
                n = v.parse::<usize>().ok();
            } else {
                return Err(bad());
            }
        }
        match (n, epv, rho, prev) {
            (Some(n), Some(e), Some(r), Some(p)) => ScenarioSpec::new(n, e, r, p),
            _ => Err(bad()),
        }
    }

    /// Short label used in plots, e.g. `n = 500, EPV = 10`.
    pub fn label(&self) -> String {
        format!("n = {}, EPV = {}", self.n, self.epv)
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (p = {})", self.scenario_id, self.p)
    }
}

/// Stable key; the zero-padded sample size makes lexical order follow `n`.
pub fn scenario_id(n: usize, epv: f64, rho: f64, prev: f64) -> String {
    format!("n{n:05}_epv{epv}_rho{rho}_prev{prev}")
}

pub fn build_scenario_grid(design: &GridDesign) -> Result<Vec<ScenarioSpec>> {
    design.validate()?;
    let mut out = Vec::new();
    for &n in &design.sample_sizes {
        for &epv in &design.epv_values {
            for &rho in &design.correlations {
                for &prev in &design.prevalences {
                    let p = implied_dimension(n, epv, prev);
                    if p < design.p_min || p > design.p_max {
                        continue;
                    }
                    out.push(ScenarioSpec::new(n, epv, rho, prev)?);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDesign);
    }
    out.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    out.dedup_by(|a, b| a.scenario_id == b.scenario_id);
    Ok(out)
}

/// Sparsity / non-linearity modification of the data-generating process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TweakConfig {
    pub sparsity: f64,
    pub nonlinear: bool,
    #[serde(default = "default_scale")]
    pub nonlinear_scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl TweakConfig {
    /// Sparse signal (10% active) plus a unit-scale quadratic effect.
    pub const CANONICAL: TweakConfig = TweakConfig {
        sparsity: 0.1,
        nonlinear: true,
        nonlinear_scale: 1.0,
    };

    pub const NOOP: TweakConfig = TweakConfig {
        sparsity: 1.0,
        nonlinear: false,
        nonlinear_scale: 1.0,
    };
}

pub fn tweak_dgp(tweak: TweakConfig) -> Result<TweakConfig> {
    if !(tweak.sparsity > 0.0 && tweak.sparsity <= 1.0) {
        return Err(domain(format!(
            "tweak sparsity must lie in (0, 1], got {}",
            tweak.sparsity
        )));
    }
    if !tweak.nonlinear_scale.is_finite() {
        return Err(domain("tweak nonlinear_scale must be finite"));
    }
    Ok(tweak)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerm {
    pub index: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub beta: Vec<f64>,
    pub beta0: f64,
    pub active_mask: Vec<bool>,
    pub nonlinear_term: Option<QuadraticTerm>,
}

impl CoefficientSet {
    /// True linear predictor of one covariate row.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        let mut eta = self.beta0 + x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>();
        if let Some(q) = self.nonlinear_term {
            let v = x[q.index];
            eta += q.scale * (v * v - 1.0);
        }
        eta
    }

    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|a| **a).count()
    }
}

pub fn sample_coefficients(
    stream: &RngStream,
    scenario: &ScenarioSpec,
    tweak: Option<&TweakConfig>,
) -> Result<CoefficientSet> {
    let p = scenario.p;
    let mut rng = stream.rng();
    let mut beta: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let mut active_mask = vec![true; p];
    let mut nonlinear_term = None;
    if let Some(t) = tweak {
        let t = tweak_dgp(*t)?;
        let k = ((t.sparsity * p as f64).round() as usize).clamp(1, p);
        if k < p {
            active_mask = vec![false; p];
            for j in index::sample(&mut rng, p, k) {
                active_mask[j] = true;
            }
            for (b, a) in beta.iter_mut().zip(&active_mask) {
                if !a {
                    *b = 0.0;
                }
            }
        }
        if t.nonlinear {
            let first = active_mask.iter().position(|a| *a).unwrap_or(0);
            nonlinear_term = Some(QuadraticTerm {
                index: first,
                scale: t.nonlinear_scale,
            });
        }
    }
    Ok(CoefficientSet {
        beta,
        beta0: scenario.beta0,
        active_mask,
        nonlinear_term,
    })
}

/// `rows x p` matrix with unit variances and common correlation `rho >= 0`,
/// drawn as `sqrt(rho) * shared + sqrt(1 - rho) * own`.
pub fn sample_equicorrelated_normal(
    stream: &RngStream,
    rows: usize,
    p: usize,
    rho: f64,
) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(domain(format!("correlation must lie in [0, 1), got {rho}")));
    }
    if rows == 0 || p == 0 {
        return Err(domain("rows and p must be positive"));
    }
    let mut rng = stream.rng();
    let a = rho.sqrt();
    let b = (1.0 - rho).sqrt();
    let mut x = Array2::<f64>::zeros((rows, p));
    for mut row in x.rows_mut() {
        let shared: f64 = rng.sample(StandardNormal);
        for v in row.iter_mut() {
            let own: f64 = rng.sample(StandardNormal);
            *v = a * shared + b * own;
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub oracle_prob: Vec<f64>,
    pub role: Role,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn prevalence(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }
}

pub fn generate_dataset(
    scenario: &ScenarioSpec,
    coefs: &CoefficientSet,
    stream: &RngStream,
    rows: usize,
    role: Role,
) -> Result<Dataset> {
    if coefs.beta.len() != scenario.p {
        return Err(Error::Dimension {
            expected: scenario.p,
            got: coefs.beta.len(),
        });
    }
    let x = sample_equicorrelated_normal(&stream.child(0), rows, scenario.p, scenario.rho)?;
    let mut rng = stream.child(1).rng();
    let mut y = Vec::with_capacity(rows);
    let mut oracle_prob = Vec::with_capacity(rows);
    for row in x.rows() {
        let eta = coefs.linear_predictor(row.as_slice().expect("row-major"));
        let prob = expit(eta).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let u: f64 = rng.random();
        y.push(if u < prob { 1.0 } else { 0.0 });
        oracle_prob.push(prob);
    }
    Ok(Dataset {
        x,
        y,
        oracle_prob,
        role,
    })
}
