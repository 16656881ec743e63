//! The demo computations, returning JSON strings.

use qrpsim::datagen::{build_scenario_grid, implied_dimension, GridDesign, ScenarioSpec, TweakConfig};
use qrpsim::engine::replication_data;
use qrpsim::forest::{fit_random_forest, gini_importance};
use qrpsim::metrics::brier;
use qrpsim::models::{ainet_weights_from_importance, fit_method, predict_proba, MethodId};
use qrpsim::protocol::StudyProtocol;
use qrpsim::qrp::{optional_stopping_trace, StoppingObjective};
use qrpsim::records::{Estimand, Measure};
use serde::Serialize;

/// Upper bounds that keep a browser tab responsive.
pub const MAX_TRAIN: usize = 2000;
pub const MAX_STOPPING_B: usize = 400;

const TEST_ROWS: usize = 2000;

fn list<T: std::str::FromStr>(name: &str, text: &str) -> Result<Vec<T>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| format!("{name}: cannot parse `{t}`")))
        .collect()
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Cell {
    id: String,
    n: usize,
    epv: f64,
    rho: f64,
    prev: f64,
    p: usize,
}

#[derive(Serialize)]
struct Excluded {
    n: usize,
    epv: f64,
    rho: f64,
    prev: f64,
    p: usize,
    reason: String,
}

#[derive(Serialize)]
struct GridView {
    count: usize,
    kept: Vec<Cell>,
    excluded: Vec<Excluded>,
}

pub fn explore_grid(
    sample_sizes: &str,
    epv_values: &str,
    correlations: &str,
    prevalences: &str,
    p_min: usize,
    p_max: usize,
) -> Result<String, String> {
    let design = GridDesign {
        sample_sizes: list("sample sizes", sample_sizes)?,
        epv_values: list("EPV values", epv_values)?,
        correlations: list("correlations", correlations)?,
        prevalences: list("prevalences", prevalences)?,
        p_min,
        p_max,
        ..GridDesign::default()
    };
    design.validate().map_err(|e| e.to_string())?;
    let kept: Vec<Cell> = match build_scenario_grid(&design) {
        Ok(grid) => grid
            .into_iter()
            .map(|s| Cell {
                id: s.scenario_id.clone(),
                n: s.n,
                epv: s.epv,
                rho: s.rho,
                prev: s.prev,
                p: s.p,
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    let mut excluded = Vec::new();
    for &n in &design.sample_sizes {
        for &epv in &design.epv_values {
            for &rho in &design.correlations {
                for &prev in &design.prevalences {
                    let p = implied_dimension(n, epv, prev);
                    let reason = if p < p_min {
                        format!("p = {p} < {p_min}")
                    } else if p > p_max {
                        format!("p = {p} > {p_max}")
                    } else {
                        continue;
                    };
                    excluded.push(Excluded { n, epv, rho, prev, p, reason });
                }
            }
        }
    }
    json(&GridView {
        count: kept.len(),
        kept,
        excluded,
    })
}

#[derive(Serialize)]
struct MethodFit {
    method: String,
    intercept: Option<f64>,
    coefficients: Vec<f64>,
    test_brier: f64,
}

#[derive(Serialize)]
struct FitView {
    scenario: String,
    p: usize,
    true_beta: Vec<f64>,
    importance: Vec<f64>,
    ainet_weights: Vec<f64>,
    oracle_brier: f64,
    fits: Vec<MethodFit>,
}

fn scenario(n: usize, epv: f64, rho: f64, prev: f64) -> Result<ScenarioSpec, String> {
    if n > MAX_TRAIN {
        return Err(format!("n is limited to {MAX_TRAIN} in the browser"));
    }
    let s = ScenarioSpec::new(n, epv, rho, prev).map_err(|e| e.to_string())?;
    if s.p < 2 || s.p > 100 {
        return Err(format!("this cell implies p = {}, outside 2..=100", s.p));
    }
    Ok(s)
}

fn light_protocol(seed: u64, n_test: usize) -> StudyProtocol {
    let mut p = StudyProtocol::default();
    p.seed = seed;
    p.grid.n_test = n_test;
    p.methods.n_lambda = 40;
    p.methods.forest.n_trees = 200;
    p
}

pub fn compare_fits(n: usize, epv: f64, rho: f64, prev: f64, seed: u64, tweak: bool) -> Result<String, String> {
    let s = scenario(n, epv, rho, prev)?;
    let mut protocol = light_protocol(seed, TEST_ROWS);
    if tweak {
        protocol.tweak = Some(TweakConfig::CANONICAL);
    }
    let data = replication_data(&s, &protocol, 0).map_err(|e| e.to_string())?;
    let config = protocol.methods.config();

    let forest = fit_random_forest(data.train.x.view(), &data.train.y, &data.streams.forest, &config.forest)
        .map_err(|e| e.to_string())?;
    let importance = gini_importance(&forest).clamped;
    let ainet_weights = ainet_weights_from_importance(&importance, config.gamma);

    let mut fits = Vec::new();
    for method in [MethodId::Glm, MethodId::En, MethodId::Ainet] {
        let fitted = fit_method(method, &data.train, &data.streams, &config)
            .map_err(|e| format!("{}: {e}", method.as_str()))?;
        let probs = predict_proba(&fitted, data.test.x.view()).map_err(|e| e.to_string())?;
        let model = fitted.linear_model();
        fits.push(MethodFit {
            method: method.as_str().to_string(),
            intercept: model.map(|m| m.intercept),
            coefficients: model.map(|m| m.coefficients.clone()).unwrap_or_default(),
            test_brier: brier(&data.test.y, &probs).map_err(|e| e.to_string())?,
        });
    }
    json(&FitView {
        scenario: s.scenario_id.clone(),
        p: s.p,
        true_beta: data.coefficients.beta.clone(),
        importance,
        // infinite weights are not valid JSON
        ainet_weights: ainet_weights.iter().map(|w| w.min(f64::MAX)).collect(),
        oracle_brier: brier(&data.test.y, &data.test.oracle_prob).map_err(|e| e.to_string())?,
        fits,
    })
}

pub fn stopping_trace(
    n: usize,
    epv: f64,
    rho: f64,
    prev: f64,
    seed: u64,
    step: usize,
    max_b: usize,
) -> Result<String, String> {
    if max_b > MAX_STOPPING_B {
        return Err(format!("max B is limited to {MAX_STOPPING_B} in the browser"));
    }
    let s = scenario(n, epv, rho, prev)?;
    let mut protocol = light_protocol(seed, 400);
    protocol.methods.roster = vec![MethodId::Glm];
    let objective = StoppingObjective::SplitTestNull {
        measure: Measure::raw(Estimand::Brier),
        method: MethodId::Glm,
    };
    let trace = optional_stopping_trace(&s, &protocol, step, max_b, &objective).map_err(|e| e.to_string())?;
    json(&trace)
}
