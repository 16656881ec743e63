//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers or comma-separated lists and returns a
//! JSON string. The same computations are available natively through
//! [`demo`], which is what the tests call.

use wasm_bindgen::prelude::*;

pub mod demo;

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Factorial grid with the kept and the excluded cells.
#[wasm_bindgen]
pub fn explore_grid(
    sample_sizes: &str,
    epv_values: &str,
    correlations: &str,
    prevalences: &str,
    p_min: usize,
    p_max: usize,
) -> Result<String, JsError> {
    to_js(demo::explore_grid(sample_sizes, epv_values, correlations, prevalences, p_min, p_max))
}

/// GLM, elastic net and AINET fitted to one simulated training set.
#[wasm_bindgen]
pub fn compare_fits(n: usize, epv: f64, rho: f64, prev: f64, seed: u64, tweak: bool) -> Result<String, JsError> {
    to_js(demo::compare_fits(n, epv, rho, prev, seed, tweak))
}

/// Optional stopping on a split-test null difference.
#[wasm_bindgen]
pub fn stopping_trace(
    n: usize,
    epv: f64,
    rho: f64,
    prev: f64,
    seed: u64,
    step: usize,
    max_b: usize,
) -> Result<String, JsError> {
    to_js(demo::stopping_trace(n, epv, rho, prev, seed, step, max_b))
}
