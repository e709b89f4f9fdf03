//! Browser bindings. Each export returns a JSON string for the page to plot;
//! the `*_json` functions hold the logic so they can be tested natively.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use scorth::coupling::{build_seeding_spec, SeedingParams};
use scorth::phase::{scan_curve, GridOptions};
use scorth::{mmse, run_evolution, BernoulliGaussianPrior, CouplingSpec, EnsembleKind, EvolutionOptions, Result};

/// Keeps a single click from freezing the tab.
const MAX_ITER_CAP: usize = 20_000;

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn mmse_curve_json(rho: f64, lo: f64, hi: f64, points: usize) -> Result<Value> {
    if !(lo > 0.0 && hi > lo) {
        return Err(scorth::Error::InvalidInput {
            field: "range".into(),
            reason: "need 0 < lo < hi".into(),
        });
    }
    let prior = BernoulliGaussianPrior::new(rho)?;
    let grid = log_grid(lo, hi, points);
    let values = grid.iter().map(|s| mmse(*s, prior)).collect::<Result<Vec<_>>>()?;
    Ok(json!({ "varsigma": grid, "mmse": values }))
}

pub fn free_entropy_curve_json(rho: f64, sigma2: f64, alpha: f64, ensemble: &str, points: usize) -> Result<Value> {
    let kind: EnsembleKind = ensemble.parse()?;
    let template = CouplingSpec::uncoupled(alpha, sigma2, BernoulliGaussianPrior::new(rho)?)?;
    let grid = GridOptions { points, floor: None };
    let curve = scan_curve(&template, alpha, kind, &grid, 1e-10)?;
    Ok(json!({
        "eps": curve.eps_grid,
        "F": curve.values,
        "maxima": curve.maxima,
        "minima": curve.minima,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn evolve_seeded_json(
    blocks: usize,
    width: usize,
    alpha_seed: f64,
    alpha_bulk: f64,
    j: f64,
    sigma2: f64,
    rho: f64,
    ensemble: &str,
    max_iter: usize,
) -> Result<Value> {
    let kind: EnsembleKind = ensemble.parse()?;
    let params = SeedingParams {
        blocks,
        width,
        alpha_seed,
        alpha_bulk,
        j,
        sigma2,
        rho,
    };
    let spec = build_seeding_spec(&params)?;
    let opts = EvolutionOptions {
        max_iter: max_iter.clamp(1, MAX_ITER_CAP),
        ..Default::default()
    };
    let trace = run_evolution(&spec, kind, &opts)?;
    Ok(json!({
        "history": trace.history,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "first_below_10_sigma2": trace.first_below(10.0 * sigma2),
        "overall_alpha": spec.overall_rate(),
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

/// `{varsigma: [...], mmse: [...]}` on a log grid.
#[wasm_bindgen]
pub fn mmse_curve(rho: f64, lo: f64, hi: f64, points: usize) -> std::result::Result<String, JsError> {
    to_js(mmse_curve_json(rho, lo, hi, points))
}

/// `{eps, F, maxima, minima}` for a single uncoupled block.
#[wasm_bindgen]
pub fn free_entropy_curve(
    rho: f64,
    sigma2: f64,
    alpha: f64,
    ensemble: &str,
    points: usize,
) -> std::result::Result<String, JsError> {
    to_js(free_entropy_curve_json(rho, sigma2, alpha, ensemble, points))
}

/// Per-block MSE trajectories of a seeding chain.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn evolve_seeded(
    blocks: usize,
    width: usize,
    alpha_seed: f64,
    alpha_bulk: f64,
    j: f64,
    sigma2: f64,
    rho: f64,
    ensemble: &str,
    max_iter: usize,
) -> std::result::Result<String, JsError> {
    to_js(evolve_seeded_json(
        blocks, width, alpha_seed, alpha_bulk, j, sigma2, rho, ensemble, max_iter,
    ))
}
