//! WebAssembly bindings for the static demo page in `www/`.

use fresco_core::denoise::{PredictionKind, TargetDriver};
use fresco_core::sampler::TilingConfig;
use fresco_core::schedules::{PriorScheduleConfig, SigmaSchedule};
use fresco_core::tiles::plan_tiles;
use fresco_core::{FusionMode, LatentTensor, Sampler, SamplerConfig, Shape};
use wasm_bindgen::prelude::*;

pub const DEMO_HEIGHT: usize = 48;
pub const DEMO_WIDTH: usize = 80;
const DEMO_WINDOW: (usize, usize) = (24, 32);

/// Tile rectangles flattened as `[row, col, height, width, ...]`.
pub fn tile_rects(h: usize, w: usize, win_h: usize, win_w: usize, overlap: f64) -> Result<Vec<u32>, String> {
    let plan = plan_tiles(h, w, win_h, win_w, overlap).map_err(|e| e.to_string())?;
    Ok(plan
        .tiles
        .iter()
        .flat_map(|r| [r.row, r.col, r.height, r.width])
        .map(|v| v as u32)
        .collect())
}

/// Number of windows covering each canvas cell, row-major.
pub fn coverage(h: usize, w: usize, win_h: usize, win_w: usize, overlap: f64) -> Result<Vec<u32>, String> {
    Ok(plan_tiles(h, w, win_h, win_w, overlap)
        .map_err(|e| e.to_string())?
        .coverage_counts())
}

/// Global prior strength at every sampled step.
pub fn lambda_curve(steps: usize, lambda_base: f64, tau: f64) -> Result<Vec<f64>, String> {
    let sig = SigmaSchedule::linear(steps).map_err(|e| e.to_string())?;
    let cfg = PriorScheduleConfig {
        lambda_base,
        tau,
        ..PriorScheduleConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((0..sig.num_steps()).map(|i| cfg.lambda_at(sig.t(i))).collect())
}

/// Fine texture the denoiser steers each tile towards.
pub fn demo_target() -> LatentTensor {
    LatentTensor::from_fn(Shape::new(1, 1, DEMO_HEIGHT, DEMO_WIDTH), |_, _, i, j| {
        let (y, x) = (i as f32, j as f32);
        (0.9 * (x * 0.45).sin() * (y * 0.35).cos() + 0.3 * ((x + y) * 0.9).sin()).clamp(-1.0, 1.0)
    })
}

/// Smooth global layout acting as the prior.
pub fn demo_prior() -> LatentTensor {
    LatentTensor::from_fn(Shape::new(1, 1, DEMO_HEIGHT, DEMO_WIDTH), |_, _, i, j| {
        let (dy, dx) = (i as f32 / DEMO_HEIGHT as f32 - 0.5, j as f32 / DEMO_WIDTH as f32 - 0.4);
        0.9 - 3.2 * (dx * dx + dy * dy).sqrt()
    })
}

/// Runs the tiled sampler on the demo canvas and returns the final latent.
pub fn sample(lambda_base: f64, tau: f64, steps: usize, seed: u64) -> Result<LatentTensor, String> {
    let shape = Shape::new(1, 1, DEMO_HEIGHT, DEMO_WIDTH);
    let mut cfg = SamplerConfig::new(steps).map_err(|e| e.to_string())?;
    cfg.mode = FusionMode::Fd;
    cfg.seed = seed;
    cfg.tiling = TilingConfig {
        window_h: DEMO_WINDOW.0,
        window_w: DEMO_WINDOW.1,
        ..TilingConfig::default()
    };
    cfg.prior.lambda_base = lambda_base;
    cfg.prior.tau = tau;
    let sampler = Sampler::new(cfg, shape, None).map_err(|e| e.to_string())?;
    let driver = TargetDriver::new(demo_target(), PredictionKind::Flow);
    sampler
        .run(&sampler.initial_noise(), Some(&demo_prior()), &driver)
        .map(|(x, _)| x)
        .map_err(|e| e.to_string())
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = tileRects)]
pub fn tile_rects_js(h: usize, w: usize, win_h: usize, win_w: usize, overlap: f64) -> Result<Vec<u32>, JsError> {
    tile_rects(h, w, win_h, win_w, overlap).map_err(js)
}

#[wasm_bindgen(js_name = coverage)]
pub fn coverage_js(h: usize, w: usize, win_h: usize, win_w: usize, overlap: f64) -> Result<Vec<u32>, JsError> {
    coverage(h, w, win_h, win_w, overlap).map_err(js)
}

#[wasm_bindgen(js_name = lambdaCurve)]
pub fn lambda_curve_js(steps: usize, lambda_base: f64, tau: f64) -> Result<Vec<f64>, JsError> {
    lambda_curve(steps, lambda_base, tau).map_err(js)
}

#[wasm_bindgen(js_name = demoSize)]
pub fn demo_size() -> Vec<u32> {
    vec![DEMO_HEIGHT as u32, DEMO_WIDTH as u32, DEMO_WINDOW.0 as u32, DEMO_WINDOW.1 as u32]
}

#[wasm_bindgen(js_name = demoPrior)]
pub fn demo_prior_js() -> Vec<f32> {
    demo_prior().into_vec()
}

#[wasm_bindgen(js_name = sample)]
pub fn sample_js(lambda_base: f64, tau: f64, steps: usize, seed: u32) -> Result<Vec<f32>, JsError> {
    sample(lambda_base, tau, steps, seed as u64).map(LatentTensor::into_vec).map_err(js)
}
