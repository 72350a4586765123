//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fresco_core::blending::{ramp_weight_map_2d, WeightMap};
use fresco_core::denoise::external::ExternalDenoiser;
use fresco_core::denoise::{Denoiser, DenoiserRequest, GaussianAnalytic, PredictionKind, TargetDriver};
use fresco_core::metrics::{
    area_resize, seam_energy, temporal_consistency, tenengrad, Frame, SobelBorder, TEMPORAL_DIVISOR,
};
use fresco_core::sampler::{alpha_bar, prior_mse_split, TilingConfig};
use fresco_core::schedules::{lambda_global, ActivityMap, PriorMode, PriorScheduleConfig, SigmaSchedule};
use fresco_core::tiles::{plan_tiles, plan_tiles_px};
use fresco_core::{DenoiseError, Error, FusionAccumulator, FusionMode, Lambda, LatentTensor, Rect, Sampler, SamplerConfig, Shape};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRESCO: &str = env!("CARGO_BIN_EXE_fresco");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- fusion

const LAMBDAS: [f32; 4] = [0.0, 0.5, 1.5, 5.0];
const SIGMAS: [f64; 3] = [0.2, 0.5, 1.0];

struct Instance {
    shape: Shape,
    tiles: Vec<(Rect, LatentTensor, WeightMap)>,
    x: LatentTensor,
    prior: LatentTensor,
    lambda: Lambda,
    /// λ for each element, for the oracle.
    lambda_at: Vec<f64>,
    sigma: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> LatentTensor {
    LatentTensor::from_fn(shape, |_, _, _, _| rng.random_range(-2.0f32..2.0))
}

fn random_instance(rng: &mut ChaCha8Rng, force_zero: bool) -> Instance {
    loop {
        let shape = Shape::new(
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let plan = plan_tiles(
            shape.h,
            shape.w,
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(0.0..0.8),
        )
        .unwrap();
        if plan.len() > 5 {
            continue;
        }
        let w_min = rng.random_range(0.05f32..=1.0);
        let tiles = plan
            .tiles
            .iter()
            .map(|&r| {
                let s = Shape::new(shape.c, shape.t, r.height, r.width);
                let wm = ramp_weight_map_2d(r.height, r.width, rng.random_range(0..4), rng.random_range(0..4), w_min)
                    .unwrap();
                (r, random_tensor(rng, s), wm)
            })
            .collect();
        let plane = shape.h * shape.w;
        let (lambda, lambda_at) = if force_zero {
            (Lambda::Scalar(0.0), vec![0.0; shape.len()])
        } else if rng.random_bool(0.5) {
            let l = *LAMBDAS.choose(rng).unwrap();
            (Lambda::Scalar(l), vec![l as f64; shape.len()])
        } else {
            let values: Vec<f32> = (0..plane).map(|_| *LAMBDAS.choose(rng).unwrap()).collect();
            let at = (0..shape.len()).map(|k| values[k % plane] as f64).collect();
            (Lambda::plane(shape.h, shape.w, values).unwrap(), at)
        };
        return Instance {
            shape,
            tiles,
            x: random_tensor(rng, shape),
            prior: random_tensor(rng, shape),
            lambda,
            lambda_at,
            sigma: *SIGMAS.choose(rng).unwrap(),
        };
    }
}

/// Per-element objective, evaluated directly from the definition. `clean`
/// maps a candidate prediction to its clean estimate.
fn element_loss(inst: &Instance, k: usize, y: f64, clean: impl Fn(f64, f64) -> f64) -> f64 {
    let s = inst.shape;
    let (c, t, i, j) = (k / (s.t * s.h * s.w), (k / (s.h * s.w)) % s.t, (k / s.w) % s.h, k % s.w);
    let mut loss = 0.0;
    for (r, pred, w) in &inst.tiles {
        if r.contains(i, j) {
            let (li, lj) = (i - r.row, j - r.col);
            let d = y - pred.get(c, t, li, lj) as f64;
            loss += w.get(li, lj) as f64 * d * d;
        }
    }
    let e = clean(inst.x.data()[k] as f64, y) - inst.prior.data()[k] as f64;
    loss + inst.lambda_at[k] * e * e
}

/// Minimizer of a 1-D quadratic from three samples.
fn parabola_min(f: impl Fn(f64) -> f64) -> f64 {
    let (m, z, p) = (f(-1.0), f(0.0), f(1.0));
    let a = (p + m - 2.0 * z) / 2.0;
    let b = (p - m) / 2.0;
    -b / (2.0 * a)
}

fn accumulate(inst: &Instance) -> FusionAccumulator {
    let mut acc = FusionAccumulator::new(inst.shape);
    for (r, p, w) in &inst.tiles {
        acc.accumulate(p, *r, w).unwrap();
    }
    acc
}

fn rel_err(got: f32, want: f64) -> f64 {
    (got as f64 - want).abs() / want.abs().max(1e-6)
}

fn c1_fusion_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF05E);
    let (mut worst_flow, mut worst_eps) = (0.0f64, 0.0f64);
    let mut errors = 0;
    let n = 1200;
    for _ in 0..n {
        let inst = random_instance(&mut rng, false);
        let acc = accumulate(&inst);
        let sigma = inst.sigma;
        let alpha = alpha_bar(sigma);
        let flow = acc.fuse_fd_flow(&inst.x, &inst.prior, &inst.lambda, sigma);
        let eps = acc.fuse_fd_eps(&inst.x, &inst.prior, &inst.lambda, alpha);
        let (Ok(flow), Ok(eps)) = (flow, eps) else {
            errors += 1;
            continue;
        };
        let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
        for k in 0..inst.shape.len() {
            let yf = parabola_min(|y| element_loss(&inst, k, y, |x, y| x - sigma * y));
            let ye = parabola_min(|y| element_loss(&inst, k, y, |x, y| (x - b * y) / a));
            worst_flow = worst_flow.max(rel_err(flow.data()[k], yf));
            worst_eps = worst_eps.max(rel_err(eps.data()[k], ye));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        errors == 0 && worst_flow <= 1e-5 && worst_eps <= 1e-5 && secs <= 30.0,
        format!(
            "{n} instances, max rel err flow {worst_flow:.2e} eps {worst_eps:.2e} (tol 1e-5), {errors} errors, {secs:.2} s (limit 30 s)"
        ),
    )
}

fn c2_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF05E);
    let mut worst = 0.0f64;
    for _ in 0..1200 {
        let mut inst = random_instance(&mut rng, true);
        inst.lambda = Lambda::Scalar(0.0);
        let acc = accumulate(&inst);
        let md = acc.fuse_md().unwrap();
        let flow = acc.fuse_fd_flow(&inst.x, &inst.prior, &inst.lambda, inst.sigma).unwrap();
        let eps = acc.fuse_fd_eps(&inst.x, &inst.prior, &inst.lambda, alpha_bar(inst.sigma)).unwrap();
        for k in 0..inst.shape.len() {
            // weighted tile average from the definition
            let want = parabola_min(|y| element_loss(&inst, k, y, |x, _| x));
            for v in [md.data()[k], flow.data()[k], eps.data()[k]] {
                worst = worst.max((v as f64 - want).abs());
            }
        }
    }

    // full runs: md vs fd with λ_base = 0, strict parallel accumulation
    let s = Shape::new(2, 2, 30, 50);
    let g = GaussianAnalytic::new(0.3, 0.6, PredictionKind::Flow);
    let prior = LatentTensor::from_fn(s, |c, t, i, j| (c + t) as f32 * 0.1 + (i * j) as f32 * 0.001);
    let run = |mode: FusionMode| {
        let mut cfg = SamplerConfig::new(12).unwrap();
        cfg.tiling = TilingConfig {
            window_h: 16,
            window_w: 24,
            ..TilingConfig::default()
        };
        cfg.mode = mode;
        cfg.prior.lambda_base = 0.0;
        cfg.workers = 4;
        cfg.strict = true;
        cfg.seed = 5;
        let sampler = Sampler::new(cfg, s, None).unwrap();
        let p = (mode != FusionMode::Md).then_some(&prior);
        sampler.run(&sampler.initial_noise(), p, &g).unwrap().0
    };
    let (md, fd) = (run(FusionMode::Md), run(FusionMode::Fd));
    let identical = md.data().iter().zip(fd.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        worst <= 1e-6 && identical,
        format!("max |Δ| vs weighted mean {worst:.2e} (tol 1e-6); md/fd full runs bit-identical: {identical}"),
    )
}

// -------------------------------------------------------------- geometry

fn c3_tile_geometry() -> Outcome {
    let canvas = Shape::new(16, 21, 272, 480);
    let px = plan_tiles_px(canvas.h * 8, canvas.w * 8, 480, 832, 0.3, 8).unwrap();
    let latent = plan_tiles(canvas.h, canvas.w, 60, 104, 0.3).unwrap();
    let geometry = (px.window_h, px.window_w, px.stride_h, px.stride_w);
    let cov = px.coverage_stats();
    let in_bounds = px.tiles.iter().all(|r| r.validate(canvas.h, canvas.w).is_ok());
    outcome(
        geometry == (60, 104, 42, 72) && cov.min >= 1 && in_bounds && latent.tiles == px.tiles,
        format!(
            "windows {}x{} strides {}x{} (want 60x104 / 42x72), {} tiles, coverage min {} max {} on {canvas}",
            geometry.0, geometry.1, geometry.2, geometry.3, px.len(), cov.min, cov.max
        ),
    )
}

fn c4_schedule_gating() -> Outcome {
    let sig = SigmaSchedule::linear(6).unwrap();
    let steps: Vec<usize> = (0..sig.num_steps()).collect();
    let global: Vec<f64> = steps.iter().map(|&i| lambda_global(sig.t(i), 0.1, 1.5)).collect();
    let global_ok = global[0] == 1.5 && global[1..].iter().all(|&l| l == 0.0);

    let cfg = PriorScheduleConfig {
        lambda_base: 1.5,
        mode: PriorMode::Regional,
        tau: 0.1,
        tau_act: 0.1,
        tau_bg: 0.35,
    };
    let active = |fg: bool| -> Vec<usize> {
        steps
            .iter()
            .copied()
            .filter(|&i| cfg.lambda_regional(sig.t(i), fg) > 0.0)
            .collect()
    };
    let (fg, bg) = (active(true), active(false));

    // the same gates through a sampler with a real activity map
    let map = ActivityMap::checkerboard(8, 8, 2);
    let mut sc = SamplerConfig::new(6).unwrap();
    sc.mode = FusionMode::FdRegional;
    sc.prior = cfg;
    sc.tiling = TilingConfig {
        window_h: 8,
        window_w: 8,
        ..TilingConfig::default()
    };
    let sampler = Sampler::new(sc, Shape::new(1, 1, 8, 8), Some(map.clone())).unwrap();
    let mut sampler_ok = true;
    for &i in &steps {
        let lam = sampler.lambda_at(i).unwrap();
        for (k, &a) in map.values().iter().enumerate() {
            let want = cfg.lambda_regional(sig.t(i), a) as f32;
            let got = match &lam {
                Lambda::Scalar(v) => *v,
                Lambda::Plane { values, .. } => values[k],
                Lambda::Full(t) => t.data()[k],
            };
            sampler_ok &= got == want;
        }
    }
    outcome(
        global_ok && fg == vec![0] && bg == vec![0, 1] && sampler_ok,
        format!("global λ per step {global:?}; foreground active at {fg:?}, background at {bg:?}; sampler maps agree: {sampler_ok}"),
    )
}

// --------------------------------------------------------------- sampling

fn c5_gaussian() -> Outcome {
    let start = Instant::now();
    let (mu, sd) = (0.7, 0.3);
    let s = Shape::new(1, 1, 120, 208);
    let mut cfg = SamplerConfig::new(51).unwrap();
    cfg.mode = FusionMode::Md;
    cfg.prior.lambda_base = 0.0;
    cfg.tiling = TilingConfig::default();
    cfg.seed = 2024;
    cfg.workers = 4;
    let sampler = Sampler::new(cfg, s, None).unwrap();
    let g = GaussianAnalytic::new(mu, sd, PredictionKind::Flow);
    let (x, trace) = sampler.run(&sampler.initial_noise(), None, &g).unwrap();
    let n = x.data().len() as f64;
    let mean = x.sum() / n;
    let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let secs = start.elapsed().as_secs_f64();
    let rel_std = (std - sd) / sd;
    outcome(
        (mean - mu).abs() <= 0.015 && rel_std.abs() <= 0.05 && n >= 4096.0 && secs <= 60.0,
        format!(
            "{} steps over {} tiles, {n} cells: mean {mean:.4} (target {mu} ± 0.015), std {std:.4} ({:+.2}% vs {sd}, tol 5%), {secs:.2} s",
            trace.steps.len(),
            sampler.plan().len(),
            rel_std * 100.0
        ),
    )
}

fn target_canvas(s: Shape) -> LatentTensor {
    LatentTensor::from_fn(s, |c, t, i, j| {
        ((i as f32 * 0.37 + c as f32).sin() + (j as f32 * 0.23 - t as f32).cos()) * 0.8
    })
}

fn prior_canvas(s: Shape) -> LatentTensor {
    LatentTensor::from_fn(s, |c, _, i, j| 0.5 - (i + j) as f32 / (s.h + s.w) as f32 + c as f32 * 0.2)
}

fn run_target(s: Shape, steps: usize, prior_cfg: PriorScheduleConfig, mode: FusionMode, map: Option<ActivityMap>) -> LatentTensor {
    let mut cfg = SamplerConfig::new(steps).unwrap();
    cfg.tiling = TilingConfig {
        window_h: 16,
        window_w: 24,
        ..TilingConfig::default()
    };
    cfg.prior = prior_cfg;
    cfg.mode = mode;
    cfg.seed = 17;
    let sampler = Sampler::new(cfg, s, map).unwrap();
    let drv = TargetDriver::new(target_canvas(s), PredictionKind::Flow);
    sampler.run(&sampler.initial_noise(), Some(&prior_canvas(s)), &drv).unwrap().0
}

fn c6_prior_pull() -> Outcome {
    let s = Shape::new(2, 1, 32, 48);
    let prior = prior_canvas(s);
    let gated = |lambda_base: f64| PriorScheduleConfig {
        lambda_base,
        mode: PriorMode::GatedCosine,
        tau: 1.0,
        ..PriorScheduleConfig::default()
    };
    let pinned = run_target(s, 6, gated(1e6), FusionMode::Fd, None);
    let linf = pinned.max_abs_diff(&prior).unwrap();
    let gap = target_canvas(s).max_abs_diff(&prior).unwrap();

    let dists: Vec<f64> = [0.0, 0.5, 1.5, 5.0]
        .iter()
        .map(|&l| run_target(s, 6, gated(l), FusionMode::Fd, None).l2_distance(&prior).unwrap())
        .collect();
    let monotone = dists.windows(2).all(|p| p[1] <= p[0]);
    outcome(
        linf <= 1e-3 && monotone,
        format!(
            "λ_base=1e6: ‖x−prior‖∞ {linf:.2e} (tol 1e-3, target–prior gap {gap:.2}); ‖x−prior‖₂ over λ 0,0.5,1.5,5: {}",
            dists.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(" ≥ ")
        ),
    )
}

fn c7_regional() -> Outcome {
    let s = Shape::new(1, 1, 32, 48);
    let map = ActivityMap::checkerboard(32, 48, 8);
    let cfg = PriorScheduleConfig {
        lambda_base: 1.5,
        mode: PriorMode::Regional,
        tau: 0.1,
        tau_act: 0.1,
        tau_bg: 1.0,
    };
    let x = run_target(s, 6, cfg, FusionMode::FdRegional, Some(map.clone()));
    let (fg, bg) = prior_mse_split(&x, &prior_canvas(s), &map).unwrap();
    let (fg, bg) = (fg.unwrap(), bg.unwrap());
    outcome(
        bg <= fg,
        format!("τ_act 0.1, τ_bg 1.0, checkerboard: background MSE {bg:.5} ≤ foreground MSE {fg:.5}"),
    )
}

// ---------------------------------------------------------------- metrics

fn tenengrad_dense(lum: &[f64], h: usize, w: usize, valid: bool) -> f64 {
    let px = |i: isize, j: isize| lum[i.clamp(0, h as isize - 1) as usize * w + j.clamp(0, w as isize - 1) as usize];
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..h as isize {
        for j in 0..w as isize {
            if valid && (i == 0 || j == 0 || i == h as isize - 1 || j == w as isize - 1) {
                continue;
            }
            let gx = (px(i - 1, j + 1) + 2.0 * px(i, j + 1) + px(i + 1, j + 1))
                - (px(i - 1, j - 1) + 2.0 * px(i, j - 1) + px(i + 1, j - 1));
            let gy = (px(i + 1, j - 1) + 2.0 * px(i + 1, j) + px(i + 1, j + 1))
                - (px(i - 1, j - 1) + 2.0 * px(i - 1, j) + px(i - 1, j + 1));
            acc += gx * gx + gy * gy;
            n += 1;
        }
    }
    acc / n as f64
}

fn c8_metrics() -> Outcome {
    let flat = Frame::luma(64, 48, vec![91.0; 64 * 48]).unwrap();
    let t0 = tenengrad(&flat, SobelBorder::Replicate).unwrap();
    let tc0 = temporal_consistency(&[flat.clone(), flat.clone(), flat.clone()], TEMPORAL_DIVISOR).unwrap();
    let c = 7.0;
    let shifted = Frame::luma(64, 48, vec![91.0 + c as f32; 64 * 48]).unwrap();
    let tcc = temporal_consistency(&[flat, shifted], TEMPORAL_DIVISOR).unwrap();
    let formula_ok = (tcc - 4.0 * c * c).abs() <= 1e-9 * 4.0 * c * c;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..4 {
        let frames: Vec<Frame> = (0..3)
            .map(|_| Frame::luma(64, 64, (0..64 * 64).map(|_| rng.random_range(0.0f32..255.0)).collect()).unwrap())
            .collect();
        for f in &frames {
            let lum = f.luminance();
            worst = worst.max(rel(tenengrad(f, SobelBorder::Replicate).unwrap(), tenengrad_dense(&lum, 64, 64, false)));
            worst = worst.max(rel(tenengrad(f, SobelBorder::Valid).unwrap(), tenengrad_dense(&lum, 64, 64, true)));
        }
        // 64 → 128 area resampling duplicates pixels into 2×2 blocks
        let up: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| {
                let l = f.luminance();
                (0..128 * 128).map(|k| l[(k / 256) * 64 + (k % 128) / 2]).collect()
            })
            .collect();
        let mut want = 0.0;
        for p in up.windows(2) {
            want += p[1].iter().zip(&p[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (64.0 * 64.0);
        }
        want /= 2.0;
        worst = worst.max(rel(temporal_consistency(&frames, TEMPORAL_DIVISOR).unwrap(), want));
        let lum = frames[0].luminance();
        let down = area_resize(&lum, 64, 64, 32, 32);
        for (k, &v) in down.iter().enumerate() {
            let (i, j) = (2 * (k / 32), 2 * (k % 32));
            let block = (lum[i * 64 + j] + lum[i * 64 + j + 1] + lum[(i + 1) * 64 + j] + lum[(i + 1) * 64 + j + 1]) / 4.0;
            worst = worst.max(rel(v, block));
        }
        // seams: vertical boundaries at pixel columns 24 and 40 from a 3-wide latent tiling
        let plan = plan_tiles(8, 8, 8, 5, 0.4).unwrap();
        let mut seam = Vec::new();
        let mut all = Vec::new();
        for i in 0..64 {
            for j in 0..64 {
                if j > 0 {
                    let d = (lum[i * 64 + j] - lum[i * 64 + j - 1]).powi(2);
                    all.push(d);
                    if j == 24 || j == 40 {
                        seam.push(d);
                    }
                }
                if i > 0 {
                    all.push((lum[i * 64 + j] - lum[(i - 1) * 64 + j]).powi(2));
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        worst = worst.max(rel(seam_energy(&frames[0], &plan, 8), mean(&seam) - mean(&all)));
    }
    outcome(
        t0 == 0.0 && tc0 == 0.0 && formula_ok && worst <= 1e-6,
        format!(
            "constant video: tenengrad {t0}, temporal {tc0}; offset c={c}: {tcc} (4c² = {}); max oracle deviation {worst:.2e} (tol 1e-6)",
            4.0 * c * c
        ),
    )
}

// --------------------------------------------------------------- protocol

fn spawn_server(kind: &str, timeout: Duration) -> fresco_core::Result<ExternalDenoiser> {
    let cmd: Vec<String> = [FRESCO, "serve", "--kind", kind].iter().map(|s| s.to_string()).collect();
    ExternalDenoiser::spawn(&cmd, 2, timeout, PredictionKind::Flow)
}

fn probe(ext: &ExternalDenoiser) -> Result<(), DenoiseError> {
    let tile = LatentTensor::filled(Shape::new(1, 1, 3, 4), 0.5);
    let rect = Rect::new(0, 0, 3, 4);
    ext.denoise(&DenoiserRequest {
        tile,
        step: 0,
        t: 0.0,
        sigma: 1.0,
        conditioning: String::new(),
        rect,
    })
    .map(|_| ())
}

fn c9_protocol() -> Outcome {
    let echo = spawn_server("echo", Duration::from_secs(30)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact = 0;
    for step in 0..100u32 {
        let s = Shape::new(rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=16), rng.random_range(1..=16));
        let tile = LatentTensor::from_fn(s, |_, _, _, _| rng.random_range(-1e3f32..1e3));
        let req = DenoiserRequest {
            tile: tile.clone(),
            step,
            t: step as f32 / 100.0,
            sigma: 1.0 - step as f32 / 100.0,
            conditioning: format!("tile-{step}"),
            rect: Rect::new(step as usize, 0, s.h, s.w),
        };
        if let Ok(resp) = echo.denoise(&req) {
            if resp.prediction.shape() == s
                && resp.prediction.data().iter().zip(tile.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            {
                exact += 1;
            }
        }
    }
    drop(echo);

    let wrong = probe(&spawn_server("wrong-shape", Duration::from_secs(30)).unwrap());
    let garbage = probe(&spawn_server("garbage", Duration::from_secs(30)).unwrap());
    let hang = probe(&spawn_server("hang", Duration::from_millis(500)).unwrap());
    let closed = ExternalDenoiser::spawn(&["true".to_string()], 1, Duration::from_secs(5), PredictionKind::Flow);
    let closed_err = match &closed {
        Err(Error::Denoiser { source, .. }) => Some(source),
        _ => None,
    };
    let ok = exact == 100
        && matches!(wrong, Err(DenoiseError::ShapeMismatch { .. }))
        && matches!(garbage, Err(DenoiseError::MalformedFrame(_)))
        && matches!(hang, Err(DenoiseError::Timeout(_)))
        && matches!(closed_err, Some(DenoiseError::BrokenPipe));
    let name = |r: &Result<(), DenoiseError>| match r {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or_default().to_string(),
    };
    outcome(
        ok,
        format!(
            "{exact}/100 tiles bit-exact through a server process; wrong shape → {}, garbage → {}, silent → {}, closed → {}",
            name(&wrong),
            name(&garbage),
            name(&hang),
            closed_err.map_or("no error".to_string(), |e| format!("{e:?}"))
        ),
    )
}

// ------------------------------------------------------------ determinism

fn run_cli(args: &[&str], dir: &Path) -> bool {
    Command::new(FRESCO)
        .args(args)
        .current_dir(dir)
        .env_remove("FRESCO_MAX_WORKERS")
        .stdout(std::process::Stdio::null())
        .status()
        .is_ok_and(|s| s.success())
}

fn c10_determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("fresco-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    fs::write(
        dir.join("run.toml"),
        "seed = 41\n\
         [canvas]\nchannels = 3\nframes = 2\nheight = 40\nwidth = 64\n\
         [sampler]\nsteps = 10\nworkers = 4\nstrict = true\n\
         [tiling]\nwindow_h = 16\nwindow_w = 24\n\
         [prior]\nlambda_base = 1.5\ntau = 0.6\nheight = 20\nwidth = 32\n\
         [denoiser]\nkind = \"gaussian\"\nmu = 0.2\ns = 0.7\n",
    )
    .unwrap();
    let first = run_cli(&["sample", "-c", "run.toml", "--out", "a"], &dir);
    let second = run_cli(&["sample", "--manifest", "a/manifest.toml", "--out", "b"], &dir);
    let third = run_cli(&["sample", "--manifest", "a/manifest.toml", "--out", "c"], &dir);
    let read = |d: &str| fs::read(dir.join(d).join("latent.flt1")).ok();
    let (a, b, c) = (read("a"), read("b"), read("c"));
    let same = a.is_some() && a == b && b == c;
    let bytes = a.as_ref().map_or(0, Vec::len);
    let _ = fs::remove_dir_all(&dir);
    outcome(
        first && second && third && same,
        format!("three strict runs (4 workers) from one manifest: FLT1 outputs byte-identical: {same} ({bytes} bytes)"),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 10] = [
        ("fusion-oracle equivalence", c1_fusion_oracle),
        ("zero-strength reduction", c2_reduction),
        ("tile geometry", c3_tile_geometry),
        ("schedule gating", c4_schedule_gating),
        ("gaussian end-to-end", c5_gaussian),
        ("prior-pull limit and trade-off", c6_prior_pull),
        ("regional ordering", c7_regional),
        ("metrics", c8_metrics),
        ("protocol", c9_protocol),
        ("determinism", c10_determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("[{}] {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail);
        if !o.pass {
            failed.push(k + 1);
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

