//! Tiled, prior-regularized sampling loop.
//!
//! Flow convention: `x_t = x₀ + σ (ε − x₀)`, the denoiser predicts
//! `y ≈ ε − x₀`, the clean estimate is `x̂₀ = x_t − σ y`, and integration is an
//! Euler step in σ: `x' = x_t + (σ' − σ) y`. Starting from `σ = 1` the state
//! is pure noise; the last step lands on `σ = 0`.
//!
//! ε-prediction uses `x_t = √ᾱ x₀ + √(1 − ᾱ) ε` with `ᾱ = 1 − σ²` (floored at
//! [`ALPHA_MIN`]) and a deterministic DDIM update.

use std::fmt::Write as _;
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blending::{WeightCache, WeightMap, DEFAULT_MIN_WEIGHT};
use crate::denoise::{Denoiser, DenoiserRequest, PredictionKind};
use crate::error::{Error, Result};
use crate::fusion::{FusionAccumulator, Lambda};
use crate::schedules::{ActivityMap, PriorMode, PriorScheduleConfig, SigmaSchedule};
use crate::tensor::{LatentTensor, Shape};
use crate::tiles::{plan_tiles, TilePlan};

/// Smallest cumulative signal level used by ε-prediction steps.
pub const ALPHA_MIN: f64 = 1e-4;

/// Noise stream for the tiled canvas pass.
pub const STREAM_CANVAS: u64 = 0;
/// Noise stream for the native-resolution prior pass.
pub const STREAM_PRIOR: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Weighted tile average only.
    Md,
    /// Prior-regularized fusion with a global strength.
    Fd,
    /// Prior-regularized fusion with an activity-gated spatial strength.
    FdRegional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingConfig {
    /// Latent window rows.
    pub window_h: usize,
    /// Latent window columns.
    pub window_w: usize,
    pub overlap: f64,
    /// Ramp lengths `(rows, cols)`; `None` ramps across the overlap extent.
    pub ramp: Option<(usize, usize)>,
    pub min_weight: f32,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            window_h: 60,
            window_w: 104,
            overlap: 0.3,
            ramp: None,
            min_weight: DEFAULT_MIN_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub sigmas: SigmaSchedule,
    pub tiling: TilingConfig,
    pub prior: PriorScheduleConfig,
    pub seed: u64,
    pub mode: FusionMode,
    pub prediction: PredictionKind,
    /// Concurrent denoiser calls per step.
    pub workers: usize,
    /// Accumulate in plan order regardless of `workers`.
    pub strict: bool,
    pub conditioning: String,
}

impl SamplerConfig {
    pub fn new(steps: usize) -> Result<Self> {
        Ok(Self {
            sigmas: SigmaSchedule::linear(steps)?,
            tiling: TilingConfig::default(),
            prior: PriorScheduleConfig::default(),
            seed: 0,
            mode: FusionMode::Fd,
            prediction: PredictionKind::Flow,
            workers: 1,
            strict: true,
            conditioning: String::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if !(0.0..1.0).contains(&self.tiling.overlap) {
            return Err(Error::Config(format!("overlap {} outside [0, 1)", self.tiling.overlap)));
        }
        if !(self.tiling.min_weight > 0.0 && self.tiling.min_weight <= 1.0) {
            return Err(Error::Config(format!("min_weight {} outside (0, 1]", self.tiling.min_weight)));
        }
        match (self.mode, self.prior.mode) {
            (FusionMode::Fd, PriorMode::Regional) => Err(Error::Config(
                "regional prior schedule requires mode fd_regional".into(),
            )),
            _ => Ok(()),
        }
    }

    fn schedule(&self) -> PriorScheduleConfig {
        match self.mode {
            FusionMode::FdRegional => PriorScheduleConfig {
                mode: PriorMode::Regional,
                ..self.prior
            },
            _ => self.prior,
        }
    }
}

/// Standard-normal noise drawn in layout order from a seeded ChaCha stream.
pub fn initial_noise(shape: Shape, seed: u64, stream: u64) -> LatentTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let data = (0..shape.len()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    LatentTensor::from_vec(shape, data).expect("normal samples are finite")
}

/// Resizes a native-resolution prior latent to the canvas `(T, H, W)`.
pub fn build_prior(prior_latent: &LatentTensor, canvas: Shape) -> Result<LatentTensor> {
    if prior_latent.shape().c != canvas.c {
        return Err(Error::Shape(format!(
            "prior has {} channels, canvas {}",
            prior_latent.shape().c,
            canvas.c
        )));
    }
    prior_latent.trilinear_resize(canvas.t, canvas.h, canvas.w)
}

/// Mean squared error of a clean estimate against the prior, split into
/// active (`A = 1`) and background cells. Empty partitions are `None`.
pub fn prior_mse_split(
    clean: &LatentTensor,
    prior: &LatentTensor,
    activity: &ActivityMap,
) -> Result<(Option<f64>, Option<f64>)> {
    clean.check_same_shape(prior)?;
    let s = clean.shape();
    if (activity.height, activity.width) != (s.h, s.w) {
        return Err(Error::Shape(format!(
            "activity map {}x{} vs canvas {s}",
            activity.height, activity.width
        )));
    }
    let (mut fg, mut bg) = ((0.0f64, 0usize), (0.0f64, 0usize));
    let plane = s.plane();
    for (k, (&a, &b)) in clean.data().iter().zip(prior.data()).enumerate() {
        let d = a as f64 - b as f64;
        let slot = if activity.values()[k % plane] { &mut fg } else { &mut bg };
        slot.0 += d * d;
        slot.1 += 1;
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    Ok((mean(fg), mean(bg)))
}

/// Split prior MSE of the flow clean estimate `x_t − σ y`.
pub fn trace_prior_mse(
    x_t: &LatentTensor,
    sigma: f64,
    y: &LatentTensor,
    prior: &LatentTensor,
    activity: &ActivityMap,
) -> Result<(Option<f64>, Option<f64>)> {
    let clean = clean_estimate(x_t, y, sigma, PredictionKind::Flow)?;
    prior_mse_split(&clean, prior, activity)
}

fn clean_estimate(x_t: &LatentTensor, y: &LatentTensor, noise: f64, kind: PredictionKind) -> Result<LatentTensor> {
    x_t.check_same_shape(y)?;
    let a = match kind {
        PredictionKind::Flow => 1.0,
        PredictionKind::Eps => kind.signal_scale(noise),
    };
    let data = x_t
        .data()
        .iter()
        .zip(y.data())
        .map(|(&x, &v)| ((x as f64 - noise * v as f64) / a) as f32)
        .collect();
    LatentTensor::from_vec(x_t.shape(), data).map_err(|_| Error::NonFinite("clean estimate"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub sigma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_mean: f64,
    pub fg_mse: Option<f64>,
    pub bg_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
}

impl RunTrace {
    /// Tab-separated, one line per step after a `#` header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("#step\tt\tsigma\tlambda_min\tlambda_max\tlambda_mean\tfg_mse\tbg_mse\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.9e}"));
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}",
                r.step,
                r.t,
                r.sigma,
                r.lambda_min,
                r.lambda_max,
                r.lambda_mean,
                opt(r.fg_mse),
                opt(r.bg_mse)
            );
        }
        s
    }
}

/// A configured sampler bound to one canvas shape.
pub struct Sampler {
    cfg: SamplerConfig,
    canvas: Shape,
    plan: TilePlan,
    weights: Vec<Arc<WeightMap>>,
    activity: Option<ActivityMap>,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig, canvas: Shape, activity: Option<ActivityMap>) -> Result<Self> {
        cfg.validate()?;
        if canvas.is_empty() {
            return Err(Error::Config(format!("empty canvas {canvas}")));
        }
        if cfg.mode == FusionMode::FdRegional && activity.is_none() {
            return Err(Error::Config("mode fd_regional requires an activity map".into()));
        }
        if let Some(a) = &activity {
            if (a.height, a.width) != (canvas.h, canvas.w) {
                return Err(Error::Config(format!(
                    "activity map {}x{} does not match canvas {}x{}",
                    a.height, a.width, canvas.h, canvas.w
                )));
            }
        }
        let tiling = &cfg.tiling;
        let plan = plan_tiles(canvas.h, canvas.w, tiling.window_h, tiling.window_w, tiling.overlap)?;
        let (ramp_h, ramp_w) = tiling.ramp.unwrap_or((
            plan.window_h.saturating_sub(plan.stride_h),
            plan.window_w.saturating_sub(plan.stride_w),
        ));
        let cache = WeightCache::new();
        let weights = plan
            .tiles
            .iter()
            .map(|r| cache.get(r.height, r.width, ramp_h, ramp_w, tiling.min_weight))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            canvas,
            plan,
            weights,
            activity,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &TilePlan {
        &self.plan
    }

    pub fn canvas(&self) -> Shape {
        self.canvas
    }

    pub fn weights(&self) -> &[Arc<WeightMap>] {
        &self.weights
    }

    pub fn initial_noise(&self) -> LatentTensor {
        initial_noise(self.canvas, self.cfg.seed, STREAM_CANVAS)
    }

    /// Prior strength at grid position `i`.
    pub fn lambda_at(&self, i: usize) -> Result<Lambda> {
        match self.cfg.mode {
            FusionMode::Md => Ok(Lambda::Scalar(0.0)),
            _ => self.cfg.schedule().evaluate(self.cfg.sigmas.t(i), self.activity.as_ref()),
        }
    }

    /// Noise level sent to the denoiser and used by the fusion at σ.
    fn noise_level(&self, sigma: f64) -> f64 {
        match self.cfg.prediction {
            PredictionKind::Flow => sigma,
            PredictionKind::Eps => (1.0 - alpha_bar(sigma)).sqrt(),
        }
    }

    /// Runs the denoiser on every tile and accumulates the weighted sums.
    pub fn accumulate_predictions<D: Denoiser + ?Sized>(
        &self,
        x_t: &LatentTensor,
        denoiser: &D,
        step: usize,
        t: f64,
        noise: f64,
    ) -> Result<FusionAccumulator> {
        let n = self.plan.tiles.len();
        let workers = self.cfg.workers.clamp(1, n.max(1));
        let request = |k: usize| -> Result<LatentTensor> {
            let rect = self.plan.tiles[k];
            let req = DenoiserRequest {
                tile: x_t.crop(rect)?,
                step: step as u32,
                t: t as f32,
                sigma: noise as f32,
                conditioning: self.cfg.conditioning.clone(),
                rect,
            };
            let resp = denoiser
                .denoise(&req)
                .map_err(|source| Error::Denoiser { tile: k, source })?;
            if resp.prediction.shape() != req.tile.shape() {
                return Err(Error::Denoiser {
                    tile: k,
                    source: crate::error::DenoiseError::ShapeMismatch {
                        expected: req.tile.shape().as_array(),
                        got: resp.prediction.shape().as_array(),
                    },
                });
            }
            if !resp.prediction.is_finite() {
                return Err(Error::Denoiser {
                    tile: k,
                    source: crate::error::DenoiseError::NonFinite,
                });
            }
            Ok(resp.prediction)
        };

        if workers == 1 {
            let mut acc = FusionAccumulator::new(self.canvas);
            for k in 0..n {
                acc.accumulate(&request(k)?, self.plan.tiles[k], &self.weights[k])?;
            }
            return Ok(acc);
        }

        if self.cfg.strict {
            // Predictions in parallel, accumulation in plan order.
            let mut preds: Vec<Option<Result<LatentTensor>>> = (0..n).map(|_| None).collect();
            thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let request = &request;
                        scope.spawn(move || {
                            (w..n).step_by(workers).map(|k| (k, request(k))).collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (k, r) in h.join().expect("tile worker panicked") {
                        preds[k] = Some(r);
                    }
                }
            });
            let mut acc = FusionAccumulator::new(self.canvas);
            for (k, p) in preds.into_iter().enumerate() {
                let pred = p.expect("every tile assigned")?;
                acc.accumulate(&pred, self.plan.tiles[k], &self.weights[k])?;
            }
            return Ok(acc);
        }

        // Per-worker partial sums merged in worker order.
        let partials: Vec<Result<FusionAccumulator>> = thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let request = &request;
                    scope.spawn(move || {
                        let mut acc = FusionAccumulator::new(self.canvas);
                        for k in (w..n).step_by(workers) {
                            acc.accumulate(&request(k)?, self.plan.tiles[k], &self.weights[k])?;
                        }
                        Ok(acc)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("tile worker panicked")).collect()
        });
        let mut acc = FusionAccumulator::new(self.canvas);
        for p in partials {
            acc.merge(&p?)?;
        }
        Ok(acc)
    }

    /// One step at grid position `i`, from `σ_i` to `σ_{i+1}`.
    pub fn step<D: Denoiser + ?Sized>(
        &self,
        x_t: &LatentTensor,
        prior: Option<&LatentTensor>,
        denoiser: &D,
        i: usize,
    ) -> Result<(LatentTensor, StepRecord)> {
        let sig = &self.cfg.sigmas;
        if i >= sig.num_steps() {
            return Err(Error::Argument(format!("step {i} beyond schedule of {} steps", sig.num_steps())));
        }
        let lambda = self.lambda_at(i)?;
        self.step_with(x_t, prior, denoiser, i, sig.t(i), sig.sigma(i), sig.sigma(i + 1), &lambda)
    }

    /// One step with explicit schedule values.
    #[allow(clippy::too_many_arguments)]
    pub fn step_with<D: Denoiser + ?Sized>(
        &self,
        x_t: &LatentTensor,
        prior: Option<&LatentTensor>,
        denoiser: &D,
        step: usize,
        t: f64,
        sigma: f64,
        sigma_next: f64,
        lambda: &Lambda,
    ) -> Result<(LatentTensor, StepRecord)> {
        if x_t.shape() != self.canvas {
            return Err(Error::Shape(format!("state {} vs canvas {}", x_t.shape(), self.canvas)));
        }
        if denoiser.kind() != self.cfg.prediction {
            return Err(Error::Config(format!(
                "denoiser predicts {:?}, sampler configured for {:?}",
                denoiser.kind(),
                self.cfg.prediction
            )));
        }
        let kind = self.cfg.prediction;
        let noise = self.noise_level(sigma);
        let acc = self.accumulate_predictions(x_t, denoiser, step, t, noise)?;

        let y = match (self.cfg.mode, prior) {
            (FusionMode::Md, _) => acc.fuse_md()?,
            (_, None) => return Err(Error::Config("prior-regularized fusion needs a prior latent".into())),
            (_, Some(p)) => match kind {
                PredictionKind::Flow => acc.fuse_fd_flow(x_t, p, lambda, sigma)?,
                PredictionKind::Eps => acc.fuse_fd_eps(x_t, p, lambda, alpha_bar(sigma))?,
            },
        };

        let clean = clean_estimate(x_t, &y, noise, kind)?;
        let next = match kind {
            PredictionKind::Flow => euler(x_t, &y, sigma_next - sigma)?,
            PredictionKind::Eps if sigma_next == sigma => x_t.clone(),
            PredictionKind::Eps => ddim(&clean, &y, alpha_bar_terminal(sigma_next))?,
        };

        let (fg_mse, bg_mse) = match prior {
            Some(p) => {
                let all = ActivityMap::uniform(self.canvas.h, self.canvas.w, true);
                prior_mse_split(&clean, p, self.activity.as_ref().unwrap_or(&all))?
            }
            None => (None, None),
        };
        let (lambda_min, lambda_max, lambda_mean) = lambda.summary();
        Ok((
            next,
            StepRecord {
                step,
                t,
                sigma,
                lambda_min,
                lambda_max,
                lambda_mean,
                fg_mse,
                bg_mse,
            },
        ))
    }

    /// Integrates from `initial` through every scheduled step.
    pub fn run<D: Denoiser + ?Sized>(
        &self,
        initial: &LatentTensor,
        prior: Option<&LatentTensor>,
        denoiser: &D,
    ) -> Result<(LatentTensor, RunTrace)> {
        if self.cfg.mode != FusionMode::Md && prior.is_none() {
            return Err(Error::Config("prior-regularized modes need a prior latent".into()));
        }
        if let Some(p) = prior {
            if p.shape() != self.canvas {
                return Err(Error::Shape(format!("prior {} vs canvas {}", p.shape(), self.canvas)));
            }
        }
        let mut x = initial.clone();
        let mut trace = RunTrace::default();
        for i in 0..self.cfg.sigmas.num_steps() {
            let (next, rec) = self
                .step(&x, prior, denoiser, i)
                .map_err(|e| Error::Step { step: i, source: Box::new(e) })?;
            x = next;
            trace.steps.push(rec);
        }
        Ok((x, trace))
    }
}

/// `ᾱ = max(1 − σ², ALPHA_MIN)` at sampled steps.
pub fn alpha_bar(sigma: f64) -> f64 {
    (1.0 - sigma * sigma).clamp(ALPHA_MIN, 1.0 - f64::EPSILON)
}

fn alpha_bar_terminal(sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        alpha_bar(sigma)
    }
}

fn euler(x: &LatentTensor, y: &LatentTensor, h: f64) -> Result<LatentTensor> {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &v)| (a as f64 + h * v as f64) as f32)
        .collect();
    LatentTensor::from_vec(x.shape(), data).map_err(|_| Error::NonFinite("euler step"))
}

fn ddim(clean: &LatentTensor, eps: &LatentTensor, alpha_next: f64) -> Result<LatentTensor> {
    let (a, b) = (alpha_next.sqrt(), (1.0 - alpha_next).max(0.0).sqrt());
    let data = clean
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x0, &e)| (a * x0 as f64 + b * e as f64) as f32)
        .collect();
    LatentTensor::from_vec(clean.shape(), data).map_err(|_| Error::NonFinite("ddim step"))
}

/// Single full-canvas window over `shape`.
pub fn single_tile(shape: Shape) -> TilingConfig {
    TilingConfig {
        window_h: shape.h,
        window_w: shape.w,
        overlap: 0.0,
        ramp: Some((0, 0)),
        min_weight: 1.0,
    }
}
