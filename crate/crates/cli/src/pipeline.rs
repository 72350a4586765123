//! Prior stage, upsampling and tiled stage, shared by `sample` and `sweep`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fresco_core::denoise::external::ExternalDenoiser;
use fresco_core::denoise::{Denoiser, GaussianAnalytic, TargetDriver};
use fresco_core::sampler::{build_prior, initial_noise, single_tile, STREAM_PRIOR};
use fresco_core::schedules::load_activity_map;
use fresco_core::{flt1, FusionMode, LatentTensor, RunTrace, Sampler, Shape};

use crate::config::{DenoiserKind, RunConfig, StageTiming};
use crate::error::{CliError, CliResult};

/// A denoiser source that can serve both the prior and the canvas shapes.
pub enum Backend {
    Gaussian(GaussianAnalytic),
    Target(LatentTensor),
    External(Arc<ExternalDenoiser>),
}

impl Backend {
    pub fn open(cfg: &RunConfig) -> CliResult<Self> {
        let d = &cfg.denoiser;
        let kind = cfg.sampler.prediction;
        match d.kind {
            DenoiserKind::Gaussian => Ok(Self::Gaussian(GaussianAnalytic::new(d.mu, d.s, kind))),
            DenoiserKind::Target => {
                let path = d
                    .target
                    .as_ref()
                    .ok_or_else(|| CliError::Config("denoiser.target is not set".into()))?;
                let target = flt1::load(path)?;
                let canvas = cfg.canvas_shape();
                if target.shape() != canvas {
                    return Err(CliError::Config(format!(
                        "target {} does not match canvas {canvas}",
                        target.shape()
                    )));
                }
                Ok(Self::Target(target))
            }
            DenoiserKind::External => {
                let timeout = Duration::from_secs(d.timeout_secs.max(1));
                let ext = ExternalDenoiser::spawn(&d.command, d.pool.max(1), timeout, kind)?;
                Ok(Self::External(Arc::new(ext)))
            }
        }
    }

    /// Denoiser for a canvas of `shape`; the target driver is resized to it.
    pub fn denoiser(&self, cfg: &RunConfig, shape: Shape) -> CliResult<Box<dyn Denoiser>> {
        let kind = cfg.sampler.prediction;
        Ok(match self {
            Self::Gaussian(g) => Box::new(*g),
            Self::Target(t) if t.shape() == shape => Box::new(TargetDriver::new(t.clone(), kind)),
            Self::Target(t) => Box::new(TargetDriver::new(t.trilinear_resize(shape.t, shape.h, shape.w)?, kind)),
            Self::External(e) => Box::new(Arc::clone(e)),
        })
    }

    pub fn inputs(cfg: &RunConfig) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = Vec::new();
        v.extend(cfg.denoiser.target.clone());
        v.extend(cfg.prior.activity_map.clone());
        v.extend(cfg.prior.latent.clone());
        v
    }
}

pub struct Timer(Vec<StageTiming>);

impl Timer {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        self.0.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn into_inner(self) -> Vec<StageTiming> {
        self.0
    }
}

/// Native-resolution single-window generation from the prior noise stream.
pub fn prior_stage(cfg: &RunConfig, backend: &Backend) -> CliResult<LatentTensor> {
    if let Some(path) = &cfg.prior.latent {
        return Ok(flt1::load(path)?);
    }
    let shape = cfg.prior_shape();
    let mut sc = cfg.sampler_config()?;
    sc.tiling = single_tile(shape);
    sc.mode = FusionMode::Md;
    let sampler = Sampler::new(sc, shape, None)?;
    let den = backend.denoiser(cfg, shape)?;
    let (x, _) = sampler.run(&initial_noise(shape, cfg.seed, STREAM_PRIOR), None, &*den)?;
    Ok(x)
}

/// Prior latent resized to the canvas, or `None` in plain averaging mode.
pub fn upsample_stage(cfg: &RunConfig, prior_latent: Option<&LatentTensor>) -> CliResult<Option<LatentTensor>> {
    match prior_latent {
        Some(p) => Ok(Some(build_prior(p, cfg.canvas_shape())?)),
        None => Ok(None),
    }
}

pub fn tiled_stage(
    cfg: &RunConfig,
    backend: &Backend,
    prior: Option<&LatentTensor>,
) -> CliResult<(LatentTensor, RunTrace)> {
    let canvas = cfg.canvas_shape();
    let activity = match &cfg.prior.activity_map {
        Some(p) => Some(load_activity_map(p, canvas.h, canvas.w)?),
        None => None,
    };
    let sampler = Sampler::new(cfg.sampler_config()?, canvas, activity)?;
    let den = backend.denoiser(cfg, canvas)?;
    Ok(sampler.run(&sampler.initial_noise(), prior, &*den)?)
}

pub struct PipelineOutput {
    pub latent: LatentTensor,
    pub prior: Option<LatentTensor>,
    pub trace: RunTrace,
    pub timings: Vec<StageTiming>,
}

pub fn needs_prior(cfg: &RunConfig) -> bool {
    cfg.sampler.mode != FusionMode::Md
}

/// Full pipeline: prior stage, upsample, tiled stage.
pub fn run(cfg: &RunConfig) -> CliResult<PipelineOutput> {
    cfg.validate()?;
    let mut timer = Timer::new();
    let backend = timer.time("denoiser setup", || Backend::open(cfg))?;
    let prior_latent = if needs_prior(cfg) {
        Some(timer.time("prior stage", || prior_stage(cfg, &backend))?)
    } else {
        None
    };
    let prior = timer.time("upsample", || upsample_stage(cfg, prior_latent.as_ref()))?;
    let (latent, trace) = timer.time("tiled stage", || tiled_stage(cfg, &backend, prior.as_ref()))?;
    Ok(PipelineOutput {
        latent,
        prior,
        trace,
        timings: timer.into_inner(),
    })
}
