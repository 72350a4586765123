//! Run configuration (TOML with sections, overridable by flags) and the
//! manifest written at the end of each run.

use std::fs;
use std::path::{Path, PathBuf};

use fresco_core::denoise::PredictionKind;
use fresco_core::sampler::{SamplerConfig, TilingConfig};
use fresco_core::schedules::{PriorMode, PriorScheduleConfig, SigmaSchedule};
use fresco_core::{FusionMode, Shape};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, CliResult};

/// Environment variable capping the number of concurrent denoiser calls.
pub const WORKERS_ENV: &str = "FRESCO_MAX_WORKERS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub canvas: CanvasSection,
    pub sampler: SamplerSection,
    pub tiling: TilingSection,
    pub prior: PriorSection,
    pub denoiser: DenoiserSection,
}

/// Latent canvas dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanvasSection {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Pixels per latent cell.
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    /// Number of σ grid points, including the terminal σ = 0.
    pub steps: usize,
    pub mode: FusionMode,
    pub prediction: PredictionKind,
    pub workers: usize,
    pub strict: bool,
    pub conditioning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingSection {
    pub window_h: usize,
    pub window_w: usize,
    pub overlap: f64,
    pub min_weight: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp_h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp_w: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub lambda_base: f64,
    pub mode: PriorMode,
    pub tau: f64,
    pub tau_act: f64,
    pub tau_bg: f64,
    /// PGM or FLT1 activity map, resized to the canvas.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activity_map: Option<PathBuf>,
    /// Precomputed prior latent; skips the prior stage when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent: Option<PathBuf>,
    /// Prior-stage latent size; derived from the pixel budget when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Gaussian,
    Target,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub kind: DenoiserKind,
    /// Gaussian data mean and standard deviation.
    pub mu: f64,
    pub s: f64,
    /// Canvas-shaped FLT1 target for the target driver.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    /// Program and arguments of an `FDP1` server.
    pub command: Vec<String>,
    pub pool: usize,
    pub timeout_secs: u64,
}

impl Default for CanvasSection {
    fn default() -> Self {
        Self {
            channels: 4,
            frames: 1,
            height: 120,
            width: 208,
            factor: 8,
        }
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: 50,
            mode: FusionMode::Fd,
            prediction: PredictionKind::Flow,
            workers: 1,
            strict: true,
            conditioning: String::new(),
        }
    }
}

impl Default for TilingSection {
    fn default() -> Self {
        let t = TilingConfig::default();
        Self {
            window_h: t.window_h,
            window_w: t.window_w,
            overlap: t.overlap,
            min_weight: t.min_weight,
            ramp_h: None,
            ramp_w: None,
        }
    }
}

impl Default for PriorSection {
    fn default() -> Self {
        let p = PriorScheduleConfig::default();
        Self {
            lambda_base: p.lambda_base,
            mode: p.mode,
            tau: p.tau,
            tau_act: p.tau_act,
            tau_bg: p.tau_bg,
            activity_map: None,
            latent: None,
            height: None,
            width: None,
        }
    }
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::Gaussian,
            mu: 0.0,
            s: 1.0,
            target: None,
            command: Vec::new(),
            pool: 1,
            timeout_secs: 300,
        }
    }
}

impl RunConfig {
    /// Parses a config file and applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_at(p))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Self::from_table(table, overrides)
    }

    /// Re-applies overrides on top of an existing configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> CliResult<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let table = self.to_toml().parse::<toml::Table>().expect("serialized config parses");
        Self::from_table(table, overrides)
    }

    fn from_table(mut table: toml::Table, overrides: &[String]) -> CliResult<Self> {
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn canvas_shape(&self) -> Shape {
        let c = &self.canvas;
        Shape::new(c.channels, c.frames, c.height, c.width)
    }

    /// Prior-stage latent shape.
    pub fn prior_shape(&self) -> Shape {
        let c = &self.canvas;
        let (h, w) = match (self.prior.height, self.prior.width) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                let f = c.factor.max(1);
                let (ph, pw) = fresco_core::tiles::prior_resolution(c.height * f, c.width * f);
                ((ph / f).max(1), (pw / f).max(1))
            }
        };
        Shape::new(c.channels, c.frames, h, w)
    }

    /// Effective worker count after applying the environment cap.
    pub fn workers(&self) -> CliResult<usize> {
        let cap = match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer")))?,
            ),
            Err(_) => None,
        };
        let w = self.sampler.workers.max(1);
        Ok(cap.map_or(w, |c| w.min(c)))
    }

    pub fn sampler_config(&self) -> CliResult<SamplerConfig> {
        let t = &self.tiling;
        let ramp = match (t.ramp_h, t.ramp_w) {
            (None, None) => None,
            (Some(h), Some(w)) => Some((h, w)),
            _ => return Err(CliError::Config("tiling.ramp_h and tiling.ramp_w must be set together".into())),
        };
        let p = &self.prior;
        let cfg = SamplerConfig {
            sigmas: SigmaSchedule::linear(self.sampler.steps).map_err(|e| CliError::Config(e.to_string()))?,
            tiling: TilingConfig {
                window_h: t.window_h,
                window_w: t.window_w,
                overlap: t.overlap,
                ramp,
                min_weight: t.min_weight,
            },
            prior: PriorScheduleConfig {
                lambda_base: p.lambda_base,
                mode: p.mode,
                tau: p.tau,
                tau_act: p.tau_act,
                tau_bg: p.tau_bg,
            },
            seed: self.seed,
            mode: self.sampler.mode,
            prediction: self.sampler.prediction,
            workers: self.workers()?,
            strict: self.sampler.strict,
            conditioning: self.sampler.conditioning.clone(),
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before any compute starts.
    pub fn validate(&self) -> CliResult<()> {
        let c = &self.canvas;
        if c.channels == 0 || c.frames == 0 || c.height == 0 || c.width == 0 || c.factor == 0 {
            return Err(CliError::Config(format!("canvas {} must be nonempty", self.canvas_shape())));
        }
        if self.tiling.window_h == 0 || self.tiling.window_w == 0 {
            return Err(CliError::Config("tiling window must be nonempty".into()));
        }
        self.sampler_config()?;
        if self.sampler.mode == FusionMode::FdRegional && self.prior.activity_map.is_none() {
            return Err(CliError::Config("mode fd_regional requires prior.activity_map".into()));
        }
        match self.denoiser.kind {
            DenoiserKind::Gaussian if !(self.denoiser.s > 0.0) => {
                Err(CliError::Config(format!("denoiser.s = {} must be positive", self.denoiser.s)))
            }
            DenoiserKind::Target if self.denoiser.target.is_none() => {
                Err(CliError::Config("denoiser kind target requires denoiser.target".into()))
            }
            DenoiserKind::External if self.denoiser.command.is_empty() => {
                Err(CliError::Config("denoiser kind external requires denoiser.command".into()))
            }
            _ => Ok(()),
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub output: PathBuf,
    pub trace: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_output: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}
