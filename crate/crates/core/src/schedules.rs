//! Noise-level schedule for the sampler and prior-strength schedules.
//!
//! The schedule position `t` is the normalized grid index `i / (N − 1)`. Gates
//! compare with `t <= τ` exactly, so a cutoff of 0.1 on a six-point grid keeps
//! only the first step and 0.35 keeps the first two.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Lambda;
use crate::netpbm::{self, PnmImage};
use crate::tensor::{LatentTensor, Shape};
use crate::flt1;

/// Grid of `N` noise levels, strictly decreasing from the first entry to a
/// terminal 0. The sampler evaluates the denoiser at the first `N − 1` points
/// and integrates to the terminal one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    /// `σ_i = 1 − i/(N − 1)`.
    pub fn linear(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument(format!("schedule needs at least 2 points, got {n}")));
        }
        Self::from_sigmas((0..n).map(|i| 1.0 - i as f64 / (n - 1) as f64).collect())
    }

    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::Argument("schedule needs at least 2 points".into()));
        }
        let (last, sampled) = sigmas.split_last().unwrap();
        if *last != 0.0 {
            return Err(Error::Argument(format!("final sigma must be 0, got {last}")));
        }
        if sampled.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::Argument("sampled sigmas must lie in (0, 1]".into()));
        }
        if sigmas.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::Argument("sigmas must be strictly decreasing".into()));
        }
        Ok(Self { sigmas })
    }

    /// Number of grid points `N`.
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Number of denoiser evaluations, `N − 1`.
    pub fn num_steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    /// Normalized position `i / (N − 1)`.
    pub fn t(&self, i: usize) -> f64 {
        i as f64 / (self.sigmas.len() - 1) as f64
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.t(i)).collect()
    }
}

/// `λ_base · cos(t·π/2) · [t ≤ τ]`.
pub fn lambda_global(t: f64, tau: f64, lambda_base: f64) -> f64 {
    if t <= tau {
        (lambda_base * (t * FRAC_PI_2).cos()).max(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// `λ_base` at every step.
    Constant,
    /// `λ_base · cos(t·π/2)` with no gate.
    Cosine,
    /// Cosine gated at `τ`.
    GatedCosine,
    /// Gated cosine with separate cutoffs for active and background cells.
    Regional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorScheduleConfig {
    pub lambda_base: f64,
    pub mode: PriorMode,
    pub tau: f64,
    pub tau_act: f64,
    pub tau_bg: f64,
}

impl Default for PriorScheduleConfig {
    fn default() -> Self {
        Self {
            lambda_base: 1.5,
            mode: PriorMode::GatedCosine,
            tau: 0.1,
            tau_act: 0.1,
            tau_bg: 0.35,
        }
    }
}

impl PriorScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_base >= 0.0 && self.lambda_base.is_finite()) {
            return Err(Error::Config(format!("lambda_base {} must be finite and >= 0", self.lambda_base)));
        }
        for (name, v) in [("tau", self.tau), ("tau_act", self.tau_act), ("tau_bg", self.tau_bg)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.tau_act > self.tau_bg {
            return Err(Error::Config(format!(
                "tau_act {} exceeds tau_bg {}",
                self.tau_act, self.tau_bg
            )));
        }
        Ok(())
    }

    /// Scalar strength at `t` for the non-regional modes. In regional mode
    /// this is the active-cell value.
    pub fn lambda_at(&self, t: f64) -> f64 {
        match self.mode {
            PriorMode::Constant => self.lambda_base,
            PriorMode::Cosine => lambda_global(t, 1.0, self.lambda_base),
            PriorMode::GatedCosine => lambda_global(t, self.tau, self.lambda_base),
            PriorMode::Regional => lambda_global(t, self.tau_act, self.lambda_base),
        }
    }

    /// Strength at one cell under the regional schedule.
    pub fn lambda_regional(&self, t: f64, active: bool) -> f64 {
        let tau = if active { self.tau_act } else { self.tau_bg };
        lambda_global(t, tau, self.lambda_base)
    }

    /// Materializes the strength for step position `t`.
    pub fn evaluate(&self, t: f64, activity: Option<&ActivityMap>) -> Result<Lambda> {
        match self.mode {
            PriorMode::Regional => {
                let map = activity.ok_or_else(|| {
                    Error::Config("regional prior schedule requires an activity map".into())
                })?;
                let fg = self.lambda_regional(t, true) as f32;
                let bg = self.lambda_regional(t, false) as f32;
                if fg == bg {
                    return Ok(Lambda::Scalar(fg));
                }
                let values = map.values().iter().map(|&a| if a { fg } else { bg }).collect();
                Lambda::plane(map.height, map.width, values)
            }
            _ => Ok(Lambda::Scalar(self.lambda_at(t) as f32)),
        }
    }
}

/// Binary spatial map: `true` marks cells expected to move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityMap {
    pub height: usize,
    pub width: usize,
    values: Vec<bool>,
}

impl ActivityMap {
    pub fn from_bools(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} activity values for a {height}x{width} map",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn uniform(height: usize, width: usize, active: bool) -> Self {
        Self {
            height,
            width,
            values: vec![active; height * width],
        }
    }

    /// Clamp to `[0, 1]`, resize to the target grid, then binarize with `A > 0`.
    pub fn from_raw(
        src_h: usize,
        src_w: usize,
        raw: &[f32],
        target_h: usize,
        target_w: usize,
    ) -> Result<Self> {
        if raw.iter().any(|v| v.is_nan()) {
            return Err(Error::Format("activity map contains NaN".into()));
        }
        let clamped = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let plane = LatentTensor::from_vec(Shape::new(1, 1, src_h, src_w), clamped)?;
        let resized = plane.trilinear_resize(1, target_h, target_w)?;
        Ok(Self {
            height: target_h,
            width: target_w,
            values: resized.data().iter().map(|&v| v > 0.0).collect(),
        })
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.values[i * self.width + j]
    }

    pub fn active_count(&self) -> usize {
        self.values.iter().filter(|&&a| a).count()
    }

    /// Checkerboard of `block × block` squares, active where the block
    /// indices sum to an even number.
    pub fn checkerboard(height: usize, width: usize, block: usize) -> Self {
        let block = block.max(1);
        let values = (0..height)
            .flat_map(|i| (0..width).map(move |j| (i / block + j / block).is_multiple_of(2)))
            .collect();
        Self {
            height,
            width,
            values,
        }
    }

    pub fn to_pgm(&self) -> PnmImage {
        PnmImage::gray(
            self.width,
            self.height,
            self.values.iter().map(|&a| if a { 255 } else { 0 }).collect(),
        )
    }
}

/// Reads an activity map from an 8-bit PGM or a single-channel FLT1 file.
pub fn load_activity_map(path: impl AsRef<Path>, target_h: usize, target_w: usize) -> Result<ActivityMap> {
    let bytes = fs::read(path)?;
    let (h, w, raw) = if netpbm::sniff(&bytes) {
        let img = PnmImage::decode(&bytes)?;
        if img.channels != 1 {
            return Err(Error::Format("activity map must be a grayscale PGM".into()));
        }
        let raw = img.data.iter().map(|&v| v as f32 / 255.0).collect();
        (img.height, img.width, raw)
    } else {
        let (t, _) = flt1::decode(&bytes)?;
        let s = t.shape();
        if s.c != 1 || s.t != 1 {
            return Err(Error::Format(format!("activity map must be 1x1xHxW, got {s}")));
        }
        (s.h, s.w, t.into_vec())
    };
    ActivityMap::from_raw(h, w, &raw, target_h, target_w)
}
