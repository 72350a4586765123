//! Denoiser interface and the built-in verification denoisers.
//!
//! A denoiser maps a noisy tile to a prediction of the same shape. Flow
//! denoisers predict the velocity `ε − x₀` under `x_t = (1 − σ) x₀ + σ ε`;
//! ε denoisers predict the noise under `x_t = √(1 − σ²) x₀ + σ ε`, where the
//! request's `sigma` is the noise standard deviation.

pub mod protocol;

#[cfg(not(target_arch = "wasm32"))]
pub mod external;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::DenoiseError;
use crate::tensor::{LatentTensor, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    Flow,
    Eps,
}

impl PredictionKind {
    pub fn to_byte(self) -> u8 {
        match self {
            Self::Flow => 0,
            Self::Eps => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Flow),
            1 => Some(Self::Eps),
            _ => None,
        }
    }

    /// Signal coefficient `a` in `x_t = a x₀ + σ ε`.
    pub fn signal_scale(self, sigma: f64) -> f64 {
        match self {
            Self::Flow => 1.0 - sigma,
            Self::Eps => (1.0 - sigma * sigma).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserRequest {
    pub tile: LatentTensor,
    pub step: u32,
    pub t: f32,
    pub sigma: f32,
    pub conditioning: String,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserResponse {
    pub prediction: LatentTensor,
    pub kind: PredictionKind,
}

pub trait Denoiser: Send + Sync {
    fn kind(&self) -> PredictionKind;

    fn denoise(&self, req: &DenoiserRequest) -> Result<DenoiserResponse, DenoiseError>;
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn kind(&self) -> PredictionKind {
        (**self).kind()
    }

    fn denoise(&self, req: &DenoiserRequest) -> Result<DenoiserResponse, DenoiseError> {
        (**self).denoise(req)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn kind(&self) -> PredictionKind {
        (**self).kind()
    }

    fn denoise(&self, req: &DenoiserRequest) -> Result<DenoiserResponse, DenoiseError> {
        (**self).denoise(req)
    }
}

fn check_sigma(sigma: f32) -> Result<f64, DenoiseError> {
    if sigma > 0.0 && sigma <= 1.0 {
        Ok(sigma as f64)
    } else {
        Err(DenoiseError::Domain(format!("sigma {sigma} outside (0, 1]")))
    }
}

/// Exact posterior-mean predictor for i.i.d. `N(μ, s²)` data.
///
/// With `x_t = a x₀ + σ ε`, Gaussian conjugacy gives
/// `E[x₀ | x_t] = (a s² x_t + σ² μ) / (a² s² + σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianAnalytic {
    pub mu: f64,
    pub s: f64,
    pub kind: PredictionKind,
}

impl GaussianAnalytic {
    pub fn new(mu: f64, s: f64, kind: PredictionKind) -> Self {
        Self { mu, s, kind }
    }

    pub fn posterior_mean(&self, x: f64, sigma: f64) -> f64 {
        let a = self.kind.signal_scale(sigma);
        let s2 = self.s * self.s;
        (a * s2 * x + sigma * sigma * self.mu) / (a * a * s2 + sigma * sigma)
    }

    /// Prediction for a single value.
    pub fn predict(&self, x: f64, sigma: f64) -> f64 {
        let x0 = self.posterior_mean(x, sigma);
        match self.kind {
            PredictionKind::Flow => (x - x0) / sigma,
            PredictionKind::Eps => (x - self.kind.signal_scale(sigma) * x0) / sigma,
        }
    }
}

impl Denoiser for GaussianAnalytic {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn denoise(&self, req: &DenoiserRequest) -> Result<DenoiserResponse, DenoiseError> {
        let sigma = check_sigma(req.sigma)?;
        if !(self.s > 0.0) {
            return Err(DenoiseError::Domain(format!("data std {} must be positive", self.s)));
        }
        let data = req
            .tile
            .data()
            .iter()
            .map(|&x| self.predict(x as f64, sigma) as f32)
            .collect();
        let prediction = LatentTensor::from_vec(req.tile.shape(), data).map_err(|_| DenoiseError::NonFinite)?;
        Ok(DenoiserResponse {
            prediction,
            kind: self.kind,
        })
    }
}

/// Predicts whatever makes the clean estimate equal a fixed canvas-shaped
/// target on the requested window.
#[derive(Debug, Clone)]
pub struct TargetDriver {
    target: Arc<LatentTensor>,
    kind: PredictionKind,
}

impl TargetDriver {
    pub fn new(target: LatentTensor, kind: PredictionKind) -> Self {
        Self {
            target: Arc::new(target),
            kind,
        }
    }

    pub fn target(&self) -> &LatentTensor {
        &self.target
    }
}

impl Denoiser for TargetDriver {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn denoise(&self, req: &DenoiserRequest) -> Result<DenoiserResponse, DenoiseError> {
        let sigma = check_sigma(req.sigma)?;
        let crop = self
            .target
            .crop(req.rect)
            .map_err(|e| DenoiseError::Domain(format!("target crop: {e}")))?;
        if crop.shape() != req.tile.shape() {
            return Err(DenoiseError::ShapeMismatch {
                expected: req.tile.shape().as_array(),
                got: crop.shape().as_array(),
            });
        }
        // flow: x̂0 = x − σ·y; eps: x̂0 = (x − σ·y)/a
        let a = match self.kind {
            PredictionKind::Flow => 1.0,
            PredictionKind::Eps => self.kind.signal_scale(sigma),
        };
        let data = req
            .tile
            .data()
            .iter()
            .zip(crop.data())
            .map(|(&x, &x0)| ((x as f64 - a * x0 as f64) / sigma) as f32)
            .collect();
        let prediction = LatentTensor::from_vec(req.tile.shape(), data).map_err(|_| DenoiseError::NonFinite)?;
        Ok(DenoiserResponse {
            prediction,
            kind: self.kind,
        })
    }
}

/// Returns the tile unchanged; useful as a protocol loopback.
#[derive(Debug, Clone, Copy, Default)]
pub struct Echo;

impl Denoiser for Echo {
    fn kind(&self) -> PredictionKind {
        PredictionKind::Flow
    }

    fn denoise(&self, req: &DenoiserRequest) -> Result<DenoiserResponse, DenoiseError> {
        Ok(DenoiserResponse {
            prediction: req.tile.clone(),
            kind: PredictionKind::Flow,
        })
    }
}
