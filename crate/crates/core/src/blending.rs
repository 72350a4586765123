//! Per-tile blending weights with linear border ramps.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Default weight at a tile's outermost cells.
pub const DEFAULT_MIN_WEIGHT: f32 = 0.1;

/// Spatial weight map, broadcast over channels and frames.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub height: usize,
    pub width: usize,
    values: Vec<f32>,
}

impl WeightMap {
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    /// Wraps explicit weights; every value must lie in `(0, 1]`.
    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} weights for a {height}x{width} map",
                values.len()
            )));
        }
        if values.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Argument("weights must lie in (0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.width + j]
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// One axis of the ramp: `w_min` on the border rising linearly to 1 at
/// distance `ramp_len`.
pub fn ramp_profile(len: usize, ramp_len: usize, w_min: f32) -> Vec<f32> {
    (0..len)
        .map(|k| {
            if ramp_len == 0 {
                return 1.0;
            }
            let d = k.min(len - 1 - k) as f64;
            let frac = (d / ramp_len as f64).min(1.0);
            (w_min as f64 + (1.0 - w_min as f64) * frac) as f32
        })
        .collect()
}

/// Separable ramp map `w(i, j) = r(i; height) · r(j; width)`.
pub fn ramp_weight_map(height: usize, width: usize, ramp_len: usize, w_min: f32) -> Result<WeightMap> {
    ramp_weight_map_2d(height, width, ramp_len, ramp_len, w_min)
}

/// As [`ramp_weight_map`] with independent ramp lengths per axis.
pub fn ramp_weight_map_2d(
    height: usize,
    width: usize,
    ramp_h: usize,
    ramp_w: usize,
    w_min: f32,
) -> Result<WeightMap> {
    if height == 0 || width == 0 {
        return Err(Error::Argument("weight map must be nonempty".into()));
    }
    if !(w_min > 0.0 && w_min <= 1.0) {
        return Err(Error::Argument(format!("minimum weight {w_min} outside (0, 1]")));
    }
    let rows = ramp_profile(height, ramp_h, w_min);
    let cols = ramp_profile(width, ramp_w, w_min);
    let values = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * c))
        .collect();
    Ok(WeightMap {
        height,
        width,
        values,
    })
}

type CacheKey = (usize, usize, usize, usize, u32);

/// Shares identical weight maps across tiles and steps.
#[derive(Debug, Default)]
pub struct WeightCache {
    maps: Mutex<HashMap<CacheKey, Arc<WeightMap>>>,
}

impl WeightCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, height: usize, width: usize, ramp_h: usize, ramp_w: usize, w_min: f32) -> Result<Arc<WeightMap>> {
        let key = (height, width, ramp_h, ramp_w, w_min.to_bits());
        let mut maps = self.maps.lock().expect("weight cache poisoned");
        if let Some(m) = maps.get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(ramp_weight_map_2d(height, width, ramp_h, ramp_w, w_min)?);
        maps.insert(key, Arc::clone(&m));
        Ok(m)
    }
}
