use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flt1;
use crate::netpbm::{self, PnmImage};
use crate::tensor::{LatentTensor, Shape};

/// Luminance weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub fn luminance_rgb(r: f64, g: f64, b: f64) -> f64 {
    LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
}

#[derive(Debug, Clone, PartialEq)]
pub enum FramePixels {
    /// Interleaved 8-bit RGB.
    Rgb8(Vec<u8>),
    /// Real-valued luminance.
    Luma(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: FramePixels,
}

impl Frame {
    pub fn rgb8(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::Shape(format!("{} bytes for a {width}x{height} RGB frame", data.len())));
        }
        Ok(Self {
            width,
            height,
            pixels: FramePixels::Rgb8(data),
        })
    }

    pub fn luma(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!("{} values for a {width}x{height} frame", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame"));
        }
        Ok(Self {
            width,
            height,
            pixels: FramePixels::Luma(data),
        })
    }

    pub fn luminance(&self) -> Vec<f64> {
        match &self.pixels {
            FramePixels::Rgb8(d) => d
                .chunks_exact(3)
                .map(|p| luminance_rgb(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            FramePixels::Luma(d) => d.iter().map(|&v| v as f64).collect(),
        }
    }

    /// `(C, 1, H, W)` tensor with C = 3 for RGB and 1 for luminance.
    pub fn to_tensor(&self) -> LatentTensor {
        match &self.pixels {
            FramePixels::Rgb8(d) => {
                let s = Shape::new(3, 1, self.height, self.width);
                LatentTensor::from_fn(s, |c, _, i, j| d[3 * (i * self.width + j) + c] as f32)
            }
            FramePixels::Luma(d) => LatentTensor::from_vec(Shape::new(1, 1, self.height, self.width), d.clone())
                .expect("frame values are finite"),
        }
    }

    pub fn from_pnm(img: &PnmImage) -> Result<Self> {
        match img.channels {
            3 => Self::rgb8(img.width, img.height, img.data.clone()),
            1 => Self::luma(img.width, img.height, img.data.iter().map(|&v| v as f32).collect()),
            c => Err(Error::Format(format!("unsupported channel count {c}"))),
        }
    }

    /// Accepts `(1, 1, H, W)` luminance or `(3, 1, H, W)` RGB tensors.
    pub fn from_tensor(t: &LatentTensor) -> Result<Self> {
        let s = t.shape();
        if s.t != 1 {
            return Err(Error::Format(format!("frame tensor must hold one frame, got {s}")));
        }
        match s.c {
            1 => Self::luma(s.w, s.h, t.data().to_vec()),
            3 => {
                let lum = (0..s.h)
                    .flat_map(|i| (0..s.w).map(move |j| (i, j)))
                    .map(|(i, j)| {
                        luminance_rgb(t.get(0, 0, i, j) as f64, t.get(1, 0, i, j) as f64, t.get(2, 0, i, j) as f64)
                            as f32
                    })
                    .collect();
                Self::luma(s.w, s.h, lum)
            }
            c => Err(Error::Format(format!("frame tensor must have 1 or 3 channels, got {c}"))),
        }
    }

    /// Splits a `(C, T, H, W)` tensor into `T` luminance frames. One or three
    /// channels are read as gray or RGB; any other count is averaged.
    pub fn video_from_tensor(t: &LatentTensor) -> Result<Vec<Self>> {
        let s = t.shape();
        (0..s.t)
            .map(|k| {
                let lum = (0..s.h)
                    .flat_map(|i| (0..s.w).map(move |j| (i, j)))
                    .map(|(i, j)| match s.c {
                        3 => luminance_rgb(t.get(0, k, i, j) as f64, t.get(1, k, i, j) as f64, t.get(2, k, i, j) as f64)
                            as f32,
                        c => ((0..c).map(|ch| t.get(ch, k, i, j) as f64).sum::<f64>() / c as f64) as f32,
                    })
                    .collect();
                Self::luma(s.w, s.h, lum)
            })
            .collect()
    }

    /// Reads a PPM, PGM or single-frame FLT1 file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if netpbm::sniff(&bytes) {
            Self::from_pnm(&PnmImage::decode(&bytes)?)
        } else {
            Self::from_tensor(&flt1::decode(&bytes)?.0)
        }
    }
}
