//! Full-resolution video metrics: Tenengrad sharpness, coarse temporal
//! consistency, embedding-based prior alignment and a seam diagnostic.

mod frame;

pub use frame::{luminance_rgb, Frame, FramePixels};

use std::collections::BTreeSet;

use crate::error::{DenoiseError, Error, Result};
use crate::tiles::TilePlan;

/// Side of the downscaled frames compared by [`temporal_consistency`].
pub const TEMPORAL_SIZE: usize = 128;
/// Normalizer applied to each squared Frobenius distance.
pub const TEMPORAL_DIVISOR: f64 = 64.0 * 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SobelBorder {
    /// Clamp coordinates at the edges and average over every pixel.
    #[default]
    Replicate,
    /// Average only over pixels whose 3×3 neighbourhood is inside the frame.
    Valid,
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Mean of `G_x² + G_y²` over the luminance plane.
pub fn tenengrad(frame: &Frame, border: SobelBorder) -> Result<f64> {
    let (h, w) = (frame.height, frame.width);
    if h < 3 || w < 3 {
        return Err(Error::Argument(format!("frame {h}x{w} smaller than the 3x3 Sobel kernel")));
    }
    let lum = frame.luminance();
    let at = |i: isize, j: isize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        lum[i * w + j]
    };
    let (rows, cols) = match border {
        SobelBorder::Replicate => (0..h, 0..w),
        SobelBorder::Valid => (1..h - 1, 1..w - 1),
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in rows {
        for j in cols.clone() {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (di, (kx, ky)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                for dj in 0..3 {
                    let v = at(i as isize + di as isize - 1, j as isize + dj as isize - 1);
                    gx += kx[dj] * v;
                    gy += ky[dj] * v;
                }
            }
            sum += gx * gx + gy * gy;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean per-frame Tenengrad over a video.
pub fn tenengrad_video(frames: &[Frame], border: SobelBorder) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Argument("video has no frames".into()));
    }
    let mut total = 0.0;
    for f in frames {
        total += tenengrad(f, border)?;
    }
    Ok(total / frames.len() as f64)
}

/// Area-averaging resample of a row-major plane. Each output cell averages
/// the source region it covers, weighting partially covered cells by overlap.
pub fn area_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let rows = area_weights(h, out_h);
    let cols = area_weights(w, out_w);
    let mut tmp = vec![0.0; h * out_w];
    for i in 0..h {
        for (oj, taps) in cols.iter().enumerate() {
            tmp[i * out_w + oj] = taps.iter().map(|&(j, wt)| wt * src[i * w + j]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (oi, taps) in rows.iter().enumerate() {
        for oj in 0..out_w {
            out[oi * out_w + oj] = taps.iter().map(|&(i, wt)| wt * tmp[i * out_w + oj]).sum();
        }
    }
    out
}

fn area_weights(src: usize, out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / out as f64;
    (0..out)
        .map(|k| {
            let (lo, hi) = (k as f64 * scale, (k + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// `(1/(T−1)) Σ_t ‖f̂_t − f̂_{t−1}‖_F² / divisor` over 128×128 area-averaged
/// luminance frames.
pub fn temporal_consistency(frames: &[Frame], divisor: f64) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Argument(format!(
            "temporal consistency needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    if !(divisor > 0.0) {
        return Err(Error::Argument(format!("divisor {divisor} must be positive")));
    }
    let small: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| area_resize(&f.luminance(), f.height, f.width, TEMPORAL_SIZE, TEMPORAL_SIZE))
        .collect();
    let total: f64 = small
        .windows(2)
        .map(|p| p[1].iter().zip(&p[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / divisor)
        .sum();
    Ok(total / (frames.len() - 1) as f64)
}

/// Source of per-frame embedding vectors.
pub trait Embedder {
    fn embed(&self, frame: &Frame) -> std::result::Result<Vec<f32>, DenoiseError>;
}

/// Deterministic built-in embedder: the luminance plane area-averaged onto a
/// `grid × grid` lattice.
#[derive(Debug, Clone, Copy)]
pub struct PooledEmbedder {
    pub grid: usize,
}

impl Default for PooledEmbedder {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

impl Embedder for PooledEmbedder {
    fn embed(&self, frame: &Frame) -> std::result::Result<Vec<f32>, DenoiseError> {
        let g = self.grid.max(1);
        Ok(area_resize(&frame.luminance(), frame.height, frame.width, g, g)
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na.sqrt() * nb.sqrt()))
}

/// Mean cosine similarity between embeddings of corresponding frames.
pub fn prior_alignment<E: Embedder + ?Sized>(gen: &[Frame], prior: &[Frame], embedder: &E) -> Result<f64> {
    if gen.len() != prior.len() {
        return Err(Error::Argument(format!(
            "{} generated frames vs {} prior frames",
            gen.len(),
            prior.len()
        )));
    }
    if gen.is_empty() {
        return Err(Error::Argument("videos have no frames".into()));
    }
    let mut total = 0.0;
    for (k, (g, p)) in gen.iter().zip(prior).enumerate() {
        let zg = embedder.embed(g).map_err(|source| Error::Embedding { frame: k, source })?;
        let zp = embedder.embed(p).map_err(|source| Error::Embedding { frame: k, source })?;
        if zg.len() != zp.len() {
            return Err(Error::Metric {
                frame: k,
                reason: format!("embedding dims {} and {} differ", zg.len(), zp.len()),
            });
        }
        total += cosine(&zp, &zg).ok_or_else(|| Error::Metric {
            frame: k,
            reason: "zero-norm embedding".into(),
        })?;
    }
    Ok(total / gen.len() as f64)
}

/// Pixel positions of interior tile edges, as (rows, cols) boundaries `b`
/// separating pixel `b − 1` from pixel `b`.
pub fn tile_boundaries(plan: &TilePlan, factor: usize, height: usize, width: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rows = BTreeSet::new();
    let mut cols = BTreeSet::new();
    for r in &plan.tiles {
        for b in [r.row * factor, (r.row + r.height) * factor] {
            if b > 0 && b < height {
                rows.insert(b);
            }
        }
        for b in [r.col * factor, (r.col + r.width) * factor] {
            if b > 0 && b < width {
                cols.insert(b);
            }
        }
    }
    (rows.into_iter().collect(), cols.into_iter().collect())
}

/// Mean squared luminance step across interior tile boundaries minus the
/// mean squared step over the whole frame. Positive values indicate seams.
pub fn seam_energy(frame: &Frame, plan: &TilePlan, factor: usize) -> f64 {
    let (h, w) = (frame.height, frame.width);
    let lum = frame.luminance();
    let (rows, cols) = tile_boundaries(plan, factor, h, w);
    let dx = |i: usize, j: usize| lum[i * w + j] - lum[i * w + j - 1];
    let dy = |i: usize, j: usize| lum[i * w + j] - lum[(i - 1) * w + j];

    let (mut all, mut n_all) = (0.0, 0usize);
    for i in 0..h {
        for j in 0..w {
            if j > 0 {
                all += dx(i, j).powi(2);
                n_all += 1;
            }
            if i > 0 {
                all += dy(i, j).powi(2);
                n_all += 1;
            }
        }
    }
    let (mut seam, mut n_seam) = (0.0, 0usize);
    for &b in &cols {
        for i in 0..h {
            seam += dx(i, b).powi(2);
            n_seam += 1;
        }
    }
    for &b in &rows {
        for j in 0..w {
            seam += dy(b, j).powi(2);
            n_seam += 1;
        }
    }
    if n_seam == 0 || n_all == 0 {
        return 0.0;
    }
    seam / n_seam as f64 - all / n_all as f64
}
