//! Overlapping tile layouts over a latent canvas, plus the pixel-size
//! snapping rules used to pick canvas and prior resolutions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rect;

/// Spatial compression between pixels and latent cells.
pub const DEFAULT_LATENT_FACTOR: usize = 8;

/// Pixel budget of the native-resolution prior pass (480 × 832).
pub const PRIOR_TARGET_AREA: f64 = 399_360.0;

/// Pixel dimensions must be multiples of this.
pub const PIXEL_ALIGN: usize = 16;

// Guards floor(window · (1 − overlap)) against values like 335.99999999999994.
const FLOOR_EPS: f64 = 1e-9;

/// Snaps a pixel dimension down to a multiple of 16, never below 16.
pub fn snap_dim(px: usize) -> usize {
    (px / PIXEL_ALIGN * PIXEL_ALIGN).max(PIXEL_ALIGN)
}

/// Aspect-preserving resolution with the fixed prior pixel budget, snapped.
pub fn prior_resolution(h: usize, w: usize) -> (usize, usize) {
    let (h, w) = (h.max(1) as f64, w.max(1) as f64);
    let ph = (PRIOR_TARGET_AREA * h / w).sqrt().round() as usize;
    let pw = (PRIOR_TARGET_AREA * w / h).sqrt().round() as usize;
    (snap_dim(ph), snap_dim(pw))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub tiles: Vec<Rect>,
    pub canvas_h: usize,
    pub canvas_w: usize,
    pub window_h: usize,
    pub window_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

/// Plans tiles in latent cells. Strides are `floor(window · (1 − overlap))`.
///
/// A window larger than the canvas is clipped to the canvas.
pub fn plan_tiles(
    canvas_h: usize,
    canvas_w: usize,
    window_h: usize,
    window_w: usize,
    overlap: f64,
) -> Result<TilePlan> {
    check_overlap(overlap)?;
    let stride = |win: usize| ((win as f64 * (1.0 - overlap) + FLOOR_EPS).floor() as usize).max(1);
    plan_with_strides(canvas_h, canvas_w, window_h, window_w, stride(window_h), stride(window_w))
}

/// Plans tiles from pixel sizes. Window and stride are converted to latent
/// cells independently, each by floor division by `factor`.
pub fn plan_tiles_px(
    canvas_h_px: usize,
    canvas_w_px: usize,
    window_h_px: usize,
    window_w_px: usize,
    overlap: f64,
    factor: usize,
) -> Result<TilePlan> {
    check_overlap(overlap)?;
    if factor == 0 {
        return Err(Error::Argument("latent factor must be positive".into()));
    }
    let stride_px = |win: usize| (win as f64 * (1.0 - overlap) + FLOOR_EPS).floor() as usize;
    plan_with_strides(
        canvas_h_px / factor,
        canvas_w_px / factor,
        window_h_px / factor,
        window_w_px / factor,
        (stride_px(window_h_px) / factor).max(1),
        (stride_px(window_w_px) / factor).max(1),
    )
}

pub fn plan_with_strides(
    canvas_h: usize,
    canvas_w: usize,
    window_h: usize,
    window_w: usize,
    stride_h: usize,
    stride_w: usize,
) -> Result<TilePlan> {
    if canvas_h == 0 || canvas_w == 0 || window_h == 0 || window_w == 0 {
        return Err(Error::Argument(format!(
            "canvas {canvas_h}x{canvas_w} and window {window_h}x{window_w} must be nonempty"
        )));
    }
    if stride_h == 0 || stride_w == 0 {
        return Err(Error::Argument("strides must be positive".into()));
    }
    let window_h = window_h.min(canvas_h);
    let window_w = window_w.min(canvas_w);
    let rows = axis_positions(canvas_h, window_h, stride_h);
    let cols = axis_positions(canvas_w, window_w, stride_w);
    let tiles = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| Rect::new(r, c, window_h, window_w)))
        .collect();
    Ok(TilePlan {
        tiles,
        canvas_h,
        canvas_w,
        window_h,
        window_w,
        stride_h,
        stride_w,
    })
}

/// Grid positions `0, s, 2s, …` that fit, plus one position flush with the
/// far edge when the grid stops short of it.
fn axis_positions(len: usize, win: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|&p| p + win <= len)
        .collect();
    let last = *out.last().expect("window fits, so position 0 is present");
    if last + win < len {
        out.push(len - win);
    }
    out.dedup();
    out
}

fn check_overlap(overlap: f64) -> Result<()> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Argument(format!("overlap {overlap} outside [0, 1)")));
    }
    Ok(())
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Number of tiles containing each canvas cell, row-major.
    pub fn coverage_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.canvas_h * self.canvas_w];
        for r in &self.tiles {
            for i in r.row..r.row + r.height {
                for c in &mut counts[i * self.canvas_w + r.col..i * self.canvas_w + r.col + r.width] {
                    *c += 1;
                }
            }
        }
        counts
    }

    pub fn coverage_stats(&self) -> CoverageStats {
        let counts = self.coverage_counts();
        let min = counts.iter().copied().min().unwrap_or(0);
        let max = counts.iter().copied().max().unwrap_or(0);
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len().max(1) as f64;
        let overlapped = counts.iter().filter(|&&c| c > 1).count();
        CoverageStats {
            min,
            max,
            mean,
            overlapped_cells: overlapped,
            cells: counts.len(),
        }
    }

    /// Human-readable table followed by coverage statistics.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "canvas {}x{}  window {}x{}  stride {}x{}  tiles {}",
            self.canvas_h,
            self.canvas_w,
            self.window_h,
            self.window_w,
            self.stride_h,
            self.stride_w,
            self.tiles.len()
        );
        let _ = writeln!(s, "{:>5} {:>6} {:>6} {:>6} {:>6}", "tile", "row", "col", "height", "width");
        for (k, r) in self.tiles.iter().enumerate() {
            let _ = writeln!(s, "{k:>5} {:>6} {:>6} {:>6} {:>6}", r.row, r.col, r.height, r.width);
        }
        let st = self.coverage_stats();
        let _ = writeln!(
            s,
            "coverage min {} max {} mean {:.4} overlapped {}/{}",
            st.min, st.max, st.mean, st.overlapped_cells, st.cells
        );
        s
    }

    /// One tile per line: `row col height width`.
    pub fn render_lines(&self) -> String {
        self.tiles
            .iter()
            .map(|r| format!("{} {} {} {}\n", r.row, r.col, r.height, r.width))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageStats {
    pub min: u32,
    pub max: u32,
    pub mean: f64,
    pub overlapped_cells: usize,
    pub cells: usize,
}
