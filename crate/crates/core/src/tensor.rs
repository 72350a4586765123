//! Dense 4-D latent tensors.
//!
//! Layout is row-major `(C, T, H, W)` with `W` varying fastest. Every module in
//! the crate assumes this layout; there are no strided or transposed views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a latent tensor: channels, frames, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, t: usize, h: usize, w: usize) -> Self {
        Self { c, t, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial cells, `H·W`.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.c, self.t, self.h, self.w]
    }

    /// Same channels and frames, different spatial extent.
    pub fn with_spatial(&self, h: usize, w: usize) -> Self {
        Self { h, w, ..*self }
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, i: usize, j: usize) -> usize {
        ((c * self.t + t) * self.h + i) * self.w + j
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.c, self.t, self.h, self.w)
    }
}

/// Spatial window on a canvas, in latent cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub const fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self {
            row,
            col,
            height,
            width,
        }
    }

    pub fn full(shape: Shape) -> Self {
        Self::new(0, 0, shape.h, shape.w)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.row && i < self.row + self.height && j >= self.col && j < self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Checks the rect is nonempty and fits inside an `h × w` canvas.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Argument(format!("empty rect {self:?}")));
        }
        if self.row + self.height > h {
            return Err(Error::Bounds {
                dim: "height",
                start: self.row,
                len: self.height,
                limit: h,
            });
        }
        if self.col + self.width > w {
            return Err(Error::Bounds {
                dim: "width",
                start: self.col,
                len: self.width,
                limit: w,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} elements supplied for shape {shape} ({} expected)",
                data.len(),
                shape.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(c, t, i, j)` in layout order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.c {
            for t in 0..shape.t {
                for i in 0..shape.h {
                    for j in 0..shape.w {
                        data.push(f(c, t, i, j));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, i: usize, j: usize) -> f32 {
        self.data[self.shape.index(c, t, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, i: usize, j: usize, v: f32) {
        let k = self.shape.index(c, t, i, j);
        self.data[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }

    /// Euclidean distance to `other`, accumulated in f64.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Copies the spatial window `r` out of every channel and frame.
    pub fn crop(&self, r: Rect) -> Result<Self> {
        r.validate(self.shape.h, self.shape.w)?;
        let out_shape = self.shape.with_spatial(r.height, r.width);
        let mut data = Vec::with_capacity(out_shape.len());
        for c in 0..self.shape.c {
            for t in 0..self.shape.t {
                for i in 0..r.height {
                    let start = self.shape.index(c, t, r.row + i, r.col);
                    data.extend_from_slice(&self.data[start..start + r.width]);
                }
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Places `self` into a zero canvas of `canvas` shape at window `r`.
    pub fn zero_pad(&self, r: Rect, canvas: Shape) -> Result<Self> {
        if self.shape.h != r.height || self.shape.w != r.width {
            return Err(Error::Shape(format!(
                "tile {} does not match rect {}x{}",
                self.shape, r.height, r.width
            )));
        }
        if self.shape.c != canvas.c || self.shape.t != canvas.t {
            return Err(Error::Shape(format!(
                "tile {} does not match canvas {canvas}",
                self.shape
            )));
        }
        r.validate(canvas.h, canvas.w)?;
        let mut out = Self::zeros(canvas);
        for c in 0..canvas.c {
            for t in 0..canvas.t {
                for i in 0..r.height {
                    let src = self.shape.index(c, t, i, 0);
                    let dst = canvas.index(c, t, r.row + i, r.col);
                    out.data[dst..dst + r.width].copy_from_slice(&self.data[src..src + r.width]);
                }
            }
        }
        Ok(out)
    }

    /// Endpoint-aligned trilinear resize over `(T, H, W)`, channel by channel.
    pub fn trilinear_resize(&self, out_t: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if out_t == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::Argument(format!(
                "resize target {out_t}x{out_h}x{out_w} has a zero dimension"
            )));
        }
        if self.shape.is_empty() {
            return Err(Error::Argument(format!("cannot resize empty tensor {}", self.shape)));
        }
        let src = self.shape;
        if (out_t, out_h, out_w) == (src.t, src.h, src.w) {
            return Ok(self.clone());
        }
        let taps_t = axis_taps(src.t, out_t);
        let taps_h = axis_taps(src.h, out_h);
        let taps_w = axis_taps(src.w, out_w);
        let out_shape = Shape::new(src.c, out_t, out_h, out_w);
        let mut data = Vec::with_capacity(out_shape.len());
        for c in 0..src.c {
            for &(t0, t1, ft) in &taps_t {
                for &(i0, i1, fi) in &taps_h {
                    for &(j0, j1, fj) in &taps_w {
                        let v = |t: usize, i: usize, j: usize| self.get(c, t, i, j) as f64;
                        let lerp = |a: f64, b: f64, f: f64| a * (1.0 - f) + b * f;
                        let top = lerp(v(t0, i0, j0), v(t0, i0, j1), fj);
                        let bot = lerp(v(t0, i1, j0), v(t0, i1, j1), fj);
                        let near = lerp(top, bot, fi);
                        let top = lerp(v(t1, i0, j0), v(t1, i0, j1), fj);
                        let bot = lerp(v(t1, i1, j0), v(t1, i1, j1), fj);
                        let far = lerp(top, bot, fi);
                        data.push(lerp(near, far, ft) as f32);
                    }
                }
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }
}

/// Source taps `(lo, hi, frac)` for each output index of an endpoint-aligned
/// 1-D resize. A single output sample maps to source index 0.
pub(crate) fn axis_taps(src_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|k| {
            if out_len == 1 || src_len == 1 {
                return (0, 0, 0.0);
            }
            let pos = k as f64 * (src_len - 1) as f64 / (out_len - 1) as f64;
            let lo = (pos.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}
