//! Closed-form fusion of overlapping tile predictions.
//!
//! Tile predictions `y_i` with blending weights `w_i` are accumulated into a
//! numerator `Σ w_i ⊙ y_i` and a spatial denominator `Σ w_i`. The fused
//! output minimizes, per canvas element,
//!
//! ```text
//! Σ_i w_i (y − y_i)²  +  λ (x̂₀(y) − x_prior)²
//! ```
//!
//! where `x̂₀` is the one-step clean prediction of the sampler's convention:
//! `x_t − σ y` for flow matching and `(x_t − √(1−α) y) / √α` for
//! ε-prediction. With `λ = 0` both reduce to the weighted mean `num / den`.
//!
//! Accumulators hold f64 sums; outputs are rounded to f32 once.

use crate::blending::WeightMap;
use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Rect, Shape};

/// Prior strength: one value, one spatial plane broadcast over channels and
/// frames, or a full canvas-shaped tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    Scalar(f32),
    Plane {
        height: usize,
        width: usize,
        values: Vec<f32>,
    },
    Full(LatentTensor),
}

impl Lambda {
    pub fn plane(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} lambda values for a {height}x{width} plane",
                values.len()
            )));
        }
        let lam = Self::Plane {
            height,
            width,
            values,
        };
        lam.check_values()?;
        Ok(lam)
    }

    pub fn full(t: LatentTensor) -> Result<Self> {
        let lam = Self::Full(t);
        lam.check_values()?;
        Ok(lam)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Scalar(v) => *v == 0.0,
            Self::Plane { values, .. } => values.iter().all(|&v| v == 0.0),
            Self::Full(t) => t.data().iter().all(|&v| v == 0.0),
        }
    }

    fn values(&self) -> &[f32] {
        match self {
            Self::Scalar(v) => std::slice::from_ref(v),
            Self::Plane { values, .. } => values,
            Self::Full(t) => t.data(),
        }
    }

    /// (min, max, mean) over stored values.
    pub fn summary(&self) -> (f64, f64, f64) {
        let v = self.values();
        let lo = v.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        (lo, hi, mean)
    }

    fn check_values(&self) -> Result<()> {
        if self.values().iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Argument("prior strength must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn check_shape(&self, shape: Shape) -> Result<()> {
        match self {
            Self::Scalar(_) => Ok(()),
            Self::Plane { height, width, .. } if (*height, *width) == (shape.h, shape.w) => Ok(()),
            Self::Full(t) if t.shape() == shape => Ok(()),
            Self::Plane { height, width, .. } => Err(Error::Shape(format!(
                "lambda plane {height}x{width} vs canvas {shape}"
            ))),
            Self::Full(t) => Err(Error::Shape(format!("lambda {} vs canvas {shape}", t.shape()))),
        }
    }

    /// Value at flat canvas index `k`, whose spatial index is `kp`.
    #[inline]
    fn at(&self, k: usize, kp: usize) -> f64 {
        match self {
            Self::Scalar(v) => *v as f64,
            Self::Plane { values, .. } => values[kp] as f64,
            Self::Full(t) => t.data()[k] as f64,
        }
    }
}

impl From<f32> for Lambda {
    fn from(v: f32) -> Self {
        Self::Scalar(v)
    }
}

/// Running sums `num = Σ w_i ⊙ y_i` and `den = Σ w_i` over tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionAccumulator {
    shape: Shape,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl FusionAccumulator {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            num: vec![0.0; shape.len()],
            den: vec![0.0; shape.plane()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    /// Spatial plane of summed weights.
    pub fn den(&self) -> &[f64] {
        &self.den
    }

    /// Adds `w ⊙ tile_pred` into window `r`.
    pub fn accumulate(&mut self, tile_pred: &LatentTensor, r: Rect, w: &WeightMap) -> Result<()> {
        let ts = tile_pred.shape();
        if (ts.h, ts.w) != (r.height, r.width) || (w.height, w.width) != (r.height, r.width) {
            return Err(Error::Shape(format!(
                "tile {ts} / weights {}x{} do not match rect {}x{}",
                w.height, w.width, r.height, r.width
            )));
        }
        if (ts.c, ts.t) != (self.shape.c, self.shape.t) {
            return Err(Error::Shape(format!("tile {ts} vs canvas {}", self.shape)));
        }
        r.validate(self.shape.h, self.shape.w)?;
        let weights = w.values();
        for c in 0..ts.c {
            for t in 0..ts.t {
                for i in 0..r.height {
                    let src = ts.index(c, t, i, 0);
                    let dst = self.shape.index(c, t, r.row + i, r.col);
                    let pred = &tile_pred.data()[src..src + r.width];
                    let wrow = &weights[i * r.width..(i + 1) * r.width];
                    for ((n, &y), &wv) in self.num[dst..dst + r.width].iter_mut().zip(pred).zip(wrow) {
                        *n += wv as f64 * y as f64;
                    }
                }
            }
        }
        for i in 0..r.height {
            let dst = (r.row + i) * self.shape.w + r.col;
            let wrow = &weights[i * r.width..(i + 1) * r.width];
            for (d, &wv) in self.den[dst..dst + r.width].iter_mut().zip(wrow) {
                *d += wv as f64;
            }
        }
        Ok(())
    }

    /// Adds another accumulator's sums into this one.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.shape != self.shape {
            return Err(Error::Shape(format!("{} vs {}", other.shape, self.shape)));
        }
        for (a, b) in self.num.iter_mut().zip(&other.num) {
            *a += b;
        }
        for (a, b) in self.den.iter_mut().zip(&other.den) {
            *a += b;
        }
        Ok(())
    }

    pub fn uncovered_cells(&self) -> usize {
        self.den.iter().filter(|&&d| d <= 0.0).count()
    }

    /// Weighted mean `num / den`.
    pub fn fuse_md(&self) -> Result<LatentTensor> {
        let uncovered = self.uncovered_cells();
        if uncovered > 0 {
            return Err(Error::Coverage { cells: uncovered });
        }
        self.fuse_with(|_, _, num, den| num / den)
    }

    /// Prior-regularized fusion for flow-matching velocities:
    /// `(σλ(x_t − x_prior) + num) / (σ²λ + den)`.
    pub fn fuse_fd_flow(
        &self,
        x_t: &LatentTensor,
        x_prior: &LatentTensor,
        lambda: &Lambda,
        sigma: f64,
    ) -> Result<LatentTensor> {
        self.check_prior_inputs(x_t, x_prior, lambda)?;
        if !(sigma > 0.0) && !lambda.is_zero() {
            return Err(Error::Domain(format!("sigma {sigma} must be positive when lambda > 0")));
        }
        self.check_coverage(lambda)?;
        let (x, p) = (x_t.data(), x_prior.data());
        self.fuse_with(|k, kp, num, den| {
            let lam = lambda.at(k, kp);
            (sigma * lam * (x[k] as f64 - p[k] as f64) + num) / (sigma * sigma * lam + den)
        })
    }

    /// Prior-regularized fusion for ε-prediction with cumulative signal level
    /// `α ∈ (0, 1)`.
    pub fn fuse_fd_eps(
        &self,
        x_t: &LatentTensor,
        x_prior: &LatentTensor,
        lambda: &Lambda,
        alpha: f64,
    ) -> Result<LatentTensor> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
        }
        self.check_prior_inputs(x_t, x_prior, lambda)?;
        self.check_coverage(lambda)?;
        let ratio = (1.0 - alpha) / alpha;
        let gain = ratio.sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let (x, p) = (x_t.data(), x_prior.data());
        self.fuse_with(|k, kp, num, den| {
            let lam = lambda.at(k, kp);
            (gain * lam * (x[k] as f64 * inv_sqrt_alpha - p[k] as f64) + num) / (ratio * lam + den)
        })
    }

    fn check_prior_inputs(&self, x_t: &LatentTensor, x_prior: &LatentTensor, lambda: &Lambda) -> Result<()> {
        if x_t.shape() != self.shape || x_prior.shape() != self.shape {
            return Err(Error::Shape(format!(
                "x_t {} / prior {} vs accumulator {}",
                x_t.shape(),
                x_prior.shape(),
                self.shape
            )));
        }
        lambda.check_shape(self.shape)
    }

    /// Cells with no tile weight must have a positive prior strength in every
    /// channel and frame.
    fn check_coverage(&self, lambda: &Lambda) -> Result<()> {
        let s = self.shape;
        let mut bad = 0;
        for (kp, &d) in self.den.iter().enumerate() {
            if d > 0.0 {
                continue;
            }
            let starved = match lambda {
                Lambda::Full(_) => (0..s.c * s.t).any(|ct| lambda.at(ct * s.plane() + kp, kp) == 0.0),
                _ => lambda.at(kp, kp) == 0.0,
            };
            if starved {
                bad += 1;
            }
        }
        if bad > 0 {
            return Err(Error::Coverage { cells: bad });
        }
        Ok(())
    }

    fn fuse_with(&self, f: impl Fn(usize, usize, f64, f64) -> f64) -> Result<LatentTensor> {
        let plane = self.shape.plane();
        let data: Vec<f32> = self
            .num
            .iter()
            .enumerate()
            .map(|(k, &num)| {
                let kp = k % plane;
                f(k, kp, num, self.den[kp]) as f32
            })
            .collect();
        LatentTensor::from_vec(self.shape, data).map_err(|_| Error::NonFinite("fusion"))
    }
}

/// One tile's contribution to the fusion objective.
#[derive(Debug, Clone, Copy)]
pub struct TileTerm<'a> {
    pub pred: &'a LatentTensor,
    pub rect: Rect,
    pub weight: &'a WeightMap,
}

/// `Σ_i ‖√w_i ⊙ (y − y_i)‖²`, with weights zero outside each window.
pub fn loss_md(y: &LatentTensor, tiles: &[TileTerm<'_>]) -> Result<f64> {
    let s = y.shape();
    let mut total = 0.0;
    for term in tiles {
        let ts = term.pred.shape();
        if (ts.c, ts.t, ts.h, ts.w) != (s.c, s.t, term.rect.height, term.rect.width)
            || (term.weight.height, term.weight.width) != (ts.h, ts.w)
        {
            return Err(Error::Shape(format!("tile {ts} inconsistent with canvas {s}")));
        }
        term.rect.validate(s.h, s.w)?;
        for c in 0..s.c {
            for t in 0..s.t {
                for i in 0..ts.h {
                    for j in 0..ts.w {
                        let d = y.get(c, t, term.rect.row + i, term.rect.col + j) as f64
                            - term.pred.get(c, t, i, j) as f64;
                        total += term.weight.get(i, j) as f64 * d * d;
                    }
                }
            }
        }
    }
    Ok(total)
}

/// [`loss_md`] plus `‖√λ ⊙ ((x_t − σ y) − x_prior)‖²`.
pub fn loss_fd(
    y: &LatentTensor,
    tiles: &[TileTerm<'_>],
    x_t: &LatentTensor,
    x_prior: &LatentTensor,
    lambda: &Lambda,
    sigma: f64,
) -> Result<f64> {
    prior_loss(y, tiles, x_t, x_prior, lambda, |x, y| x - sigma * y)
}

/// [`loss_md`] plus `‖√λ ⊙ ((x_t − √(1−α) y)/√α − x_prior)‖²`.
pub fn loss_fd_eps(
    y: &LatentTensor,
    tiles: &[TileTerm<'_>],
    x_t: &LatentTensor,
    x_prior: &LatentTensor,
    lambda: &Lambda,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    prior_loss(y, tiles, x_t, x_prior, lambda, |x, y| (x - b * y) / a)
}

fn prior_loss(
    y: &LatentTensor,
    tiles: &[TileTerm<'_>],
    x_t: &LatentTensor,
    x_prior: &LatentTensor,
    lambda: &Lambda,
    clean: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    y.check_same_shape(x_t)?;
    y.check_same_shape(x_prior)?;
    lambda.check_shape(y.shape())?;
    let plane = y.shape().plane();
    let prior: f64 = (0..y.data().len())
        .map(|k| {
            let d = clean(x_t.data()[k] as f64, y.data()[k] as f64) - x_prior.data()[k] as f64;
            lambda.at(k, k % plane) * d * d
        })
        .sum();
    Ok(loss_md(y, tiles)? + prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> Shape {
        Shape::new(1, 1, 2, 3)
    }

    #[test]
    fn single_full_tile() {
        let pred = LatentTensor::from_fn(shape(), |_, _, i, j| (i * 3 + j) as f32);
        let mut acc = FusionAccumulator::new(shape());
        acc.accumulate(&pred, Rect::full(shape()), &WeightMap::ones(2, 3)).unwrap();
        assert!(acc.den().iter().all(|&d| d == 1.0));
        assert_eq!(acc.fuse_md().unwrap(), pred);
    }

    #[test]
    fn identical_tiles_average_to_themselves() {
        let pred = LatentTensor::from_fn(shape(), |_, _, i, j| (i as f32 - j as f32) * 0.3);
        let mut acc = FusionAccumulator::new(shape());
        for _ in 0..2 {
            acc.accumulate(&pred, Rect::full(shape()), &WeightMap::ones(2, 3)).unwrap();
        }
        assert!(acc.den().iter().all(|&d| d == 2.0));
        assert_eq!(acc.fuse_md().unwrap(), pred);
    }

    #[test]
    fn weighted_mean_at_shared_cell() {
        let s = Shape::new(1, 1, 1, 3);
        let a = LatentTensor::filled(Shape::new(1, 1, 1, 2), 2.0);
        let b = LatentTensor::filled(Shape::new(1, 1, 1, 2), 5.0);
        let u = WeightMap::from_values(1, 2, vec![1.0, 0.25]).unwrap();
        let v = WeightMap::from_values(1, 2, vec![0.75, 1.0]).unwrap();
        let mut acc = FusionAccumulator::new(s);
        acc.accumulate(&a, Rect::new(0, 0, 1, 2), &u).unwrap();
        acc.accumulate(&b, Rect::new(0, 1, 1, 2), &v).unwrap();
        let y = acc.fuse_md().unwrap();
        let shared = (0.25 * 2.0 + 0.75 * 5.0) / (0.25 + 0.75);
        assert_eq!(y.data(), &[2.0, shared as f32, 5.0]);
    }

    #[test]
    fn uncovered_without_prior_is_an_error() {
        let s = Shape::new(1, 1, 1, 3);
        let mut acc = FusionAccumulator::new(s);
        acc.accumulate(&LatentTensor::zeros(Shape::new(1, 1, 1, 2)), Rect::new(0, 0, 1, 2), &WeightMap::ones(1, 2))
            .unwrap();
        assert!(matches!(acc.fuse_md(), Err(Error::Coverage { cells: 1 })));
        let x = LatentTensor::zeros(s);
        assert!(matches!(
            acc.fuse_fd_flow(&x, &x, &Lambda::Scalar(0.0), 0.5),
            Err(Error::Coverage { cells: 1 })
        ));
        assert!(acc.fuse_fd_flow(&x, &x, &Lambda::Scalar(1.0), 0.5).is_ok());
    }

    #[test]
    fn prior_only_cell_recovers_prior() {
        let s = Shape::new(1, 1, 1, 1);
        let acc = FusionAccumulator::new(s);
        let x = LatentTensor::filled(s, 0.9);
        let p = LatentTensor::filled(s, -0.4);
        let sigma = 0.6;
        let y = acc.fuse_fd_flow(&x, &p, &Lambda::Scalar(2.0), sigma).unwrap();
        let clean = 0.9 - sigma * y.data()[0] as f64;
        assert!((clean + 0.4).abs() < 1e-6);

        let alpha: f64 = 0.3;
        let e = acc.fuse_fd_eps(&x, &p, &Lambda::Scalar(2.0), alpha).unwrap();
        let clean = (0.9 - (1.0 - alpha).sqrt() * e.data()[0] as f64) / alpha.sqrt();
        assert!((clean + 0.4).abs() < 1e-6);
    }

    #[test]
    fn domain_errors() {
        let s = shape();
        let mut acc = FusionAccumulator::new(s);
        acc.accumulate(&LatentTensor::zeros(s), Rect::full(s), &WeightMap::ones(2, 3)).unwrap();
        let x = LatentTensor::zeros(s);
        assert!(matches!(acc.fuse_fd_flow(&x, &x, &Lambda::Scalar(1.0), 0.0), Err(Error::Domain(_))));
        assert!(acc.fuse_fd_flow(&x, &x, &Lambda::Scalar(0.0), 0.0).is_ok());
        for alpha in [0.0, 1.0, -0.5, 1.5] {
            assert!(matches!(acc.fuse_fd_eps(&x, &x, &Lambda::Scalar(1.0), alpha), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn accumulate_shape_mismatch() {
        let mut acc = FusionAccumulator::new(shape());
        let r = acc.accumulate(&LatentTensor::zeros(Shape::new(1, 1, 2, 2)), Rect::new(0, 0, 2, 3), &WeightMap::ones(2, 3));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn accumulate_leaves_outside_untouched() {
        let s = Shape::new(1, 1, 3, 3);
        let mut acc = FusionAccumulator::new(s);
        acc.accumulate(&LatentTensor::filled(Shape::new(1, 1, 1, 1), 4.0), Rect::new(1, 1, 1, 1), &WeightMap::ones(1, 1))
            .unwrap();
        assert_eq!(acc.num().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(acc.num()[4], 4.0);
        assert_eq!(acc.den()[4], 1.0);
    }

    #[test]
    fn loss_zero_at_matching_prediction() {
        let s = shape();
        let pred = LatentTensor::from_fn(s, |_, _, i, j| (i + j) as f32);
        let w = WeightMap::ones(2, 3);
        let tiles = [TileTerm { pred: &pred, rect: Rect::full(s), weight: &w }];
        assert_eq!(loss_md(&pred, &tiles).unwrap(), 0.0);
        let x = LatentTensor::filled(s, 1.0);
        let p = LatentTensor::filled(s, 0.5);
        assert_eq!(
            loss_fd(&pred, &tiles, &x, &p, &Lambda::Scalar(0.0), 0.5).unwrap(),
            0.0
        );
        // y = (x − p)/σ with no tiles zeroes the prior term
        let y = LatentTensor::filled(s, 1.0);
        assert_eq!(loss_fd(&y, &[], &x, &p, &Lambda::Scalar(3.0), 0.5).unwrap(), 0.0);
    }
}
