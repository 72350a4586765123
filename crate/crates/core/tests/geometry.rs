use fresco_core::blending::{ramp_profile, ramp_weight_map_2d};
use fresco_core::flt1;
use fresco_core::tiles::{plan_tiles, plan_tiles_px, prior_resolution, snap_dim};
use fresco_core::{LatentTensor, Rect, Shape};
use proptest::prelude::*;

/// Trilinear reference: interpolate along W, then H, then T, one axis at a time.
fn resize_oracle(x: &LatentTensor, ot: usize, oh: usize, ow: usize) -> Vec<f64> {
    let s = x.shape();
    let src = |n: usize, o: usize, k: usize| -> (usize, usize, f64) {
        if o == 1 || n == 1 {
            return (0, 0, 0.0);
        }
        let pos = k as f64 * (n - 1) as f64 / (o - 1) as f64;
        let lo = (pos.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut cur: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let (mut t, mut h, mut w) = (s.t, s.h, s.w);
    // along W
    let mut next = vec![0.0; s.c * t * h * ow];
    for row in 0..s.c * t * h {
        for k in 0..ow {
            let (lo, hi, f) = src(w, ow, k);
            next[row * ow + k] = cur[row * w + lo] * (1.0 - f) + cur[row * w + hi] * f;
        }
    }
    cur = next;
    w = ow;
    // along H
    let mut next = vec![0.0; s.c * t * oh * w];
    for blk in 0..s.c * t {
        for k in 0..oh {
            let (lo, hi, f) = src(h, oh, k);
            for j in 0..w {
                next[(blk * oh + k) * w + j] =
                    cur[(blk * h + lo) * w + j] * (1.0 - f) + cur[(blk * h + hi) * w + j] * f;
            }
        }
    }
    cur = next;
    h = oh;
    // along T
    let mut next = vec![0.0; s.c * ot * h * w];
    for c in 0..s.c {
        for k in 0..ot {
            let (lo, hi, f) = src(t, ot, k);
            for p in 0..h * w {
                next[(c * ot + k) * h * w + p] =
                    cur[(c * t + lo) * h * w + p] * (1.0 - f) + cur[(c * t + hi) * h * w + p] * f;
            }
        }
    }
    t = ot;
    let _ = t;
    next
}

fn tensor_strategy(max: usize) -> impl Strategy<Value = LatentTensor> {
    (1..=3usize, 1..=max, 1..=max, 1..=max).prop_flat_map(|(c, t, h, w)| {
        let s = Shape::new(c, t, h, w);
        prop::collection::vec(-10.0f32..10.0, s.len())
            .prop_map(move |d| LatentTensor::from_vec(s, d).unwrap())
    })
}

#[test]
fn resize_matches_separable_oracle() {
    let x = LatentTensor::from_fn(Shape::new(2, 3, 4, 5), |c, t, i, j| {
        ((c * 7 + t * 5 + i * 3 + j) as f32 * 0.37).sin()
    });
    for (ot, oh, ow) in [(3, 4, 5), (5, 7, 9), (2, 2, 3), (1, 6, 1), (6, 1, 8)] {
        let got = x.trilinear_resize(ot, oh, ow).unwrap();
        let want = resize_oracle(&x, ot, oh, ow);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-5, "{ot}x{oh}x{ow}: {a} vs {b}");
        }
    }
}

#[test]
fn snapping_and_prior_resolution() {
    assert_eq!(snap_dim(3840), 3840);
    assert_eq!(snap_dim(2175), 2160);
    assert_eq!(snap_dim(5), 16);
    let (h, w) = prior_resolution(2176, 3840);
    assert_eq!((h % 16, w % 16), (0, 0));
    let area = (h * w) as f64;
    assert!((area - 399_360.0).abs() / 399_360.0 < 0.1, "{h}x{w}");
}

#[test]
fn pixel_plan_geometry() {
    let plan = plan_tiles_px(272 * 8, 480 * 8, 480, 832, 0.3, 8).unwrap();
    assert_eq!((plan.window_h, plan.window_w), (60, 104));
    assert_eq!((plan.stride_h, plan.stride_w), (42, 72));
    assert!(plan.coverage_stats().min >= 1);
}

proptest! {
    #[test]
    fn crop_of_pad_is_identity(x in tensor_strategy(4), dr in 0usize..4, dc in 0usize..4, eh in 0usize..3, ew in 0usize..3) {
        let s = x.shape();
        let canvas = Shape::new(s.c, s.t, s.h + dr + eh, s.w + dc + ew);
        let r = Rect::new(dr, dc, s.h, s.w);
        let padded = x.zero_pad(r, canvas).unwrap();
        prop_assert_eq!(padded.crop(r).unwrap(), x.clone());
        prop_assert!((padded.sum() - x.sum()).abs() < 1e-9);
    }

    #[test]
    fn resize_to_same_shape_is_bit_exact(x in tensor_strategy(4)) {
        let s = x.shape();
        prop_assert_eq!(x.trilinear_resize(s.t, s.h, s.w).unwrap(), x);
    }

    #[test]
    fn resize_stays_within_range(x in tensor_strategy(4), ot in 1usize..7, oh in 1usize..7, ow in 1usize..7) {
        let (lo, hi) = x.min_max();
        let y = x.trilinear_resize(ot, oh, ow).unwrap();
        let (ylo, yhi) = y.min_max();
        prop_assert!(ylo >= lo - 1e-5 && yhi <= hi + 1e-5);
    }

    #[test]
    fn flt1_round_trip(x in tensor_strategy(3)) {
        let bytes = flt1::encode(&x);
        prop_assert_eq!(bytes.len(), flt1::encoded_len(x.shape()));
        let (y, used) = flt1::decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(y, x);
    }

    #[test]
    fn plan_covers_canvas(h in 1usize..80, w in 1usize..80, wh in 1usize..40, ww in 1usize..40, ov in 0.0f64..0.9) {
        let plan = plan_tiles(h, w, wh, ww, ov).unwrap();
        let counts = plan.coverage_counts();
        prop_assert!(counts.iter().all(|&c| c >= 1));
        for r in &plan.tiles {
            prop_assert!(r.row + r.height <= h && r.col + r.width <= w);
            prop_assert_eq!((r.height, r.width), (wh.min(h), ww.min(w)));
        }
        // row-major, no duplicates
        for p in plan.tiles.windows(2) {
            prop_assert!((p[0].row, p[0].col) < (p[1].row, p[1].col));
        }
        let first = plan.tiles[0];
        let last = *plan.tiles.last().unwrap();
        prop_assert_eq!((first.row, first.col), (0, 0));
        prop_assert_eq!((last.row + last.height, last.col + last.width), (h, w));
    }

    #[test]
    fn ramp_bounds_and_symmetry(len in 1usize..40, ramp in 0usize..20, w_min in 0.01f32..1.0) {
        let p = ramp_profile(len, ramp, w_min);
        prop_assert_eq!(p.len(), len);
        for (k, &v) in p.iter().enumerate() {
            prop_assert!(v >= w_min - 1e-6 && v <= 1.0 + 1e-6);
            prop_assert_eq!(v, p[len - 1 - k]);
        }
    }

    #[test]
    fn weight_map_is_separable(h in 1usize..12, w in 1usize..12, rh in 0usize..6, rw in 0usize..6) {
        let m = ramp_weight_map_2d(h, w, rh, rw, 0.1).unwrap();
        let (ph, pw) = (ramp_profile(h, rh, 0.1), ramp_profile(w, rw, 0.1));
        for i in 0..h {
            for j in 0..w {
                prop_assert!((m.get(i, j) - ph[i] * pw[j]).abs() < 1e-6);
            }
        }
    }
}
