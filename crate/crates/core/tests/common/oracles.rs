//! Direct, slow evaluations the optimised code is compared against.

use super::*;
use ganglionet::annotation::Point;
use ganglionet::{BinaryMask, Tensor};
use rand::Rng;

/// Same-padded stride-1 convolution written as six nested loops over
/// output position and window, accumulated in f64.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let [n, h, w, cin] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [kh, kw, _, cout] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0f64; n * h * w * cout];
    for bi in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for co in 0..cout {
                    let mut acc = b.data()[co] as f64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = y as isize + ky as isize - ph;
                            let ix = xx as isize + kx as isize - pw;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x.data()[((bi * h + iy as usize) * w + ix as usize) * cin + ci];
                                let kv = k.data()[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += xv as f64 * kv as f64;
                            }
                        }
                    }
                    out[((bi * h + y) * w + xx) * cout + co] = acc;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(fast: &Tensor, slow: &[f64]) -> f64 {
    fast.data()
        .iter()
        .zip(slow)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}

/// Values on a 1/16 grid in [-1, 1]: every product and partial sum of a
/// window of at most 100 terms is exact in f32, so any difference is a
/// wrong index rather than rounding.
pub fn dyadic_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-16i32..=16) as f32 / 16.0).collect()).unwrap()
}

pub fn random_case(r: &mut ChaCha8Rng, dyadic: bool) -> (Tensor, Tensor, Tensor) {
    let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
    let (cin, cout) = (r.random_range(1..=4), r.random_range(1..=4));
    let k = [1, 3, 5][r.random_range(0..3)];
    let batch = r.random_range(1..=2);
    if dyadic {
        (dyadic_tensor(r, &[batch, h, w, cin]), dyadic_tensor(r, &[k, k, cin, cout]), dyadic_tensor(r, &[cout]))
    } else {
        (
            random_tensor(r, &[batch, h, w, cin], 1.0),
            random_tensor(r, &[k, k, cin, cout], 1.0),
            random_tensor(r, &[cout], 1.0),
        )
    }
}

/// Pixel `(x, y)` is in the mask iff some pixel of its k×k neighbourhood
/// lies inside the image and has a Gaussian value above one half.
pub fn enumerated_mask(points: &[Point], sigma: f64, k: usize, w: usize, h: usize) -> BinaryMask {
    let r = (k / 2) as i64;
    let hot = |u: i64, v: i64| {
        points.iter().any(|p| {
            let d2 = ((u - p.x as i64).pow(2) + (v - p.y as i64).pow(2)) as f64;
            (-d2 / (2.0 * sigma * sigma)).exp() > 0.5
        })
    };
    BinaryMask::from_fn(w, h, |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (u, v) = (x as i64 + dx, y as i64 + dy);
                u >= 0 && v >= 0 && u < w as i64 && v < h as i64 && hot(u, v)
            })
        })
    })
}

