//! Plain f64 forward passes, written from the layer definitions without
//! sharing code with the library. Each pass also returns the discrete
//! state of every piecewise step (relu sign, pool winner) so a finite
//! difference can tell whether its step crossed a kink.

use std::collections::BTreeMap;

use ganglionet::net::{decoder_prefix, encoder_prefix, NablaArchitecture, RcuSpec};
use ganglionet::nn::ParamStore;

/// One image, `h × w × c`, channels last.
#[derive(Clone, Debug)]
pub struct Map {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn from_f32(h: usize, w: usize, c: usize, data: &[f32]) -> Map {
        assert_eq!(data.len(), h * w * c);
        Map {
            h,
            w,
            c,
            data: data.iter().map(|&v| v as f64).collect(),
        }
    }
}

pub type Params = BTreeMap<String, Vec<f64>>;

pub fn params_of(store: &ParamStore) -> Params {
    store
        .names()
        .map(|n| (n.to_string(), store.weight(n).unwrap().data().iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Same-padded stride-1 convolution; `k` is `[side, side, x.c, b.len()]`.
pub fn conv(x: &Map, k: &[f64], side: usize, b: &[f64]) -> Map {
    let cout = b.len();
    assert_eq!(k.len(), side * side * x.c * cout);
    let r = (side / 2) as isize;
    let mut data = vec![0.0; x.h * x.w * cout];
    for y in 0..x.h {
        for xx in 0..x.w {
            for co in 0..cout {
                let mut acc = b[co];
                for ky in 0..side {
                    for kx in 0..side {
                        let (iy, ix) = (y as isize + ky as isize - r, xx as isize + kx as isize - r);
                        if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                            continue;
                        }
                        for ci in 0..x.c {
                            acc += x.data[(iy as usize * x.w + ix as usize) * x.c + ci]
                                * k[((ky * side + kx) * x.c + ci) * cout + co];
                        }
                    }
                }
                data[(y * x.w + xx) * cout + co] = acc;
            }
        }
    }
    Map { h: x.h, w: x.w, c: cout, data }
}

fn relu(x: &Map, state: &mut Vec<u8>) -> Map {
    state.extend(x.data.iter().map(|&v| (v > 0.0) as u8));
    Map {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..x.clone()
    }
}

/// `a = conv_f(x); z = relu(a); z = relu(a + conv_r(z))` repeated `t` times.
pub fn rcu(spec: RcuSpec, x: &Map, p: [&[f64]; 4], state: &mut Vec<u8>) -> Map {
    let a = conv(x, p[0], 3, p[1]);
    let mut z = relu(&a, state);
    for _ in 0..spec.t_steps {
        let mut s = conv(&z, p[2], 3, p[3]);
        for (s, a) in s.data.iter_mut().zip(&a.data) {
            *s += a;
        }
        z = relu(&s, state);
    }
    z
}

/// 2×2 max pooling; the winner of each window is scanned in raster order
/// and only a strictly larger value replaces it.
fn maxpool(x: &Map, state: &mut Vec<u8>) -> Map {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut data = Vec::with_capacity(h * w * x.c);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..x.c {
                let mut best = (f64::NEG_INFINITY, 0u8);
                for (i, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = x.data[((2 * y + dy) * x.w + 2 * xx + dx) * x.c + ch];
                    if v > best.0 {
                        best = (v, i as u8);
                    }
                }
                data.push(best.0);
                state.push(best.1);
            }
        }
    }
    Map { h, w, c: x.c, data }
}

fn upsample(x: &Map) -> Map {
    let (h, w) = (2 * x.h, 2 * x.w);
    let mut data = Vec::with_capacity(h * w * x.c);
    for y in 0..h {
        for xx in 0..w {
            let base = ((y / 2) * x.w + xx / 2) * x.c;
            data.extend_from_slice(&x.data[base..base + x.c]);
        }
    }
    Map { h, w, c: x.c, data }
}

fn unit_params<'a>(params: &'a Params, prefix: &str) -> [&'a [f64]; 4] {
    ["f.w", "f.b", "r.w", "r.b"].map(|s| params[&format!("{prefix}.{s}")].as_slice())
}

/// Output probabilities of the network for one image, and the discrete
/// state of every relu and pool window.
pub fn network(arch: &NablaArchitecture, params: &Params, x: &Map) -> (Vec<f64>, Vec<u8>) {
    let mut state = Vec::new();
    let mut encoded: Vec<Map> = Vec::new();
    for (l, spec) in arch.encoder_units().into_iter().enumerate() {
        let input = match l {
            0 => x.clone(),
            _ => maxpool(&encoded[l - 1], &mut state),
        };
        encoded.push(rcu(spec, &input, unit_params(params, &encoder_prefix(l)), &mut state));
    }
    let mut fused: Option<Map> = None;
    for (j, stream) in arch.decode_streams().into_iter().enumerate() {
        let mut h = encoded[stream.origin_level].clone();
        for (k, spec) in stream.stages.into_iter().enumerate() {
            h = rcu(spec, &upsample(&h), unit_params(params, &decoder_prefix(j, k)), &mut state);
        }
        fused = Some(match fused {
            None => h,
            Some(mut acc) => {
                for (a, v) in acc.data.iter_mut().zip(&h.data) {
                    *a += v;
                }
                acc
            }
        });
    }
    let logits = conv(&fused.expect("at least one stream"), &params["head.w"], 1, &params["head.b"]);
    let probs = logits.data.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();
    (probs, state)
}

/// Summed binary cross-entropy.
pub fn bce_sum(p: &[f64], t: &[f32]) -> f64 {
    p.iter()
        .zip(t)
        .map(|(&p, &t)| {
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}
