//! Finite-difference sweeps of each differentiable op, one seed at a time.
//! Each returns the worst relative error per operand.

use super::reference;
use super::*;
use ganglionet::net::{rcu_backward, rcu_forward_train, RcuParams, RcuSpec};
use ganglionet::nn::{
    bce_backward, bce_loss, conv2d_backward, maxpool2_backward, maxpool2_forward, relu, relu_backward, sigmoid,
    sigmoid_backward, upsample2_backward, upsample2_nearest, Gradients, ParamStore,
};
use ganglionet::Tensor;
use rand::Rng;

pub const SEEDS: u64 = 10;

/// Worst relative error of one operand and the entry where it occurs.
#[derive(Debug, Clone, Copy)]
pub struct Worst {
    pub label: &'static str,
    pub err: f64,
    pub index: usize,
}

impl Worst {
    fn of(label: &'static str, (err, index): (f64, usize)) -> Self {
        Worst { label, err, index }
    }
}

/// Random values whose magnitude stays at least `gap` away from zero, so
/// a ±ε step never crosses a relu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Central differences with step `FD_EPS` of an f64 loss over `values`,
/// against the library's f32 gradient.
fn fd64(values: &[f64], analytic: &Tensor, loss: impl Fn(&[f64]) -> f64) -> (f64, usize) {
    let eps = FD_EPS as f64;
    let mut worst = (0.0, 0);
    for i in 0..values.len() {
        let mut v = values.to_vec();
        v[i] += eps;
        let lp = loss(&v);
        v[i] -= 2.0 * eps;
        let numeric = (lp - loss(&v)) / (2.0 * eps);
        let e = rel_err(analytic.data()[i] as f64, numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

pub fn conv(seed: u64) -> Vec<Worst> {
    let mut r = rng(seed);
    let (h, w) = (r.random_range(2..6), r.random_range(2..6));
    let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
    let k = [1, 3, 5][r.random_range(0..3)];
    let x = random_tensor(&mut r, &[2, h, w, cin], 1.0);
    let kern = random_tensor(&mut r, &[k, k, cin, cout], 0.5);
    let bias = random_tensor(&mut r, &[cout], 0.5);
    let up = random_tensor(&mut r, &[2, h, w, cout], 1.0);
    let g = conv2d_backward(&up, &x, &kern).unwrap();
    // summed over the batch through the f64 reference convolution
    let loss = |xv: &[f64], kv: &[f64], bv: &[f64]| {
        let per = h * w * cin;
        (0..2)
            .map(|n| {
                let img = reference::Map {
                    h,
                    w,
                    c: cin,
                    data: xv[n * per..(n + 1) * per].to_vec(),
                };
                let out = reference::conv(&img, kv, k, bv);
                let ups = &up.data()[n * h * w * cout..(n + 1) * h * w * cout];
                out.data.iter().zip(ups).map(|(o, &u)| o * u as f64).sum::<f64>()
            })
            .sum()
    };
    let (x64, k64, b64) = (to64(&x), to64(&kern), to64(&bias));
    vec![
        Worst::of("conv input", fd64(&x64, &g.input, |v| loss(v, &k64, &b64))),
        Worst::of("conv kernel", fd64(&k64, &g.kernel, |v| loss(&x64, v, &b64))),
        Worst::of("conv bias", fd64(&b64, &g.bias, |v| loss(&x64, &k64, v))),
    ]
}

pub fn relu_op(seed: u64) -> Vec<Worst> {
    let mut r = rng(seed);
    let x = away_from_zero(&mut r, &[1, 3, 4, 2], 0.01);
    let up = random_tensor(&mut r, &[1, 3, 4, 2], 1.0);
    let g = relu_backward(&up, &relu(&x)).unwrap();
    vec![Worst::of("relu", fd_max_err(&x, &g, &all(&x), |v| weighted_sum(&relu(v), &up)))]
}

pub fn sigmoid_op(seed: u64) -> Vec<Worst> {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[1, 3, 4, 2], 4.0);
    let up = random_tensor(&mut r, &[1, 3, 4, 2], 1.0);
    let g = sigmoid_backward(&up, &sigmoid(&x)).unwrap();
    vec![Worst::of("sigmoid", fd_max_err(&x, &g, &all(&x), |v| weighted_sum(&sigmoid(v), &up)))]
}

/// Also returns how many input entries received gradient.
pub fn maxpool(seed: u64) -> (Vec<Worst>, usize) {
    let mut r = rng(seed);
    // distinct values spaced well beyond 2ε keep every argmax stable
    let n = 2 * 4 * 6 * 2;
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.05).collect();
    for i in (1..n).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    let x = Tensor::new(vec![2, 4, 6, 2], vals).unwrap();
    let up = random_tensor(&mut r, &[2, 2, 3, 2], 1.0);
    let pooled = maxpool2_forward(&x).unwrap();
    let g = maxpool2_backward(&up, &pooled).unwrap();
    let loss = |v: &Tensor| weighted_sum(&maxpool2_forward(v).unwrap().output, &up);
    let routed = g.data().iter().filter(|&&v| v != 0.0).count();
    (vec![Worst::of("maxpool", fd_max_err(&x, &g, &all(&x), loss))], routed)
}

pub fn upsample(seed: u64) -> Vec<Worst> {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[1, 3, 3, 2], 1.0);
    let up = random_tensor(&mut r, &[1, 6, 6, 2], 1.0);
    let g = upsample2_backward(&up).unwrap();
    let loss = |v: &Tensor| weighted_sum(&upsample2_nearest(v).unwrap(), &up);
    vec![Worst::of("upsample", fd_max_err(&x, &g, &all(&x), loss))]
}

pub fn bce(seed: u64) -> Vec<Worst> {
    let mut r = rng(seed);
    let n = 12;
    let p = Tensor::new(vec![n], (0..n).map(|_| r.random_range(0.05f32..0.95)).collect()).unwrap();
    let t = Tensor::new(vec![n], (0..n).map(|_| r.random_bool(0.5) as u8 as f32).collect()).unwrap();
    let g = bce_backward(&p, &t).unwrap();
    vec![Worst::of("bce", fd_max_err(&p, &g, &all(&p), |v| bce_loss(v, &t).unwrap()))]
}

fn rcu_store(spec: RcuSpec, r: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::new();
    for (suffix, shape) in spec.param_shapes() {
        store.insert(format!("u.{suffix}"), random_tensor(r, &shape, 0.4)).unwrap();
    }
    store
}

/// Central differences of the f64 reference for entry `i` of operand
/// `which` (0 = input, 1..=4 = parameters). `None` when the step moves a
/// relu across its kink.
fn rcu64_fd(
    spec: RcuSpec,
    hw: [usize; 2],
    x: &[f64],
    params: &[Vec<f64>; 4],
    up: &[f64],
    which: usize,
    i: usize,
) -> Option<f64> {
    let eval = |delta: f64| {
        let (mut x, mut params) = (x.to_vec(), params.clone());
        match which {
            0 => x[i] += delta,
            n => params[n - 1][i] += delta,
        }
        let input = reference::Map {
            h: hw[0],
            w: hw[1],
            c: spec.in_channels,
            data: x,
        };
        let mut state = Vec::new();
        let p = [&params[0][..], &params[1][..], &params[2][..], &params[3][..]];
        let out = reference::rcu(spec, &input, p, &mut state);
        (out.data.iter().zip(up).map(|(o, u)| o * u).sum::<f64>(), state)
    };
    let (_, base) = eval(0.0);
    let (fp, pp) = eval(FD_EPS as f64);
    let (fm, pm) = eval(-(FD_EPS as f64));
    (pp == base && pm == base).then(|| (fp - fm) / (2.0 * FD_EPS as f64))
}

pub struct RcuSweep {
    pub worst: Vec<Worst>,
    pub checked: usize,
    /// Entries whose ±ε step straddles a relu kink, left out of `worst`.
    pub skipped: usize,
}

pub fn rcu(seed: u64) -> RcuSweep {
    let spec = RcuSpec::new(2, 3, 2).unwrap();
    let hw = [4, 4];
    let mut r = rng(seed);
    let store = rcu_store(spec, &mut r);
    let x = random_tensor(&mut r, &[1, 4, 4, 2], 1.0);
    let up = random_tensor(&mut r, &[1, 4, 4, 3], 1.0);
    let p = RcuParams::from_store(&store, "u", spec).unwrap();
    let (_, cache) = rcu_forward_train(&p, x.clone()).unwrap();
    let mut grads = Gradients::new();
    let gx = rcu_backward(&p, &cache, &up, &mut grads).unwrap();

    let names = ["f.w", "f.b", "r.w", "r.b"];
    let labels = ["rcu input", "rcu f.w", "rcu f.b", "rcu r.w", "rcu r.b"];
    let params = names.map(|s| to64(store.weight(&format!("u.{s}")).unwrap()));
    let (x64, up64) = (to64(&x), to64(&up));
    let analytic: Vec<&Tensor> = std::iter::once(&gx)
        .chain(names.iter().map(|&s| &grads[&format!("u.{s}")]))
        .collect();
    let mut sweep = RcuSweep {
        worst: Vec::new(),
        checked: 0,
        skipped: 0,
    };
    for (which, g) in analytic.iter().enumerate() {
        let mut worst = (0.0, 0);
        for i in 0..g.len() {
            sweep.checked += 1;
            let Some(numeric) = rcu64_fd(spec, hw, &x64, &params, &up64, which, i) else {
                sweep.skipped += 1;
                continue;
            };
            let e = rel_err(g.data()[i] as f64, numeric);
            if e > worst.0 {
                worst = (e, i);
            }
        }
        sweep.worst.push(Worst::of(labels[which], worst));
    }
    sweep
}
