//! Shared helpers for the integration tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod reference;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ganglionet::config::PipelineConfig;
use ganglionet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f32 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-3;
/// Relative error is taken against at least this magnitude; below it the
/// f32 rounding in a central difference dominates the comparison.
pub const FD_FLOOR: f64 = 1e-1;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// `Σ w·out` in f64: a scalar loss whose gradient with respect to `out` is `w`.
pub fn weighted_sum(out: &Tensor, w: &Tensor) -> f64 {
    out.data().iter().zip(w.data()).map(|(&o, &w)| o as f64 * w as f64).sum()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over the entries of `x` listed in `indices`.
pub fn fd_max_err(x: &Tensor, analytic: &Tensor, indices: &[usize], loss: impl Fn(&Tensor) -> f64) -> (f64, usize) {
    fd_max_err_step(x, analytic, indices, FD_EPS, loss)
}

pub fn fd_max_err_step(
    x: &Tensor,
    analytic: &Tensor,
    indices: &[usize],
    eps: f32,
    loss: impl Fn(&Tensor) -> f64,
) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for &i in indices {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        // the step actually taken after f32 rounding
        let h = plus.data()[i] as f64 - minus.data()[i] as f64;
        let numeric = (loss(&plus) - loss(&minus)) / h;
        let e = rel_err(analytic.data()[i] as f64, numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

pub fn all(x: &Tensor) -> Vec<usize> {
    (0..x.len()).collect()
}

/// `m` pairwise separated discs, each of pixel area within
/// `[0.75·avg, 1.5·avg]`, laid on a jittered grid. Returns the mask and the
/// disc areas.
pub fn disc_mask(rng: &mut ChaCha8Rng, m: usize, avg: f64) -> (ganglionet::BinaryMask, Vec<usize>) {
    let r_max = (1.5 * avg / std::f64::consts::PI).sqrt();
    let cell = (2.0 * r_max).ceil() as usize + 6;
    let cols = (m as f64).sqrt().ceil() as usize;
    let rows = m.div_ceil(cols.max(1));
    let (w, h) = (cols * cell, rows.max(1) * cell);
    let mut data = vec![false; w * h];
    let mut areas = Vec::with_capacity(m);
    for d in 0..m {
        let (gx, gy) = ((d % cols) * cell, (d / cols) * cell);
        // target area with margin for rasterisation, then the exact disc
        let (pixels, area) = loop {
            let target = rng.random_range(0.8 * avg..1.45 * avg);
            let r = (target / std::f64::consts::PI).sqrt();
            let slack = cell as f64 / 2.0 - r - 2.0;
            let cx = cell as f64 / 2.0 + rng.random_range(-slack.max(0.0)..=slack.max(0.0));
            let cy = cell as f64 / 2.0 + rng.random_range(-slack.max(0.0)..=slack.max(0.0));
            let px: Vec<(usize, usize)> = (0..cell)
                .flat_map(|y| (0..cell).map(move |x| (x, y)))
                .filter(|&(x, y)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
                .collect();
            let a = px.len() as f64;
            if (0.75 * avg..=1.5 * avg).contains(&a) {
                break (px, a as usize);
            }
        };
        for (x, y) in pixels {
            data[(gy + y) * w + gx + x] = true;
        }
        areas.push(area);
    }
    (ganglionet::BinaryMask::from_vec(w, h, data).unwrap(), areas)
}

/// Brown-versus-background split on `R − B`, halfway between a fully
/// covered H-type nucleus (≈ +76) and the H background (≈ −30), so a
/// pixel is kept when more than about half of it is nucleus.
pub fn brown_threshold(image: &ganglionet::HpfImage) -> ganglionet::Result<ganglionet::BinaryMask> {
    let img = &image.image;
    Ok(ganglionet::BinaryMask::from_fn(img.width() as usize, img.height() as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        p[0] as i32 - p[2] as i32 > 23
    }))
}

/// H-type synthetic HPFs whose nuclei all have area `π·radius²`.
pub fn uniform_disc_set(n: usize, radius: f64, seed: u64) -> Vec<(ganglionet::HpfImage, ganglionet::annotation::PointAnnotationSet)> {
    use ganglionet::synth::{generate_hpf, SynthSpec};
    (0..n)
        .map(|i| {
            let spec = SynthSpec {
                width: 640,
                height: 480,
                count_min: 12,
                count_max: 12,
                radius_mean: radius,
                radius_std: 0.0,
                cluster_probability: 0.0,
                min_separation: 4.0 * radius,
                seed: ganglionet::nn::mix_seed(seed, i as u64),
                ..SynthSpec::default()
            };
            let hpf = generate_hpf(&spec, &format!("disc_{i}")).unwrap();
            (hpf.image, hpf.annotations)
        })
        .collect()
}

/// A five-image suite, a base-width-2 network and two training steps:
/// enough to exercise every stage in seconds.
pub fn tiny_config(root: &Path) -> PathBuf {
    let mut cfg = PipelineConfig {
        data_dir: root.join("data"),
        out_dir: root.join("out"),
        checkpoint: Some(root.join("out").join("model.gnet")),
        seed: 21,
        scan_type: ganglionet::ScanType::H,
        patch_stride: 128,
        flips: false,
        arch_base_width: 2,
        synth_n_train: 5,
        synth_n_test: 1,
        ..PipelineConfig::default()
    };
    cfg.synth.width = 256;
    cfg.synth.height = 256;
    cfg.synth.count_min = 3;
    cfg.synth.count_max = 4;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    cfg.train.max_steps = Some(2);
    let path = root.join("tiny.cfg");
    cfg.write(&path).unwrap();
    path
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
