//! Synthetic immunostained high-power fields with exact point annotations.
//!
//! Nuclei are brown anti-aliased ellipses over an H-type (blue-gray,
//! hematoxylin-like) or N-type (pale) background. Some are grouped into
//! touching clusters; annotation points are the exact rounded centres.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::{write_points_csv, ImageManifest, Point, PointAnnotationSet};
use crate::error::{Error, Result};
use crate::nn::mix_seed;
use crate::raster::{save_rgb, HpfImage, ScanType};

/// Largest allowed ratio of an ellipse's major to minor axis.
pub const MAX_ECCENTRICITY: f64 = 1.5;
/// Touching cells may overlap by at most this fraction of the smaller radius.
pub const MAX_OVERLAP_FRACTION: f64 = 0.6;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub scan_type: ScanType,
    /// Inclusive.
    pub count_min: usize,
    pub count_max: usize,
    pub radius_mean: f64,
    pub radius_std: f64,
    pub cluster_probability: f64,
    /// Inclusive.
    pub cluster_size_min: usize,
    pub cluster_size_max: usize,
    /// Minimum centre distance between cells of different clusters.
    pub min_separation: f64,
    /// Relative spread of nucleus colour.
    pub stain_jitter: f64,
    pub seed: u64,
    /// Placement attempts per cell before giving up.
    pub max_attempts: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 2560,
            height: 1920,
            scan_type: ScanType::H,
            count_min: 40,
            count_max: 80,
            radius_mean: 10.0,
            radius_std: 1.0,
            cluster_probability: 0.2,
            cluster_size_min: 2,
            cluster_size_max: 4,
            min_separation: 40.0,
            stain_jitter: 0.08,
            seed: 0,
            max_attempts: 2000,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("extents must be positive, got {}x{}", self.width, self.height));
        }
        if self.count_min > self.count_max {
            return bad(format!("count range [{}, {}] is empty", self.count_min, self.count_max));
        }
        if !(self.radius_mean > 0.0) || !(self.radius_std >= 0.0) {
            return bad(format!(
                "radius distribution must have positive mean and non-negative std, got {} / {}",
                self.radius_mean, self.radius_std
            ));
        }
        if !(0.0..=1.0).contains(&self.cluster_probability) {
            return bad(format!("cluster probability {} outside [0, 1]", self.cluster_probability));
        }
        if self.cluster_size_min < 1 || self.cluster_size_min > self.cluster_size_max {
            return bad(format!(
                "cluster size range [{}, {}] is invalid",
                self.cluster_size_min, self.cluster_size_max
            ));
        }
        if !(0.0..1.0).contains(&self.stain_jitter) || self.min_separation < 0.0 {
            return bad("stain jitter must be in [0, 1) and separation non-negative".into());
        }
        Ok(())
    }
}

/// One rendered nucleus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes, `a ≥ b`, `a / b ≤ MAX_ECCENTRICITY`.
    pub a: f64,
    pub b: f64,
    pub angle: f64,
    pub cluster: usize,
    pub color: [f64; 3],
}

impl Nucleus {
    /// Radius of the equal-area circle.
    pub fn radius(&self) -> f64 {
        (self.a * self.b).sqrt()
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    pub fn center_point(&self) -> Point {
        Point::new(self.cx.round() as u32, self.cy.round() as u32)
    }
}

#[derive(Clone, Debug)]
pub struct SynthHpf {
    pub image: HpfImage,
    pub annotations: PointAnnotationSet,
    pub nuclei: Vec<Nucleus>,
}

fn overlap_ok(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    a.2 + b.2 - d <= MAX_OVERLAP_FRACTION * a.2.min(b.2)
}

struct Placer<'a> {
    spec: &'a SynthSpec,
    placed: Vec<(f64, f64, f64, usize)>,
    points: std::collections::BTreeSet<Point>,
}

impl Placer<'_> {
    fn margin(&self, r: f64) -> f64 {
        r * MAX_ECCENTRICITY.sqrt() + 2.0
    }

    fn fits(&self, x: f64, y: f64, r: f64, cluster: usize) -> bool {
        let m = self.margin(r);
        if x < m || y < m || x > self.spec.width as f64 - 1.0 - m || y > self.spec.height as f64 - 1.0 - m {
            return false;
        }
        if self.points.contains(&Point::new(x.round() as u32, y.round() as u32)) {
            return false;
        }
        self.placed.iter().all(|&(px, py, pr, pc)| {
            if pc == cluster {
                overlap_ok((x, y, r), (px, py, pr))
            } else {
                ((x - px).powi(2) + (y - py).powi(2)).sqrt() >= self.spec.min_separation.max(r + pr)
            }
        })
    }

    fn push(&mut self, x: f64, y: f64, r: f64, cluster: usize) {
        self.placed.push((x, y, r, cluster));
        self.points.insert(Point::new(x.round() as u32, y.round() as u32));
    }
}

fn brown(rng: &mut ChaCha8Rng, jitter: f64) -> [f64; 3] {
    let base = [118.0, 72.0, 36.0];
    let scale = 1.0 + rng.random_range(-jitter..=jitter);
    let hue = rng.random_range(-jitter..=jitter) * 40.0;
    [
        (base[0] * scale + hue).clamp(0.0, 255.0),
        (base[1] * scale).clamp(0.0, 255.0),
        (base[2] * scale - hue * 0.5).clamp(0.0, 255.0),
    ]
}

fn background(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let (w, h) = (spec.width, spec.height);
    let (base, amp, noise) = match spec.scan_type {
        ScanType::H => ([168.0, 172.0, 198.0], 14.0, 6.0),
        ScanType::N => ([236.0, 231.0, 222.0], 5.0, 3.0),
    };
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.004..0.03),
                rng.random_range(0.004..0.03),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let t: f64 = waves
                .iter()
                .map(|&(fx, fy, ph)| (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum::<f64>()
                / waves.len() as f64;
            let n = rng.random_range(-noise..=noise);
            px.push([
                base[0] + amp * t + n,
                base[1] + amp * t + n,
                base[2] + amp * 0.6 * t + n,
            ]);
        }
    }
    if spec.scan_type == ScanType::H {
        // counterstained non-target nuclei: small blue-purple specks
        let specks = w * h / 6000;
        for _ in 0..specks {
            let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let r: f64 = rng.random_range(1.5..3.5);
            let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
            let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                        px[y * w + x] = [110.0, 105.0, 160.0];
                    }
                }
            }
        }
    }
    px
}

fn paint(canvas: &mut [[f64; 3]], width: usize, height: usize, n: &Nucleus) {
    let reach = n.a + 1.0;
    let x0 = (n.cx - reach).floor().max(0.0) as usize;
    let y0 = (n.cy - reach).floor().max(0.0) as usize;
    let x1 = ((n.cx + reach).ceil() as usize).min(width - 1);
    let y1 = ((n.cy + reach).ceil() as usize).min(height - 1);
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let fx = x as f64 - 0.5 + (sx as f64 + 0.5) * step;
                    let fy = y as f64 - 0.5 + (sy as f64 + 0.5) * step;
                    hits += n.contains(fx, fy) as usize;
                }
            }
            if hits == 0 {
                continue;
            }
            let alpha = 0.95 * hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let px = &mut canvas[y * width + x];
            for c in 0..3 {
                px[c] = px[c] * (1.0 - alpha) + n.color[c] * alpha;
            }
        }
    }
}

pub fn generate_hpf(spec: &SynthSpec, image_id: &str) -> Result<SynthHpf> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let requested = rng.random_range(spec.count_min..=spec.count_max);
    let radius = Normal::new(spec.radius_mean, spec.radius_std)
        .map_err(|e| Error::InvalidArgument(format!("radius distribution: {e}")))?;
    let sample_r = |rng: &mut ChaCha8Rng| radius.sample(rng).max(spec.radius_mean * 0.4);

    let mut placer = Placer {
        spec,
        placed: Vec::new(),
        points: Default::default(),
    };
    let mut nuclei = Vec::with_capacity(requested);
    let mut cluster = 0;
    while nuclei.len() < requested {
        let remaining = requested - nuclei.len();
        let size = if remaining >= 2 && rng.random_bool(spec.cluster_probability) {
            rng.random_range(spec.cluster_size_min..=spec.cluster_size_max)
                .min(remaining)
        } else {
            1
        };
        let first = nuclei.len();
        for member in 0..size {
            let r = sample_r(&mut rng);
            let mut spot = None;
            for _ in 0..spec.max_attempts {
                let (x, y) = if member == 0 {
                    (
                        rng.random_range(0.0..spec.width as f64),
                        rng.random_range(0.0..spec.height as f64),
                    )
                } else {
                    // touch a random earlier member of this cluster
                    let (px, py, pr, _) = placer.placed[first + rng.random_range(0..member)];
                    let d = rng.random_range((r + pr - MAX_OVERLAP_FRACTION * r.min(pr))..=(r + pr));
                    let t = rng.random_range(0.0..2.0 * PI);
                    (px + d * t.cos(), py + d * t.sin())
                };
                if placer.fits(x, y, r, cluster) {
                    spot = Some((x, y));
                    break;
                }
            }
            let Some((x, y)) = spot else {
                return Err(Error::Placement {
                    requested,
                    achieved: nuclei.len(),
                });
            };
            let e = rng.random_range(1.0..=MAX_ECCENTRICITY);
            nuclei.push(Nucleus {
                cx: x,
                cy: y,
                a: r * e.sqrt(),
                b: r / e.sqrt(),
                angle: rng.random_range(0.0..PI),
                cluster,
                color: brown(&mut rng, spec.stain_jitter),
            });
            placer.push(x, y, r, cluster);
        }
        cluster += 1;
    }

    let mut canvas = background(spec, &mut rng);
    for n in &nuclei {
        paint(&mut canvas, spec.width, spec.height, n);
    }
    let image = RgbImage::from_fn(spec.width as u32, spec.height as u32, |x, y| {
        let p = canvas[y as usize * spec.width + x as usize];
        Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8))
    });
    let points = nuclei.iter().map(Nucleus::center_point).collect();
    let annotations = PointAnnotationSet::new(image_id, spec.scan_type, points, spec.width, spec.height)?;
    Ok(SynthHpf {
        image: HpfImage::new(image, spec.scan_type),
        annotations,
        nuclei,
    })
}

pub const SUITE_MANIFEST: &str = "suite.txt";
pub const SYNTH_MAGNIFICATION: u32 = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteEntry {
    pub image_id: String,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Suite {
    pub root: PathBuf,
    pub entries: Vec<SuiteEntry>,
}

impl Suite {
    pub fn image_path(root: &Path, id: &str) -> PathBuf {
        root.join("images").join(format!("{id}.png"))
    }

    pub fn points_path(root: &Path, id: &str) -> PathBuf {
        root.join("annotations").join(format!("{id}.csv"))
    }

    pub fn manifest_path(root: &Path, id: &str) -> PathBuf {
        root.join("manifests").join(format!("{id}.txt"))
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.image_id.as_str())
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}={}\n", e.split.as_str(), e.image_id))
            .collect()
    }

    pub fn read(root: &Path) -> Result<Suite> {
        let path = root.join(SUITE_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed = line.split_once('=').and_then(|(k, v)| {
                let split = match k {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    _ => return None,
                };
                Some(SuiteEntry {
                    image_id: v.to_string(),
                    split,
                })
            });
            entries.push(parsed.ok_or_else(|| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: format!("expected train=<id> or test=<id>, got {line:?}"),
            })?);
        }
        Ok(Suite {
            root: root.to_path_buf(),
            entries,
        })
    }
}

/// Writes `n_train + n_test` fields under `root`; the suite manifest is
/// written last, via rename, so a failed run leaves none behind.
pub fn generate_suite(root: &Path, n_train: usize, n_test: usize, template: &SynthSpec, seed: u64) -> Result<Suite> {
    if n_train < 5 {
        return Err(Error::InvalidArgument(format!(
            "a suite needs at least 5 training images for fivefold splits, got {n_train}"
        )));
    }
    for dir in ["images", "annotations", "manifests"] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::new();
    for i in 0..n_train + n_test {
        let (split, id) = if i < n_train {
            (Split::Train, format!("train_{i:02}"))
        } else {
            (Split::Test, format!("test_{:02}", i - n_train))
        };
        let spec = SynthSpec {
            seed: mix_seed(seed, i as u64),
            ..template.clone()
        };
        let hpf = generate_hpf(&spec, &id)?;
        save_rgb(&hpf.image.image, &Suite::image_path(root, &id))?;
        write_points_csv(&Suite::points_path(root, &id), &hpf.annotations.points)?;
        ImageManifest {
            image_id: id.clone(),
            scan_type: spec.scan_type,
            magnification: SYNTH_MAGNIFICATION,
        }
        .write(&Suite::manifest_path(root, &id))?;
        entries.push(SuiteEntry { image_id: id, split });
    }
    let suite = Suite {
        root: root.to_path_buf(),
        entries,
    };
    let tmp = root.join(format!("{SUITE_MANIFEST}.tmp"));
    std::fs::write(&tmp, suite.to_text()).map_err(|e| Error::io(&tmp, e))?;
    let dst = root.join(SUITE_MANIFEST);
    std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            width: 256,
            height: 192,
            count_min: 6,
            count_max: 6,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn empty_range_gives_background_only() {
        let spec = SynthSpec {
            count_min: 0,
            count_max: 0,
            ..small(3)
        };
        let hpf = generate_hpf(&spec, "bg").unwrap();
        assert!(hpf.annotations.points.is_empty());
        assert_eq!(hpf.image.width(), 256);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_hpf(&small(9), "a").unwrap();
        let b = generate_hpf(&small(9), "a").unwrap();
        assert_eq!(a.image.image.as_raw(), b.image.image.as_raw());
        assert_eq!(a.annotations, b.annotations);
        let c = generate_hpf(&small(10), "a").unwrap();
        assert_ne!(a.image.image.as_raw(), c.image.image.as_raw());
    }

    #[test]
    fn exact_requested_count() {
        let hpf = generate_hpf(&small(1), "x").unwrap();
        assert_eq!(hpf.annotations.points.len(), 6);
        for n in &hpf.nuclei {
            assert!(n.a / n.b <= MAX_ECCENTRICITY + 1e-12);
        }
    }

    #[test]
    fn nuclei_are_brown_at_centres() {
        let hpf = generate_hpf(&small(2), "x").unwrap();
        for p in &hpf.annotations.points {
            let px = hpf.image.image.get_pixel(p.x, p.y).0;
            assert!(px[0] > px[2] + 40, "centre {p:?} colour {px:?}");
        }
    }

    #[test]
    fn clusters_touch() {
        let spec = SynthSpec {
            cluster_probability: 1.0,
            cluster_size_min: 2,
            cluster_size_max: 2,
            count_min: 4,
            count_max: 4,
            ..small(4)
        };
        let hpf = generate_hpf(&spec, "c").unwrap();
        let (a, b) = (hpf.nuclei[0], hpf.nuclei[1]);
        assert_eq!(a.cluster, b.cluster);
        let d = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt();
        assert!(d <= a.radius() + b.radius() + 1e-9);
    }

    #[test]
    fn overcrowding_reports_achieved_count() {
        let spec = SynthSpec {
            count_min: 200,
            count_max: 200,
            max_attempts: 50,
            ..small(5)
        };
        match generate_hpf(&spec, "x") {
            Err(Error::Placement { requested, achieved }) => {
                assert_eq!(requested, 200);
                assert!(achieved < 200);
            }
            other => panic!("expected placement error, got {other:?}"),
        }
    }
}
