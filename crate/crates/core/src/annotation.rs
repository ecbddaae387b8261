//! From single-point annotations to training data.
//!
//! Each annotated cell centre becomes a Gaussian bump; the bumps combine by
//! pointwise maximum, the surface is thresholded at 0.5 and the result is
//! dilated with a `k×k` square. Training patches are 128×128 windows that
//! contain at least one positive mask pixel, augmented with flips and grouped
//! by source image for five-fold validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::dilate_square;
use crate::raster::{BinaryMask, ProbabilityMap, ScanType};
use crate::tensor::Tensor;
use crate::tiling::normalize_region;

/// Pixel coordinate, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Point { x, y }
    }
}

/// One point per annotated ganglion cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PointAnnotationSet {
    pub image_id: String,
    pub scan_type: ScanType,
    pub points: Vec<Point>,
}

impl PointAnnotationSet {
    /// Rejects out-of-bounds and duplicate points.
    pub fn new(
        image_id: impl Into<String>,
        scan_type: ScanType,
        points: Vec<Point>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &points {
            if p.x as usize >= width || p.y as usize >= height {
                return Err(Error::InvalidArgument(format!(
                    "point ({}, {}) outside {width}x{height} image",
                    p.x, p.y
                )));
            }
            if !seen.insert(*p) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate point ({}, {})",
                    p.x, p.y
                )));
            }
        }
        Ok(PointAnnotationSet {
            image_id: image_id.into(),
            scan_type,
            points,
        })
    }
}

pub const ALLOWED_KERNELS: [usize; 5] = [5, 7, 9, 11, 13];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub sigma: f64,
    pub dilation_k: usize,
    pub threshold: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            sigma: 6.0,
            dilation_k: 13,
            threshold: 0.5,
        }
    }
}

impl MaskSpec {
    pub fn with_kernel(k: usize) -> Result<Self> {
        let spec = MaskSpec {
            dilation_k: k,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !ALLOWED_KERNELS.contains(&self.dilation_k) {
            return Err(Error::InvalidArgument(format!(
                "dilation kernel must be one of {ALLOWED_KERNELS:?}, got {}",
                self.dilation_k
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be in [0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Radius at which a single bump crosses the threshold: `σ·sqrt(2 ln(1/threshold))`.
    pub fn core_radius(&self) -> f64 {
        self.sigma * (2.0 * (1.0 / self.threshold).ln()).sqrt()
    }
}

/// `exp(−r²/2σ²)` for squared distance `r2`.
#[inline]
pub fn gaussian_bump(r2: f64, sigma: f64) -> f64 {
    (-r2 / (2.0 * sigma * sigma)).exp()
}

/// Beyond `8σ` the bump is below `1.3e-14` and is stored as zero.
const CUTOFF_SIGMAS: f64 = 8.0;

/// `G(i, j) = max_p exp(−((i − p.y)² + (j − p.x)²) / 2σ²)`, row `i`, column `j`.
pub fn density_surface(points: &[Point], sigma: f64, width: usize, height: usize) -> ProbabilityMap {
    let mut g = ProbabilityMap::filled(width, height, 0.0);
    if width == 0 || height == 0 {
        return g;
    }
    let reach = (CUTOFF_SIGMAS * sigma).ceil() as i64;
    for p in points {
        let (px, py) = (p.x as i64, p.y as i64);
        let y0 = (py - reach).max(0);
        let y1 = (py + reach).min(height as i64 - 1);
        let x0 = (px - reach).max(0);
        let x1 = (px + reach).min(width as i64 - 1);
        for y in y0..=y1 {
            let dy = (y - py) as f64;
            for x in x0..=x1 {
                let dx = (x - px) as f64;
                let v = gaussian_bump(dx * dx + dy * dy, sigma) as f32;
                let cell = &mut g.data_mut()[y as usize * width + x as usize];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    g
}

/// `dilate(G > threshold, k×k square)`.
pub fn make_mask(g: &ProbabilityMap, spec: &MaskSpec) -> Result<BinaryMask> {
    spec.validate()?;
    let t = spec.threshold as f32;
    let core = BinaryMask::from_vec(
        g.width(),
        g.height(),
        g.data().iter().map(|&v| v > t).collect(),
    )?;
    dilate_square(&core, spec.dilation_k)
}

/// Density surface and mask for an annotation set in one step.
pub fn annotation_mask(points: &[Point], spec: &MaskSpec, width: usize, height: usize) -> Result<BinaryMask> {
    make_mask(&density_surface(points, spec.sigma, width, height), spec)
}

pub const PATCH_SIDE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flip {
    None,
    Horizontal,
    Vertical,
    Both,
}

impl Flip {
    pub const ALL: [Flip; 4] = [Flip::None, Flip::Horizontal, Flip::Vertical, Flip::Both];

    fn flips(self) -> (bool, bool) {
        match self {
            Flip::None => (false, false),
            Flip::Horizontal => (true, false),
            Flip::Vertical => (false, true),
            Flip::Both => (true, true),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Flip::None => "o",
            Flip::Horizontal => "h",
            Flip::Vertical => "v",
            Flip::Both => "hv",
        }
    }
}

/// An image patch with its training mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub image_id: String,
    pub x: usize,
    pub y: usize,
    pub flip: Flip,
}

impl PatchPair {
    /// `[1, side, side, 3]`, bytes divided by 255.
    pub fn input_tensor(&self) -> Tensor {
        let side = self.image.width() as usize;
        Tensor::new(vec![1, side, side, 3], normalize_region(&self.image, 0, 0, side))
            .expect("square patch")
    }

    /// `[1, side, side, 1]` with values in {0, 1}.
    pub fn target_tensor(&self) -> Tensor {
        let data = self.mask.data().iter().map(|&b| b as u8 as f32).collect();
        Tensor::new(vec![1, self.mask.height(), self.mask.width(), 1], data).expect("mask extents")
    }

    /// Applies `flip` on top of the current orientation.
    pub fn flipped(&self, flip: Flip) -> PatchPair {
        let (h, v) = flip.flips();
        let mut image = self.image.clone();
        if h {
            image = image::imageops::flip_horizontal(&image);
        }
        if v {
            image = image::imageops::flip_vertical(&image);
        }
        let (w, ht) = self.mask.extents();
        let mask = BinaryMask::from_fn(w, ht, |x, y| {
            let sx = if h { w - 1 - x } else { x };
            let sy = if v { ht - 1 - y } else { y };
            *self.mask.get(sx, sy)
        });
        let (h0, v0) = self.flip.flips();
        let combined = match (h0 ^ h, v0 ^ v) {
            (false, false) => Flip::None,
            (true, false) => Flip::Horizontal,
            (false, true) => Flip::Vertical,
            (true, true) => Flip::Both,
        };
        PatchPair {
            image,
            mask,
            image_id: self.image_id.clone(),
            x: self.x,
            y: self.y,
            flip: combined,
        }
    }
}

/// Window origins along one axis: `0, stride, 2·stride, …` while the window fits.
fn window_origins(extent: usize, side: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=extent - side).step_by(stride)
}

/// Slides a `PATCH_SIDE` window with `stride` and keeps windows whose mask has a positive pixel.
pub fn extract_training_patches(
    image: &RgbImage,
    mask: &BinaryMask,
    stride: usize,
    image_id: &str,
) -> Result<Vec<PatchPair>> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (w, h) != mask.extents() {
        return Err(Error::Shape(format!(
            "image {w}x{h} and mask {}x{} differ",
            mask.width(),
            mask.height()
        )));
    }
    if w < PATCH_SIDE || h < PATCH_SIDE {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} is smaller than the {PATCH_SIDE}-pixel patch"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }

    // prefix sums of mask pixels for O(1) window tests
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += *mask.get(x, y) as u32;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let window_sum = |x: usize, y: usize| {
        let (x1, y1) = (x + PATCH_SIDE, y + PATCH_SIDE);
        integral[y1 * (w + 1) + x1] + integral[y * (w + 1) + x]
            - integral[y * (w + 1) + x1]
            - integral[y1 * (w + 1) + x]
    };

    let mut out = Vec::new();
    for y in window_origins(h, PATCH_SIDE, stride) {
        for x in window_origins(w, PATCH_SIDE, stride) {
            if window_sum(x, y) == 0 {
                continue;
            }
            let img = image::imageops::crop_imm(image, x as u32, y as u32, PATCH_SIDE as u32, PATCH_SIDE as u32)
                .to_image();
            let m = BinaryMask::from_fn(PATCH_SIDE, PATCH_SIDE, |u, v| *mask.get(x + u, y + v));
            out.push(PatchPair {
                image: img,
                mask: m,
                image_id: image_id.to_string(),
                x,
                y,
                flip: Flip::None,
            });
        }
    }
    Ok(out)
}

/// Original, horizontal, vertical and both flips of every pair, in that order.
pub fn augment_flips(pairs: &[PatchPair]) -> Vec<PatchPair> {
    pairs
        .iter()
        .flat_map(|p| Flip::ALL.into_iter().map(move |f| p.flipped(f)))
        .collect()
}

/// One cross-validation fold: indices into the pair list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub val_images: Vec<String>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

pub const N_FOLDS: usize = 5;

/// Five folds grouped by source image so no image straddles train and validation.
pub fn fivefold_split(pairs: &[PatchPair], seed: u64) -> Result<Vec<Fold>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.image_id.as_str()).or_default().push(i);
    }
    if groups.len() < N_FOLDS {
        return Err(Error::InsufficientData(format!(
            "five-fold split needs at least {N_FOLDS} source images, got {}",
            groups.len()
        )));
    }
    let mut ids: Vec<&str> = groups.keys().copied().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut folds: Vec<Vec<&str>> = vec![Vec::new(); N_FOLDS];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % N_FOLDS].push(id);
    }
    Ok(folds
        .into_iter()
        .map(|val_ids| {
            let val_set: BTreeSet<&str> = val_ids.iter().copied().collect();
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (i, p) in pairs.iter().enumerate() {
                if val_set.contains(p.image_id.as_str()) {
                    val.push(i);
                } else {
                    train.push(i);
                }
            }
            Fold {
                val_images: val_ids.into_iter().map(String::from).collect(),
                train,
                val,
            }
        })
        .collect())
}

/// Reads `x,y` lines. Blank lines and lines starting with `#` are skipped.
pub fn read_points_csv(path: &Path) -> Result<Vec<Point>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv(&text).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub fn parse_points_csv(text: &str) -> std::result::Result<Vec<Point>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (x, y) = line
            .split_once(',')
            .ok_or_else(|| (i + 1, format!("expected x,y, got {line:?}")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| (i + 1, format!("not a pixel coordinate: {s:?}")))
        };
        out.push(Point::new(parse(x)?, parse(y)?));
    }
    Ok(out)
}

pub fn points_csv(points: &[Point]) -> String {
    points.iter().fold(String::new(), |mut s, p| {
        let _ = writeln!(s, "{},{}", p.x, p.y);
        s
    })
}

pub fn write_points_csv(path: &Path, points: &[Point]) -> Result<()> {
    std::fs::write(path, points_csv(points)).map_err(|e| Error::io(path, e))
}

/// Per-image `key=value` manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageManifest {
    pub image_id: String,
    pub scan_type: ScanType,
    pub magnification: u32,
}

impl ImageManifest {
    pub fn to_text(&self) -> String {
        format!(
            "image_id={}\nscan_type={}\nmagnification={}\n",
            self.image_id, self.scan_type, self.magnification
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut id = None;
        let mut scan = None;
        let mut mag = None;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line {line:?} is not key=value")))?;
            match k.trim() {
                "image_id" => id = Some(v.trim().to_string()),
                "scan_type" => scan = Some(v.parse()?),
                "magnification" => {
                    mag = Some(v.trim().parse().map_err(|_| {
                        Error::Config(format!("magnification {v:?} is not an integer"))
                    })?)
                }
                other => return Err(Error::Config(format!("unknown manifest key {other:?}"))),
            }
        }
        Ok(ImageManifest {
            image_id: id.ok_or_else(|| Error::Config("manifest lacks image_id".into()))?,
            scan_type: scan.ok_or_else(|| Error::Config("manifest lacks scan_type".into()))?,
            magnification: mag.ok_or_else(|| Error::Config("manifest lacks magnification".into()))?,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
