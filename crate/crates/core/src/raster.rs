//! Single-channel rasters: probability maps and binary masks.

use std::fmt;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major single-channel raster.
#[derive(Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel foreground probability in `[0, 1]`.
pub type ProbabilityMap = Raster<f32>;

/// Per-pixel foreground flag.
pub type BinaryMask = Raster<bool>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_extents<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_extents<U>(&self, other: &Raster<U>, what: &str) -> Result<()> {
        if !self.same_extents(other) {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

impl<T: fmt::Debug> fmt::Debug for Raster<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl BinaryMask {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixelwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_extents(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if *self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Any nonzero gray value is foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        Raster::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            img.get_pixel(x as u32, y as u32)[0] > 0
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray()
            .save(path)
            .map_err(|e| Error::image(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_gray(&img.to_luma8()))
    }
}

impl ProbabilityMap {
    /// 16-bit grayscale rendering, `round(p * 65535)`.
    pub fn to_gray16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(x as usize, y as usize).clamp(0.0, 1.0);
            Luma([(p as f64 * 65535.0).round() as u16])
        })
    }

    pub fn save_png16(&self, path: &Path) -> Result<()> {
        self.to_gray16()
            .save(path)
            .map_err(|e| Error::image(path, e))
    }

    pub fn load_png16(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma16();
        Ok(Raster::from_fn(
            img.width() as usize,
            img.height() as usize,
            |x, y| img.get_pixel(x as u32, y as u32)[0] as f32 / 65535.0,
        ))
    }
}

/// Tissue scan type: Phox2B with hematoxylin counterstain (H) or without (N).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScanType {
    H,
    N,
}

impl fmt::Display for ScanType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanType::H => "H",
            ScanType::N => "N",
        })
    }
}

impl std::str::FromStr for ScanType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" => Ok(ScanType::H),
            "N" | "n" => Ok(ScanType::N),
            other => Err(Error::InvalidArgument(format!(
                "scan type must be H or N, got {other:?}"
            ))),
        }
    }
}

/// An 8-bit RGB high-power-field image with its scan type.
#[derive(Clone, Debug)]
pub struct HpfImage {
    pub image: RgbImage,
    pub scan_type: ScanType,
}

impl HpfImage {
    pub fn new(image: RgbImage, scan_type: ScanType) -> Self {
        HpfImage { image, scan_type }
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::image(path, e))
}
