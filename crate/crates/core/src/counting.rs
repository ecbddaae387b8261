//! Mask refinement, area calibration and area-based cell counting.

use serde::{Deserialize, Serialize};

use crate::annotation::{Point, PointAnnotationSet};
use crate::components::{connected_components, remove_small_components, BBox, Connectivity};
use crate::error::{Error, Result};
use crate::morphology::open_square;
use crate::raster::{BinaryMask, HpfImage, ScanType};

pub const DEFAULT_REFINE_K: usize = 13;
pub const DEFAULT_MIN_REGION_AREA: usize = 60;
pub const DEFAULT_T1: usize = 900;
pub const DEFAULT_T2: usize = 1250;
/// Fewest single-cell regions a calibration may rest on.
pub const MIN_CALIBRATION_REGIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingCalibration {
    pub scan_type: ScanType,
    /// Mask dilation kernel the network was trained with.
    pub dilation_k: usize,
    pub avg_pixels_per_cell: f64,
    /// Correction thresholds, used for H-type only.
    pub t1: usize,
    pub t2: usize,
}

impl CountingCalibration {
    pub fn new(scan_type: ScanType, dilation_k: usize, avg_pixels_per_cell: f64) -> Result<Self> {
        let c = CountingCalibration {
            scan_type,
            dilation_k,
            avg_pixels_per_cell,
            t1: DEFAULT_T1,
            t2: DEFAULT_T2,
        };
        c.validate()?;
        Ok(c)
    }

    /// Published averages for the 13×13 and 11×11 kernels.
    pub fn published(scan_type: ScanType, dilation_k: usize) -> Result<Self> {
        let avg = match (scan_type, dilation_k) {
            (ScanType::H, 13) => 350.0,
            (ScanType::N, 13) => 270.0,
            (ScanType::H, 11) => 320.0,
            (ScanType::N, 11) => 250.0,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "no published cell area for {scan_type}-type with kernel {dilation_k}; calibrate instead"
                )))
            }
        };
        Self::new(scan_type, dilation_k, avg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.avg_pixels_per_cell.is_finite() && self.avg_pixels_per_cell > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "avg_pixels_per_cell must be positive, got {}",
                self.avg_pixels_per_cell
            )));
        }
        if self.t1 >= self.t2 {
            return Err(Error::InvalidArgument(format!(
                "correction thresholds must satisfy t1 < t2, got {} and {}",
                self.t1, self.t2
            )));
        }
        Ok(())
    }
}

/// Cells in one region of `area` pixels.
///
/// H-type subtracts one above `t1` and two above `t2`; both types clamp to 1.
pub fn count_region(area: usize, calib: &CountingCalibration) -> u32 {
    let raw = (area as f64 / calib.avg_pixels_per_cell).floor() as i64;
    let corrected = match calib.scan_type {
        ScanType::N => raw,
        ScanType::H if area > calib.t2 => raw - 2,
        ScanType::H if area > calib.t1 => raw - 1,
        ScanType::H => raw,
    };
    corrected.max(1) as u32
}

/// Opening with a `k×k` square, then removal of regions under `min_region_area`.
pub fn refine_mask(mask: &BinaryMask, k: usize, min_region_area: usize) -> Result<BinaryMask> {
    let opened = open_square(mask, k)?;
    Ok(remove_small_components(&opened, min_region_area, Connectivity::Eight))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub label: u32,
    pub area: usize,
    pub bbox: BBox,
    pub centroid: (f64, f64),
    #[serde(skip)]
    pub contour: Vec<(u32, u32)>,
    pub cell_count: u32,
    pub is_ganglia: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub image_id: String,
    pub scan_type: ScanType,
    pub regions: Vec<RegionReport>,
    pub total_cells: u64,
    pub total_regions: usize,
    pub total_ganglia: usize,
}

impl CountReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Cell centres for detection scoring: each region contributes its
    /// centroid once per counted cell.
    pub fn detection_slots(&self) -> Vec<(f64, f64)> {
        self.regions
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.centroid, r.cell_count as usize))
            .collect()
    }
}

pub fn count_image(mask: &BinaryMask, calib: &CountingCalibration, image_id: &str) -> CountReport {
    let lab = connected_components(mask, Connectivity::Eight);
    let regions: Vec<RegionReport> = lab
        .components
        .into_iter()
        .map(|c| {
            let cell_count = count_region(c.area, calib);
            RegionReport {
                label: c.label,
                area: c.area,
                bbox: c.bbox,
                centroid: c.centroid,
                contour: c.contour,
                cell_count,
                is_ganglia: cell_count >= 2,
            }
        })
        .collect();
    CountReport {
        image_id: image_id.to_string(),
        scan_type: calib.scan_type,
        total_cells: regions.iter().map(|r| r.cell_count as u64).sum(),
        total_regions: regions.len(),
        total_ganglia: regions.iter().filter(|r| r.is_ganglia).count(),
        regions,
    }
}

/// Areas of the components of `mask` that contain exactly one of `points`.
pub fn single_cell_areas(mask: &BinaryMask, points: &[Point]) -> Vec<usize> {
    let lab = connected_components(mask, Connectivity::Eight);
    let mut hits = vec![0usize; lab.components.len() + 1];
    for p in points {
        let (x, y) = (p.x as usize, p.y as usize);
        if x < lab.width && y < lab.height {
            hits[lab.label_at(x, y) as usize] += 1;
        }
    }
    lab.components
        .iter()
        .filter(|c| hits[c.label as usize] == 1)
        .map(|c| c.area)
        .collect()
}

/// Mean single-cell region area over refined masks and their annotations.
pub fn calibrate_from_masks(
    samples: &[(BinaryMask, Vec<Point>)],
    scan_type: ScanType,
    dilation_k: usize,
) -> Result<CountingCalibration> {
    let areas: Vec<usize> = samples
        .iter()
        .flat_map(|(m, pts)| single_cell_areas(m, pts))
        .collect();
    if areas.len() < MIN_CALIBRATION_REGIONS {
        return Err(Error::InsufficientData(format!(
            "calibration found {} single-cell regions, need at least {MIN_CALIBRATION_REGIONS}",
            areas.len()
        )));
    }
    let avg = areas.iter().sum::<usize>() as f64 / areas.len() as f64;
    log::info!(
        "calibrated {scan_type}-type k={dilation_k}: {} regions, mean area {avg:.1} px",
        areas.len()
    );
    CountingCalibration::new(scan_type, dilation_k, avg)
}

/// Segments each training HPF with `segment`, refines, and averages the
/// areas of regions holding exactly one annotated point.
pub fn calibrate_cell_area<F>(
    segment: F,
    training: &[(HpfImage, PointAnnotationSet)],
    scan_type: ScanType,
    dilation_k: usize,
    refine: RefineSpec,
) -> Result<CountingCalibration>
where
    F: Fn(&HpfImage) -> Result<BinaryMask>,
{
    let mut samples = Vec::new();
    for (image, ann) in training.iter().filter(|(i, _)| i.scan_type == scan_type) {
        let refined = refine_mask(&segment(image)?, refine.k, refine.min_region_area)?;
        samples.push((refined, ann.points.clone()));
    }
    calibrate_from_masks(&samples, scan_type, dilation_k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineSpec {
    pub k: usize,
    pub min_region_area: usize,
}

impl Default for RefineSpec {
    fn default() -> Self {
        RefineSpec {
            k: DEFAULT_REFINE_K,
            min_region_area: DEFAULT_MIN_REGION_AREA,
        }
    }
}
