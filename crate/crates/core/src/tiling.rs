//! Whole-image inference over non-overlapping square tiles.
//!
//! The image is conceptually zero-padded on the right and bottom to a
//! multiple of the patch side, cut into disjoint tiles, run through the
//! network in batches, and the outputs are written back at their offsets
//! with the padded margin discarded.

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::NablaNet;
use crate::raster::{BinaryMask, ProbabilityMap};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    pub patch_side: usize,
    pub rows: usize,
    pub cols: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
    /// Row-major.
    pub tiles: Vec<Tile>,
}

pub fn plan_tiles(width: usize, height: usize, patch_side: usize) -> Result<TilePlan> {
    if width == 0 || height == 0 || patch_side == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot tile a {width}x{height} image with {patch_side}-pixel patches"
        )));
    }
    let cols = width.div_ceil(patch_side);
    let rows = height.div_ceil(patch_side);
    let tiles = (0..rows)
        .flat_map(|row| {
            (0..cols).map(move |col| Tile {
                row,
                col,
                x: col * patch_side,
                y: row * patch_side,
            })
        })
        .collect();
    Ok(TilePlan {
        width,
        height,
        patch_side,
        rows,
        cols,
        pad_right: cols * patch_side - width,
        pad_bottom: rows * patch_side - height,
        tiles,
    })
}

/// `side×side×3` floats in `[0, 1]` (byte / 255) starting at `(x, y)`;
/// pixels beyond the image are zero.
pub fn normalize_region(image: &RgbImage, x: usize, y: usize, side: usize) -> Vec<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = vec![0f32; side * side * 3];
    for v in 0..side {
        let iy = y + v;
        if iy >= h {
            break;
        }
        for u in 0..side {
            let ix = x + u;
            if ix >= w {
                break;
            }
            let p = image.get_pixel(ix as u32, iy as u32).0;
            let dst = (v * side + u) * 3;
            for c in 0..3 {
                out[dst + c] = p[c] as f32 / 255.0;
            }
        }
    }
    out
}

/// Normalised input tensors, one `[1, side, side, 3]` per tile, in plan order.
pub fn split_image(image: &RgbImage, plan: &TilePlan) -> Vec<Tensor> {
    let s = plan.patch_side;
    plan.tiles
        .iter()
        .map(|t| {
            Tensor::new(vec![1, s, s, 3], normalize_region(image, t.x, t.y, s))
                .expect("side*side*3 values")
        })
        .collect()
}

/// Single-channel tiles of a probability map, zero-padded, in plan order.
pub fn split_map(map: &ProbabilityMap, plan: &TilePlan) -> Vec<Tensor> {
    let s = plan.patch_side;
    plan.tiles
        .iter()
        .map(|t| {
            let mut data = vec![0f32; s * s];
            for v in 0..s.min(map.height().saturating_sub(t.y)) {
                for u in 0..s.min(map.width().saturating_sub(t.x)) {
                    data[v * s + u] = *map.get(t.x + u, t.y + v);
                }
            }
            Tensor::new(vec![1, s, s, 1], data).expect("side*side values")
        })
        .collect()
}

/// Writes each `[1, side, side, 1]` output at its tile offset, dropping padding.
pub fn merge_tiles(plan: &TilePlan, outputs: &[Tensor]) -> Result<ProbabilityMap> {
    if outputs.len() != plan.tiles.len() {
        return Err(Error::Shape(format!(
            "merge: {} outputs for {} tiles",
            outputs.len(),
            plan.tiles.len()
        )));
    }
    let s = plan.patch_side;
    let mut map = ProbabilityMap::filled(plan.width, plan.height, 0.0);
    for (t, out) in plan.tiles.iter().zip(outputs) {
        if out.shape() != [1, s, s, 1] {
            return Err(Error::Shape(format!(
                "merge: tile output {:?}, expected [1, {s}, {s}, 1]",
                out.shape()
            )));
        }
        for v in 0..s.min(plan.height - t.y) {
            for u in 0..s.min(plan.width - t.x) {
                map.set(t.x + u, t.y + v, out.data()[v * s + u]);
            }
        }
    }
    Ok(map)
}

/// Runs `forward` over the tiles in batches of `batch_size` and merges the result.
///
/// Batches may execute in parallel; the merged map does not depend on
/// execution order or batch size as long as `forward` treats samples independently.
pub fn infer_with<F>(
    image: &RgbImage,
    patch_side: usize,
    batch_size: usize,
    forward: F,
) -> Result<ProbabilityMap>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let plan = plan_tiles(image.width() as usize, image.height() as usize, patch_side)?;
    let inputs = split_image(image, &plan);
    let batches: Vec<Vec<Tensor>> = inputs
        .par_chunks(batch_size)
        .map(|chunk| -> Result<Vec<Tensor>> {
            let out = forward(&Tensor::stack(chunk)?)?;
            (0..chunk.len()).map(|i| out.sample(i)).collect()
        })
        .collect::<Result<_>>()?;
    let outputs: Vec<Tensor> = batches.into_iter().flatten().collect();
    merge_tiles(&plan, &outputs)
}

/// Full-extent probability map from a trained network.
pub fn infer_image(image: &RgbImage, net: &NablaNet, batch_size: usize) -> Result<ProbabilityMap> {
    infer_with(image, net.arch.patch_side, batch_size, |batch| net.forward(batch))
}

/// `P > tau`, strict.
pub fn threshold_map(p: &ProbabilityMap, tau: f32) -> BinaryMask {
    BinaryMask::from_vec(
        p.width(),
        p.height(),
        p.data().iter().map(|&v| v > tau).collect(),
    )
    .expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_hpf_tiles_exactly() {
        let plan = plan_tiles(2560, 1920, 128).unwrap();
        assert_eq!((plan.cols, plan.rows), (20, 15));
        assert_eq!(plan.tiles.len(), 300);
        assert_eq!((plan.pad_right, plan.pad_bottom), (0, 0));
    }

    #[test]
    fn ragged_extent_pads() {
        let plan = plan_tiles(130, 128, 128).unwrap();
        assert_eq!(plan.tiles.len(), 2);
        assert_eq!((plan.pad_right, plan.pad_bottom), (126, 0));
        assert_eq!(plan_tiles(128, 128, 128).unwrap().tiles.len(), 1);
        assert!(plan_tiles(0, 5, 128).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let p = ProbabilityMap::from_vec(3, 1, vec![0.4, 0.5, 0.6]).unwrap();
        assert_eq!(threshold_map(&p, 0.5).data(), &[false, false, true]);
        assert_eq!(threshold_map(&ProbabilityMap::filled(4, 4, 0.4), 0.5).count_ones(), 0);
        assert_eq!(threshold_map(&ProbabilityMap::filled(4, 4, 0.6), 0.5).count_ones(), 16);
    }

    #[test]
    fn padded_pixels_are_zero() {
        let img = RgbImage::from_pixel(3, 2, image::Rgb([255, 0, 51]));
        let v = normalize_region(&img, 1, 0, 4);
        assert_eq!(&v[..3], &[1.0, 0.0, 0.2]);
        assert_eq!(&v[6..9], &[0.0, 0.0, 0.0]);
        assert!(v[4 * 3 * 2..].iter().all(|&x| x == 0.0));
    }
}
