//! Binary morphology with square structuring elements.
//!
//! A `k×k` square is separable into a horizontal and a vertical `k`-long
//! segment, so each operation runs as two 1-D window passes over prefix sums.
//! Dilation treats pixels outside the image as background; erosion ignores
//! them, so objects touching the border are not eroded by the border itself.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

fn check_k(k: usize) -> Result<usize> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "structuring element size must be odd and positive, got {k}"
        )));
    }
    Ok(k / 2)
}

#[derive(Clone, Copy)]
enum Op {
    Dilate,
    Erode,
}

#[allow(clippy::too_many_arguments)]
/// One 1-D pass over `len` samples at `stride` apart starting at `base`.
fn pass_line(
    src: &[bool],
    dst: &mut [bool],
    base: usize,
    stride: usize,
    len: usize,
    r: usize,
    op: Op,
    prefix: &mut Vec<u32>,
) {
    prefix.clear();
    prefix.push(0);
    let mut acc = 0u32;
    for i in 0..len {
        acc += src[base + i * stride] as u32;
        prefix.push(acc);
    }
    for i in 0..len {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(len - 1);
        let ones = prefix[hi + 1] - prefix[lo];
        dst[base + i * stride] = match op {
            Op::Dilate => ones > 0,
            Op::Erode => ones as usize == hi - lo + 1,
        };
    }
}

fn separable(mask: &BinaryMask, r: usize, op: Op) -> BinaryMask {
    let (w, h) = mask.extents();
    if w == 0 || h == 0 || r == 0 {
        return mask.clone();
    }
    let mut tmp = vec![false; w * h];
    let mut out = vec![false; w * h];
    let mut prefix = Vec::with_capacity(w.max(h) + 1);
    for y in 0..h {
        pass_line(mask.data(), &mut tmp, y * w, 1, w, r, op, &mut prefix);
    }
    for x in 0..w {
        pass_line(&tmp, &mut out, x, w, h, r, op, &mut prefix);
    }
    BinaryMask::from_vec(w, h, out).expect("same extents")
}

pub fn dilate_square(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    Ok(separable(mask, check_k(k)?, Op::Dilate))
}

pub fn erode_square(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    Ok(separable(mask, check_k(k)?, Op::Erode))
}

/// Erosion followed by dilation; removes features smaller than the element.
pub fn open_square(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    dilate_square(&erode_square(mask, k)?, k)
}
