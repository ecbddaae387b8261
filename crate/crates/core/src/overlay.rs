//! Count overlay: region contours and per-region cell counts drawn onto the input image.

use image::{Rgb, RgbImage};

use crate::counting::CountReport;

pub const CONTOUR_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const TEXT_COLOR: Rgb<u8> = Rgb([255, 255, 0]);
const TEXT_SHADOW: Rgb<u8> = Rgb([0, 0, 0]);
const GLYPH_SCALE: usize = 3;

/// 3×5 digit glyphs, one row per u8 with bit 2 as the left column.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Draws `n` in decimal centred on `(cx, cy)`, with a one-pixel dark outline.
pub fn draw_number(img: &mut RgbImage, n: u64, cx: f64, cy: f64) {
    let text = n.to_string();
    let s = GLYPH_SCALE as i64;
    let advance = 4 * s;
    let total_w = text.len() as i64 * advance - s;
    let x0 = cx.round() as i64 - total_w / 2;
    let y0 = cy.round() as i64 - 5 * s / 2;
    for (pass, color) in [(true, TEXT_SHADOW), (false, TEXT_COLOR)] {
        for (i, ch) in text.bytes().enumerate() {
            let glyph = DIGITS[(ch - b'0') as usize];
            let gx = x0 + i as i64 * advance;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) == 0 {
                        continue;
                    }
                    for dy in 0..s {
                        for dx in 0..s {
                            let (px, py) = (gx + col * s + dx, y0 + row as i64 * s + dy);
                            if pass {
                                for (ox, oy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                                    put(img, px + ox, py + oy, color);
                                }
                            } else {
                                put(img, px, py, color);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn render_overlay(image: &RgbImage, report: &CountReport) -> RgbImage {
    let mut out = image.clone();
    for r in &report.regions {
        for &(x, y) in &r.contour {
            out.put_pixel(x, y, CONTOUR_COLOR);
        }
    }
    for r in &report.regions {
        draw_number(&mut out, r.cell_count as u64, r.centroid.0, r.centroid.1);
    }
    out
}
