//! Connected-component labelling and outer-contour tracing.

use serde::{Deserialize, Serialize};

use crate::raster::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Inclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    /// 1-based, in raster order of each component's first pixel.
    pub label: u32,
    pub area: usize,
    pub bbox: BBox,
    pub centroid: (f64, f64),
    /// Outer boundary, clockwise from the first raster pixel.
    pub contour: Vec<(u32, u32)>,
}

#[derive(Clone, Debug)]
pub struct Labeling {
    pub width: usize,
    pub height: usize,
    /// 0 is background.
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

impl Labeling {
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

const NEIGHBORS_4: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const NEIGHBORS_8: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Labeling {
    let (w, h) = mask.extents();
    let mut labels = vec![0u32; w * h];
    let mut components = Vec::new();
    let neighbors: &[(i32, i32)] = match connectivity {
        Connectivity::Four => &NEIGHBORS_4,
        Connectivity::Eight => &NEIGHBORS_8,
    };
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0f64, 0f64);
        let mut bbox = BBox {
            x0: u32::MAX,
            y0: u32::MAX,
            x1: 0,
            y1: 0,
        };
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            area += 1;
            sx += x as f64;
            sy += y as f64;
            bbox.x0 = bbox.x0.min(x as u32);
            bbox.y0 = bbox.y0.min(y as u32);
            bbox.x1 = bbox.x1.max(x as u32);
            bbox.y1 = bbox.y1.max(y as u32);
            for &(dx, dy) in neighbors {
                let (nx, ny) = (x as i64 + dx as i64, y as i64 + dy as i64);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if mask.data()[n] && labels[n] == 0 {
                    labels[n] = label;
                    stack.push(n);
                }
            }
        }
        components.push(Component {
            label,
            area,
            bbox,
            centroid: (sx / area as f64, sy / area as f64),
            contour: Vec::new(),
        });
    }

    let mut labeling = Labeling {
        width: w,
        height: h,
        labels,
        components,
    };
    for i in 0..labeling.components.len() {
        let c = &labeling.components[i];
        let start = (c.bbox.y0 as usize..=c.bbox.y1 as usize)
            .flat_map(|y| (c.bbox.x0 as usize..=c.bbox.x1 as usize).map(move |x| (x, y)))
            .find(|&(x, y)| labeling.label_at(x, y) == c.label)
            .expect("component has pixels");
        let contour = trace_contour(&labeling, c.label, start, c.area);
        labeling.components[i].contour = contour;
    }
    labeling
}

/// Clockwise ring starting west: W, NW, N, NE, E, SE, S, SW.
const RING: [(i32, i32); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn ring_index(dx: i32, dy: i32) -> usize {
    RING.iter()
        .position(|&d| d == (dx, dy))
        .expect("unit offset")
}

/// Moore-neighbour tracing with Jacob's stopping criterion. `start` must be
/// the component's first pixel in raster order, so its west neighbour is
/// background.
fn trace_contour(lab: &Labeling, label: u32, start: (usize, usize), area: usize) -> Vec<(u32, u32)> {
    let inside = |x: i64, y: i64| {
        x >= 0
            && y >= 0
            && (x as usize) < lab.width
            && (y as usize) < lab.height
            && lab.label_at(x as usize, y as usize) == label
    };
    let start = (start.0 as i64, start.1 as i64);
    let mut contour = vec![(start.0 as u32, start.1 as u32)];
    let start_back = 0usize;
    let (mut cur, mut back) = (start, start_back);
    // each boundary pixel is entered at most from each of its 8 neighbours
    let limit = 8 * area + 8;
    for _ in 0..limit {
        let mut next = None;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let (dx, dy) = RING[d];
            if inside(cur.0 + dx as i64, cur.1 + dy as i64) {
                next = Some(d);
                break;
            }
        }
        let Some(d) = next else {
            break; // isolated pixel
        };
        let n = (cur.0 + RING[d].0 as i64, cur.1 + RING[d].1 as i64);
        let (px, py) = RING[(d + 7) % 8];
        let prev = (cur.0 + px as i64, cur.1 + py as i64);
        let new_back = ring_index((prev.0 - n.0) as i32, (prev.1 - n.1) as i32);
        if n == start && new_back == start_back {
            break;
        }
        contour.push((n.0 as u32, n.1 as u32));
        cur = n;
        back = new_back;
    }
    contour
}

/// Drops components smaller than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize, connectivity: Connectivity) -> BinaryMask {
    let lab = connected_components(mask, connectivity);
    let keep: Vec<bool> = std::iter::once(false)
        .chain(lab.components.iter().map(|c| c.area >= min_area))
        .collect();
    BinaryMask::from_vec(
        mask.width(),
        mask.height(),
        lab.labels.iter().map(|&l| keep[l as usize]).collect(),
    )
    .expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pixels_connect_only_under_eight() {
        let m = BinaryMask::from_fn(3, 3, |x, y| (x, y) == (0, 0) || (x, y) == (1, 1));
        assert_eq!(connected_components(&m, Connectivity::Eight).components.len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).components.len(), 2);
    }

    #[test]
    fn labels_follow_raster_order() {
        let m = BinaryMask::from_fn(10, 6, |x, y| (x >= 7 && y <= 1) || (x <= 1 && y >= 4) || (x == 4 && y == 3));
        let lab = connected_components(&m, Connectivity::Eight);
        let firsts: Vec<(u32, u32)> = lab.components.iter().map(|c| (c.bbox.x0, c.bbox.y0)).collect();
        assert_eq!(firsts, vec![(7, 0), (4, 3), (0, 4)]);
        assert_eq!(lab.components.iter().map(|c| c.area).collect::<Vec<_>>(), vec![6, 1, 4]);
    }

    #[test]
    fn square_contour_is_its_perimeter() {
        let m = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        let lab = connected_components(&m, Connectivity::Eight);
        let c = &lab.components[0];
        assert_eq!(c.contour.len(), 12);
        assert_eq!(c.contour[0], (2, 2));
        assert_eq!(c.contour[1], (3, 2));
        assert_eq!(c.centroid, (3.5, 3.5));
    }

    #[test]
    fn single_pixel_contour() {
        let m = BinaryMask::from_fn(3, 3, |x, y| (x, y) == (1, 1));
        let lab = connected_components(&m, Connectivity::Eight);
        assert_eq!(lab.components[0].contour, vec![(1, 1)]);
    }

    #[test]
    fn small_components_removed() {
        let m = BinaryMask::from_fn(20, 20, |x, y| (x < 10 && y < 10) || (x == 15 && y == 15));
        let out = remove_small_components(&m, 60, Connectivity::Eight);
        assert_eq!(out.count_ones(), 100);
        assert!(!*out.get(15, 15));
    }
}
