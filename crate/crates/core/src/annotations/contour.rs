//! Connected components and outer-boundary extraction.
//!
//! Boundaries are traced along pixel edges ("crack following"), so a traced
//! polygon encloses exactly the pixel centers of its component. Pixel `(x, y)`
//! covers `[x, x+1) × [y, y+1)`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

const NEIGHBORS_8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
const NEIGHBORS_4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

/// Labels connected foreground components (8- or 4-connectivity) in raster
/// order of their first pixel. Background is 0; component `i` gets label
/// `i + 1` and `areas[i]` pixels.
pub fn label_components(mask: &Mask, eight: bool) -> (Image<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut labels = Image::filled(w, h, 0u32);
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    let neighbors: &[(isize, isize)] = if eight { &NEIGHBORS_8 } else { &NEIGHBORS_4 };
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) || *labels.get(x, y) != 0 {
                continue;
            }
            let label = areas.len() as u32 + 1;
            let mut area = 0;
            labels.set(x, y, label);
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                area += 1;
                for &(dx, dy) in neighbors {
                    let nx = cx as isize + dx;
                    let ny = cy as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if *mask.get(nx, ny) && *labels.get(nx, ny) == 0 {
                        labels.set(nx, ny, label);
                        queue.push_back((nx, ny));
                    }
                }
            }
            areas.push(area);
        }
    }
    (labels, areas)
}

// Headings: 0 = +x, 1 = +y, 2 = −x, 3 = −y (image coordinates, y down).
const STEP: [(isize, isize); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Traces the outer boundary of the 8-connected component containing the
/// topmost-leftmost pixel `start`, clockwise on screen, with the component on
/// the right-hand side. Returns the corner points where the heading changes.
fn trace_outer(inside: &dyn Fn(isize, isize) -> bool, start: (usize, usize)) -> Vec<[f64; 2]> {
    // Pixel on the right / left of the edge leaving `corner` with `heading`.
    let right_pixel = |cx: isize, cy: isize, heading: usize| -> (isize, isize) {
        match heading {
            0 => (cx, cy),
            1 => (cx - 1, cy),
            2 => (cx - 1, cy - 1),
            _ => (cx, cy - 1),
        }
    };
    let left_pixel = |cx: isize, cy: isize, heading: usize| -> (isize, isize) {
        match heading {
            0 => (cx, cy - 1),
            1 => (cx, cy),
            2 => (cx - 1, cy),
            _ => (cx - 1, cy - 1),
        }
    };

    let start_corner = (start.0 as isize, start.1 as isize);
    let start_heading = 0usize;
    let (mut cx, mut cy) = start_corner;
    let mut heading = start_heading;
    let mut corners = Vec::new();
    loop {
        cx += STEP[heading].0;
        cy += STEP[heading].1;
        // Prefer turning left so diagonal contacts keep the component connected.
        let left_turn = (heading + 3) % 4;
        let (lx, ly) = right_pixel(cx, cy, left_turn);
        let next = if inside(lx, ly) && !inside(left_pixel(cx, cy, left_turn).0, left_pixel(cx, cy, left_turn).1) {
            left_turn
        } else {
            let (sx, sy) = right_pixel(cx, cy, heading);
            let (tx, ty) = left_pixel(cx, cy, heading);
            if inside(sx, sy) && !inside(tx, ty) {
                heading
            } else {
                (heading + 1) % 4
            }
        };
        if next != heading {
            corners.push([cx as f64, cy as f64]);
        }
        heading = next;
        if (cx, cy) == start_corner && heading == start_heading {
            break;
        }
    }
    corners
}

fn perpendicular_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p[0] - a[0]).hypot(p[1] - a[1]);
    }
    ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx).abs() / len
}

fn douglas_peucker(points: &[[f64; 2]], tolerance: f64, out: &mut Vec<[f64; 2]>) {
    // Emits every kept point except the last.
    let n = points.len();
    if n < 3 {
        out.push(points[0]);
        return;
    }
    let (a, b) = (points[0], points[n - 1]);
    let (mut idx, mut dmax) = (0, -1.0);
    for (i, &p) in points.iter().enumerate().take(n - 1).skip(1) {
        let d = perpendicular_distance(p, a, b);
        if d > dmax {
            idx = i;
            dmax = d;
        }
    }
    if dmax > tolerance {
        douglas_peucker(&points[..=idx], tolerance, out);
        douglas_peucker(&points[idx..], tolerance, out);
    } else {
        out.push(a);
    }
}

/// Douglas–Peucker simplification of a closed polygon. The polygon is split at
/// its first vertex and the vertex farthest from it; the result keeps at least
/// three vertices whenever the input has them.
pub fn simplify_closed(points: &[[f64; 2]], tolerance: f64) -> Vec<[f64; 2]> {
    if points.len() <= 3 {
        return points.to_vec();
    }
    let anchor = points[0];
    let far = (1..points.len())
        .max_by(|&i, &j| {
            let di = (points[i][0] - anchor[0]).hypot(points[i][1] - anchor[1]);
            let dj = (points[j][0] - anchor[0]).hypot(points[j][1] - anchor[1]);
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .unwrap();
    let mut first: Vec<[f64; 2]> = points[..=far].to_vec();
    let mut second: Vec<[f64; 2]> = points[far..].to_vec();
    second.push(anchor);
    let mut out = Vec::new();
    douglas_peucker(&first, tolerance, &mut out);
    douglas_peucker(&second, tolerance, &mut out);
    if out.len() < 3 {
        first.truncate(0);
        first.extend_from_slice(points);
        return first;
    }
    out
}

/// Outer boundary of the largest 8-connected component, simplified with a
/// 0.5 px tolerance, in pixel coordinates.
pub fn mask_to_polygon_pixels(mask: &Mask) -> Result<Vec<[f64; 2]>> {
    let (labels, areas) = label_components(mask, true);
    if areas.is_empty() {
        return Err(Error::EmptyMask);
    }
    // First component in raster order wins ties.
    let best = areas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32 + 1)
        .unwrap();
    let start = labels
        .as_slice()
        .iter()
        .position(|&l| l == best)
        .map(|i| (i % mask.width(), i / mask.width()))
        .unwrap();
    let (w, h) = mask.dims();
    let inside = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && *labels.get(x as usize, y as usize) == best
    };
    let corners = trace_outer(&inside, start);
    Ok(simplify_closed(&corners, 0.5))
}

/// Normalized boundary polygon of the largest component of `mask`.
pub fn mask_to_polygon(mask: &Mask) -> Result<Vec<[f64; 2]>> {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    Ok(mask_to_polygon_pixels(mask)?
        .into_iter()
        .map(|[x, y]| [x / w, y / h])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::raster::rasterize_pixels;

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        Image::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn square_gives_rectangle_that_rasterizes_exactly() {
        let mask = Image::from_fn(10, 10, |x, y| (3..7).contains(&x) && (2..6).contains(&y));
        let poly = mask_to_polygon_pixels(&mask).unwrap();
        assert_eq!(poly.len(), 4);
        let mut sorted = poly.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted, vec![[3.0, 2.0], [3.0, 6.0], [7.0, 2.0], [7.0, 6.0]]);
        assert_eq!(rasterize_pixels(&poly, 10, 10), mask);
        let norm = mask_to_polygon(&mask).unwrap();
        assert!(norm.iter().all(|&[x, y]| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)));
    }

    #[test]
    fn largest_component_selected() {
        let mut mask = Image::from_fn(40, 40, |x, y| (2..12).contains(&x) && (2..12).contains(&y));
        for y in 30..33 {
            for x in 30..32 {
                mask.set(x, y, true);
            }
        }
        let poly = mask_to_polygon_pixels(&mask).unwrap();
        assert!(poly.iter().all(|&[x, y]| x <= 12.0 && y <= 12.0));
        let back = rasterize_pixels(&poly, 40, 40);
        assert_eq!(back.count(), 100);
    }

    #[test]
    fn empty_mask_errors() {
        assert!(matches!(mask_to_polygon(&Image::filled(5, 5, false)), Err(Error::EmptyMask)));
    }

    #[test]
    fn diagonal_contact_stays_one_component() {
        let mask = mask_from(&["##..", "##..", "..##", "..##"]);
        let (_, areas) = label_components(&mask, true);
        assert_eq!(areas, vec![8]);
        let (_, areas4) = label_components(&mask, false);
        assert_eq!(areas4, vec![4, 4]);
        let poly = mask_to_polygon_pixels(&mask).unwrap();
        assert_eq!(rasterize_pixels(&poly, 4, 4), mask);
    }

    #[test]
    fn concave_shape_traced_exactly_before_simplification() {
        let mask = mask_from(&[
            "........",
            ".######.",
            ".#....#.",
            ".#.##.#.",
            ".#.##.#.",
            ".###..#.",
            "......#.",
            "........",
        ]);
        let (labels, _) = label_components(&mask, true);
        let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < 8 && y < 8 && *labels.get(x as usize, y as usize) == 1;
        let corners = trace_outer(&inside, (1, 1));
        let outer = rasterize_pixels(&corners, 8, 8);
        // Outer boundary fills interior holes but never drops a component pixel.
        for y in 0..8 {
            for x in 0..8 {
                if *labels.get(x, y) == 1 {
                    assert!(*outer.get(x, y), "pixel {x},{y} lost");
                }
            }
        }
        assert!(!outer.get(0, 0));
    }

    #[test]
    fn single_pixel() {
        let mask = mask_from(&["...", ".#.", "..."]);
        let poly = mask_to_polygon_pixels(&mask).unwrap();
        assert_eq!(poly.len(), 4);
        assert_eq!(rasterize_pixels(&poly, 3, 3), mask);
    }

    #[test]
    fn simplification_keeps_three_vertices() {
        let tri = vec![[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        assert_eq!(simplify_closed(&tri, 0.5).len(), 3);
        let collinear = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        assert_eq!(simplify_closed(&collinear, 0.5).len(), 4);
    }
}
