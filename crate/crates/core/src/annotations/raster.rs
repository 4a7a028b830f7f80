//! Polygon rasterization with the even-odd rule, sampling pixel centers.

use crate::image::{Image, Mask};

use super::Instance;

/// Fills a polygon given in pixel coordinates. Pixel `(x, y)` is set when its
/// center `(x + 0.5, y + 0.5)` lies inside.
pub fn rasterize_pixels(polygon: &[[f64; 2]], width: usize, height: usize) -> Mask {
    let mut mask = Image::filled(width, height, false);
    if polygon.len() < 3 {
        return mask;
    }
    let mut crossings = Vec::new();
    for y in 0..height {
        let cy = y as f64 + 0.5;
        crossings.clear();
        for i in 0..polygon.len() {
            let [x0, y0] = polygon[i];
            let [x1, y1] = polygon[(i + 1) % polygon.len()];
            // Half-open in y so shared vertices are counted once.
            if (y0 <= cy) != (y1 <= cy) {
                crossings.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // Columns whose centers fall in [span[0], span[1]).
            let start = (span[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((span[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for x in start..end {
                let v = mask.get_mut(x, y);
                *v = !*v;
            }
        }
    }
    mask
}

/// Rasterizes a normalized-coordinate instance onto a `width × height` grid.
pub fn rasterize(instance: &Instance, width: usize, height: usize) -> Mask {
    rasterize_pixels(&instance.pixel_polygon(width, height), width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::mask_to_polygon;

    #[test]
    fn unit_square_fills_everything() {
        let inst = Instance::ground_truth(0, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(rasterize(&inst, 8, 8).count(), 64);
    }

    #[test]
    fn triangle_area_ratio() {
        let inst = Instance::ground_truth(0, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let n = 1000;
        let ratio = rasterize(&inst, n, n).count() as f64 / (n * n) as f64;
        assert!((ratio - 0.5).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn even_odd_leaves_hole() {
        // Outer square with an inner square traversed as part of one ring.
        let poly = vec![
            [0.0, 0.0],
            [10.0, 0.0],
            [10.0, 10.0],
            [0.0, 10.0],
            [0.0, 0.0],
            [3.0, 3.0],
            [3.0, 7.0],
            [7.0, 7.0],
            [7.0, 3.0],
            [3.0, 3.0],
        ];
        let mask = rasterize_pixels(&poly, 10, 10);
        assert!(!mask.get(5, 5));
        assert!(*mask.get(1, 5));
        assert_eq!(mask.count(), 100 - 16);
    }

    #[test]
    fn disk_round_trip_iou() {
        let mask = Image::from_fn(64, 64, |x, y| {
            let (dx, dy) = (x as f64 - 30.0, y as f64 - 33.0);
            dx * dx + dy * dy <= 18.0 * 18.0
        });
        let inst = Instance::ground_truth(0, mask_to_polygon(&mask).unwrap());
        assert!(rasterize(&inst, 64, 64).iou(&mask) >= 0.95);
    }

    #[test]
    fn degenerate_polygon_is_empty() {
        assert_eq!(rasterize_pixels(&[[1.0, 1.0], [2.0, 2.0]], 4, 4).count(), 0);
    }
}
