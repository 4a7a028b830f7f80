//! Assigning screws to the component they are mounted on.

use super::taxonomy::SCREW;
use super::AnnotationSet;

/// Signed shoelace area; positive for counter-clockwise in a y-up frame.
fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let [x0, y0] = poly[i];
            let [x1, y1] = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    signed_area(poly).abs()
}

/// Area centroid; falls back to the vertex mean for degenerate polygons.
pub fn polygon_centroid(poly: &[[f64; 2]]) -> [f64; 2] {
    let a = signed_area(poly);
    let n = poly.len();
    if a.abs() < 1e-15 {
        let (sx, sy) = poly.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        return [sx / n as f64, sy / n as f64];
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by monotone chain, counter-clockwise (y-up), without
/// collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Inclusive containment test against a counter-clockwise convex polygon.
fn convex_contains(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let n = hull.len();
    (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= -1e-12)
}

/// Parent of one screw instance, by index into the annotation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FastenerAssignment {
    pub screw: usize,
    /// `None` when no component hull contains the screw centroid.
    pub parent: Option<usize>,
}

/// Maps every screw to the non-screw instance whose convex hull contains the
/// screw's centroid. When several hulls do, the smallest one wins.
pub fn associate_fasteners(set: &AnnotationSet) -> Vec<FastenerAssignment> {
    let (w, h) = (set.image_width as f64, set.image_height as f64);
    let to_pixels = |poly: &[[f64; 2]]| -> Vec<[f64; 2]> { poly.iter().map(|&[x, y]| [x * w, y * h]).collect() };
    let hulls: Vec<(usize, Vec<[f64; 2]>, f64)> = set
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.class_id != SCREW)
        .map(|(i, inst)| {
            let hull = convex_hull(&to_pixels(&inst.polygon));
            let area = polygon_area(&hull);
            (i, hull, area)
        })
        .collect();
    set.instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.class_id == SCREW)
        .map(|(i, inst)| {
            let c = polygon_centroid(&to_pixels(&inst.polygon));
            let parent = hulls
                .iter()
                .filter(|(_, hull, _)| convex_contains(hull, c))
                .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
                .map(|(j, _, _)| *j);
            FastenerAssignment { screw: i, parent }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::taxonomy::{PCB, SPINDLE_MOTOR_HUB, TOP_PLATE};
    use crate::annotations::Instance;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    fn set(instances: Vec<Instance>) -> AnnotationSet {
        AnnotationSet {
            instances,
            image_width: 100,
            image_height: 100,
        }
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = vec![[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 2.0], [1.0, 0.0]];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!((polygon_area(&hull) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_of_l_shape() {
        let l = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
        let c = polygon_centroid(&l);
        assert!((c[0] - 5.0 / 6.0).abs() < 1e-12 && (c[1] - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn screw_inside_pcb_only() {
        let s = set(vec![
            Instance::ground_truth(PCB, rect(0.1, 0.1, 0.5, 0.5)),
            Instance::ground_truth(TOP_PLATE, rect(0.6, 0.6, 0.9, 0.9)),
            Instance::ground_truth(SCREW, rect(0.2, 0.2, 0.22, 0.22)),
        ]);
        assert_eq!(associate_fasteners(&s), vec![FastenerAssignment { screw: 2, parent: Some(0) }]);
    }

    #[test]
    fn screw_outside_everything() {
        let s = set(vec![
            Instance::ground_truth(PCB, rect(0.1, 0.1, 0.5, 0.5)),
            Instance::ground_truth(SCREW, rect(0.7, 0.7, 0.72, 0.72)),
        ]);
        assert_eq!(associate_fasteners(&s)[0].parent, None);
    }

    #[test]
    fn nested_hulls_prefer_smaller() {
        let s = set(vec![
            Instance::ground_truth(TOP_PLATE, rect(0.05, 0.05, 0.95, 0.95)),
            Instance::ground_truth(SPINDLE_MOTOR_HUB, rect(0.4, 0.4, 0.6, 0.6)),
            Instance::ground_truth(SCREW, rect(0.48, 0.48, 0.52, 0.52)),
        ]);
        assert_eq!(associate_fasteners(&s)[0].parent, Some(1));
    }

    #[test]
    fn quarter_rotation_preserves_mapping() {
        let s = set(vec![
            Instance::ground_truth(TOP_PLATE, rect(0.05, 0.05, 0.95, 0.7)),
            Instance::ground_truth(SPINDLE_MOTOR_HUB, rect(0.3, 0.2, 0.5, 0.4)),
            Instance::ground_truth(SCREW, rect(0.31, 0.21, 0.33, 0.23)),
            Instance::ground_truth(SCREW, rect(0.8, 0.8, 0.82, 0.82)),
        ]);
        let original = associate_fasteners(&s);
        let mut rotated = s.clone();
        for _ in 0..4 {
            rotated = rotated.rotated_quarter();
            assert_eq!(associate_fasteners(&rotated), original);
        }
    }
}
