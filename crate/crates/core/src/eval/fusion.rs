//! Pixel-wise fusion of instance annotations with a depth frame sharing the
//! same camera.

use crate::annotations::{rasterize, AnnotationSet};
use crate::error::{Error, Result};
use crate::geometry::DepthFrame;
use crate::image::Image;
use crate::ply::UNLABELED;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    /// World coordinates, mm.
    pub points: Vec<[f64; 3]>,
    /// Taxonomy id per point, `None` where no instance covers the pixel.
    pub labels: Vec<Option<u8>>,
    /// Camera pixel `[u, v]` each point came from.
    pub source_pixel: Vec<[usize; 2]>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-pixel class of the winning instance, [`UNLABELED`] where uncovered.
///
/// Overlaps go to the highest confidence, then the smallest mask, then the
/// earliest instance.
pub fn label_image(set: &AnnotationSet) -> Image<u8> {
    let (w, h) = (set.image_width, set.image_height);
    let masks: Vec<_> = set.instances.iter().map(|i| rasterize(i, w, h)).collect();
    let areas: Vec<usize> = masks.iter().map(|m| m.count()).collect();
    let mut order: Vec<usize> = (0..set.instances.len()).collect();
    // Best instance first; it claims pixels before anyone else.
    order.sort_by(|&a, &b| {
        set.instances[b]
            .confidence
            .total_cmp(&set.instances[a].confidence)
            .then(areas[a].cmp(&areas[b]))
            .then(a.cmp(&b))
    });
    let mut labels = Image::filled(w, h, UNLABELED);
    for i in order {
        let class = set.instances[i].class_id;
        for (l, &m) in labels.as_mut_slice().iter_mut().zip(masks[i].as_slice()) {
            if m && *l == UNLABELED {
                *l = class;
            }
        }
    }
    labels
}

pub fn fuse(frame: &DepthFrame, set: &AnnotationSet) -> Result<LabeledCloud> {
    if (frame.width(), frame.height()) != (set.image_width, set.image_height) {
        return Err(Error::Structure(format!(
            "depth frame is {}x{} but annotations are for {}x{}",
            frame.width(),
            frame.height(),
            set.image_width,
            set.image_height
        )));
    }
    let labels = label_image(set);
    let mut cloud = LabeledCloud::default();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if !*frame.valid.get(x, y) {
                continue;
            }
            let l = *labels.get(x, y);
            cloud.points.push(*frame.world_xyz.get(x, y));
            cloud.labels.push((l != UNLABELED).then_some(l));
            cloud.source_pixel.push([x, y]);
        }
    }
    Ok(cloud)
}
