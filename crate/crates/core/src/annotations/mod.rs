//! Instance-segmentation annotations in the flat normalized-polygon label
//! format (`class_id x1 y1 x2 y2 …`, one instance per line), plus the mask and
//! polygon operations needed to produce and consume them.

pub mod associate;
pub mod contour;
pub mod raster;
pub mod separate;
pub mod taxonomy;

use crate::error::{Error, Result};

pub use associate::{associate_fasteners, convex_hull, polygon_area, polygon_centroid, FastenerAssignment};
pub use contour::{label_components, mask_to_polygon, mask_to_polygon_pixels, simplify_closed};
pub use raster::{rasterize, rasterize_pixels};
pub use separate::{distance_transform, separate_instances, SeparationOptions};
pub use taxonomy::{Category, Taxonomy, TaxonomyClass, NUM_CLASSES};

/// One annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub class_id: u8,
    /// Vertices in normalized image coordinates, `[x / width, y / height]`.
    pub polygon: Vec<[f64; 2]>,
    pub confidence: f64,
}

impl Instance {
    pub fn ground_truth(class_id: u8, polygon: Vec<[f64; 2]>) -> Self {
        Self {
            class_id,
            polygon,
            confidence: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.polygon.len() < 3 {
            return Err(Error::Validation(format!(
                "polygon needs at least 3 vertices, got {}",
                self.polygon.len()
            )));
        }
        if self.polygon.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Validation("polygon coordinates must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Validation(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }

    /// Axis-aligned bounding box in normalized coordinates: `[x0, y0, x1, y1]`.
    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &[x, y] in &self.polygon {
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        b
    }

    /// Polygon in pixel coordinates of a `width × height` image.
    pub fn pixel_polygon(&self, width: usize, height: usize) -> Vec<[f64; 2]> {
        self.polygon
            .iter()
            .map(|&[x, y]| [x * width as f64, y * height as f64])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub instances: Vec<Instance>,
    pub image_width: usize,
    pub image_height: usize,
}

impl AnnotationSet {
    pub fn empty(image_width: usize, image_height: usize) -> Self {
        Self {
            instances: Vec::new(),
            image_width,
            image_height,
        }
    }

    /// Rotates every polygon by a quarter turn, matching the image rotation of
    /// [`crate::simulator::rotate_scene`] by +90° on a square image.
    pub fn rotated_quarter(&self) -> Self {
        Self {
            instances: self
                .instances
                .iter()
                .map(|i| Instance {
                    polygon: i.polygon.iter().map(|&[x, y]| [y, 1.0 - x]).collect(),
                    ..i.clone()
                })
                .collect(),
            image_width: self.image_height,
            image_height: self.image_width,
        }
    }
}

/// Whether label lines carry a trailing confidence token (prediction files).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelKind {
    #[default]
    GroundTruth,
    Prediction,
}

/// Parses a ground-truth label file against the HDD taxonomy.
pub fn parse_labels(text: &str, width: usize, height: usize) -> Result<AnnotationSet> {
    parse_labels_with(text, width, height, NUM_CLASSES, LabelKind::GroundTruth)
}

/// Parses label text. Prediction lines end with a confidence token after the
/// coordinate pairs.
pub fn parse_labels_with(
    text: &str,
    width: usize,
    height: usize,
    num_classes: usize,
    kind: LabelKind,
) -> Result<AnnotationSet> {
    let mut instances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| Error::LabelParse { line: lineno, message };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let class_id: usize = tokens[0]
            .parse()
            .map_err(|_| err(format!("invalid class id {:?}", tokens[0])))?;
        if class_id >= num_classes {
            return Err(err(format!("class id {class_id} outside 0..{num_classes}")));
        }
        let mut values = tokens[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("invalid number {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let confidence = match kind {
            LabelKind::GroundTruth => 1.0,
            LabelKind::Prediction => {
                let c = values.pop().ok_or_else(|| err("missing confidence".into()))?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(err(format!("confidence {c} outside [0, 1]")));
                }
                c
            }
        };
        if values.len() % 2 != 0 {
            return Err(err(format!("odd number of coordinates ({})", values.len())));
        }
        if values.len() < 6 {
            return Err(err(format!("polygon needs at least 3 vertices, got {}", values.len() / 2)));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(err(format!("coordinate {v} outside [0, 1]")));
        }
        instances.push(Instance {
            class_id: class_id as u8,
            polygon: values.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            confidence,
        });
    }
    Ok(AnnotationSet {
        instances,
        image_width: width,
        image_height: height,
    })
}

pub fn serialize_labels(set: &AnnotationSet) -> String {
    serialize_labels_with(set, LabelKind::GroundTruth)
}

pub fn serialize_labels_with(set: &AnnotationSet, kind: LabelKind) -> String {
    let mut out = String::new();
    for inst in &set.instances {
        out.push_str(&inst.class_id.to_string());
        for &[x, y] in &inst.polygon {
            out.push_str(&format!(" {x:.6} {y:.6}"));
        }
        if kind == LabelKind::Prediction {
            out.push_str(&format!(" {:.6}", inst.confidence));
        }
        out.push('\n');
    }
    out
}
