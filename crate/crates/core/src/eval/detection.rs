//! Box and mask average precision with all-points interpolation.
//!
//! Per class and IoU threshold: predictions from every image are ranked by
//! confidence (stable for ties), each is greedily matched to the unmatched
//! ground truth of its image with the highest IoU, and AP is the area under
//! the precision envelope of the resulting PR curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotations::{rasterize, AnnotationSet, Instance};
use crate::error::{Error, Result};
use crate::image::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Box,
    Mask,
}

impl std::str::FromStr for IouMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Self::Box),
            "mask" => Ok(Self::Mask),
            _ => Err(Error::Parameter(format!("unknown IoU mode {s:?}; expected box or mask"))),
        }
    }
}

/// 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub gt_count: usize,
    pub pred_count: usize,
    /// AP at each threshold of [`DetectionMetrics::iou_thresholds`].
    pub ap: Vec<f64>,
}

impl ClassAp {
    pub fn mean(&self) -> f64 {
        self.ap.iter().sum::<f64>() / self.ap.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub mode: IouMode,
    pub iou_thresholds: Vec<f64>,
    /// Classes present in the ground truth only.
    pub per_class: BTreeMap<u8, ClassAp>,
    pub map50: f64,
    pub map50_95: f64,
}

impl DetectionMetrics {
    pub fn per_class_ap50(&self) -> BTreeMap<u8, f64> {
        let i = self.index_of(0.5).expect("0.5 is always evaluated");
        self.per_class.iter().map(|(&c, ap)| (c, ap.ap[i])).collect()
    }

    fn index_of(&self, t: f64) -> Option<usize> {
        self.iou_thresholds.iter().position(|&x| (x - t).abs() < 1e-9)
    }
}

pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Area under the monotone precision envelope. `hits` is in rank order.
pub fn average_precision(hits: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.into_iter().zip(precision) {
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

enum Shape {
    Box([f64; 4]),
    Mask(Mask),
}

fn shape(i: &Instance, set: &AnnotationSet, mode: IouMode) -> Shape {
    match mode {
        IouMode::Box => Shape::Box(i.bbox()),
        IouMode::Mask => Shape::Mask(rasterize(i, set.image_width, set.image_height)),
    }
}

fn iou(a: &Shape, b: &Shape) -> f64 {
    match (a, b) {
        (Shape::Box(a), Shape::Box(b)) => box_iou(a, b),
        (Shape::Mask(a), Shape::Mask(b)) => a.iou(b),
        _ => unreachable!("shapes share one mode"),
    }
}

pub fn detection_metrics(
    predictions: &[AnnotationSet],
    ground_truth: &[AnnotationSet],
    mode: IouMode,
    iou_thresholds: &[f64],
) -> Result<DetectionMetrics> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Structure(format!(
            "{} prediction sets but {} ground-truth sets",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Parameter("IoU thresholds must lie in [0, 1]".into()));
    }
    if !iou_thresholds.iter().any(|t| (t - 0.5).abs() < 1e-9) {
        return Err(Error::Parameter("IoU thresholds must include 0.5".into()));
    }
    for (p, g) in predictions.iter().zip(ground_truth) {
        if (p.image_width, p.image_height) != (g.image_width, g.image_height) {
            return Err(Error::Structure("prediction and ground-truth image sizes differ".into()));
        }
    }

    let mut gt_count: BTreeMap<u8, usize> = BTreeMap::new();
    for g in ground_truth {
        for i in &g.instances {
            *gt_count.entry(i.class_id).or_default() += 1;
        }
    }

    let mut per_class = BTreeMap::new();
    for (&class, &n_gt) in &gt_count {
        // IoU of every prediction against each same-class GT in its image.
        let mut ranked: Vec<(f64, Vec<f64>, usize)> = Vec::new();
        for (img, (p, g)) in predictions.iter().zip(ground_truth).enumerate() {
            let gts: Vec<Shape> = g
                .instances
                .iter()
                .filter(|i| i.class_id == class)
                .map(|i| shape(i, g, mode))
                .collect();
            for pi in p.instances.iter().filter(|i| i.class_id == class) {
                let s = shape(pi, p, mode);
                ranked.push((pi.confidence, gts.iter().map(|gs| iou(&s, gs)).collect(), img));
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

        let ap = iou_thresholds
            .iter()
            .map(|&t| {
                let mut taken: Vec<Vec<bool>> = ground_truth
                    .iter()
                    .map(|g| vec![false; g.instances.iter().filter(|i| i.class_id == class).count()])
                    .collect();
                let hits: Vec<bool> = ranked
                    .iter()
                    .map(|(_, ious, img)| {
                        let mut best: Option<(usize, f64)> = None;
                        for (j, &v) in ious.iter().enumerate() {
                            if !taken[*img][j] && v >= t && best.is_none_or(|(_, b)| v > b) {
                                best = Some((j, v));
                            }
                        }
                        match best {
                            Some((j, _)) => {
                                taken[*img][j] = true;
                                true
                            }
                            None => false,
                        }
                    })
                    .collect();
                average_precision(&hits, n_gt)
            })
            .collect();
        per_class.insert(
            class,
            ClassAp {
                gt_count: n_gt,
                pred_count: ranked.len(),
                ap,
            },
        );
    }

    let mut metrics = DetectionMetrics {
        mode,
        iou_thresholds: iou_thresholds.to_vec(),
        per_class,
        map50: 0.0,
        map50_95: 0.0,
    };
    if !metrics.per_class.is_empty() {
        let n = metrics.per_class.len() as f64;
        metrics.map50 = metrics.per_class_ap50().values().sum::<f64>() / n;
        metrics.map50_95 = metrics.per_class.values().map(ClassAp::mean).sum::<f64>() / n;
    }
    Ok(metrics)
}
