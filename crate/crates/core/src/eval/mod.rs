//! Semantic fusion and evaluation metrics.

pub mod depth;
pub mod detection;
pub mod fusion;
pub mod report;

pub use depth::{depth_metrics, DepthMetrics, Region};
pub use detection::{average_precision, box_iou, coco_thresholds, detection_metrics, ClassAp, DetectionMetrics, IouMode};
pub use fusion::{fuse, label_image, LabeledCloud};
pub use report::{DepthReport, DetectionReport};
