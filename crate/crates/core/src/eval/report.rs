//! Versioned JSON reports and plain-text tables for the metrics.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::annotations::Taxonomy;

use super::{DepthMetrics, DetectionMetrics, IouMode};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub schema_version: u32,
    pub method: String,
    pub metrics: DepthMetrics,
}

impl DepthReport {
    pub fn new(method: impl Into<String>, metrics: DepthMetrics) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            method: method.into(),
            metrics,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>10} {:>10} {:>10}", "Method", "RMSE (mm)", "MAE (mm)", "Pixels");
        let _ = writeln!(
            s,
            "{:<20} {:>10.3} {:>10.3} {:>10}",
            self.method, self.metrics.rmse, self.metrics.mae, self.metrics.evaluated_pixels
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_id: u8,
    pub name: String,
    pub gt_count: usize,
    pub pred_count: usize,
    pub ap50: f64,
    pub ap50_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    pub mode: IouMode,
    pub iou_thresholds: Vec<f64>,
    pub classes: Vec<ClassRow>,
    pub map50: f64,
    pub map50_95: f64,
}

impl DetectionReport {
    pub fn new(metrics: &DetectionMetrics, taxonomy: &Taxonomy) -> Self {
        let ap50 = metrics.per_class_ap50();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: metrics.mode,
            iou_thresholds: metrics.iou_thresholds.clone(),
            classes: metrics
                .per_class
                .iter()
                .map(|(&id, ap)| ClassRow {
                    class_id: id,
                    name: taxonomy.name(id).map(str::to_string).unwrap_or_else(|| format!("class_{id}")),
                    gt_count: ap.gt_count,
                    pred_count: ap.pred_count,
                    ap50: ap50[&id],
                    ap50_95: ap.mean(),
                })
                .collect(),
            map50: metrics.map50,
            map50_95: metrics.map50_95,
        }
    }

    pub fn to_table(&self) -> String {
        let what = match self.mode {
            IouMode::Box => "Box",
            IouMode::Mask => "Mask",
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22} {:>6} {:>6} {:>12} {:>15}",
            "Class",
            "GT",
            "Pred",
            format!("{what} AP@50"),
            format!("{what} AP@50-95")
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<22} {:>6} {:>6} {:>12.3} {:>15.3}",
                c.name, c.gt_count, c.pred_count, c.ap50, c.ap50_95
            );
        }
        let _ = writeln!(s, "{:<22} {:>6} {:>6} {:>12.3} {:>15.3}", "Overall", "", "", self.map50, self.map50_95);
        s
    }
}
