//! Depth error metrics against a ground-truth depth map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthFrame;
use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    All,
    UnreliableOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    /// mm
    pub rmse: f64,
    /// mm
    pub mae: f64,
    pub evaluated_pixels: usize,
    pub region: Region,
}

/// RMSE and MAE over pixels valid in both maps, optionally restricted to
/// `region` (typically the unreliable mask). Truth is NaN where unknown.
pub fn depth_metrics(predicted: &DepthFrame, truth: &Image<f64>, region: Option<&Mask>) -> Result<DepthMetrics> {
    predicted.z.ensure_dims(truth, "ground-truth depth")?;
    if let Some(r) = region {
        predicted.z.ensure_dims(r, "region mask")?;
    }
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    for i in 0..truth.len() {
        if region.is_some_and(|r| !r.as_slice()[i]) || !predicted.valid.as_slice()[i] {
            continue;
        }
        let t = truth.as_slice()[i];
        if !t.is_finite() {
            continue;
        }
        let d = predicted.z.as_slice()[i] - t;
        sq += d * d;
        abs += d.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    let rmse = (sq / n as f64).sqrt();
    let mae = abs / n as f64;
    Ok(DepthMetrics {
        // Roundoff can put the two a hair out of order for constant errors.
        rmse: rmse.max(mae),
        mae,
        evaluated_pixels: n,
        region: if region.is_some() {
            Region::UnreliableOnly
        } else {
            Region::All
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn frame(values: &[f64]) -> DepthFrame {
        let img = Image::from_vec(values.len(), 1, values.to_vec()).unwrap();
        DepthFrame::from_depth(&img, Matrix3::identity())
    }

    #[test]
    fn identical_maps() {
        let truth = Image::from_vec(3, 1, vec![500.0, 510.0, 520.0]).unwrap();
        let m = depth_metrics(&frame(truth.as_slice()), &truth, None).unwrap();
        assert_eq!((m.rmse, m.mae, m.evaluated_pixels), (0.0, 0.0, 3));
    }

    #[test]
    fn constant_offset() {
        let truth = Image::from_vec(3, 1, vec![500.0, 510.0, 520.0]).unwrap();
        let m = depth_metrics(&frame(&[501.0, 511.0, 521.0]), &truth, None).unwrap();
        assert!((m.rmse - 1.0).abs() < 1e-12 && (m.mae - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_signs() {
        let truth = Image::filled(4, 1, 100.0);
        let m = depth_metrics(&frame(&[101.0, 99.0, 103.0, 97.0]), &truth, None).unwrap();
        assert!((m.mae - 2.0).abs() < 1e-12);
        assert!((m.rmse - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn region_restricts_and_empty_errors() {
        let truth = Image::filled(4, 1, 100.0);
        let pred = frame(&[101.0, 99.0, 103.0, 97.0]);
        let region = Image::from_vec(4, 1, vec![false, false, true, false]).unwrap();
        let m = depth_metrics(&pred, &truth, Some(&region)).unwrap();
        assert_eq!((m.rmse, m.evaluated_pixels, m.region), (3.0, 1, Region::UnreliableOnly));
        let none = Image::filled(4, 1, false);
        assert!(matches!(depth_metrics(&pred, &truth, Some(&none)), Err(Error::EmptyRegion)));
        let unknown = Image::filled(4, 1, f64::NAN);
        assert!(matches!(depth_metrics(&pred, &unknown, None), Err(Error::EmptyRegion)));
    }
}
