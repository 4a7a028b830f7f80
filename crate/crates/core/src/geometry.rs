//! Camera–projector triangulation.
//!
//! The world frame is the camera frame. A point `X` projects into the camera
//! as `K_c·X` and into the projector as `K_p·(R·X + t)`. Each camera pixel
//! defines a ray `X = z·K_c⁻¹[u, v, 1]ᵀ`; the decoded projector coordinate `c`
//! along the coded axis defines a plane through the projector center, and the
//! depth `z` is the single unknown of the ray/plane intersection.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::io::read_to_string;
use crate::patterns::Orientation;
use crate::phase::{AbsolutePhaseMap, ReliabilityMask};

/// Pinhole camera–projector pair with the camera frame as world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub camera_width: usize,
    pub camera_height: usize,
    pub camera_intrinsics: Matrix3<f64>,
    pub projector_width: usize,
    pub projector_height: usize,
    pub projector_intrinsics: Matrix3<f64>,
    /// World-to-projector rotation.
    pub projector_rotation: Matrix3<f64>,
    /// World-to-projector translation, millimeters.
    pub projector_translation: Vector3<f64>,
    /// Fringe period in projector pixels.
    pub fringe_period: f64,
    pub coded_axis: Orientation,
}

/// On-disk calibration schema (JSON, row-major matrices, millimeters).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub schema_version: u32,
    pub units: String,
    pub camera: CameraSection,
    pub projector: ProjectorSection,
    pub fringe_period: f64,
    pub coded_axis: Orientation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub intrinsics: [f64; 9],
    /// Reserved; the pinhole model ignores distortion and requires it empty or zero.
    #[serde(default)]
    pub distortion: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorSection {
    pub width: usize,
    pub height: usize,
    pub intrinsics: [f64; 9],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default)]
    pub distortion: Vec<f64>,
}

const ROTATION_TOLERANCE: f64 = 1e-6;

fn check_intrinsics(k: &Matrix3<f64>, what: &str) -> Result<()> {
    let lower_ok = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0;
    let diag_ok = k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0;
    if !(lower_ok && diag_ok) || k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "{what} intrinsics must be upper-triangular with positive diagonal"
        )));
    }
    Ok(())
}

impl CalibrationModel {
    pub fn validate(&self) -> Result<()> {
        check_intrinsics(&self.camera_intrinsics, "camera")?;
        check_intrinsics(&self.projector_intrinsics, "projector")?;
        let r = &self.projector_rotation;
        let off = (r.transpose() * r - Matrix3::identity()).abs().max();
        if off > ROTATION_TOLERANCE || !off.is_finite() {
            return Err(Error::Validation(format!(
                "projector rotation is not orthonormal (max |RᵀR − I| = {off:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "projector rotation has determinant {det}, expected +1"
            )));
        }
        if self.projector_translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("projector translation must be finite".into()));
        }
        if !(self.fringe_period > 0.0 && self.fringe_period.is_finite()) {
            return Err(Error::Validation(format!(
                "fringe period must be positive, got {}",
                self.fringe_period
            )));
        }
        if self.camera_width == 0 || self.camera_height == 0 || self.projector_width == 0 || self.projector_height == 0 {
            return Err(Error::Validation("image sizes must be nonzero".into()));
        }
        Ok(())
    }

    pub fn from_file_repr(file: CalibrationFile, source: &str) -> Result<Self> {
        if file.units != "mm" {
            return Err(Error::format(source, Some("units".into()), format!("unsupported units {:?}, expected \"mm\"", file.units)));
        }
        if file.schema_version != 1 {
            return Err(Error::format(
                source,
                Some("schema_version".into()),
                format!("unsupported schema version {}", file.schema_version),
            ));
        }
        for (name, d) in [("camera.distortion", &file.camera.distortion), ("projector.distortion", &file.projector.distortion)] {
            if d.iter().any(|&c| c != 0.0) {
                return Err(Error::format(source, Some(name.into()), "nonzero distortion is not supported by the pinhole model"));
            }
        }
        let model = Self {
            camera_width: file.camera.width,
            camera_height: file.camera.height,
            camera_intrinsics: Matrix3::from_row_slice(&file.camera.intrinsics),
            projector_width: file.projector.width,
            projector_height: file.projector.height,
            projector_intrinsics: Matrix3::from_row_slice(&file.projector.intrinsics),
            projector_rotation: Matrix3::from_row_slice(&file.projector.rotation),
            projector_translation: Vector3::from_row_slice(&file.projector.translation),
            fringe_period: file.fringe_period,
            coded_axis: file.coded_axis,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_file_repr(&self) -> CalibrationFile {
        let rows = |m: &Matrix3<f64>| -> [f64; 9] {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[r * 3 + c] = m[(r, c)];
                }
            }
            out
        };
        CalibrationFile {
            schema_version: 1,
            units: "mm".into(),
            camera: CameraSection {
                width: self.camera_width,
                height: self.camera_height,
                intrinsics: rows(&self.camera_intrinsics),
                distortion: Vec::new(),
            },
            projector: ProjectorSection {
                width: self.projector_width,
                height: self.projector_height,
                intrinsics: rows(&self.projector_intrinsics),
                rotation: rows(&self.projector_rotation),
                translation: [
                    self.projector_translation.x,
                    self.projector_translation.y,
                    self.projector_translation.z,
                ],
                distortion: Vec::new(),
            },
            fringe_period: self.fringe_period,
            coded_axis: self.coded_axis,
        }
    }

    pub fn from_json_str(text: &str, source: &str) -> Result<Self> {
        let file: CalibrationFile = serde_json::from_str(text).map_err(|e| {
            Error::format(source, Some(format!("line {} column {}", e.line(), e.column())), e.to_string())
        })?;
        Self::from_file_repr(file, source)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_repr()).expect("serializable calibration")
    }

    /// 3×4 projection matrix of the projector, `K_p·[R | t]`.
    pub fn projector_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.projector_rotation);
        rt.set_column(3, &self.projector_translation);
        self.projector_intrinsics * rt
    }

    /// Camera ray through pixel `(u, v)`, scaled so its z component is 1.
    pub fn camera_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let inv = self
            .camera_intrinsics
            .try_inverse()
            .expect("validated intrinsics are invertible");
        let d = inv * Vector3::new(u, v, 1.0);
        d / d.z
    }

    pub fn project_to_camera(&self, p: &Vector3<f64>) -> (f64, f64) {
        let q = self.camera_intrinsics * p;
        (q.x / q.z, q.y / q.z)
    }

    pub fn project_to_projector(&self, p: &Vector3<f64>) -> (f64, f64) {
        let q = self.projector_matrix() * Vector4::new(p.x, p.y, p.z, 1.0);
        (q.x / q.z, q.y / q.z)
    }

    /// Builds a self-consistent synthetic rig: camera at the origin looking down
    /// +z, projector displaced by `baseline` mm along +x and rotated to aim at
    /// the point `(0, 0, convergence)`.
    pub fn synthetic(rig: &SyntheticRig) -> Self {
        let (cw, ch) = rig.camera_size;
        let (pw, ph) = rig.projector_size;
        let camera_intrinsics = Matrix3::new(
            rig.camera_focal, 0.0, (cw as f64 - 1.0) / 2.0,
            0.0, rig.camera_focal, (ch as f64 - 1.0) / 2.0,
            0.0, 0.0, 1.0,
        );
        let projector_intrinsics = Matrix3::new(
            rig.projector_focal, 0.0, (pw as f64 - 1.0) / 2.0,
            0.0, rig.projector_focal, (ph as f64 - 1.0) / 2.0,
            0.0, 0.0, 1.0,
        );
        let center = Vector3::new(rig.baseline, 0.0, 0.0);
        let forward = (Vector3::new(0.0, 0.0, rig.convergence) - center).normalize();
        let right = Vector3::y().cross(&forward).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * center);
        Self {
            camera_width: cw,
            camera_height: ch,
            camera_intrinsics,
            projector_width: pw,
            projector_height: ph,
            projector_intrinsics,
            projector_rotation: rotation,
            projector_translation: translation,
            fringe_period: rig.fringe_period,
            coded_axis: Orientation::Vertical,
        }
    }
}

/// Parameters of [`CalibrationModel::synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRig {
    pub camera_size: (usize, usize),
    pub camera_focal: f64,
    pub projector_size: (usize, usize),
    pub projector_focal: f64,
    pub baseline: f64,
    pub convergence: f64,
    pub fringe_period: f64,
}

impl Default for SyntheticRig {
    fn default() -> Self {
        Self {
            camera_size: (512, 512),
            camera_focal: 1200.0,
            projector_size: (912, 1140),
            projector_focal: 1400.0,
            baseline: 200.0,
            convergence: 500.0,
            fringe_period: 18.0,
        }
    }
}

pub fn load_calibration(path: &Path) -> Result<CalibrationModel> {
    let text = read_to_string(path)?;
    CalibrationModel::from_json_str(&text, &path.display().to_string())
}

/// Converts absolute phase into projector coordinates along the coded axis,
/// `c = Φ·T/(2π)`. Invalid pixels become NaN.
pub fn phase_to_projector_column(abs: &AbsolutePhaseMap, fringe_period: f64) -> Result<Image<f64>> {
    if !(fringe_period > 0.0) {
        return Err(Error::Parameter(format!("fringe period must be positive, got {fringe_period}")));
    }
    let scale = fringe_period / std::f64::consts::TAU;
    let (w, h) = abs.phase.dims();
    Ok(Image::from_fn(w, h, |x, y| {
        if *abs.valid.get(x, y) {
            abs.phase.get(x, y) * scale
        } else {
            f64::NAN
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriangulationOptions {
    pub z_min: f64,
    pub z_max: f64,
    /// Ray/plane intersections whose denominator falls below this are rejected.
    pub parallel_epsilon: f64,
}

impl Default for TriangulationOptions {
    fn default() -> Self {
        Self {
            z_min: 100.0,
            z_max: 2000.0,
            parallel_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangulationDiagnostics {
    pub input_invalid: usize,
    pub near_parallel: usize,
    pub out_of_volume: usize,
    pub valid: usize,
}

/// Per-pixel depth and world coordinates aligned with the camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub z: Image<f64>,
    pub world_xyz: Image<[f64; 3]>,
    pub valid: Mask,
    pub reliability: Option<ReliabilityMask>,
    pub camera_intrinsics: Matrix3<f64>,
}

impl DepthFrame {
    pub fn empty(width: usize, height: usize, camera_intrinsics: Matrix3<f64>) -> Self {
        Self {
            z: Image::filled(width, height, f64::NAN),
            world_xyz: Image::filled(width, height, [f64::NAN; 3]),
            valid: Image::filled(width, height, false),
            reliability: None,
            camera_intrinsics,
        }
    }

    /// Frame holding the given depth map; NaN entries are invalid.
    pub fn from_depth(depth: &Image<f64>, camera_intrinsics: Matrix3<f64>) -> Self {
        let mut frame = Self::empty(depth.width(), depth.height(), camera_intrinsics);
        for y in 0..depth.height() {
            for x in 0..depth.width() {
                let z = *depth.get(x, y);
                if z.is_finite() {
                    frame.set_depth(x, y, z);
                }
            }
        }
        frame
    }

    pub fn width(&self) -> usize {
        self.z.width()
    }

    pub fn height(&self) -> usize {
        self.z.height()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    fn ray(&self, x: usize, y: usize) -> Vector3<f64> {
        let k = &self.camera_intrinsics;
        let yn = (y as f64 - k[(1, 2)]) / k[(1, 1)];
        let xn = (x as f64 - k[(0, 2)] - k[(0, 1)] * yn) / k[(0, 0)];
        Vector3::new(xn, yn, 1.0)
    }

    /// Marks the pixel valid with depth `z`, deriving its world point from the camera ray.
    pub fn set_depth(&mut self, x: usize, y: usize, z: f64) {
        let p = self.ray(x, y) * z;
        self.z.set(x, y, z);
        self.world_xyz.set(x, y, [p.x, p.y, p.z]);
        self.valid.set(x, y, true);
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.z.set(x, y, f64::NAN);
        self.world_xyz.set(x, y, [f64::NAN; 3]);
        self.valid.set(x, y, false);
    }
}

/// Intersects every camera ray with the projector plane of its decoded coordinate.
pub fn triangulate(
    columns: &Image<f64>,
    calib: &CalibrationModel,
    opts: &TriangulationOptions,
) -> Result<(DepthFrame, TriangulationDiagnostics)> {
    calib.validate()?;
    let (w, h) = columns.dims();
    if (w, h) != (calib.camera_width, calib.camera_height) {
        return Err(Error::Structure(format!(
            "projector coordinate map is {w}x{h} but the camera is {}x{}",
            calib.camera_width, calib.camera_height
        )));
    }
    let p = calib.projector_matrix();
    let axis_row = match calib.coded_axis {
        Orientation::Vertical => 0,
        Orientation::Horizontal => 1,
    };
    let coded = p.row(axis_row).transpose();
    let homog = p.row(2).transpose();
    let mut frame = DepthFrame::empty(w, h, calib.camera_intrinsics);

    let rows: Vec<(Vec<f64>, TriangulationDiagnostics)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut diag = TriangulationDiagnostics::default();
            let mut zs = vec![f64::NAN; w];
            for (x, z_out) in zs.iter_mut().enumerate() {
                let c = *columns.get(x, y);
                if !c.is_finite() {
                    diag.input_invalid += 1;
                    continue;
                }
                let plane = coded - homog * c;
                let d = frame.ray(x, y);
                let denom = plane[0] * d.x + plane[1] * d.y + plane[2] * d.z;
                if denom.abs() < opts.parallel_epsilon {
                    diag.near_parallel += 1;
                    continue;
                }
                let z = -plane[3] / denom;
                if !(z >= opts.z_min && z <= opts.z_max) {
                    diag.out_of_volume += 1;
                    continue;
                }
                diag.valid += 1;
                *z_out = z;
            }
            (zs, diag)
        })
        .collect();

    let mut total = TriangulationDiagnostics::default();
    for (y, (zs, diag)) in rows.into_iter().enumerate() {
        total.input_invalid += diag.input_invalid;
        total.near_parallel += diag.near_parallel;
        total.out_of_volume += diag.out_of_volume;
        total.valid += diag.valid;
        for (x, z) in zs.into_iter().enumerate() {
            if z.is_finite() {
                frame.set_depth(x, y, z);
            }
        }
    }
    Ok((frame, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> CalibrationModel {
        CalibrationModel::synthetic(&SyntheticRig::default())
    }

    /// Simple fixture: identity rotation, projector 100 mm along +x.
    pub(crate) fn fixture_json() -> String {
        r#"{
  "schema_version": 1,
  "units": "mm",
  "camera": { "width": 64, "height": 48, "intrinsics": [500, 0, 31.5, 0, 500, 23.5, 0, 0, 1] },
  "projector": {
    "width": 128, "height": 96,
    "intrinsics": [600, 0, 63.5, 0, 600, 47.5, 0, 0, 1],
    "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
    "translation": [-100, 0, 0]
  },
  "fringe_period": 16.0,
  "coded_axis": "vertical"
}"#
        .to_string()
    }

    #[test]
    fn loads_valid_fixture() {
        let c = CalibrationModel::from_json_str(&fixture_json(), "fixture").unwrap();
        assert_eq!(c.camera_width, 64);
        assert_eq!(c.projector_translation.x, -100.0);
        let back = CalibrationModel::from_json_str(&c.to_json_string(), "again").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn reflection_rejected() {
        let text = fixture_json().replace("\"rotation\": [1, 0, 0,", "\"rotation\": [-1, 0, 0,");
        assert!(matches!(CalibrationModel::from_json_str(&text, "f"), Err(Error::Validation(_))));
    }

    #[test]
    fn non_orthonormal_rejected() {
        let text = fixture_json().replace("\"rotation\": [1, 0, 0,", "\"rotation\": [1.001, 0, 0,");
        assert!(matches!(CalibrationModel::from_json_str(&text, "f"), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_period_names_field() {
        let text = fixture_json().replace("\"fringe_period\": 16.0,", "");
        let err = CalibrationModel::from_json_str(&text, "f").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("fringe_period"), "{err}");
    }

    #[test]
    fn garbage_reports_location() {
        let err = CalibrationModel::from_json_str("{\n  \"schema_version\": 1,\n  oops }", "f").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn phase_to_column_formula() {
        use std::f64::consts::PI;
        let abs = AbsolutePhaseMap {
            phase: Image::from_vec(3, 1, vec![0.0, 2.0 * PI, 13.0 * PI]).unwrap(),
            fringe_order: Image::filled(3, 1, 0),
            valid: Image::filled(3, 1, true),
        };
        let c36 = phase_to_projector_column(&abs, 36.0).unwrap();
        assert_eq!(*c36.get(0, 0), 0.0);
        assert!((c36.get(1, 0) - 36.0).abs() < 1e-12);
        let c18 = phase_to_projector_column(&abs, 18.0).unwrap();
        assert!((c18.get(2, 0) - 117.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_rig_is_valid_and_aims_at_center() {
        let c = rig();
        c.validate().unwrap();
        let (u, v) = c.project_to_projector(&Vector3::new(0.0, 0.0, 500.0));
        assert!((u - 455.5).abs() < 1e-9 && (v - 569.5).abs() < 1e-9);
    }

    fn plane_columns(c: &CalibrationModel, z: impl Fn(usize, usize) -> f64) -> Image<f64> {
        Image::from_fn(c.camera_width, c.camera_height, |x, y| {
            let p = c.camera_ray(x as f64, y as f64) * z(x, y);
            c.project_to_projector(&p).0
        })
    }

    #[test]
    fn fronto_parallel_plane_recovered() {
        let c = rig();
        let cols = plane_columns(&c, |_, _| 500.0);
        let (frame, diag) = triangulate(&cols, &c, &TriangulationOptions::default()).unwrap();
        assert_eq!(diag.valid, 512 * 512);
        for &z in frame.z.as_slice() {
            assert!((z - 500.0).abs() < 1e-6);
        }
    }

    #[test]
    fn back_projection_consistency() {
        let c = rig();
        let cols = plane_columns(&c, |x, y| 480.0 + 0.05 * x as f64 + 0.02 * y as f64);
        let (frame, _) = triangulate(&cols, &c, &TriangulationOptions::default()).unwrap();
        for y in (0..512).step_by(17) {
            for x in (0..512).step_by(13) {
                let p = frame.world_xyz.get(x, y);
                let p = Vector3::new(p[0], p[1], p[2]);
                let (u, v) = c.project_to_camera(&p);
                assert!((u - x as f64).abs() < 0.01 && (v - y as f64).abs() < 0.01);
                let (up, _) = c.project_to_projector(&p);
                assert!((up - cols.get(x, y)).abs() < 0.01);
            }
        }
    }

    #[test]
    fn scaled_baseline_scales_depth() {
        let c = rig();
        let cols = plane_columns(&c, |_, _| 500.0);
        let mut scaled = c.clone();
        scaled.projector_translation *= 1.5;
        let (a, _) = triangulate(&cols, &c, &TriangulationOptions::default()).unwrap();
        let (b, _) = triangulate(&cols, &scaled, &TriangulationOptions::default()).unwrap();
        for (za, zb) in a.z.as_slice().iter().zip(b.z.as_slice()) {
            assert!((zb - 1.5 * za).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_and_out_of_volume_pixels() {
        let c = rig();
        let mut cols = plane_columns(&c, |_, _| 500.0);
        cols.set(3, 3, f64::NAN);
        cols.set(4, 3, -1e6);
        let (frame, diag) = triangulate(&cols, &c, &TriangulationOptions::default()).unwrap();
        assert!(!frame.valid.get(3, 3));
        assert!(!frame.valid.get(4, 3));
        assert_eq!(diag.input_invalid, 1);
        assert_eq!(diag.out_of_volume + diag.near_parallel, 1);
        assert_eq!(diag.valid, 512 * 512 - 2);
    }

    #[test]
    fn triangulation_is_deterministic() {
        let c = rig();
        let cols = plane_columns(&c, |x, _| 450.0 + x as f64 * 0.1);
        let (a, _) = triangulate(&cols, &c, &TriangulationOptions::default()).unwrap();
        let (b, _) = triangulate(&cols, &c, &TriangulationOptions::default()).unwrap();
        let bits = |f: &DepthFrame| f.z.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
