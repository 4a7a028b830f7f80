//! Lightweight structured-light renderer.
//!
//! Each camera pixel looks up the projector coordinate of the surface point it
//! sees (from the height field and the pinhole rig) and samples the projected
//! pattern there. There is no shading model beyond a scalar albedo.

mod dataset;
mod scenes;

use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CalibrationModel;
use crate::image::{Image, Intensity, Mask};
use crate::patterns::PatternSet;
use crate::phase::ImageStack;

pub use dataset::{
    generate_dataset, orientation_count, read_depth, theta_label, write_depth, DatasetManifest, DatasetOptions, DepthHeader,
    MaterialRandomization, OrientationEntry,
};
pub use scenes::{
    hdd_scene, plane_scene, ramp_scene, scene_annotations, sphere_scene, DriveFacing, HddLayout, SceneDescriptor,
    HDD_VARIANTS,
};

/// Ground truth for one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Surface depth along the camera axis per pixel, mm.
    pub height_field: Image<f64>,
    /// Reflectance; values above 1 model specular gain.
    pub albedo: Image<f64>,
    /// 0 for background, otherwise `1..=num_materials`.
    pub material_index: Image<u8>,
    /// Object identity; 0 where no object is annotated.
    pub instance_index: Image<u32>,
    /// Pixels the projector cannot reach.
    pub shadow: Mask,
    /// Accumulated in-plane rotation, degrees in `[0, 360)`.
    pub pose_theta: f64,
    pub num_materials: usize,
    /// Surface used where a rotation uncovers pixels outside the original view.
    pub background: Background,
    /// Recompute projector shadows after each rotation during dataset generation.
    pub cast_shadows: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub height: f64,
    pub albedo: f64,
}

impl SceneSpec {
    /// A flat scene with a single depth and albedo and no materials.
    pub fn uniform(width: usize, height: usize, depth: f64, albedo: f64) -> Self {
        Self {
            height_field: Image::filled(width, height, depth),
            albedo: Image::filled(width, height, albedo),
            material_index: Image::filled(width, height, 0),
            instance_index: Image::filled(width, height, 0),
            shadow: Image::filled(width, height, false),
            pose_theta: 0.0,
            num_materials: 0,
            background: Background { height: depth, albedo },
            cast_shadows: false,
        }
    }

    fn dims(&self) -> (usize, usize) {
        self.height_field.dims()
    }

    pub fn width(&self) -> usize {
        self.height_field.width()
    }

    pub fn height(&self) -> usize {
        self.height_field.height()
    }

    pub fn validate(&self) -> Result<()> {
        self.height_field.ensure_dims(&self.albedo, "albedo")?;
        self.height_field.ensure_dims(&self.material_index, "material index")?;
        self.height_field.ensure_dims(&self.instance_index, "instance index")?;
        self.height_field.ensure_dims(&self.shadow, "shadow map")?;
        if let Some(&m) = self.material_index.as_slice().iter().find(|&&m| m as usize > self.num_materials) {
            return Err(Error::Validation(format!(
                "material index {m} exceeds declared material count {}",
                self.num_materials
            )));
        }
        if self.albedo.as_slice().iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Validation("albedo must be non-negative".into()));
        }
        Ok(())
    }

    /// Marks pixels whose line of sight to the projector is blocked by the
    /// height field itself.
    pub fn compute_shadows(&mut self, calib: &CalibrationModel) {
        self.shadow = cast_shadows(&self.height_field, calib);
    }
}

/// Photometric parameters of [`render_stack`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Intensity of unlit surfaces, fraction of full scale.
    pub ambient: f64,
    /// Projected intensity reaching the camera from an albedo-1 surface.
    pub exposure: f64,
    /// Standard deviation of additive Gaussian noise, fraction of full scale.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            ambient: 0.02,
            exposure: 0.9,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl RenderOptions {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }
}

/// Projector coordinate seen by each camera pixel, or `None` in shadow.
fn projector_lookup(scene: &SceneSpec, calib: &CalibrationModel) -> Vec<Option<(f64, f64)>> {
    let (w, h) = scene.height_field.dims();
    let k_inv = calib
        .camera_intrinsics
        .try_inverse()
        .expect("validated intrinsics are invertible");
    let proj = calib.projector_matrix();
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if *scene.shadow.get(x, y) {
                return None;
            }
            let z = *scene.height_field.get(x, y);
            let d = k_inv * Vector3::new(x as f64, y as f64, 1.0);
            let p = d * (z / d.z);
            let q = proj * Vector4::new(p.x, p.y, p.z, 1.0);
            Some((q.x / q.z, q.y / q.z))
        })
        .collect()
}

/// Renders one camera image for the pattern sampled by `sample`.
fn render_image(
    scene: &SceneSpec,
    lookup: &[Option<(f64, f64)>],
    sample: impl Fn(f64, f64) -> f64 + Sync,
    opts: &RenderOptions,
    stream: u64,
) -> Intensity {
    let (w, h) = scene.height_field.dims();
    let mut data: Vec<f64> = lookup
        .par_iter()
        .zip(scene.albedo.as_slice().par_iter())
        .map(|(uv, &a)| match uv {
            Some((u, v)) => opts.ambient + a * opts.exposure * sample(*u, *v),
            None => opts.ambient,
        })
        .collect();
    if opts.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, opts.noise_sigma).expect("finite sigma");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::from_vec(w, h, data).expect("dimensions match")
}

/// Renders the fringe, gray-code and white images of `scene`.
pub fn render_stack(
    scene: &SceneSpec,
    patterns: &PatternSet,
    calib: &CalibrationModel,
    opts: &RenderOptions,
) -> Result<ImageStack> {
    scene.validate()?;
    if scene.dims() != (calib.camera_width, calib.camera_height) {
        return Err(Error::Structure(format!(
            "scene is {}x{} but the camera is {}x{}",
            scene.width(),
            scene.height(),
            calib.camera_width,
            calib.camera_height
        )));
    }
    if (patterns.params.projector_width, patterns.params.projector_height)
        != (calib.projector_width, calib.projector_height)
    {
        return Err(Error::Structure(format!(
            "patterns are {}x{} but the projector is {}x{}",
            patterns.params.projector_width,
            patterns.params.projector_height,
            calib.projector_width,
            calib.projector_height
        )));
    }
    if !(opts.noise_sigma >= 0.0) {
        return Err(Error::Parameter(format!("noise sigma must be non-negative, got {}", opts.noise_sigma)));
    }
    let lookup = projector_lookup(scene, calib);
    let n = patterns.num_shifts();
    let g = patterns.num_gray_bits();
    let phase_images = (0..n)
        .map(|k| render_image(scene, &lookup, |u, v| patterns.sample_phase(k, u, v), opts, k as u64))
        .collect();
    let gray_images = (0..g)
        .map(|b| render_image(scene, &lookup, |u, v| patterns.sample_gray(b, u, v), opts, (n + b) as u64))
        .collect();
    let white_image = render_image(scene, &lookup, |u, v| patterns.sample_white(u, v), opts, (n + g) as u64);
    Ok(ImageStack {
        phase_images,
        gray_images,
        white_image,
        source_bit_depth: 16,
        fringe_period: patterns.params.fringe_period,
        orientation: patterns.params.orientation,
    })
}

/// Renders the scene under full white illumination only.
pub fn render_white(scene: &SceneSpec, calib: &CalibrationModel, opts: &RenderOptions) -> Result<Intensity> {
    scene.validate()?;
    let lookup = projector_lookup(scene, calib);
    let (pw, ph) = (calib.projector_width as f64, calib.projector_height as f64);
    let covered = move |u: f64, v: f64| (u >= -0.5 && v >= -0.5 && u < pw - 0.5 && v < ph - 0.5) as u8 as f64;
    Ok(render_image(scene, &lookup, covered, opts, 0))
}

/// One indicator mask per material `1..=K`.
pub fn render_material_masks(scene: &SceneSpec) -> Vec<Mask> {
    (1..=scene.num_materials)
        .map(|k| scene.material_index.map(|&m| m as usize == k))
        .collect()
}

fn cast_shadows(height: &Image<f64>, calib: &CalibrationModel) -> Mask {
    let (w, h) = height.dims();
    let z_min = height.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let center: Vector3<f64> = -(calib.projector_rotation.transpose() * calib.projector_translation);
    let focal = calib.camera_intrinsics[(0, 0)];
    let k_inv = calib
        .camera_intrinsics
        .try_inverse()
        .expect("validated intrinsics are invertible");
    let sample = |u: f64, v: f64| -> Option<f64> {
        if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
            return None;
        }
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let top = height.get(x0, y0) * (1.0 - fx) + height.get(x1, y0) * fx;
        let bottom = height.get(x0, y1) * (1.0 - fx) + height.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    };
    // Nearest surface per tile, for skipping march segments whose image
    // footprint cannot contain an occluder.
    const TILE: usize = 8;
    let (tw, th) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let mut tile_min = vec![f64::INFINITY; tw * th];
    for y in 0..h {
        for x in 0..w {
            let t = &mut tile_min[(y / TILE) * tw + x / TILE];
            *t = t.min(*height.get(x, y));
        }
    }
    // The image of a 3D segment is a 2D segment, so its footprint lies in the
    // box of its endpoints (plus one pixel for bilinear support).
    let nearest_in = |(u0, v0): (f64, f64), (u1, v1): (f64, f64)| -> f64 {
        let clamp = |a: f64, n: usize| (a.max(0.0) as usize).min(n - 1);
        let (x0, x1) = (clamp(u0.min(u1) - 1.0, w) / TILE, clamp(u0.max(u1) + 2.0, w) / TILE);
        let (y0, y1) = (clamp(v0.min(v1) - 1.0, h) / TILE, clamp(v0.max(v1) + 2.0, h) / TILE);
        let mut m = f64::INFINITY;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                m = m.min(tile_min[ty * tw + tx]);
            }
        }
        m
    };
    const SEGMENTS: [usize; 3] = [64, 16, 4];
    let data: Vec<bool> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let z = *height.get(x, y);
            if z <= z_min {
                return false;
            }
            let d = k_inv * Vector3::new(x as f64, y as f64, 1.0);
            let p = d * (z / d.z);
            let dir = center - p;
            // Fraction of the way to the projector at which the ray rises above
            // the nearest surface.
            let s_end = (z - z_min) / (z - center.z);
            let end = p + dir * s_end;
            let lateral = (end.xy() - p.xy()).norm() * focal / z_min;
            let steps = lateral.ceil().max(1.0) as usize;
            let mut i = 1;
            while i <= steps {
                if (i - 1) % SEGMENTS[SEGMENTS.len() - 1] == 0 {
                    // The ray only descends, so a segment's start is its
                    // deepest point.
                    let q0 = p + dir * (s_end * (i - 1) as f64 / steps as f64);
                    let uv0 = calib.project_to_camera(&q0);
                    let skip = SEGMENTS.iter().filter(|&&len| (i - 1) % len == 0).find_map(|&len| {
                        let last = (i - 1 + len).min(steps);
                        let q1 = p + dir * (s_end * last as f64 / steps as f64);
                        (nearest_in(uv0, calib.project_to_camera(&q1)) >= q0.z - 0.01).then_some(last)
                    });
                    if let Some(last) = skip {
                        i = last + 1;
                        continue;
                    }
                }
                let q = p + dir * (s_end * i as f64 / steps as f64);
                i += 1;
                let (u, v) = calib.project_to_camera(&q);
                if (u - x as f64).hypot(v - y as f64) < 1.0 {
                    continue;
                }
                match sample(u, v) {
                    Some(surface) if surface < q.z - 0.01 => return true,
                    Some(_) => {}
                    None => break,
                }
            }
            false
        })
        .collect();
    Image::from_vec(w, h, data).expect("dimensions match")
}

fn bilinear_or(img: &Image<f64>, x: f64, y: f64, fill: f64) -> f64 {
    let (w, h) = img.dims();
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return fill;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn nearest_or<T: Copy>(img: &Image<T>, x: f64, y: f64, fill: T) -> T {
    let (xr, yr) = (x.round(), y.round());
    if xr < 0.0 || yr < 0.0 || xr >= img.width() as f64 || yr >= img.height() as f64 {
        return fill;
    }
    *img.get(xr as usize, yr as usize)
}

/// Exact quarter-turn permutation: pixel `(x, y)` moves to `(y, W−1−x)`.
fn quarter_turn<T: Copy>(img: &Image<T>) -> Image<T> {
    let w = img.width();
    Image::from_fn(img.height(), w, |nx, ny| *img.get(w - 1 - ny, nx))
}

/// Rotates every per-pixel map about the image center by `delta_theta`
/// degrees (counter-clockwise as displayed). Multiples of 90° on square
/// images are exact permutations; other angles resample with nearest
/// neighbor for index maps and bilinear interpolation for height and albedo,
/// filling uncovered pixels with the background.
pub fn rotate_scene(scene: &SceneSpec, delta_theta: f64) -> SceneSpec {
    let pose_theta = (scene.pose_theta + delta_theta).rem_euclid(360.0);
    let turns = delta_theta / 90.0;
    if scene.width() == scene.height() && turns == turns.round() {
        let mut out = scene.clone();
        for _ in 0..(turns.rem_euclid(4.0) as usize) {
            out.height_field = quarter_turn(&out.height_field);
            out.albedo = quarter_turn(&out.albedo);
            out.material_index = quarter_turn(&out.material_index);
            out.instance_index = quarter_turn(&out.instance_index);
            out.shadow = quarter_turn(&out.shadow);
        }
        out.pose_theta = pose_theta;
        return out;
    }
    let (w, h) = scene.dims();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = delta_theta.to_radians().sin_cos();
    // Source position of destination pixel (x, y).
    let source = |x: usize, y: usize| -> (f64, f64) {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (cx + dx * c - dy * s, cy + dx * s + dy * c)
    };
    let bg = scene.background;
    let n = w * h;
    let (mut height_field, mut albedo) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut material_index, mut instance_index, mut shadow) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source(x, y);
            height_field.push(bilinear_or(&scene.height_field, sx, sy, bg.height));
            albedo.push(bilinear_or(&scene.albedo, sx, sy, bg.albedo));
            material_index.push(nearest_or(&scene.material_index, sx, sy, 0));
            instance_index.push(nearest_or(&scene.instance_index, sx, sy, 0));
            shadow.push(nearest_or(&scene.shadow, sx, sy, false));
        }
    }
    let image = |data| Image::from_vec(w, h, data).expect("dimensions match");
    SceneSpec {
        height_field: image(height_field),
        albedo: image(albedo),
        material_index: Image::from_vec(w, h, material_index).expect("dimensions match"),
        instance_index: Image::from_vec(w, h, instance_index).expect("dimensions match"),
        shadow: Image::from_vec(w, h, shadow).expect("dimensions match"),
        pose_theta,
        num_materials: scene.num_materials,
        background: scene.background,
        cast_shadows: scene.cast_shadows,
    }
}
