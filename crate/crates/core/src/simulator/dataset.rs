//! Orientation sweeps written as an image/mask/depth dataset.
//!
//! Layout under the output directory:
//!
//! ```text
//! images/{theta}.png           white-lit camera image
//! masks/mat_{k}_{theta}.png    material k indicator, k = 1..=K
//! depth/{theta}.f32            ground-truth depth, f32 little-endian, row-major
//! depth/{theta}.json           width/height/dtype of the depth file
//! manifest.json
//! ```

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CalibrationModel;
use crate::image::{save_gray8, save_mask, Image};
use crate::io::{f32le_bytes, parse_f32le, read_to_string, write_atomic, write_json};

use super::{render_material_masks, render_white, rotate_scene, RenderOptions, SceneSpec};

/// Per-orientation jitter of each material's appearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialRandomization {
    pub roughness_range: [f64; 2],
    pub brightness_range: [f64; 2],
    pub rng_seed: u64,
}

impl Default for MaterialRandomization {
    fn default() -> Self {
        Self {
            roughness_range: [0.2, 0.8],
            brightness_range: [0.7, 1.3],
            rng_seed: 0,
        }
    }
}

impl MaterialRandomization {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("roughness", self.roughness_range), ("brightness", self.brightness_range)] {
            if !(lo <= hi) || lo < 0.0 {
                return Err(Error::Parameter(format!("invalid {name} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub theta_max: f64,
    pub delta_theta: f64,
    pub randomization: MaterialRandomization,
    /// Photometric settings; the noise seed is replaced per orientation.
    pub render: RenderOptions,
    /// Overwrite a non-empty output directory.
    pub force: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            theta_max: 0.0,
            delta_theta: 1.0,
            randomization: MaterialRandomization::default(),
            render: RenderOptions::default(),
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationEntry {
    pub theta: f64,
    pub image: String,
    pub masks: Vec<String>,
    pub depth: String,
    pub depth_header: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    pub num_materials: usize,
    pub theta_max: f64,
    pub delta_theta: f64,
    pub randomization: MaterialRandomization,
    pub orientations: Vec<OrientationEntry>,
}

/// Number of orientations in `0, Δθ, 2Δθ, … ≤ θmax`.
pub fn orientation_count(theta_max: f64, delta_theta: f64) -> Result<usize> {
    if !(delta_theta > 0.0) {
        return Err(Error::Parameter(format!("delta theta must be positive, got {delta_theta}")));
    }
    if !(theta_max >= 0.0) || !theta_max.is_finite() {
        return Err(Error::Parameter(format!("theta max must be non-negative, got {theta_max}")));
    }
    Ok((theta_max / delta_theta + 1e-9).floor() as usize + 1)
}

/// File-name form of an angle: up to three decimals, trailing zeros removed.
pub fn theta_label(theta: f64) -> String {
    let s = format!("{theta:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn is_non_empty_dir(path: &Path) -> Result<bool> {
    match std::fs::read_dir(path) {
        Ok(mut entries) => Ok(entries.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn randomize(scene: &mut SceneSpec, rand: &MaterialRandomization, rng: &mut ChaCha8Rng) {
    // Rougher materials scatter less light toward the camera.
    let factors: Vec<f64> = (0..=scene.num_materials)
        .map(|k| {
            let roughness = draw(rng, rand.roughness_range);
            let brightness = draw(rng, rand.brightness_range);
            if k == 0 {
                1.0
            } else {
                brightness * (1.5 - roughness)
            }
        })
        .collect();
    for (a, &m) in scene.albedo.as_mut_slice().iter_mut().zip(scene.material_index.as_slice()) {
        *a *= factors[m as usize];
    }
}

/// Reads a depth file written by [`generate_dataset`] using its sidecar header.
pub fn read_depth(path: &Path) -> Result<Image<f64>> {
    let header_path = path.with_extension("json");
    let header: DepthHeader = serde_json::from_str(&read_to_string(&header_path)?)
        .map_err(|e| Error::format(header_path.display().to_string(), None, e.to_string()))?;
    if header.dtype != "f32le" {
        return Err(Error::format(
            header_path.display().to_string(),
            Some("dtype".into()),
            format!("unsupported dtype {:?}", header.dtype),
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != header.width * header.height * 4 {
        return Err(Error::format(
            path.display().to_string(),
            None,
            format!("expected {} bytes, found {}", header.width * header.height * 4, bytes.len()),
        ));
    }
    let values = parse_f32le(&bytes).into_iter().map(f64::from).collect();
    Image::from_vec(header.width, header.height, values)
}

/// Writes a depth map as raw `f32` with a JSON sidecar next to it.
pub fn write_depth(path: &Path, depth: &Image<f64>) -> Result<()> {
    write_atomic(path, &f32le_bytes(depth.as_slice().iter().copied()))?;
    write_json(
        &path.with_extension("json"),
        &DepthHeader {
            width: depth.width(),
            height: depth.height(),
            dtype: "f32le".into(),
            units: "mm".into(),
        },
    )
}

/// Renders `scene` at every orientation of the sweep and writes the dataset.
pub fn generate_dataset(
    scene: &SceneSpec,
    calib: &CalibrationModel,
    opts: &DatasetOptions,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    scene.validate()?;
    opts.randomization.validate()?;
    let count = orientation_count(opts.theta_max, opts.delta_theta)?;
    if is_non_empty_dir(out_dir)? {
        if !opts.force {
            return Err(Error::OutputExists(out_dir.to_path_buf()));
        }
        for sub in ["images", "masks", "depth"] {
            let p = out_dir.join(sub);
            if p.exists() {
                std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    for sub in ["images", "masks", "depth"] {
        let p = out_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let (w, h) = (scene.width(), scene.height());
    let orientations = (0..count)
        .into_par_iter()
        .map(|i| -> Result<OrientationEntry> {
            let theta = i as f64 * opts.delta_theta;
            let label = theta_label(theta);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.randomization.rng_seed);
            rng.set_stream(theta.to_bits());

            let mut view = rotate_scene(scene, theta);
            if view.cast_shadows {
                view.compute_shadows(calib);
            }
            let masks = render_material_masks(&view);
            randomize(&mut view, &opts.randomization, &mut rng);
            let render = RenderOptions {
                seed: rng.next_u64(),
                ..opts.render
            };
            let image = render_white(&view, calib, &render)?;

            let image_name = format!("images/{label}.png");
            save_gray8(&image, &out_dir.join(&image_name))?;
            let mut mask_names = Vec::with_capacity(masks.len());
            for (k, mask) in masks.iter().enumerate() {
                let name = format!("masks/mat_{}_{label}.png", k + 1);
                save_mask(mask, &out_dir.join(&name))?;
                mask_names.push(name);
            }
            let depth_name = format!("depth/{label}.f32");
            let header_name = format!("depth/{label}.json");
            write_depth(&out_dir.join(&depth_name), &view.height_field)?;
            Ok(OrientationEntry {
                theta,
                image: image_name,
                masks: mask_names,
                depth: depth_name,
                depth_header: header_name,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        schema_version: 1,
        width: w,
        height: h,
        num_materials: scene.num_materials,
        theta_max: opts.theta_max,
        delta_theta: opts.delta_theta,
        randomization: opts.randomization,
        orientations,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

impl DatasetManifest {
    /// Every file the manifest references, resolved against `root`.
    pub fn files(&self, root: &Path) -> Vec<PathBuf> {
        self.orientations
            .iter()
            .flat_map(|o| {
                std::iter::once(&o.image)
                    .chain(&o.masks)
                    .chain([&o.depth, &o.depth_header])
                    .map(|p| root.join(p))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}
