//! Loading and saving [`ImageStack`]s as a directory of grayscale images plus a
//! `manifest.json`.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "num_shifts": 18,
//!   "num_gray_bits": 6,
//!   "fringe_period": 18.0,
//!   "bit_depth": 16,
//!   "orientation": "vertical",
//!   "phase_files": ["phase_00.png", "..."],
//!   "gray_files": ["gray_00.png", "..."],
//!   "white_file": "white.png"
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_gray, save_gray16, save_gray8};
use crate::io::{read_to_string, write_json};
use crate::patterns::Orientation;
use crate::phase::ImageStack;

pub const STACK_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub schema_version: u32,
    pub num_shifts: usize,
    pub num_gray_bits: usize,
    pub fringe_period: f64,
    pub bit_depth: u32,
    #[serde(default)]
    pub orientation: Orientation,
    pub phase_files: Vec<String>,
    pub gray_files: Vec<String>,
    pub white_file: String,
}

pub fn load_stack(dir: &Path) -> Result<ImageStack> {
    let manifest_path = dir.join(STACK_MANIFEST);
    let text = read_to_string(&manifest_path)?;
    let manifest: StackManifest = serde_json::from_str(&text).map_err(|e| {
        Error::format(
            manifest_path.display().to_string(),
            Some(format!("line {} column {}", e.line(), e.column())),
            e.to_string(),
        )
    })?;
    if manifest.phase_files.len() != manifest.num_shifts {
        return Err(Error::format(
            manifest_path.display().to_string(),
            Some("phase_files".into()),
            format!(
                "lists {} files but num_shifts is {}",
                manifest.phase_files.len(),
                manifest.num_shifts
            ),
        ));
    }
    if manifest.gray_files.len() != manifest.num_gray_bits {
        return Err(Error::format(
            manifest_path.display().to_string(),
            Some("gray_files".into()),
            format!(
                "lists {} files but num_gray_bits is {}",
                manifest.gray_files.len(),
                manifest.num_gray_bits
            ),
        ));
    }
    let load = |name: &String| -> Result<_> {
        let (img, depth) = load_gray(&dir.join(name))?;
        if depth != manifest.bit_depth {
            return Err(Error::format(
                name.clone(),
                None,
                format!("{depth}-bit image but manifest declares {}-bit", manifest.bit_depth),
            ));
        }
        Ok(img)
    };
    let phase_images = manifest.phase_files.iter().map(load).collect::<Result<Vec<_>>>()?;
    let gray_images = manifest.gray_files.iter().map(load).collect::<Result<Vec<_>>>()?;
    let white_image = load(&manifest.white_file)?;
    let stack = ImageStack {
        phase_images,
        gray_images,
        white_image,
        source_bit_depth: manifest.bit_depth,
        fringe_period: manifest.fringe_period,
        orientation: manifest.orientation,
    };
    stack.validate()?;
    Ok(stack)
}

/// Writes the stack as PNGs of the given bit depth (8 or 16) with a manifest.
pub fn save_stack(stack: &ImageStack, dir: &Path, bit_depth: u32) -> Result<()> {
    let save = match bit_depth {
        8 => save_gray8,
        16 => save_gray16,
        other => return Err(Error::Parameter(format!("unsupported bit depth {other}"))),
    };
    let mut phase_files = Vec::new();
    for (i, img) in stack.phase_images.iter().enumerate() {
        let name = format!("phase_{i:02}.png");
        save(img, &dir.join(&name))?;
        phase_files.push(name);
    }
    let mut gray_files = Vec::new();
    for (i, img) in stack.gray_images.iter().enumerate() {
        let name = format!("gray_{i:02}.png");
        save(img, &dir.join(&name))?;
        gray_files.push(name);
    }
    save(&stack.white_image, &dir.join("white.png"))?;
    let manifest = StackManifest {
        schema_version: 1,
        num_shifts: stack.phase_images.len(),
        num_gray_bits: stack.gray_images.len(),
        fringe_period: stack.fringe_period,
        bit_depth,
        orientation: stack.orientation,
        phase_files,
        gray_files,
        white_file: "white.png".into(),
    };
    write_json(&dir.join(STACK_MANIFEST), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    #[test]
    fn round_trip_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let phase: Vec<_> = (0..3)
            .map(|i| Image::from_fn(5, 4, |x, y| ((x + y + i) % 7) as f64 / 7.0))
            .collect();
        let stack = ImageStack::new(phase, vec![Image::filled(5, 4, 1.0)], Image::filled(5, 4, 0.8), 12.0).unwrap();
        save_stack(&stack, dir.path(), 16).unwrap();
        let back = load_stack(dir.path()).unwrap();
        assert_eq!(back.phase_images.len(), 3);
        assert_eq!(back.source_bit_depth, 16);
        assert_eq!(back.fringe_period, 12.0);
        for (a, b) in stack.phase_images.iter().zip(&back.phase_images) {
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((p - q).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }

    #[test]
    fn manifest_count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let stack = ImageStack::new(
            vec![Image::filled(2, 2, 0.5); 3],
            vec![Image::filled(2, 2, 0.0)],
            Image::filled(2, 2, 1.0),
            10.0,
        )
        .unwrap();
        save_stack(&stack, dir.path(), 8).unwrap();
        let path = dir.path().join(STACK_MANIFEST);
        let text = std::fs::read_to_string(&path).unwrap().replace("\"num_shifts\": 3", "\"num_shifts\": 4");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_stack(dir.path()), Err(Error::Format { .. })));
    }
}
