//! Dense row-major raster used for intensity images, masks and per-pixel maps.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// A `width × height` grid of values stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Intensity image normalized to `[0, 1]`.
pub type Intensity = Image<f64>;
/// Per-pixel boolean map.
pub type Mask = Image<bool>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Structure(format!(
                "buffer of {} values cannot form a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_dims<U>(&self, other: &Image<U>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "{what}: expected {}x{}, got {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Intersection-over-union of two equally sized masks. Two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads an 8- or 16-bit grayscale PNG/PGM and normalizes it to `[0, 1]`.
///
/// Returns the image and the source bit depth.
pub fn load_gray(path: &Path) -> Result<(Intensity, u32)> {
    let img = image::open(path).map_err(|e| codec_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Ok((Image::from_vec(w, h, data)?, 8))
        }
        DynamicImage::ImageLuma16(buf) => {
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            Ok((Image::from_vec(w, h, data)?, 16))
        }
        other => Err(codec_err(
            path,
            format!("expected 8/16-bit grayscale, found {:?}", other.color()),
        )),
    }
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn encode_png(raw: &[u8], width: usize, height: usize, color: ExtendedColorType, path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    PngEncoder::new(&mut bytes)
        .write_image(raw, width as u32, height as u32, color)
        .map_err(|e| codec_err(path, e))?;
    Ok(bytes)
}

/// Writes an intensity image as an 8-bit grayscale PNG (atomically).
pub fn save_gray8(img: &Intensity, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.as_slice().iter().map(|&v| quantize8(v)).collect();
    write_atomic(path, &encode_png(&raw, img.width(), img.height(), ExtendedColorType::L8, path)?)
}

/// Writes an intensity image as a 16-bit grayscale PNG (atomically).
pub fn save_gray16(img: &Intensity, path: &Path) -> Result<()> {
    // The encoder takes native-endian samples and swaps them itself.
    let raw: Vec<u8> = img.as_slice().iter().flat_map(|&v| quantize16(v).to_ne_bytes()).collect();
    write_atomic(path, &encode_png(&raw, img.width(), img.height(), ExtendedColorType::L16, path)?)
}

/// Writes a binary mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let raw: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_atomic(path, &encode_png(&raw, mask.width(), mask.height(), ExtendedColorType::L8, path)?)
}

/// Loads a mask image; any nonzero pixel is foreground.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let (img, _) = load_gray(path)?;
    Ok(img.map(|&v| v > 0.0))
}
