//! Projector pattern sequences: phase-shifted sinusoids, gray-code planes and
//! binary-defocused quasi-sinusoids.
//!
//! Projector pixel centers sit on integer coordinates. For vertical fringes the
//! coded coordinate is the projector column `u`; the `n`-th phase pattern is
//! `0.5 + 0.5·cos(2πu/T + δₙ)` with `δₙ = 2πn/N` (zero-based `n`), and gray
//! plane `b` carries bit `b` of `gray(floor(u/T))`.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{save_gray8, Image, Intensity};

/// Which projector axis carries the code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Fringes are vertical stripes; the code varies along projector columns.
    #[default]
    Vertical,
    /// Fringes are horizontal stripes; the code varies along projector rows.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub projector_width: usize,
    pub projector_height: usize,
    /// Fringe period `T` in projector pixels.
    pub fringe_period: f64,
    pub num_shifts: usize,
    pub num_gray_bits: u32,
    #[serde(default)]
    pub orientation: Orientation,
}

impl PatternParams {
    /// DLP4500-sized projector (912×1140) with the 18-step / 6-bit budget.
    pub fn dlp4500(fringe_period: f64) -> Self {
        Self {
            projector_width: 912,
            projector_height: 1140,
            fringe_period,
            num_shifts: 18,
            num_gray_bits: 6,
            orientation: Orientation::Vertical,
        }
    }

    /// Extent of the projector along the coded axis.
    pub fn coded_extent(&self) -> usize {
        match self.orientation {
            Orientation::Vertical => self.projector_width,
            Orientation::Horizontal => self.projector_height,
        }
    }

    /// Phase shift of the zero-based pattern `n`.
    pub fn shift(&self, n: usize) -> f64 {
        TAU * n as f64 / self.num_shifts as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_shifts < 3 {
            return Err(Error::Parameter(format!(
                "phase shifting needs at least 3 steps, got {}",
                self.num_shifts
            )));
        }
        if !(self.fringe_period.is_finite() && self.fringe_period > 0.0) {
            return Err(Error::Parameter(format!(
                "fringe period must be positive, got {}",
                self.fringe_period
            )));
        }
        if self.projector_width == 0 || self.projector_height == 0 {
            return Err(Error::Parameter("projector resolution must be nonzero".into()));
        }
        if self.num_gray_bits == 0 {
            return Err(Error::Parameter("at least one gray-code bit is required".into()));
        }
        if self.num_gray_bits > 30 {
            return Err(Error::Parameter(format!(
                "{} gray-code bits is beyond the supported range",
                self.num_gray_bits
            )));
        }
        Ok(())
    }

    fn validate_gray(&self) -> Result<()> {
        self.validate()?;
        let covered = (1u64 << self.num_gray_bits) as f64 * self.fringe_period;
        if covered < self.coded_extent() as f64 {
            return Err(Error::Parameter(format!(
                "{} gray bits with period {} cover {covered} px, less than the coded extent {}",
                self.num_gray_bits,
                self.fringe_period,
                self.coded_extent()
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn gray_encode(k: u32) -> u32 {
    k ^ (k >> 1)
}

#[inline]
pub fn gray_decode(mut g: u32) -> u32 {
    let mut k = g;
    while g > 1 {
        g >>= 1;
        k ^= g;
    }
    k
}

/// Ideal fringe value at continuous coded coordinate `coord`.
#[inline]
pub fn ideal_fringe(coord: f64, period: f64, shift: f64) -> f64 {
    (0.5 + 0.5 * (TAU * coord / period + shift).cos()).clamp(0.0, 1.0)
}

/// Gray-code bit `bit` at continuous coded coordinate `coord`.
#[inline]
pub fn ideal_gray_bit(coord: f64, period: f64, bit: u32) -> bool {
    let k = (coord / period).floor();
    if k < 0.0 {
        return false;
    }
    (gray_encode(k as u32) >> bit) & 1 == 1
}

fn coded_image(params: &PatternParams, f: impl Fn(f64) -> f64) -> Intensity {
    let (w, h) = (params.projector_width, params.projector_height);
    match params.orientation {
        Orientation::Vertical => {
            let line: Vec<f64> = (0..w).map(|x| f(x as f64)).collect();
            Image::from_fn(w, h, |x, _| line[x])
        }
        Orientation::Horizontal => {
            let line: Vec<f64> = (0..h).map(|y| f(y as f64)).collect();
            Image::from_fn(w, h, |_, y| line[y])
        }
    }
}

pub fn generate_phase_patterns(params: &PatternParams) -> Result<Vec<Intensity>> {
    params.validate()?;
    Ok((0..params.num_shifts)
        .map(|n| {
            let shift = params.shift(n);
            coded_image(params, |c| ideal_fringe(c, params.fringe_period, shift))
        })
        .collect())
}

pub fn generate_gray_patterns(params: &PatternParams) -> Result<Vec<Intensity>> {
    params.validate_gray()?;
    Ok((0..params.num_gray_bits)
        .map(|b| {
            coded_image(params, |c| {
                if ideal_gray_bit(c, params.fringe_period, b) {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect())
}

/// Thresholds a pattern at 0.5 and low-passes it along the coded axis with a
/// Gaussian of σ = radius/2 truncated at ±radius, emulating optical defocus of
/// a 1-bit pattern. Borders replicate the edge pixel.
pub fn binary_defocus(pattern: &Intensity, kernel_radius: f64, orientation: Orientation) -> Result<Intensity> {
    if !(kernel_radius.is_finite() && kernel_radius >= 0.0) {
        return Err(Error::Parameter(format!(
            "defocus radius must be non-negative, got {kernel_radius}"
        )));
    }
    let binary = pattern.map(|&v| if v >= 0.5 { 1.0 } else { 0.0 });
    let half = kernel_radius.floor() as isize;
    if half == 0 {
        return Ok(binary);
    }
    let sigma = kernel_radius / 2.0;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = binary.dims();
    let out = match orientation {
        Orientation::Vertical => Image::from_fn(w, h, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| {
                    let sx = (x as isize + j as isize - half).clamp(0, w as isize - 1) as usize;
                    k * binary.get(sx, y)
                })
                .sum::<f64>()
                .clamp(0.0, 1.0)
        }),
        Orientation::Horizontal => Image::from_fn(w, h, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| {
                    let sy = (y as isize + j as isize - half).clamp(0, h as isize - 1) as usize;
                    k * binary.get(x, sy)
                })
                .sum::<f64>()
                .clamp(0.0, 1.0)
        }),
    };
    Ok(out)
}

/// How phase patterns should be sampled at non-integer projector coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PatternProfile {
    /// Exact sinusoids; samplers evaluate the closed form.
    Ideal,
    /// Binary-defocused patterns; samplers interpolate the stored images.
    Defocused { radius: f64 },
}

#[derive(Debug, Clone)]
pub struct PatternSet {
    pub phase_patterns: Vec<Intensity>,
    pub gray_patterns: Vec<Intensity>,
    pub white_pattern: Intensity,
    pub params: PatternParams,
    pub profile: PatternProfile,
}

impl PatternSet {
    pub fn ideal(params: &PatternParams) -> Result<Self> {
        let phase_patterns = generate_phase_patterns(params)?;
        let gray_patterns = generate_gray_patterns(params)?;
        Ok(Self {
            phase_patterns,
            gray_patterns,
            white_pattern: Image::filled(params.projector_width, params.projector_height, 1.0),
            params: params.clone(),
            profile: PatternProfile::Ideal,
        })
    }

    pub fn defocused(params: &PatternParams, radius: f64) -> Result<Self> {
        let mut set = Self::ideal(params)?;
        set.phase_patterns = set
            .phase_patterns
            .iter()
            .map(|p| binary_defocus(p, radius, params.orientation))
            .collect::<Result<_>>()?;
        set.profile = PatternProfile::Defocused { radius };
        Ok(set)
    }

    pub fn num_shifts(&self) -> usize {
        self.phase_patterns.len()
    }

    pub fn num_gray_bits(&self) -> usize {
        self.gray_patterns.len()
    }

    /// Whether a projector coordinate lies on the projector image.
    #[inline]
    pub fn covers(&self, u: f64, v: f64) -> bool {
        u >= -0.5
            && v >= -0.5
            && u < self.params.projector_width as f64 - 0.5
            && v < self.params.projector_height as f64 - 0.5
    }

    #[inline]
    fn coded(&self, u: f64, v: f64) -> f64 {
        match self.params.orientation {
            Orientation::Vertical => u,
            Orientation::Horizontal => v,
        }
    }

    /// Phase pattern `n` sampled at projector coordinate `(u, v)`; 0 off-projector.
    pub fn sample_phase(&self, n: usize, u: f64, v: f64) -> f64 {
        if !self.covers(u, v) {
            return 0.0;
        }
        match self.profile {
            PatternProfile::Ideal => {
                ideal_fringe(self.coded(u, v), self.params.fringe_period, self.params.shift(n))
            }
            PatternProfile::Defocused { .. } => bilinear(&self.phase_patterns[n], u, v),
        }
    }

    pub fn sample_gray(&self, bit: usize, u: f64, v: f64) -> f64 {
        if !self.covers(u, v) {
            return 0.0;
        }
        match self.profile {
            PatternProfile::Ideal => {
                ideal_gray_bit(self.coded(u, v), self.params.fringe_period, bit as u32) as u8 as f64
            }
            PatternProfile::Defocused { .. } => {
                let img = &self.gray_patterns[bit];
                let x = (u.round().max(0.0) as usize).min(img.width() - 1);
                let y = (v.round().max(0.0) as usize).min(img.height() - 1);
                *img.get(x, y)
            }
        }
    }

    pub fn sample_white(&self, u: f64, v: f64) -> f64 {
        if self.covers(u, v) {
            1.0
        } else {
            0.0
        }
    }

    /// Writes `phase_NN.png`, `gray_NN.png` and `white.png` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        for (i, p) in self.phase_patterns.iter().enumerate() {
            save_gray8(p, &dir.join(format!("phase_{i:02}.png")))?;
        }
        for (i, p) in self.gray_patterns.iter().enumerate() {
            save_gray8(p, &dir.join(format!("gray_{i:02}.png")))?;
        }
        save_gray8(&self.white_pattern, &dir.join("white.png"))
    }
}

fn bilinear(img: &Intensity, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}
