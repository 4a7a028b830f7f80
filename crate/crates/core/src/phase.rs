//! Phase-shifting decode: wrapped phase, modulation, gray-code fringe order,
//! absolute phase and per-pixel reliability.
//!
//! Wrapped phase follows `φ = −atan2(Σ Iₙ sin δₙ, Σ Iₙ cos δₙ)` in `[−π, π)`.
//! Gray-code periods span `[kT, (k+1)T)` on the projector, so the code changes
//! where the wrapped phase crosses zero; absolute phase is therefore
//! `Φ = (φ mod 2π) + 2πk`, which equals `2πu/T` at projector coordinate `u`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Intensity, Mask};
use crate::patterns::{gray_decode, Orientation};

/// Co-registered camera images of one acquisition: `N` phase-shifted frames,
/// `G` gray-code frames and one fully illuminated frame, all in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImageStack {
    pub phase_images: Vec<Intensity>,
    pub gray_images: Vec<Intensity>,
    pub white_image: Intensity,
    pub source_bit_depth: u32,
    /// Fringe period of the projected patterns, projector pixels.
    pub fringe_period: f64,
    pub orientation: Orientation,
}

impl ImageStack {
    pub fn new(
        phase_images: Vec<Intensity>,
        gray_images: Vec<Intensity>,
        white_image: Intensity,
        fringe_period: f64,
    ) -> Result<Self> {
        let stack = Self {
            phase_images,
            gray_images,
            white_image,
            source_bit_depth: 16,
            fringe_period,
            orientation: Orientation::Vertical,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn width(&self) -> usize {
        self.white_image.width()
    }

    pub fn height(&self) -> usize {
        self.white_image.height()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase_images.len() < 3 {
            return Err(Error::Parameter(format!(
                "stack needs at least 3 phase images, got {}",
                self.phase_images.len()
            )));
        }
        if self.gray_images.is_empty() {
            return Err(Error::Parameter("stack needs at least 1 gray-code image".into()));
        }
        for (i, img) in self.phase_images.iter().enumerate() {
            self.white_image.ensure_dims(img, &format!("phase image {i}"))?;
        }
        for (i, img) in self.gray_images.iter().enumerate() {
            self.white_image.ensure_dims(img, &format!("gray image {i}"))?;
        }
        Ok(())
    }
}

/// Thresholds deciding which decoded pixels are trustworthy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeThresholds {
    /// Minimum fringe modulation `I″`, as a fraction of full scale.
    pub modulation_floor: f64,
    /// Any phase frame at or above this level marks the pixel saturated.
    pub saturation_level: f64,
}

impl Default for DecodeThresholds {
    fn default() -> Self {
        Self {
            modulation_floor: 0.02,
            saturation_level: 0.995,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseMap {
    pub wrapped_phase: Image<f64>,
    pub average_intensity: Image<f64>,
    pub modulation: Image<f64>,
    pub valid: Mask,
}

#[derive(Debug, Clone)]
pub struct AbsolutePhaseMap {
    pub phase: Image<f64>,
    pub fringe_order: Image<u32>,
    pub valid: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMask {
    pub reliable: Mask,
    pub saturated: Mask,
    pub low_modulation: Mask,
}

impl ReliabilityMask {
    pub fn unreliable_count(&self) -> usize {
        self.reliable.len() - self.reliable.count()
    }
}

/// Maps an angle into `[−π, π)`.
#[inline]
pub fn wrap_to_pi(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Per-pixel phase-shifting sums over all `N` frames.
fn shift_sums(stack: &ImageStack, y: usize, sin_sum: &mut [f64], cos_sum: &mut [f64], mean: &mut [f64]) {
    let n = stack.phase_images.len();
    sin_sum.fill(0.0);
    cos_sum.fill(0.0);
    mean.fill(0.0);
    for (i, img) in stack.phase_images.iter().enumerate() {
        let delta = TAU * i as f64 / n as f64;
        let (s, c) = delta.sin_cos();
        let row = img.row(y);
        for x in 0..row.len() {
            let v = row[x];
            sin_sum[x] += v * s;
            cos_sum[x] += v * c;
            mean[x] += v;
        }
    }
}

/// Decodes wrapped phase, average intensity and modulation from the phase frames.
pub fn compute_wrapped_phase(stack: &ImageStack, thresholds: &DecodeThresholds) -> Result<PhaseMap> {
    stack.validate()?;
    let (w, h) = (stack.width(), stack.height());
    let n = stack.phase_images.len() as f64;
    let mut phase = vec![0.0; w * h];
    let mut avg = vec![0.0; w * h];
    let mut modulation = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    if w == 0 || h == 0 {
        return Ok(PhaseMap {
            wrapped_phase: Image::from_vec(w, h, phase)?,
            average_intensity: Image::from_vec(w, h, avg)?,
            modulation: Image::from_vec(w, h, modulation)?,
            valid: Image::from_vec(w, h, valid)?,
        });
    }

    phase
        .par_chunks_mut(w)
        .zip(avg.par_chunks_mut(w))
        .zip(modulation.par_chunks_mut(w))
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each_init(
            || (vec![0.0; w], vec![0.0; w]),
            |(sin_sum, cos_sum), (y, (((ph, av), md), vd))| {
                shift_sums(stack, y, sin_sum, cos_sum, av);
                for x in 0..w {
                    let (s, c) = (sin_sum[x], cos_sum[x]);
                    av[x] /= n;
                    md[x] = 2.0 / n * s.hypot(c);
                    if s == 0.0 && c == 0.0 {
                        ph[x] = f64::NAN;
                        vd[x] = false;
                        continue;
                    }
                    let mut phi = -s.atan2(c);
                    if phi >= PI {
                        phi -= TAU;
                    }
                    ph[x] = phi;
                    vd[x] = md[x] >= thresholds.modulation_floor;
                }
            },
        );

    Ok(PhaseMap {
        wrapped_phase: Image::from_vec(w, h, phase)?,
        average_intensity: Image::from_vec(w, h, avg)?,
        modulation: Image::from_vec(w, h, modulation)?,
        valid: Image::from_vec(w, h, valid)?,
    })
}

/// Decodes the gray-code fringe order. Bit `b` is set where gray frame `b`
/// exceeds half the fully illuminated intensity.
pub fn decode_fringe_order(stack: &ImageStack, white: &Intensity) -> Result<Image<u32>> {
    for (i, img) in stack.gray_images.iter().enumerate() {
        white.ensure_dims(img, &format!("gray image {i}"))?;
    }
    if stack.gray_images.len() > 31 {
        return Err(Error::Parameter("more than 31 gray-code bits".into()));
    }
    let (w, h) = white.dims();
    let mut out = vec![0u32; w * h];
    if w == 0 {
        return Image::from_vec(w, h, out);
    }
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let white_row = white.row(y);
        for (b, img) in stack.gray_images.iter().enumerate() {
            let g = img.row(y);
            for x in 0..w {
                if g[x] > 0.5 * white_row[x] {
                    row[x] |= 1 << b;
                }
            }
        }
        for v in row.iter_mut() {
            *v = gray_decode(*v);
        }
    });
    Image::from_vec(w, h, out)
}

/// Options for [`unwrap_phase_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnwrapOptions {
    /// Camera image axis along which the fringe phase advances.
    pub axis: Orientation,
    /// Half-width of the median window used to detect order spikes; 0 disables correction.
    pub correction_radius: usize,
}

impl Default for UnwrapOptions {
    fn default() -> Self {
        Self {
            axis: Orientation::Vertical,
            correction_radius: 2,
        }
    }
}

pub fn unwrap_phase(phase: &PhaseMap, order: &Image<u32>) -> Result<AbsolutePhaseMap> {
    unwrap_phase_with(phase, order, &UnwrapOptions::default())
}

/// Maps `(-π, π]` onto `[0, 2π)`. Tiny negative phases round up to exactly
/// 2π in floating point and are folded back to 0.
#[inline]
fn positive_phase(phi: f64) -> f64 {
    if phi < 0.0 {
        let p = phi + TAU;
        if p >= TAU {
            0.0
        } else {
            p
        }
    } else {
        phi
    }
}

/// Combines wrapped phase with fringe order into absolute phase.
///
/// Gray-code transitions are never pixel-exact, so pixels whose wrapped phase
/// lies within a quarter period of a code transition are checked against the
/// median absolute phase of their neighbors along the coded axis; a
/// disagreement beyond π is resolved by shifting the order by whole periods,
/// but only if the shift also moves the pixel toward its immediate neighbors.
/// Segments narrower than `correction_radius + 1` pixels are not protected.
pub fn unwrap_phase_with(phase: &PhaseMap, order: &Image<u32>, opts: &UnwrapOptions) -> Result<AbsolutePhaseMap> {
    phase.wrapped_phase.ensure_dims(order, "fringe order")?;
    let (w, h) = order.dims();
    let valid = &phase.valid;

    let raw: Image<f64> = Image::from_fn(w, h, |x, y| {
        if *valid.get(x, y) {
            positive_phase(*phase.wrapped_phase.get(x, y)) + TAU * *order.get(x, y) as f64
        } else {
            f64::NAN
        }
    });

    let mut corrected = order.clone();
    if w > 0 && opts.correction_radius > 0 {
        let r = opts.correction_radius as isize;
        let (along, across) = match opts.axis {
            Orientation::Vertical => (w, h),
            Orientation::Horizontal => (h, w),
        };
        let at = |line: usize, pos: usize| -> (usize, usize) {
            match opts.axis {
                Orientation::Vertical => (pos, line),
                Orientation::Horizontal => (line, pos),
            }
        };
        let fixes: Vec<Vec<(usize, usize, u32)>> = (0..across)
            .into_par_iter()
            .map(|line| {
                let mut fixes = Vec::new();
                let mut window = Vec::with_capacity(2 * r as usize + 1);
                for pos in 0..along {
                    let (x, y) = at(line, pos);
                    let value = *raw.get(x, y);
                    if value.is_nan() {
                        continue;
                    }
                    let phi0 = positive_phase(*phase.wrapped_phase.get(x, y));
                    if phi0 > FRAC_PI_2 && phi0 < 3.0 * FRAC_PI_2 {
                        continue;
                    }
                    window.clear();
                    for d in -r..=r {
                        let p = pos as isize + d;
                        if p < 0 || p >= along as isize {
                            continue;
                        }
                        let (qx, qy) = at(line, p as usize);
                        let v = *raw.get(qx, qy);
                        if !v.is_nan() {
                            window.push(v);
                        }
                    }
                    if window.len() < 3 {
                        continue;
                    }
                    window.sort_by(|a, b| a.total_cmp(b));
                    let median = window[window.len() / 2];
                    let diff = value - median;
                    if diff.abs() <= PI {
                        continue;
                    }
                    let shift = (diff / TAU).round() as i64;
                    let k = *order.get(x, y) as i64 - shift;
                    if k < 0 {
                        continue;
                    }
                    let candidate = value - TAU * shift as f64;
                    let improves = [-1isize, 1].iter().all(|&d| {
                        let p = pos as isize + d;
                        if p < 0 || p >= along as isize {
                            return true;
                        }
                        let (qx, qy) = at(line, p as usize);
                        let n = *raw.get(qx, qy);
                        n.is_nan() || (candidate - n).abs() < (value - n).abs()
                    });
                    if improves {
                        fixes.push((x, y, k as u32));
                    }
                }
                fixes
            })
            .collect();
        for (x, y, k) in fixes.into_iter().flatten() {
            corrected.set(x, y, k);
        }
    }

    let abs = Image::from_fn(w, h, |x, y| {
        if *valid.get(x, y) {
            positive_phase(*phase.wrapped_phase.get(x, y)) + TAU * *corrected.get(x, y) as f64
        } else {
            f64::NAN
        }
    });
    Ok(AbsolutePhaseMap {
        phase: abs,
        fringe_order: corrected,
        valid: valid.clone(),
    })
}

pub fn compute_reliability(stack: &ImageStack, phase: &PhaseMap, thresholds: &DecodeThresholds) -> Result<ReliabilityMask> {
    for img in &stack.phase_images {
        phase.valid.ensure_dims(img, "phase image")?;
    }
    let (w, h) = phase.valid.dims();
    let mut saturated = Image::filled(w, h, false);
    for img in &stack.phase_images {
        for (s, &v) in saturated.as_mut_slice().iter_mut().zip(img.as_slice()) {
            *s |= v >= thresholds.saturation_level;
        }
    }
    let low_modulation = phase.modulation.map(|&m| !(m >= thresholds.modulation_floor));
    let reliable = Image::from_fn(w, h, |x, y| {
        !(*saturated.get(x, y) || *low_modulation.get(x, y)) && *phase.valid.get(x, y)
    });
    Ok(ReliabilityMask {
        reliable,
        saturated,
        low_modulation,
    })
}
