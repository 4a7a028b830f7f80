//! Harmonic hole filling: each hole of unreliable pixels is solved as a
//! discrete Laplace problem with the surrounding reliable depths as Dirichlet
//! data.
//!
//! Neighbors outside the image or without data (neither reliable nor part of a
//! hole) are left out of the 4-neighbor average, which acts as a zero-flux
//! boundary there.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthFrame;
use crate::image::{Image, Mask};

use super::CompletionRequest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonicOptions {
    /// Target bound on the solution error, mm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HarmonicOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Outcome for one connected hole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleReport {
    pub pixels: usize,
    /// Bounding box `[x0, y0, x1, y1]`, inclusive.
    pub bbox: [usize; 4],
    pub completed: bool,
    pub iterations: usize,
    /// Largest `|mean(neighbors) − z|` at the end, mm.
    pub residual: f64,
    /// Range of the Dirichlet values around the hole.
    pub boundary_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub holes: Vec<HoleReport>,
}

impl CompletionReport {
    pub fn completed_holes(&self) -> usize {
        self.holes.iter().filter(|h| h.completed).count()
    }

    pub fn uncompleted_holes(&self) -> usize {
        self.holes.len() - self.completed_holes()
    }

    pub fn iterations(&self) -> usize {
        self.holes.iter().map(|h| h.iterations).max().unwrap_or(0)
    }
}

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Labels 4-connected holes of `region`; returns the pixel lists.
fn holes(region: &Mask) -> Vec<Vec<usize>> {
    let (w, h) = region.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !region.as_slice()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in N4 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if region.as_slice()[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        pixels.sort_unstable();
        out.push(pixels);
    }
    out
}

/// Per-pixel stencil of one hole: indices of unknown neighbors (into the
/// hole's pixel list) and the sum and count of known neighbors.
struct Stencil {
    unknown: Vec<[u32; 4]>,
    unknown_len: Vec<u8>,
    known_sum: Vec<f64>,
    degree: Vec<u8>,
    red: Vec<bool>,
}

fn build_stencil(pixels: &[usize], w: usize, h: usize, known: &Mask, z: &Image<f64>) -> (Stencil, Option<[f64; 2]>) {
    let mut local = std::collections::HashMap::with_capacity(pixels.len());
    for (k, &i) in pixels.iter().enumerate() {
        local.insert(i, k as u32);
    }
    let n = pixels.len();
    let mut st = Stencil {
        unknown: vec![[0; 4]; n],
        unknown_len: vec![0; n],
        known_sum: vec![0.0; n],
        degree: vec![0; n],
        red: vec![false; n],
    };
    let mut range: Option<[f64; 2]> = None;
    for (k, &i) in pixels.iter().enumerate() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        st.red[k] = (x + y) % 2 == 0;
        for (dx, dy) in N4 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if let Some(&l) = local.get(&j) {
                st.unknown[k][st.unknown_len[k] as usize] = l;
                st.unknown_len[k] += 1;
                st.degree[k] += 1;
            } else if known.as_slice()[j] {
                let v = z.as_slice()[j];
                st.known_sum[k] += v;
                st.degree[k] += 1;
                range = Some(match range {
                    None => [v, v],
                    Some([lo, hi]) => [lo.min(v), hi.max(v)],
                });
            }
        }
    }
    (st, range)
}

fn max_residual(st: &Stencil, u: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..u.len() {
        let d = st.degree[k];
        if d == 0 {
            continue;
        }
        let mut sum = st.known_sum[k];
        for &l in &st.unknown[k][..st.unknown_len[k] as usize] {
            sum += u[l as usize];
        }
        worst = worst.max((sum / d as f64 - u[k]).abs());
    }
    worst
}

/// Solves one hole in place. Returns iterations and final residual.
fn solve_hole(st: &Stencil, u: &mut [f64], bbox: [usize; 4], opts: &HarmonicOptions) -> Result<(usize, f64)> {
    let bw = (bbox[2] - bbox[0] + 1) as f64;
    let bh = (bbox[3] - bbox[1] + 1) as f64;
    // Error ≤ residual·R² for holes enclosed by Dirichlet data.
    let r2 = ((bw + 1.0).powi(2) + (bh + 1.0).powi(2)) / 4.0;
    let n = bw.max(bh);
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / (n + 1.0)).sin());
    let mut residual = max_residual(st, u);
    if residual * r2 < opts.tol {
        return Ok((0, residual));
    }
    const CHECK_EVERY: usize = 8;
    for iter in 1..=opts.max_iter {
        for color in [true, false] {
            for k in 0..u.len() {
                if st.red[k] != color {
                    continue;
                }
                let d = st.degree[k];
                if d == 0 {
                    continue;
                }
                let mut sum = st.known_sum[k];
                for &l in &st.unknown[k][..st.unknown_len[k] as usize] {
                    sum += u[l as usize];
                }
                u[k] += omega * (sum / d as f64 - u[k]);
            }
        }
        if iter % CHECK_EVERY == 0 || iter == opts.max_iter {
            residual = max_residual(st, u);
            if residual * r2 < opts.tol {
                return Ok((iter, residual));
            }
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Fills every unreliable hole that touches at least one reliable pixel.
/// Reliable depths are copied through untouched.
pub fn complete_depth_harmonic(req: &CompletionRequest, opts: &HarmonicOptions) -> Result<(DepthFrame, CompletionReport)> {
    req.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let frame = &req.sparse_depth;
    let (w, h) = frame.z.dims();
    let known = &frame.valid;
    let mut out = frame.clone();
    let mut report = CompletionReport::default();
    for pixels in holes(&req.unreliable) {
        let mut bbox = [usize::MAX, usize::MAX, 0, 0];
        for &i in &pixels {
            let (x, y) = (i % w, i / w);
            bbox = [bbox[0].min(x), bbox[1].min(y), bbox[2].max(x), bbox[3].max(y)];
        }
        let (mut st, range) = build_stencil(&pixels, w, h, known, &frame.z);
        let Some([lo, hi]) = range else {
            report.holes.push(HoleReport {
                pixels: pixels.len(),
                bbox,
                completed: false,
                iterations: 0,
                residual: 0.0,
                boundary_range: None,
            });
            continue;
        };
        let boundary_sum: f64 = st.known_sum.iter().sum();
        let boundary_count: usize = st
            .degree
            .iter()
            .zip(&st.unknown_len)
            .map(|(&d, &u)| (d - u) as usize)
            .sum();
        // Solve for the deviation from the boundary mean, which keeps the
        // iterates small and the roundoff floor well below the tolerance.
        let mean = boundary_sum / boundary_count as f64;
        for k in 0..pixels.len() {
            st.known_sum[k] -= mean * (st.degree[k] - st.unknown_len[k]) as f64;
        }
        let mut u = vec![0.0; pixels.len()];
        let (iterations, residual) = solve_hole(&st, &mut u, bbox, opts)?;
        for (&i, &v) in pixels.iter().zip(&u) {
            // The exact solution obeys the maximum principle; clamp away roundoff.
            out.set_depth(i % w, i / w, (mean + v).clamp(lo, hi));
        }
        report.holes.push(HoleReport {
            pixels: pixels.len(),
            bbox,
            completed: true,
            iterations,
            residual,
            boundary_range: Some([lo, hi]),
        });
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector, Matrix3};

    fn k() -> Matrix3<f64> {
        Matrix3::new(500.0, 0.0, 31.5, 0.0, 500.0, 31.5, 0.0, 0.0, 1.0)
    }

    fn request(depth: impl Fn(usize, usize) -> f64, hole: impl Fn(usize, usize) -> bool, n: usize) -> CompletionRequest {
        let mut frame = DepthFrame::empty(n, n, k());
        for y in 0..n {
            for x in 0..n {
                if !hole(x, y) {
                    frame.set_depth(x, y, depth(x, y));
                }
            }
        }
        CompletionRequest {
            sparse_depth: frame,
            guidance: Image::filled(n, n, 0.5),
            unreliable: Image::from_fn(n, n, hole),
        }
    }

    fn disk(cx: f64, cy: f64, r: f64) -> impl Fn(usize, usize) -> bool {
        move |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r
    }

    #[test]
    fn constant_plane_hole() {
        let req = request(|_, _| 500.0, disk(20.0, 20.0, 8.0), 40);
        let (out, report) = complete_depth_harmonic(&req, &HarmonicOptions::default()).unwrap();
        assert_eq!(report.completed_holes(), 1);
        assert!(out.z.as_slice().iter().all(|&z| (z - 500.0).abs() < 1e-6));
        assert_eq!(out.valid_count(), 1600);
    }

    #[test]
    fn affine_surface_exact() {
        let f = |x: usize, y: usize| 480.0 + 0.3 * x as f64 - 0.17 * y as f64;
        let req = request(f, disk(30.0, 25.0, 12.0), 64);
        let (out, _) = complete_depth_harmonic(&req, &HarmonicOptions::default()).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert!((out.z.get(x, y) - f(x, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matches_dense_direct_solve() {
        // Nonharmonic boundary data so the comparison is not trivial.
        let f = |x: usize, y: usize| 500.0 - 0.02 * ((x as f64 - 32.0).powi(2) + (y as f64 - 30.0).powi(2));
        let hole = |x: usize, y: usize| (8..56).contains(&x) && (10..50).contains(&y) && (x + 2 * y) % 17 != 0;
        let req = request(f, hole, 64);
        let opts = HarmonicOptions {
            tol: 1e-10,
            max_iter: 100_000,
        };
        let (out, _) = complete_depth_harmonic(&req, &opts).unwrap();

        let pixels: Vec<(usize, usize)> = (0..64 * 64)
            .map(|i| (i % 64, i / 64))
            .filter(|&(x, y)| hole(x, y))
            .collect();
        let index: std::collections::HashMap<(usize, usize), usize> =
            pixels.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let n = pixels.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for (i, &(x, y)) in pixels.iter().enumerate() {
            for (dx, dy) in N4 {
                let (nx, ny) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                a[(i, i)] += 1.0;
                match index.get(&(nx, ny)) {
                    Some(&j) => a[(i, j)] -= 1.0,
                    None => b[i] += f(nx, ny),
                }
            }
        }
        let direct = a.lu().solve(&b).unwrap();
        let worst = pixels
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (out.z.get(x, y) - direct[i]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn reliable_pixels_bit_identical_and_maximum_principle() {
        let f = |x: usize, y: usize| 500.0 + ((x * 7 + y * 13) % 11) as f64 * 0.37;
        let req = request(f, |x, y| disk(15.0, 15.0, 6.0)(x, y) || disk(40.0, 30.0, 4.0)(x, y), 50);
        let (out, report) = complete_depth_harmonic(&req, &HarmonicOptions::default()).unwrap();
        for i in 0..2500 {
            if req.sparse_depth.valid.as_slice()[i] {
                assert_eq!(out.z.as_slice()[i].to_bits(), req.sparse_depth.z.as_slice()[i].to_bits());
                assert_eq!(out.world_xyz.as_slice()[i], req.sparse_depth.world_xyz.as_slice()[i]);
            }
        }
        assert_eq!(report.holes.len(), 2);
        for (hole, h) in [disk(15.0, 15.0, 6.0), disk(40.0, 30.0, 4.0)].iter().zip(&report.holes) {
            let [lo, hi] = h.boundary_range.unwrap();
            for y in 0..50 {
                for x in 0..50 {
                    if hole(x, y) {
                        let z = *out.z.get(x, y);
                        assert!(z >= lo && z <= hi);
                    }
                }
            }
        }
    }

    #[test]
    fn hole_without_boundary_left_invalid() {
        let mut req = request(|_, _| 500.0, |_, _| true, 8);
        req.sparse_depth = DepthFrame::empty(8, 8, k());
        let (out, report) = complete_depth_harmonic(&req, &HarmonicOptions::default()).unwrap();
        assert_eq!(out.valid_count(), 0);
        assert_eq!(report.uncompleted_holes(), 1);
    }

    #[test]
    fn dense_frame_is_noop() {
        let req = request(|x, _| 500.0 + x as f64, |_, _| false, 16);
        let (out, report) = complete_depth_harmonic(&req, &HarmonicOptions::default()).unwrap();
        assert!(report.holes.is_empty());
        assert_eq!(out.z, req.sparse_depth.z);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let req = request(|x, _| 500.0 + x as f64, disk(20.0, 20.0, 15.0), 40);
        let opts = HarmonicOptions { tol: 1e-12, max_iter: 3 };
        match complete_depth_harmonic(&req, &opts) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
