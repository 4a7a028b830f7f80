//! Splitting a merged binary mask into instances.
//!
//! Disjoint components are separated directly. Components that contain several
//! blobs are split by a seeded watershed on the distance transform, seeded
//! at distance maxima whose prominence reaches [`SeparationOptions::prominence`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::image::{Image, Mask};

use super::contour::label_components;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationOptions {
    /// Components smaller than this many pixels are discarded.
    pub min_area: usize,
    /// Minimum height (in pixels of distance) a distance maximum must rise
    /// above the saddle joining it to a higher one to seed its own instance.
    pub prominence: f64,
}

impl Default for SeparationOptions {
    fn default() -> Self {
        Self {
            min_area: 9,
            prominence: 1.0,
        }
    }
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        if f[v[k]] == f64::INFINITY {
            v[k] = q;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if f[v[0]] == f64::INFINITY {
        d.fill(f64::INFINITY);
        return;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel; pixels outside the image count as background.
/// Background pixels map to 0.
pub fn distance_transform(mask: &Mask) -> Image<f64> {
    let (w, h) = mask.dims();
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if *mask.get(x, y) {
                grid[(y + 1) * pw + x + 1] = f64::INFINITY;
            }
        }
    }
    let n = pw.max(ph);
    let (mut f, mut d) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = d[y];
        }
    }
    for y in 0..ph {
        let row = &mut grid[y * pw..(y + 1) * pw];
        f[..pw].copy_from_slice(row);
        edt_1d(&f[..pw], &mut d[..pw], &mut v, &mut z);
        row.copy_from_slice(&d[..pw]);
    }
    Image::from_fn(w, h, |x, y| grid[(y + 1) * pw + x + 1].sqrt())
}

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as isize, (i / w) as isize);
    (-1..=1isize)
        .flat_map(move |dy| (-1..=1isize).map(move |dx| (dx, dy)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then(|| ny as usize * w + nx as usize)
        })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Distance maxima that survive persistence filtering, as pixel indices.
/// Every foreground component contributes at least its global maximum.
fn persistent_peaks(dist: &[f64], fg: &[bool], w: usize, h: usize, prominence: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).filter(|&i| fg[i]).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut parent: Vec<usize> = (0..dist.len()).collect();
    let mut active = vec![false; dist.len()];
    let mut seeds = Vec::new();
    // A root is always the highest pixel of its component, so it doubles as
    // the component's peak. Higher peak wins; earlier pixel breaks ties.
    let elder = |a: usize, b: usize| dist[a] > dist[b] || (dist[a] == dist[b] && a < b);
    for &p in &order {
        active[p] = true;
        let mut roots: Vec<usize> = neighbors(p, w, h)
            .filter(|&q| active[q])
            .map(|q| find(&mut parent, q))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        let Some(&first) = roots.iter().min_by(|&&a, &&b| {
            if elder(a, b) {
                Ordering::Less
            } else {
                Ordering::Greater
            }
        }) else {
            continue;
        };
        for &r in &roots {
            if r != first {
                if dist[r] - dist[p] >= prominence {
                    seeds.push(r);
                }
                parent[r] = first;
            }
        }
        parent[p] = first;
    }
    for &p in &order {
        if find(&mut parent, p) == p {
            seeds.push(p);
        }
    }
    seeds.sort_unstable();
    seeds
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    seq: usize,
    index: usize,
    label: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Splits `merged` into pairwise-disjoint instance masks whose union is the
/// input minus components smaller than `min_area`. Masks are ordered by the
/// raster position of their seed.
pub fn separate_instances(merged: &Mask, options: &SeparationOptions) -> Vec<Mask> {
    let (w, h) = merged.dims();
    let (labels, areas) = label_components(merged, true);
    let fg: Vec<bool> = labels
        .as_slice()
        .iter()
        .map(|&l| l != 0 && areas[l as usize - 1] >= options.min_area)
        .collect();
    if !fg.iter().any(|&f| f) {
        return Vec::new();
    }
    let kept = Image::from_vec(w, h, fg.clone()).expect("dimensions match");
    let dist = distance_transform(&kept).into_vec();
    let seeds = persistent_peaks(&dist, &fg, w, h, options.prominence);

    let mut owner = vec![0u32; w * h];
    // Equal levels are flooded first-in first-out so plateaus split evenly.
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    for (k, &s) in seeds.iter().enumerate() {
        seq += 1;
        heap.push(Entry {
            dist: dist[s],
            seq,
            index: s,
            label: k as u32 + 1,
        });
    }
    while let Some(Entry { index, label, .. }) = heap.pop() {
        if owner[index] != 0 {
            continue;
        }
        owner[index] = label;
        for q in neighbors(index, w, h) {
            if fg[q] && owner[q] == 0 {
                seq += 1;
                heap.push(Entry {
                    dist: dist[q],
                    seq,
                    index: q,
                    label,
                });
            }
        }
    }
    (1..=seeds.len() as u32)
        .map(|k| Image::from_fn(w, h, |x, y| owner[y * w + x] == k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Mask {
        Image::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    fn union(a: &Mask, b: &Mask) -> Mask {
        Image::from_fn(a.width(), a.height(), |x, y| *a.get(x, y) || *b.get(x, y))
    }

    fn brute_edt(mask: &Mask) -> Image<f64> {
        let (w, h) = mask.dims();
        Image::from_fn(w, h, |x, y| {
            if !*mask.get(x, y) {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for by in -1..=h as isize {
                for bx in -1..=w as isize {
                    let outside = bx < 0 || by < 0 || bx >= w as isize || by >= h as isize;
                    if outside || !*mask.get(bx as usize, by as usize) {
                        let d = ((bx - x as isize) as f64).hypot((by - y as isize) as f64);
                        best = best.min(d);
                    }
                }
            }
            best
        })
    }

    #[test]
    fn edt_matches_brute_force() {
        let mask = Image::from_fn(17, 13, |x, y| (x * 7 + y * 3) % 5 != 0 && !(x == 8 && y > 2));
        let fast = distance_transform(&mask);
        let slow = brute_edt(&mask);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn disjoint_disks_two_masks() {
        let a = disk(60, 40, 15.0, 20.0, 10.0);
        let b = disk(60, 40, 40.0, 20.0, 10.0);
        let parts = separate_instances(&union(&a, &b), &SeparationOptions::default());
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn overlapping_disks_split_along_ridge() {
        let a = disk(80, 50, 28.0, 25.0, 15.0);
        let b = disk(80, 50, 50.0, 25.0, 15.0);
        let merged = union(&a, &b);
        let parts = separate_instances(&merged, &SeparationOptions::default());
        assert_eq!(parts.len(), 2);
        for x in 0..80 {
            for y in 0..50 {
                if *parts[0].get(x, y) {
                    assert!(x <= 40, "left instance reaches x={x}");
                }
                if *parts[1].get(x, y) {
                    assert!(x >= 38, "right instance reaches x={x}");
                }
            }
        }
        assert_eq!(union(&parts[0], &parts[1]), merged);
    }

    #[test]
    fn specks_dropped() {
        let mut mask = disk(30, 30, 10.0, 10.0, 5.0);
        mask.set(25, 25, true);
        mask.set(26, 25, true);
        let parts = separate_instances(&mask, &SeparationOptions::default());
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], disk(30, 30, 10.0, 10.0, 5.0));
    }

    #[test]
    fn empty_input() {
        assert!(separate_instances(&Image::filled(8, 8, false), &SeparationOptions::default()).is_empty());
    }

    #[test]
    fn rectangle_is_single_instance() {
        let mask = Image::from_fn(50, 30, |x, y| (5..45).contains(&x) && (8..20).contains(&y));
        assert_eq!(separate_instances(&mask, &SeparationOptions::default()).len(), 1);
    }
}
