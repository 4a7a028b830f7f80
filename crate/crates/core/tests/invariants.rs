use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;
use proptest::prelude::*;

use fringescan::annotations::{label_components, rasterize, separate_instances, AnnotationSet, Instance, SeparationOptions, NUM_CLASSES};
use fringescan::bench::bench;
use fringescan::eval::{coco_thresholds, depth_metrics, detection_metrics, fuse, IouMode};
use fringescan::geometry::DepthFrame;
use fringescan::image::Image;
use fringescan::patterns::{generate_gray_patterns, generate_phase_patterns, gray_encode, Orientation, PatternParams};
use fringescan::phase::{compute_wrapped_phase, unwrap_phase, wrap_to_pi, DecodeThresholds, ImageStack};
use fringescan::pipeline::{complete_depth_harmonic, CompletionRequest, HarmonicOptions};

fn params(width: usize, period: f64, shifts: usize, bits: u32) -> PatternParams {
    PatternParams {
        projector_width: width,
        projector_height: 2,
        fringe_period: period,
        num_shifts: shifts,
        num_gray_bits: bits,
        orientation: Orientation::Vertical,
    }
}

fn synth_stack(phi: &[f64], offset: f64, amplitude: f64, n: usize) -> ImageStack {
    let w = phi.len();
    let phase = (0..n)
        .map(|k| {
            let d = TAU * k as f64 / n as f64;
            Image::from_fn(w, 1, |x, _| offset + amplitude * (phi[x] + d).cos())
        })
        .collect();
    ImageStack::new(phase, vec![Image::filled(w, 1, 0.0)], Image::filled(w, 1, 1.0), 16.0).unwrap()
}

fn frame_from(w: usize, h: usize, z: &[f64], valid: &[bool]) -> DepthFrame {
    let k = Matrix3::new(100.0, 0.0, w as f64 / 2.0, 0.0, 100.0, h as f64 / 2.0, 0.0, 0.0, 1.0);
    let mut f = DepthFrame::empty(w, h, k);
    for i in 0..w * h {
        if valid[i] {
            f.set_depth(i % w, i / w, z[i]);
        }
    }
    f
}

fn rect(class_id: u8, r: [f64; 4], confidence: f64) -> Instance {
    let (x0, x1) = (r[0].min(r[2]), r[0].max(r[2]) + 0.02);
    let (y0, y1) = (r[1].min(r[3]), r[1].max(r[3]) + 0.02);
    let (x1, y1) = (x1.min(1.0), y1.min(1.0));
    Instance {
        class_id,
        polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        confidence,
    }
}

fn rect_strategy() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.0..0.95f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phase_patterns_average_half(period in 3.0..64.0f64, shifts in 3usize..24, width in 8usize..200) {
        let bits = ((width as f64 / period).log2().ceil().max(0.0) as u32).max(1);
        let pats = generate_phase_patterns(&params(width, period, shifts, bits)).unwrap();
        prop_assert_eq!(pats.len(), shifts);
        for x in 0..width {
            let mean = pats.iter().map(|p| *p.get(x, 0)).sum::<f64>() / shifts as f64;
            prop_assert!((mean - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn adjacent_gray_codes_differ_in_one_bit(bits in 1u32..20, seed in any::<u32>()) {
        let k = seed % ((1 << bits) - 1).max(1);
        prop_assert_eq!((gray_encode(k) ^ gray_encode(k + 1)).count_ones(), 1);
    }

    #[test]
    fn pattern_generation_is_deterministic(period in 3.0..40.0f64, width in 8usize..120) {
        let bits = ((width as f64 / period).log2().ceil().max(0.0) as u32).max(1);
        let p = params(width, period, 4, bits);
        prop_assert_eq!(generate_phase_patterns(&p).unwrap(), generate_phase_patterns(&p).unwrap());
        prop_assert_eq!(generate_gray_patterns(&p).unwrap(), generate_gray_patterns(&p).unwrap());
    }

    #[test]
    fn wrapped_phase_round_trip(
        phi in prop::collection::vec(-PI..PI, 1..40),
        n in 3usize..20,
        offset in 0.1..0.5f64,
        amplitude in 0.05..0.4f64,
        shift in -0.3..0.3f64,
        scale in 0.2..2.0f64,
    ) {
        let t = DecodeThresholds { modulation_floor: 0.0, saturation_level: f64::INFINITY };
        let base = compute_wrapped_phase(&synth_stack(&phi, offset, amplitude, n), &t).unwrap();
        let shifted = compute_wrapped_phase(&synth_stack(&phi, offset + shift, amplitude, n), &t).unwrap();
        let scaled = compute_wrapped_phase(&synth_stack(&phi, scale * offset, scale * amplitude, n), &t).unwrap();
        for x in 0..phi.len() {
            let got = *base.wrapped_phase.get(x, 0);
            prop_assert!(wrap_to_pi(got - phi[x]).abs() < 1e-9);
            prop_assert!(wrap_to_pi(got - *shifted.wrapped_phase.get(x, 0)).abs() < 1e-9);
            prop_assert!(wrap_to_pi(got - *scaled.wrapped_phase.get(x, 0)).abs() < 1e-9);
            prop_assert!((*scaled.modulation.get(x, 0) - scale * *base.modulation.get(x, 0)).abs() < 1e-9);
        }
    }

    #[test]
    fn unwrap_rewraps_to_wrapped_phase(phi in prop::collection::vec(-PI..PI, 2..40), orders in prop::collection::vec(0u32..8, 40)) {
        let stack = synth_stack(&phi, 0.5, 0.4, 6);
        let phase = compute_wrapped_phase(&stack, &DecodeThresholds::default()).unwrap();
        let order = Image::from_fn(phi.len(), 1, |x, _| orders[x]);
        let abs = unwrap_phase(&phase, &order).unwrap();
        for x in 0..phi.len() {
            if *abs.valid.get(x, 0) {
                let back = wrap_to_pi(*abs.phase.get(x, 0));
                prop_assert!(wrap_to_pi(back - *phase.wrapped_phase.get(x, 0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rmse_dominates_mae(
        values in prop::collection::vec((400.0..600.0f64, 400.0..600.0f64, any::<bool>()), 1..64),
    ) {
        let w = values.len();
        let z: Vec<f64> = values.iter().map(|v| v.0).collect();
        let valid: Vec<bool> = values.iter().map(|v| v.2).collect();
        let truth = Image::from_fn(w, 1, |x, _| values[x].1);
        match depth_metrics(&frame_from(w, 1, &z, &valid), &truth, None) {
            Ok(m) => prop_assert!(m.rmse >= m.mae && m.mae >= 0.0),
            Err(_) => prop_assert!(valid.iter().all(|v| !v)),
        }
    }

    #[test]
    fn detection_ap_properties(
        gts in prop::collection::vec((0u8..3, rect_strategy()), 0..6),
        preds in prop::collection::vec((0u8..3, rect_strategy(), 0.01..1.0f64), 0..8),
    ) {
        let mut gt = AnnotationSet::empty(48, 40);
        gt.instances = gts.iter().map(|&(c, r)| rect(c, r, 1.0)).collect();
        let mut pred = AnnotationSet::empty(48, 40);
        pred.instances = preds.iter().map(|&(c, r, s)| rect(c, r, s)).collect();
        let thresholds = coco_thresholds();
        for mode in [IouMode::Box, IouMode::Mask] {
            let m = detection_metrics(std::slice::from_ref(&pred), std::slice::from_ref(&gt), mode, &thresholds).unwrap();
            for class in m.per_class.values() {
                for pair in class.ap.windows(2) {
                    prop_assert!(pair[1] <= pair[0] + 1e-12);
                }
                prop_assert!(class.ap.iter().all(|a| (0.0..=1.0).contains(a)));
            }
            let mut halved = pred.clone();
            halved.instances.iter_mut().for_each(|i| i.confidence /= 2.0);
            let m2 = detection_metrics(&[halved], std::slice::from_ref(&gt), mode, &thresholds).unwrap();
            prop_assert_eq!(m, m2);
        }
    }

    #[test]
    fn fused_labels_follow_instance_priority(
        instances in prop::collection::vec((0u8..NUM_CLASSES as u8, rect_strategy(), 0.0..1.0f64), 0..6),
    ) {
        let (w, h) = (32, 24);
        let mut set = AnnotationSet::empty(w, h);
        set.instances = instances.iter().map(|&(c, r, s)| rect(c, r, s)).collect();
        let z = vec![500.0; w * h];
        let valid: Vec<bool> = (0..w * h).map(|i| i % 5 != 0).collect();
        let cloud = fuse(&frame_from(w, h, &z, &valid), &set).unwrap();
        prop_assert_eq!(cloud.points.len(), cloud.labels.len());
        prop_assert_eq!(cloud.points.len(), cloud.source_pixel.len());
        let masks: Vec<_> = set.instances.iter().map(|i| rasterize(i, w, h)).collect();
        for (label, &[x, y]) in cloud.labels.iter().zip(&cloud.source_pixel) {
            let winner = (0..masks.len())
                .filter(|&i| *masks[i].get(x, y))
                .min_by(|&a, &b| {
                    set.instances[b].confidence.total_cmp(&set.instances[a].confidence)
                        .then(masks[a].count().cmp(&masks[b].count()))
                        .then(a.cmp(&b))
                });
            prop_assert_eq!(*label, winner.map(|i| set.instances[i].class_id));
        }
    }

    #[test]
    fn harmonic_completion_conserves_and_bounds(
        depth in prop::collection::vec(450.0..550.0f64, 24 * 20),
        holes in prop::collection::vec((1usize..23, 1usize..19, 1usize..6, 1usize..6), 1..4),
    ) {
        let (w, h) = (24, 20);
        let hole = |x: usize, y: usize| holes.iter().any(|&(hx, hy, hw, hh)| x >= hx && x < hx + hw && y >= hy && y < hy + hh);
        let unreliable = Image::from_fn(w, h, hole);
        let valid: Vec<bool> = (0..w * h).map(|i| !*unreliable.get(i % w, i / w)).collect();
        let req = CompletionRequest {
            sparse_depth: frame_from(w, h, &depth, &valid),
            guidance: Image::filled(w, h, 0.5),
            unreliable,
        };
        let (out, _) = complete_depth_harmonic(&req, &HarmonicOptions::default()).unwrap();
        let (lo, hi) = depth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for i in 0..w * h {
            if valid[i] {
                prop_assert_eq!(out.z.as_slice()[i].to_bits(), req.sparse_depth.z.as_slice()[i].to_bits());
            } else if out.valid.as_slice()[i] {
                let v = out.z.as_slice()[i];
                prop_assert!(v >= lo && v <= hi);
            }
        }

        // A second pass over the completed frame has nothing left to fill.
        let dense = CompletionRequest {
            sparse_depth: out.clone(),
            guidance: req.guidance.clone(),
            unreliable: Image::from_fn(w, h, |x, y| !*out.valid.get(x, y)),
        };
        let (again, _) = complete_depth_harmonic(&dense, &HarmonicOptions::default()).unwrap();
        for i in 0..w * h {
            prop_assert_eq!(again.valid.as_slice()[i], out.valid.as_slice()[i]);
            if out.valid.as_slice()[i] {
                prop_assert_eq!(again.z.as_slice()[i].to_bits(), out.z.as_slice()[i].to_bits());
            }
        }
    }

    #[test]
    fn separated_instances_partition_the_input(
        disks in prop::collection::vec((4.0..44.0f64, 4.0..36.0f64, 2.0..7.0f64), 1..6),
    ) {
        let merged = Image::from_fn(48, 40, |x, y| {
            disks.iter().any(|&(cx, cy, r)| (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= r)
        });
        let opts = SeparationOptions::default();
        let parts = separate_instances(&merged, &opts);
        let mut cover = Image::filled(48, 40, 0u32);
        for p in &parts {
            for (c, &v) in cover.as_mut_slice().iter_mut().zip(p.as_slice()) {
                *c += v as u32;
            }
        }
        prop_assert!(cover.as_slice().iter().all(|&c| c <= 1));
        let (labels, areas) = label_components(&merged, true);
        for (i, &c) in cover.as_slice().iter().enumerate() {
            let l = labels.as_slice()[i] as usize;
            let kept = l != 0 && areas[l - 1] >= opts.min_area;
            prop_assert_eq!(c == 1, kept);
        }
    }

    #[test]
    fn bench_report_consistency(iters in 1usize..30) {
        let r = bench("noop", "-", 0, iters, || Ok(())).unwrap();
        prop_assert!((r.throughput_fps * r.mean_ms - 1000.0).abs() < 1e-6 || r.mean_ms == 0.0);
        prop_assert!(r.p50_ms <= r.p95_ms);
    }
}
