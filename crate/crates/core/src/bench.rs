//! Stage throughput measurement: unmeasured warmup, then timed iterations on
//! a monotonic clock. Fixtures are built once, before the warmup.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationSet, Taxonomy};
use crate::error::{Error, Result};
use crate::geometry::{phase_to_projector_column, triangulate, CalibrationModel, SyntheticRig};
use crate::image::Image;
use crate::patterns::{PatternParams, PatternSet};
use crate::phase::{
    compute_wrapped_phase, decode_fringe_order, unwrap_phase_with, AbsolutePhaseMap, ImageStack, PhaseMap, UnwrapOptions,
};
use crate::pipeline::{completion_request, complete_depth_harmonic, decode, CompletionRequest, Pipeline, PipelineConfig};
use crate::simulator::{hdd_scene, render_stack, scene_annotations, RenderOptions};

pub const DEFAULT_WARMUP: usize = 100;
pub const DEFAULT_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub operation: String,
    pub warmup_iterations: usize,
    pub measured_iterations: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub throughput_fps: f64,
    pub input_shape: String,
    pub threads: usize,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        format!(
            "{:<16} {:>12} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10}\n{:<16} {:>12} {:>8} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>10.1}\n",
            "Stage",
            "Input",
            "Threads",
            "Iters",
            "Mean (ms)",
            "P50 (ms)",
            "P95 (ms)",
            "FPS",
            self.operation,
            self.input_shape,
            self.threads,
            self.measured_iterations,
            self.mean_ms,
            self.p50_ms,
            self.p95_ms,
            self.throughput_fps
        )
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Runs `f` `warmup` times untimed, then `iters` times timed.
pub fn bench<F: FnMut() -> Result<()>>(
    operation: &str,
    input_shape: &str,
    warmup: usize,
    iters: usize,
    mut f: F,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::Parameter("iterations must be at least 1".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = samples.iter().sum::<f64>() / iters as f64;
    samples.sort_by(f64::total_cmp);
    Ok(BenchReport {
        schema_version: 1,
        operation: operation.to_string(),
        warmup_iterations: warmup,
        measured_iterations: iters,
        mean_ms,
        p50_ms: percentile(&samples, 0.5),
        p95_ms: percentile(&samples, 0.95),
        throughput_fps: 1000.0 / mean_ms,
        input_shape: input_shape.to_string(),
        threads: rayon::current_num_threads(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchStage {
    WrappedPhase,
    Graycode,
    Unwrap,
    Triangulate,
    Harmonic,
    Pipeline,
}

impl BenchStage {
    pub const ALL: [BenchStage; 6] = [
        BenchStage::WrappedPhase,
        BenchStage::Graycode,
        BenchStage::Unwrap,
        BenchStage::Triangulate,
        BenchStage::Harmonic,
        BenchStage::Pipeline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BenchStage::WrappedPhase => "wrapped-phase",
            BenchStage::Graycode => "graycode",
            BenchStage::Unwrap => "unwrap",
            BenchStage::Triangulate => "triangulate",
            BenchStage::Harmonic => "harmonic",
            BenchStage::Pipeline => "pipeline",
        }
    }
}

impl std::str::FromStr for BenchStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|s| s.name()).collect();
            Error::Parameter(format!("unknown stage {s:?}; available stages: {}", names.join(", ")))
        })
    }
}

/// Inputs for every stage, derived from one rendered stack.
pub struct BenchFixture {
    pub calib: CalibrationModel,
    pub stack: ImageStack,
    pub annotations: AnnotationSet,
    pub config: PipelineConfig,
    pub phase: PhaseMap,
    pub order: Image<u32>,
    pub absolute: AbsolutePhaseMap,
    pub columns: Image<f64>,
    pub completion: CompletionRequest,
}

impl BenchFixture {
    pub fn from_stack(stack: ImageStack, annotations: AnnotationSet, calib: CalibrationModel) -> Result<Self> {
        let config = PipelineConfig::default();
        let (phase, absolute, reliability) = decode(&stack, &config.thresholds, &config.unwrap)?;
        let order = decode_fringe_order(&stack, &stack.white_image)?;
        let columns = phase_to_projector_column(&absolute, stack.fringe_period)?;
        let (frame, _) = triangulate(&columns, &calib, &config.triangulation)?;
        let completion = completion_request(&frame, &reliability, &stack.white_image)?;
        Ok(Self {
            calib,
            stack,
            annotations,
            config,
            phase,
            order,
            absolute,
            columns,
            completion,
        })
    }

    /// Platter-facing drive on the default 512×512 rig, N = 18, G = 6.
    pub fn synthetic(seed: u64) -> Result<Self> {
        let calib = CalibrationModel::synthetic(&SyntheticRig::default());
        let scene = hdd_scene(&calib, 0);
        let patterns = PatternSet::ideal(&PatternParams::dlp4500(calib.fringe_period))?;
        let stack = render_stack(
            &scene,
            &patterns,
            &calib,
            &RenderOptions {
                seed,
                ..Default::default()
            },
        )?;
        Self::from_stack(stack, scene_annotations(&scene), calib)
    }

    pub fn input_shape(&self) -> String {
        format!(
            "{}x{}x{}",
            self.stack.width(),
            self.stack.height(),
            self.stack.phase_images.len() + self.stack.gray_images.len() + 1
        )
    }

    /// Returns a closure running one iteration of `stage`.
    pub fn runner(&self, stage: BenchStage) -> Result<Box<dyn FnMut() -> Result<()> + '_>> {
        let unwrap = UnwrapOptions {
            axis: self.stack.orientation,
            ..self.config.unwrap
        };
        Ok(match stage {
            BenchStage::WrappedPhase => Box::new(move || compute_wrapped_phase(&self.stack, &self.config.thresholds).map(drop)),
            BenchStage::Graycode => Box::new(move || decode_fringe_order(&self.stack, &self.stack.white_image).map(drop)),
            BenchStage::Unwrap => Box::new(move || unwrap_phase_with(&self.phase, &self.order, &unwrap).map(drop)),
            BenchStage::Triangulate => {
                Box::new(move || triangulate(&self.columns, &self.calib, &self.config.triangulation).map(drop))
            }
            BenchStage::Harmonic => Box::new(move || complete_depth_harmonic(&self.completion, &self.config.harmonic).map(drop)),
            BenchStage::Pipeline => {
                let pipeline = Pipeline::new(self.config.clone(), Taxonomy::hdd())?;
                Box::new(move || pipeline.run(&self.stack, &self.annotations, &self.calib).map(drop))
            }
        })
    }
}

pub fn bench_stage(fixture: &BenchFixture, stage: BenchStage, warmup: usize, iters: usize) -> Result<BenchReport> {
    let run = fixture.runner(stage)?;
    bench(stage.name(), &fixture.input_shape(), warmup, iters, run)
}
