//! Acquisition orchestration: decode, drive-state recognition, triangulation
//! and selective completion of unreliable depth.

pub mod external;
pub mod harmonic;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationSet, Taxonomy};
use crate::error::{Error, Result};
use crate::geometry::{phase_to_projector_column, triangulate, CalibrationModel, DepthFrame, TriangulationDiagnostics, TriangulationOptions};
use crate::image::{Image, Intensity, Mask};
use crate::phase::{
    compute_reliability, compute_wrapped_phase, decode_fringe_order, unwrap_phase_with, AbsolutePhaseMap, DecodeThresholds,
    ImageStack, PhaseMap, ReliabilityMask, UnwrapOptions,
};

pub use external::{complete_depth_external, Endpoint, ExternalClient};
pub use harmonic::{complete_depth_harmonic, CompletionReport, HarmonicOptions, HoleReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DriveState {
    PlatterFacing,
    PcbFacing,
}

impl std::fmt::Display for DriveState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DriveState::PlatterFacing => "PlatterFacing",
            DriveState::PcbFacing => "PcbFacing",
        })
    }
}

/// Platter facing iff some platter instance reaches `min_confidence`.
pub fn recognize_state(set: &AnnotationSet, taxonomy: &Taxonomy, min_confidence: f64) -> Result<DriveState> {
    let platter = taxonomy
        .platter()
        .ok_or_else(|| Error::Parameter("taxonomy has no platter class".into()))?;
    if !(0.0..=1.0).contains(&min_confidence) {
        return Err(Error::Parameter(format!("min_confidence {min_confidence} outside [0, 1]")));
    }
    let found = set
        .instances
        .iter()
        .any(|i| i.class_id == platter && i.confidence >= min_confidence);
    Ok(if found {
        DriveState::PlatterFacing
    } else {
        DriveState::PcbFacing
    })
}

/// Input to a depth-completion backend.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    /// Reliable depth only.
    pub sparse_depth: DepthFrame,
    /// White-lit camera image.
    pub guidance: Intensity,
    /// Pixels whose depth must be filled in.
    pub unreliable: Mask,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<()> {
        self.sparse_depth.z.ensure_dims(&self.guidance, "guidance image")?;
        self.sparse_depth.z.ensure_dims(&self.unreliable, "unreliable mask")?;
        let overlap = self
            .sparse_depth
            .valid
            .as_slice()
            .iter()
            .zip(self.unreliable.as_slice())
            .filter(|(&v, &u)| v && u)
            .count();
        if overlap > 0 {
            return Err(Error::Validation(format!(
                "{overlap} pixels are both reliable and marked for completion"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Harmonic,
    External,
    ExternalWithFallback,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(Self::Harmonic),
            "external" => Ok(Self::External),
            "external-with-fallback" => Ok(Self::ExternalWithFallback),
            _ => Err(Error::Parameter(format!(
                "unknown backend {s:?}; expected harmonic, external or external-with-fallback"
            ))),
        }
    }
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Harmonic => "harmonic",
            Self::External => "external",
            Self::ExternalWithFallback => "external-with-fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalConfig {
    /// `tcp://host:port`, `unix:path` or `exec:program args`.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub min_confidence: f64,
    pub backend: BackendKind,
    pub harmonic: HarmonicOptions,
    pub external: ExternalConfig,
    pub thresholds: DecodeThresholds,
    pub triangulation: TriangulationOptions,
    pub unwrap: UnwrapOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.5,
            backend: BackendKind::Harmonic,
            harmonic: HarmonicOptions::default(),
            external: ExternalConfig::default(),
            thresholds: DecodeThresholds::default(),
            triangulation: TriangulationOptions::default(),
            unwrap: UnwrapOptions::default(),
        }
    }
}

/// Everything the decode and triangulation stages produce.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub phase: PhaseMap,
    pub absolute: AbsolutePhaseMap,
    pub reliability: ReliabilityMask,
    pub frame: DepthFrame,
    pub triangulation: TriangulationDiagnostics,
}

/// Phase decoding: wrapped phase, fringe order, absolute phase, reliability.
pub fn decode(
    stack: &ImageStack,
    thresholds: &DecodeThresholds,
    unwrap: &UnwrapOptions,
) -> Result<(PhaseMap, AbsolutePhaseMap, ReliabilityMask)> {
    let phase = compute_wrapped_phase(stack, thresholds)?;
    let order = decode_fringe_order(stack, &stack.white_image)?;
    let opts = UnwrapOptions {
        axis: stack.orientation,
        ..*unwrap
    };
    let absolute = unwrap_phase_with(&phase, &order, &opts)?;
    let reliability = compute_reliability(stack, &phase, thresholds)?;
    Ok((phase, absolute, reliability))
}

/// Decode followed by triangulation, without any completion.
pub fn reconstruct(stack: &ImageStack, calib: &CalibrationModel, config: &PipelineConfig) -> Result<Reconstruction> {
    let (phase, absolute, reliability) = decode(stack, &config.thresholds, &config.unwrap).map_err(|e| e.in_stage("decode"))?;
    let (frame, triangulation) = triangulate_phase(&absolute, &reliability, stack.fringe_period, calib, &config.triangulation)
        .map_err(|e| e.in_stage("triangulate"))?;
    Ok(Reconstruction {
        phase,
        absolute,
        reliability,
        frame,
        triangulation,
    })
}

fn triangulate_phase(
    absolute: &AbsolutePhaseMap,
    reliability: &ReliabilityMask,
    fringe_period: f64,
    calib: &CalibrationModel,
    opts: &TriangulationOptions,
) -> Result<(DepthFrame, TriangulationDiagnostics)> {
    let columns = phase_to_projector_column(absolute, fringe_period)?;
    let (mut frame, diag) = triangulate(&columns, calib, opts)?;
    frame.reliability = Some(reliability.clone());
    Ok((frame, diag))
}

/// Pixels without trustworthy depth: invalid after triangulation or flagged by
/// the reliability mask.
pub fn unreliable_region(frame: &DepthFrame, reliability: &ReliabilityMask) -> Result<Mask> {
    frame.valid.ensure_dims(&reliability.reliable, "reliability mask")?;
    let (w, h) = frame.valid.dims();
    Ok(Image::from_fn(w, h, |x, y| !(*frame.valid.get(x, y) && *reliability.reliable.get(x, y))))
}

/// Builds the completion input: unreliable pixels are removed from the depth.
pub fn completion_request(frame: &DepthFrame, reliability: &ReliabilityMask, guidance: &Intensity) -> Result<CompletionRequest> {
    let unreliable = unreliable_region(frame, reliability)?;
    let mut sparse = frame.clone();
    let (w, h) = unreliable.dims();
    for y in 0..h {
        for x in 0..w {
            if *unreliable.get(x, y) && *sparse.valid.get(x, y) {
                sparse.invalidate(x, y);
            }
        }
    }
    Ok(CompletionRequest {
        sparse_depth: sparse,
        guidance: guidance.clone(),
        unreliable,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decode_ms: f64,
    pub state_ms: f64,
    pub triangulate_ms: f64,
    pub complete_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDiagnostics {
    pub schema_version: u32,
    pub state: DriveState,
    pub unreliable_pixels: usize,
    pub valid_pixels_before: usize,
    pub valid_pixels_after: usize,
    pub completion_invoked: bool,
    /// Backend that produced the completed depth, if any.
    pub backend: Option<String>,
    pub holes: Vec<HoleReport>,
    pub triangulation: TriangulationDiagnostics,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub state: DriveState,
    pub frame: DepthFrame,
    pub diagnostics: PipelineDiagnostics,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Pipeline with a reusable external-backend connection.
pub struct Pipeline {
    config: PipelineConfig,
    taxonomy: Taxonomy,
    client: Mutex<Option<Arc<ExternalClient>>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, taxonomy: Taxonomy) -> Result<Self> {
        if config.backend != BackendKind::Harmonic && config.external.endpoint.is_none() {
            return Err(Error::Parameter(format!(
                "backend {} needs an external endpoint",
                config.backend.as_str()
            )));
        }
        if let Some(endpoint) = &config.external.endpoint {
            endpoint.parse::<Endpoint>()?;
        }
        taxonomy
            .platter()
            .ok_or_else(|| Error::Parameter("taxonomy has no platter class".into()))?;
        Ok(Self {
            config,
            taxonomy,
            client: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn client(&self) -> Result<Arc<ExternalClient>> {
        let mut slot = self.client.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(c) = slot.as_ref() {
            return Ok(c.clone());
        }
        let endpoint: Endpoint = self
            .config
            .external
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Parameter("no external endpoint configured".into()))?
            .parse()?;
        let client = Arc::new(ExternalClient::connect(
            &endpoint,
            Duration::from_millis(self.config.external.timeout_ms),
        )?);
        *slot = Some(client.clone());
        Ok(client)
    }

    fn complete(&self, req: &CompletionRequest, warnings: &mut Vec<String>) -> Result<(DepthFrame, String, Vec<HoleReport>)> {
        let harmonic = |req: &CompletionRequest| {
            complete_depth_harmonic(req, &self.config.harmonic).map(|(f, r)| (f, "harmonic".to_string(), r.holes))
        };
        match self.config.backend {
            BackendKind::Harmonic => harmonic(req),
            BackendKind::External => {
                let client = self.client()?;
                complete_depth_external(req, &client).map(|f| (f, "external".to_string(), Vec::new()))
            }
            BackendKind::ExternalWithFallback => {
                match self.client().and_then(|c| complete_depth_external(req, &c)) {
                    Ok(f) => Ok((f, "external".to_string(), Vec::new())),
                    Err(Error::Backend(msg)) => {
                        // A broken connection is not reused.
                        *self.client.lock().unwrap_or_else(|p| p.into_inner()) = None;
                        warnings.push(format!("external backend unavailable ({msg}); used harmonic fallback"));
                        harmonic(req)
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    pub fn run(&self, stack: &ImageStack, annotations: &AnnotationSet, calib: &CalibrationModel) -> Result<PipelineOutput> {
        let start = Instant::now();
        let mut timings = StageTimings::default();
        let mut warnings = Vec::new();

        let t = Instant::now();
        let (_, absolute, reliability) =
            decode(stack, &self.config.thresholds, &self.config.unwrap).map_err(|e| e.in_stage("decode"))?;
        timings.decode_ms = ms(t.elapsed());

        let t = Instant::now();
        if (annotations.image_width, annotations.image_height) != (stack.width(), stack.height()) {
            return Err(Error::Structure(format!(
                "annotations are for {}x{} images but the stack is {}x{}",
                annotations.image_width,
                annotations.image_height,
                stack.width(),
                stack.height()
            ))
            .in_stage("state"));
        }
        let state =
            recognize_state(annotations, &self.taxonomy, self.config.min_confidence).map_err(|e| e.in_stage("state"))?;
        timings.state_ms = ms(t.elapsed());

        let t = Instant::now();
        let (frame, triangulation) = triangulate_phase(
            &absolute,
            &reliability,
            stack.fringe_period,
            calib,
            &self.config.triangulation,
        )
        .map_err(|e| e.in_stage("triangulate"))?;
        timings.triangulate_ms = ms(t.elapsed());

        let unreliable = unreliable_region(&frame, &reliability).map_err(|e| e.in_stage("complete"))?;
        let unreliable_pixels = unreliable.count();
        let valid_pixels_before = frame.valid_count();
        let mut completion_invoked = false;
        let mut backend = None;
        let mut holes = Vec::new();

        let output = match state {
            DriveState::PcbFacing => frame,
            DriveState::PlatterFacing if unreliable_pixels == 0 => {
                warnings.push("platter facing but no unreliable pixels; completion skipped".into());
                frame
            }
            DriveState::PlatterFacing => {
                let t = Instant::now();
                let req = completion_request(&frame, &reliability, &stack.white_image).map_err(|e| e.in_stage("complete"))?;
                let (mut completed, used, reports) =
                    self.complete(&req, &mut warnings).map_err(|e| e.in_stage("complete"))?;
                completed.reliability = Some(reliability);
                let uncompleted = reports.iter().filter(|h| !h.completed).count();
                if uncompleted > 0 {
                    warnings.push(format!("{uncompleted} holes had no reliable boundary and were left invalid"));
                }
                completion_invoked = true;
                backend = Some(used);
                holes = reports;
                timings.complete_ms = ms(t.elapsed());
                completed
            }
        };
        timings.total_ms = ms(start.elapsed());

        Ok(PipelineOutput {
            state,
            diagnostics: PipelineDiagnostics {
                schema_version: 1,
                state,
                unreliable_pixels,
                valid_pixels_before,
                valid_pixels_after: output.valid_count(),
                completion_invoked,
                backend,
                holes,
                triangulation,
                timings,
                warnings,
            },
            frame: output,
        })
    }

    /// Runs independent frames concurrently; results keep input order.
    pub fn run_batch(&self, frames: &[(ImageStack, AnnotationSet)], calib: &CalibrationModel) -> Vec<Result<PipelineOutput>> {
        frames.par_iter().map(|(s, a)| self.run(s, a, calib)).collect()
    }
}

pub fn run_pipeline(
    stack: &ImageStack,
    annotations: &AnnotationSet,
    calib: &CalibrationModel,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    Pipeline::new(config.clone(), Taxonomy::hdd())?.run(stack, annotations, calib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{taxonomy, Instance};

    fn square(class_id: u8, confidence: f64) -> Instance {
        Instance {
            class_id,
            polygon: vec![[0.1, 0.1], [0.9, 0.1], [0.9, 0.9], [0.1, 0.9]],
            confidence,
        }
    }

    #[test]
    fn state_from_annotations() {
        let tax = Taxonomy::hdd();
        let mut set = AnnotationSet::empty(64, 64);
        assert_eq!(recognize_state(&set, &tax, 0.5).unwrap(), DriveState::PcbFacing);
        set.instances.push(square(taxonomy::PCB, 0.9));
        set.instances.push(square(taxonomy::SCREW, 0.9));
        assert_eq!(recognize_state(&set, &tax, 0.5).unwrap(), DriveState::PcbFacing);
        set.instances.push(square(taxonomy::PLATTER, 0.49));
        assert_eq!(recognize_state(&set, &tax, 0.5).unwrap(), DriveState::PcbFacing);
        set.instances.push(square(taxonomy::PLATTER, 0.5));
        assert_eq!(recognize_state(&set, &tax, 0.5).unwrap(), DriveState::PlatterFacing);
    }

    #[test]
    fn taxonomy_without_platter_rejected() {
        let mut classes = Taxonomy::hdd().classes().to_vec();
        classes[taxonomy::PLATTER as usize].name = "Disk".into();
        let tax = Taxonomy::new(classes).unwrap();
        assert!(recognize_state(&AnnotationSet::empty(4, 4), &tax, 0.5).is_err());
    }

    #[test]
    fn request_overlap_rejected() {
        let k = nalgebra::Matrix3::identity();
        let mut frame = DepthFrame::empty(4, 4, k);
        frame.set_depth(1, 1, 10.0);
        let req = CompletionRequest {
            sparse_depth: frame,
            guidance: Image::filled(4, 4, 0.5),
            unreliable: Image::from_fn(4, 4, |x, y| x == 1 && y == 1),
        };
        assert!(matches!(req.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn backend_names() {
        for b in [BackendKind::Harmonic, BackendKind::External, BackendKind::ExternalWithFallback] {
            assert_eq!(b.as_str().parse::<BackendKind>().unwrap(), b);
        }
        assert!("mmdc".parse::<BackendKind>().is_err());
    }

    #[test]
    fn external_backend_requires_endpoint() {
        let config = PipelineConfig {
            backend: BackendKind::External,
            ..Default::default()
        };
        assert!(matches!(Pipeline::new(config, Taxonomy::hdd()), Err(Error::Parameter(_))));
    }
}
