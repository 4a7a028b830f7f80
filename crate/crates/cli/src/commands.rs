use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::Matrix3;

use fringescan::annotations::{parse_labels_with, AnnotationSet, LabelKind, Taxonomy, NUM_CLASSES};
use fringescan::bench::{bench_stage, BenchFixture};
use fringescan::config::ToolConfig;
use fringescan::eval::{coco_thresholds, depth_metrics, detection_metrics, label_image, DepthReport, DetectionReport};
use fringescan::geometry::{load_calibration, CalibrationModel, DepthFrame, SyntheticRig};
use fringescan::image::{load_mask, save_mask, Image};
use fringescan::io::{f32le_bytes, read_to_string, write_atomic, write_json};
use fringescan::patterns::{PatternParams, PatternSet};
use fringescan::pipeline::external::{guidance_plane, serve_connection};
use fringescan::pipeline::{decode, reconstruct, Endpoint, Pipeline};
use fringescan::ply::export_pointcloud;
use fringescan::simulator::{
    generate_dataset, read_depth, render_stack, scene_annotations, write_depth, DatasetOptions, DepthHeader,
    MaterialRandomization, SceneDescriptor,
};
use fringescan::stack_io::{load_stack, save_stack};
use fringescan::{Error, Result};

use crate::{
    BenchArgs, Cli, Command, DatagenArgs, DecodeArgs, EvalCommand, EvalDepthArgs, EvalDetectArgs, PatternsCommand,
    PatternsExportArgs, PipelineCommand, PipelineRunArgs, ReconstructArgs, RigArgs, SimulateArgs, StubArgs,
};

const CALIBRATION_FILE: &str = "calibration.json";
const LABELS_FILE: &str = "labels.txt";
const DEPTH_FILE: &str = "depth.f32";

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Error::Parameter(format!("cannot size the worker pool: {e}")))?;
    }
    let config = ToolConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &config),
        Command::Datagen(a) => datagen(a, &config),
        Command::Decode(a) => decode_cmd(a, &config),
        Command::Reconstruct(a) => reconstruct_cmd(a, &config),
        Command::Pipeline(PipelineCommand::Run(a)) => pipeline_run(a, config),
        Command::Eval(EvalCommand::Depth(a)) => eval_depth(a),
        Command::Eval(EvalCommand::Detect(a)) => eval_detect(a),
        Command::Bench(a) => bench_cmd(a, &config),
        Command::Patterns(PatternsCommand::Export(a)) => patterns_export(a),
        Command::CompletionStub(a) => completion_stub(a),
    }
}

fn log_config(config: &ToolConfig) {
    log::info!("effective configuration:\n{}", config.to_toml_string().trim_end());
}

fn rig_calibration(rig: &RigArgs) -> Result<CalibrationModel> {
    if let Some(path) = &rig.calib {
        return load_calibration(path);
    }
    let mut synthetic = SyntheticRig::default();
    if let Some(size) = rig.camera_size {
        synthetic.camera_size = size;
    }
    if let Some(f) = rig.camera_focal {
        synthetic.camera_focal = f;
    }
    Ok(CalibrationModel::synthetic(&synthetic))
}

/// `--calib` if given, otherwise the calibration stored next to the stack.
fn stack_calibration(flag: Option<&Path>, stack_dir: &Path) -> Result<CalibrationModel> {
    let path = flag.map(Path::to_path_buf).unwrap_or_else(|| stack_dir.join(CALIBRATION_FILE));
    if flag.is_none() && !path.exists() {
        return Err(Error::Parameter(format!(
            "no --calib given and {} does not exist",
            path.display()
        )));
    }
    load_calibration(&path)
}

fn ensure_empty(dir: &Path, force: bool) -> Result<()> {
    let non_empty = std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        return Err(Error::OutputExists(dir.to_path_buf()));
    }
    Ok(())
}

/// Picks the label format from the file itself: prediction lines carry an odd
/// number of values after the class id.
fn label_kind(text: &str, source: &Path) -> Result<LabelKind> {
    let mut kinds = BTreeSet::new();
    for line in text.lines() {
        let n = line.split_whitespace().count();
        if n > 0 {
            kinds.insert(n % 2 == 0);
        }
    }
    match kinds.len() {
        0 => Ok(LabelKind::GroundTruth),
        1 if kinds.contains(&true) => Ok(LabelKind::Prediction),
        1 => Ok(LabelKind::GroundTruth),
        _ => Err(Error::format(
            source.display().to_string(),
            None,
            "mixes lines with and without a confidence token",
        )),
    }
}

fn load_labels(path: &Path, width: usize, height: usize) -> Result<AnnotationSet> {
    let text = read_to_string(path)?;
    let kind = label_kind(&text, path)?;
    parse_labels_with(&text, width, height, NUM_CLASSES, kind).map_err(|e| match e {
        Error::LabelParse { line, message } => Error::format(path.display().to_string(), Some(format!("line {line}")), message),
        other => other,
    })
}

fn write_f32_map(path: &Path, values: &Image<f64>, units: &str) -> Result<()> {
    write_atomic(path, &f32le_bytes(values.as_slice().iter().copied()))?;
    write_json(
        &path.with_extension("json"),
        &DepthHeader {
            width: values.width(),
            height: values.height(),
            dtype: "f32le".into(),
            units: units.into(),
        },
    )
}

fn simulate(a: SimulateArgs, config: &ToolConfig) -> Result<()> {
    let mut render = config.render;
    if let Some(seed) = a.seed {
        render.seed = seed;
    }
    if let Some(sigma) = a.noise {
        render.noise_sigma = sigma;
    }
    log_config(&ToolConfig { render, ..config.clone() });
    ensure_empty(&a.out, a.force)?;

    let calib = rig_calibration(&a.rig)?;
    let scene = SceneDescriptor::from_arg(&a.scene)?.build(&calib)?;
    let params = PatternParams {
        num_shifts: a.shifts as usize,
        num_gray_bits: a.gray_bits,
        ..PatternParams::dlp4500(calib.fringe_period)
    };
    let stack = render_stack(&scene, &PatternSet::ideal(&params)?, &calib, &render)?;

    save_stack(&stack, &a.out, a.bit_depth)?;
    write_atomic(&a.out.join(CALIBRATION_FILE), calib.to_json_string().as_bytes())?;
    write_atomic(
        &a.out.join(LABELS_FILE),
        fringescan::annotations::serialize_labels(&scene_annotations(&scene)).as_bytes(),
    )?;
    write_depth(&a.out.join(DEPTH_FILE), &scene.height_field)?;
    println!(
        "wrote {}x{} stack ({} phase, {} gray) to {}",
        stack.width(),
        stack.height(),
        stack.phase_images.len(),
        stack.gray_images.len(),
        a.out.display()
    );
    Ok(())
}

fn datagen(a: DatagenArgs, config: &ToolConfig) -> Result<()> {
    log_config(config);
    let calib = rig_calibration(&a.rig)?;
    let scene = SceneDescriptor::from_arg(&a.scene)?.build(&calib)?;
    let opts = DatasetOptions {
        theta_max: a.theta_max,
        delta_theta: a.delta_theta,
        randomization: MaterialRandomization {
            rng_seed: a.seed,
            ..Default::default()
        },
        render: config.render,
        force: a.force,
    };
    let manifest = generate_dataset(&scene, &calib, &opts, &a.out)?;
    println!(
        "wrote {} orientations of {} materials to {}",
        manifest.orientations.len(),
        manifest.num_materials,
        a.out.display()
    );
    Ok(())
}

fn decode_cmd(a: DecodeArgs, config: &ToolConfig) -> Result<()> {
    log_config(config);
    let stack = load_stack(&a.stack)?;
    let (_, absolute, reliability) = decode(&stack, &config.pipeline.thresholds, &config.pipeline.unwrap)?;
    let phase = Image::from_fn(stack.width(), stack.height(), |x, y| {
        if *absolute.valid.get(x, y) {
            *absolute.phase.get(x, y)
        } else {
            f64::NAN
        }
    });
    write_f32_map(&a.out, &phase, "rad")?;
    if let Some(path) = &a.reliability_out {
        save_mask(&reliability.reliable, path)?;
    }
    println!(
        "decoded {} of {} pixels ({} reliable)",
        absolute.valid.count(),
        absolute.valid.len(),
        reliability.reliable.count()
    );
    Ok(())
}

fn reconstruct_cmd(a: ReconstructArgs, config: &ToolConfig) -> Result<()> {
    log_config(config);
    let stack = load_stack(&a.stack)?;
    let calib = stack_calibration(a.calib.as_deref(), &a.stack)?;
    let rec = reconstruct(&stack, &calib, &config.pipeline)?;
    let labels = a
        .labels
        .as_deref()
        .map(|p| load_labels(p, stack.width(), stack.height()).map(|set| label_image(&set)))
        .transpose()?;
    export_pointcloud(&rec.frame, labels.as_ref(), &a.out)?;
    if let Some(path) = &a.depth_out {
        write_f32_map(path, &rec.frame.z, "mm")?;
    }
    println!("reconstructed {} points", rec.frame.valid_count());
    Ok(())
}

fn pipeline_run(a: PipelineRunArgs, mut config: ToolConfig) -> Result<()> {
    let p = &mut config.pipeline;
    if let Some(b) = a.backend {
        p.backend = b;
    }
    if let Some(e) = a.endpoint {
        p.external.endpoint = Some(e);
    }
    if let Some(t) = a.timeout_ms {
        p.external.timeout_ms = t;
    }
    if let Some(c) = a.min_confidence {
        p.min_confidence = c;
    }
    log_config(&config);

    let stack = load_stack(&a.stack)?;
    let calib = stack_calibration(a.calib.as_deref(), &a.stack)?;
    let labels_path = a.labels.unwrap_or_else(|| a.stack.join(LABELS_FILE));
    let annotations = load_labels(&labels_path, stack.width(), stack.height())?;
    let pipeline = Pipeline::new(config.pipeline, Taxonomy::hdd())?;
    let out = pipeline.run(&stack, &annotations, &calib)?;
    for w in &out.diagnostics.warnings {
        log::warn!("{w}");
    }

    if let Some(path) = &a.out {
        export_pointcloud(&out.frame, Some(&label_image(&annotations)), path)?;
    }
    if let Some(path) = &a.depth_out {
        write_f32_map(path, &out.frame.z, "mm")?;
    }
    match &a.diagnostics {
        Some(path) => {
            write_json(path, &out.diagnostics)?;
            println!(
                "state {}, completion {}, {} valid pixels",
                out.state,
                if out.diagnostics.completion_invoked { "invoked" } else { "skipped" },
                out.diagnostics.valid_pixels_after
            );
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&out.diagnostics).expect("diagnostics serialize")
        ),
    }
    Ok(())
}

fn eval_depth(a: EvalDepthArgs) -> Result<()> {
    let pred = read_depth(&a.pred)?;
    let truth = read_depth(&a.gt)?;
    let region = a.region.as_deref().map(load_mask).transpose()?;
    // Metrics only look at depth, so the intrinsics are arbitrary.
    let frame = DepthFrame::from_depth(&pred, Matrix3::identity());
    let metrics = depth_metrics(&frame, &truth, region.as_ref())?;
    let report = DepthReport::new(a.method, metrics);
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

/// Pairs label files by name when both paths are directories.
fn label_pairs(pred: &Path, gt: &Path) -> Result<Vec<(Option<PathBuf>, PathBuf)>> {
    if !gt.is_dir() {
        if pred.is_dir() {
            return Err(Error::Parameter("--pred is a directory but --gt is a file".into()));
        }
        return Ok(vec![(Some(pred.to_path_buf()), gt.to_path_buf())]);
    }
    if !pred.is_dir() {
        return Err(Error::Parameter("--gt is a directory but --pred is a file".into()));
    }
    let mut names = Vec::new();
    for entry in std::fs::read_dir(gt).map_err(|e| Error::io(gt, e))? {
        let path = entry.map_err(|e| Error::io(gt, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            names.push(path);
        }
    }
    names.sort();
    let gt_names: BTreeSet<_> = names.iter().filter_map(|p| p.file_name().map(|n| n.to_owned())).collect();
    for entry in std::fs::read_dir(pred).map_err(|e| Error::io(pred, e))? {
        let path = entry.map_err(|e| Error::io(pred, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") && !gt_names.contains(path.file_name().unwrap_or_default()) {
            return Err(Error::Structure(format!("{} has no ground-truth counterpart", path.display())));
        }
    }
    Ok(names
        .into_iter()
        .map(|g| {
            let p = pred.join(g.file_name().expect("listed file"));
            (p.exists().then_some(p), g)
        })
        .collect())
}

fn eval_detect(a: EvalDetectArgs) -> Result<()> {
    let (w, h) = a.image_size;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (pred, gt) in label_pairs(&a.pred, &a.gt)? {
        gts.push(load_labels(&gt, w, h)?);
        preds.push(match pred {
            Some(p) => load_labels(&p, w, h)?,
            None => AnnotationSet::empty(w, h),
        });
    }
    let metrics = detection_metrics(&preds, &gts, a.mode, &coco_thresholds())?;
    let report = DetectionReport::new(&metrics, &Taxonomy::hdd());
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn bench_cmd(a: BenchArgs, config: &ToolConfig) -> Result<()> {
    let mut bench = config.bench;
    if let Some(w) = a.warmup {
        bench.warmup = w;
    }
    if let Some(i) = a.iters {
        bench.iters = i as usize;
    }
    log_config(&ToolConfig { bench, ..config.clone() });

    let fixture = match &a.stack {
        Some(dir) => {
            let stack = load_stack(dir)?;
            let calib = stack_calibration(a.calib.as_deref(), dir)?;
            let labels = a.labels.clone().unwrap_or_else(|| dir.join(LABELS_FILE));
            let annotations = load_labels(&labels, stack.width(), stack.height())?;
            let mut f = BenchFixture::from_stack(stack, annotations, calib)?;
            f.config = config.pipeline.clone();
            f
        }
        None => BenchFixture::synthetic(a.seed)?,
    };
    log::info!("fixture {} ready; timing {}", fixture.input_shape(), a.stage.name());
    let report = bench_stage(&fixture, a.stage, bench.warmup, bench.iters)?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn patterns_export(a: PatternsExportArgs) -> Result<()> {
    let params = PatternParams {
        projector_width: a.width,
        projector_height: a.height,
        fringe_period: a.period,
        num_shifts: a.shifts,
        num_gray_bits: a.gray_bits,
        orientation: a.orientation,
    };
    let set = match a.defocus {
        Some(r) => PatternSet::defocused(&params, r)?,
        None => PatternSet::ideal(&params)?,
    };
    set.export(&a.out)?;
    write_json(&a.out.join("params.json"), &params)?;
    println!(
        "wrote {} phase, {} gray and 1 white pattern to {}",
        set.num_shifts(),
        set.num_gray_bits(),
        a.out.display()
    );
    Ok(())
}

fn completion_stub(a: StubArgs) -> Result<()> {
    let handler = guidance_plane(a.scale, a.offset);
    if a.stdio {
        let stdin = std::io::stdin();
        let stdout = std::io::stdout();
        return serve_connection(
            &mut BufReader::new(stdin.lock()),
            &mut BufWriter::new(stdout.lock()),
            a.max_in_flight,
            handler,
        );
    }
    let listen = a.listen.as_deref().expect("clap requires --listen without --stdio");
    let serve = |r: &mut dyn std::io::Read, w: &mut dyn std::io::Write| {
        if let Err(e) = serve_connection(&mut BufReader::new(r), &mut BufWriter::new(w), a.max_in_flight, &handler) {
            log::warn!("connection ended: {e}");
        }
    };
    match listen.parse::<Endpoint>()? {
        Endpoint::Tcp(addr) => {
            let listener = std::net::TcpListener::bind(&addr).map_err(|e| Error::Backend(format!("bind {addr}: {e}")))?;
            let local = listener.local_addr().map_err(|e| Error::Backend(e.to_string()))?;
            println!("listening on tcp://{local}");
            for stream in listener.incoming() {
                let stream = stream.map_err(|e| Error::Backend(e.to_string()))?;
                stream.set_read_timeout(Some(Duration::from_secs(300))).ok();
                let mut reader = stream.try_clone().map_err(|e| Error::Backend(e.to_string()))?;
                let mut writer = stream;
                serve(&mut reader, &mut writer);
                if a.once {
                    break;
                }
            }
            Ok(())
        }
        #[cfg(unix)]
        Endpoint::Unix(path) => {
            let listener = std::os::unix::net::UnixListener::bind(&path)
                .map_err(|e| Error::Backend(format!("bind {}: {e}", path.display())))?;
            println!("listening on unix:{}", path.display());
            for stream in listener.incoming() {
                let stream = stream.map_err(|e| Error::Backend(e.to_string()))?;
                let mut reader = stream.try_clone().map_err(|e| Error::Backend(e.to_string()))?;
                let mut writer = stream;
                serve(&mut reader, &mut writer);
                if a.once {
                    break;
                }
            }
            let _ = std::fs::remove_file(&path);
            Ok(())
        }
        other => Err(Error::Parameter(format!("cannot listen on {other:?}; use tcp:// or unix:"))),
    }
}
