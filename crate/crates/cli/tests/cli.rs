use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fringescan"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fringescan")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn decode_writes_phase_map() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("phase.f32");
    let res = run(&["decode", "--stack", s(&fixture("plane")), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 128 * 128 * 4);
    let header = read_json(&out.with_extension("json"));
    assert_eq!(header["units"], "rad");
    assert_eq!(header["width"], 128);
}

#[test]
fn pipeline_completes_platter_frame() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("diag.json");
    let ply = dir.path().join("cloud.ply");
    let res = run(&[
        "pipeline",
        "run",
        "--stack",
        s(&fixture("specular-platter")),
        "--backend",
        "harmonic",
        "--diagnostics",
        s(&diag),
        "--out",
        s(&ply),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let d = read_json(&diag);
    assert_eq!(d["state"], "PlatterFacing");
    assert_eq!(d["completion_invoked"], true);
    assert!(d["valid_pixels_after"].as_u64() > d["valid_pixels_before"].as_u64());
    assert!(std::fs::read(&ply).unwrap().starts_with(b"ply"));
}

#[test]
fn pipeline_skips_completion_on_pcb_frame() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("diag.json");
    let res = run(&["pipeline", "run", "--stack", s(&fixture("pcb")), "--diagnostics", s(&diag)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let d = read_json(&diag);
    assert_eq!(d["state"], "PcbFacing");
    assert_eq!(d["completion_invoked"], false);
}

#[test]
fn pipeline_uses_external_stub_over_exec() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("diag.json");
    let endpoint = format!("exec:{} completion-stub --stdio --offset 510", env!("CARGO_BIN_EXE_fringescan"));
    let res = run(&[
        "pipeline",
        "run",
        "--stack",
        s(&fixture("specular-platter")),
        "--backend",
        "external",
        "--endpoint",
        &endpoint,
        "--diagnostics",
        s(&diag),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let d = read_json(&diag);
    assert_eq!(d["completion_invoked"], true);
    assert_eq!(d["backend"], "external");
}

#[test]
fn external_backend_falls_back_when_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("diag.json");
    let res = run(&[
        "pipeline",
        "run",
        "--stack",
        s(&fixture("specular-platter")),
        "--backend",
        "external-with-fallback",
        "--endpoint",
        "tcp://127.0.0.1:1",
        "--timeout-ms",
        "500",
        "--diagnostics",
        s(&diag),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(read_json(&diag)["completion_invoked"], true);
}

#[test]
fn self_evaluation_is_perfect() {
    let labels = fixture("pcb").join("labels.txt");
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let res = run(&[
        "eval",
        "detect",
        "--pred",
        s(&labels),
        "--gt",
        s(&labels),
        "--image-size",
        "128x128",
        "--out",
        s(&report),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(stdout(&res).contains("Overall"));
    let r = read_json(&report);
    assert_eq!(r["map50"], 1.0);
    assert_eq!(r["map50_95"], 1.0);
}

#[test]
fn depth_evaluation_of_ground_truth_is_zero_error() {
    let depth = fixture("plane").join("depth.f32");
    let res = run(&["eval", "depth", "--pred", s(&depth), "--gt", s(&depth)]);
    assert!(res.status.success(), "{}", stderr(&res));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let render = |name: &str| {
        let out = dir.path().join(name);
        let res = run(&[
            "simulate",
            "--scene",
            "ramp",
            "--out",
            s(&out),
            "--camera-size",
            "48x40",
            "--camera-focal",
            "120",
            "--seed",
            "11",
            "--shifts",
            "4",
        ]);
        assert!(res.status.success(), "{}", stderr(&res));
        out
    };
    let (a, b) = (render("a"), render("b"));
    for name in ["phase_00.png", "phase_03.png", "gray_05.png", "depth.f32", "labels.txt"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn simulate_refuses_non_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep"), b"x").unwrap();
    let res = run(&["simulate", "--scene", "plane", "--out", s(dir.path()), "--camera-size", "16x16"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("error[output-exists]"), "{}", stderr(&res));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["decode", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--stage", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--iters", "0"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["decode", "--stack", s(&dir.path().join("missing")), "--out", s(&dir.path().join("p.f32"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).starts_with("error[io]"), "{}", stderr(&res));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0 0.1 0.1 0.2\n").unwrap();
    let res = run(&["eval", "detect", "--pred", s(&bad), "--gt", s(&bad)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).starts_with("error[format]"), "{}", stderr(&res));
}

#[test]
fn bench_reports_fps() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.json");
    let res = run(&[
        "bench",
        "--stage",
        "wrapped-phase",
        "--stack",
        s(&fixture("plane")),
        "--warmup",
        "1",
        "--iters",
        "3",
        "--out",
        s(&report),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let r = read_json(&report);
    assert!(r["throughput_fps"].as_f64().unwrap() > 0.0, "{r}");
}

#[test]
fn patterns_export_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "patterns", "export", "--out", s(dir.path()), "--width", "64", "--height", "32", "--period", "8", "--shifts", "4",
        "--gray-bits", "3",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let pngs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 4 + 3 + 1);
}
