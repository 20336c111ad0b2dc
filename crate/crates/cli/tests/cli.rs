use std::path::{Path, PathBuf};
use std::process::Command;

use bodyfit::array_io::PointsFile;
use bodyfit::fitter::ResultFile;
use bodyfit::heatmap::{DecodeGrid, HeatmapFile, HeatmapStack};
use nalgebra::Vector3;

fn bodyfit(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_bodyfit")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "bodyfit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth", "--seed", "0", "--cases", "6", "--out", p(&data)];
    args.extend_from_slice(extra);
    bodyfit(&args);
    data
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), &[]);
    let b = synth(&dir.path().join("b"), &[]);
    assert_eq!(read(&a.join("model.json")), read(&b.join("model.json")));
    for case in 0..6 {
        let name = format!("targets/case_{case:04}.json");
        assert_eq!(read(&a.join(&name)), read(&b.join(&name)));
    }
    let c = dir.path().join("c");
    bodyfit(&["synth", "--seed", "1", "--cases", "6", "--out", p(&c)]);
    assert_ne!(read(&a.join("targets/case_0000.json")), read(&c.join("targets/case_0000.json")));
}

#[test]
fn synth_records_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &["--noise", "0.005"]);
    let m = manifest(&data.join("manifest.json"));
    assert_eq!(m["info"]["noise_m"], 0.005);
    assert_eq!(m["command"], "synth");
}

#[test]
fn noise_free_fit_recovers_targets() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let out = dir.path().join("fit");
    let pattern = format!("{}/targets/*.json", data.display());
    let stdout = bodyfit(&[
        "fit", "--model", p(&data.join("model.json")), "--targets", &pattern, "--lambda", "0", "--out", p(&out),
    ]);
    assert!(stdout.contains("vertex RMSE"));
    for case in 0..6 {
        let r = ResultFile::load(&out.join(format!("case_{case:04}.result.json"))).unwrap();
        assert!(r.diagnostics.unwrap().final_vertex_rmse < 1e-3);
    }
    let m = manifest(&out.join("manifest.json"));
    // model plus six targets, each hashed
    assert_eq!(m["inputs"].as_array().unwrap().len(), 7);
    assert_eq!(m["info"]["resolved_config"]["ridge_lambda"], 0.0);
    let summary: serde_json::Value = serde_json::from_slice(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["per_iteration_mean_vertex_rmse"].as_array().unwrap().len(), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &["--noise", "0.005"]);
    let pattern = format!("{}/targets/*.json", data.display());
    let model = data.join("model.json");
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        bodyfit(&["fit", "--model", p(&model), "--targets", &pattern, "--threads", threads, "--out", p(&out)]);
    }
    for case in 0..6 {
        let name = format!("case_{case:04}.result.json");
        assert_eq!(read(&dir.path().join("t1").join(&name)), read(&dir.path().join("t4").join(&name)));
    }
    assert_eq!(read(&dir.path().join("t1/summary.json")), read(&dir.path().join("t4/summary.json")));
}

#[test]
fn shared_beta_and_presets_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &["--views", "3", "--noise", "0.002"]);
    let model = data.join("model.json");
    let views: Vec<String> = (0..3).map(|i| format!("{}/targets/case_{i:04}.json", data.display())).collect();
    let out = dir.path().join("shared");
    let mut args = vec!["fit", "--model", p(&model), "--shared-beta", "--out", p(&out), "--targets"];
    args.extend(views.iter().map(String::as_str));
    bodyfit(&args);
    let betas: Vec<_> = (0..3)
        .map(|i| ResultFile::load(&out.join(format!("case_{i:04}.result.json"))).unwrap().pose().unwrap().beta)
        .collect();
    assert_eq!(betas[0], betas[1]);
    assert_eq!(betas[1], betas[2]);

    let subset = dir.path().join("subset.json");
    std::fs::write(&subset, serde_json::to_vec(&(0..602).step_by(4).collect::<Vec<usize>>()).unwrap()).unwrap();
    let out = dir.path().join("sub");
    bodyfit(&["fit", "--model", p(&model), "--targets", &views[0], "--subset", p(&subset), "--out", p(&out)]);
    let out = dir.path().join("transfer");
    bodyfit(&["fit", "--model", p(&model), "--targets", &views[0], "--preset", "transfer", "--out", p(&out)]);
    let m = manifest(&out.join("manifest.json"));
    assert_eq!(m["info"]["resolved_config"]["n_iters"], 1);
}

#[test]
fn heteroscedastic_targets_fit_with_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &["--sigma-range", "0.002,0.03"]);
    let out = dir.path().join("fit");
    let pattern = format!("{}/targets/*.json", data.display());
    bodyfit(&[
        "fit", "--model", p(&data.join("model.json")), "--targets", &pattern, "--uncertainty-weights", "--out", p(&out),
    ]);
    assert!(out.join("case_0005.result.json").exists());
}

#[test]
fn decode_places_points_in_camera() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w, d) = (8, 8, 8);
    let points = 3;
    let mut h3d = vec![0.0; points * h * w * d];
    let mut h2d = vec![0.0; points * h * w];
    for k in 0..points {
        h3d[k * h * w * d + ((2 + k) * w + 3) * d + 4] = 40.0;
        h2d[k * h * w + (1 + 2 * k) * w + 2 + k] = 40.0;
    }
    let u = vec![0.0; points * h * w];
    let stack = HeatmapStack::new(points, h, w, d, h3d, h2d, u).unwrap();
    let heatmaps = dir.path().join("hm.json");
    HeatmapFile::from_stack(&stack, DecodeGrid::default()).save(&heatmaps).unwrap();
    let out = dir.path().join("decoded.json");
    bodyfit(&["decode", "--heatmaps", p(&heatmaps), "--intrinsics", "500,500,4,4", "--out", p(&out)]);
    let v: serde_json::Value = serde_json::from_slice(&read(&out)).unwrap();
    assert!(v.get("points3d_camera").is_some());
    assert!(dir.path().join("decoded.manifest.json").exists());
}

#[test]
fn eigs_gps_weights_and_deform_chain() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("cube.json");
    let basis = dir.path().join("basis.json");
    let stdout = bodyfit(&["eigs", "--cube", "4", "--num", "6", "--mesh-out", p(&mesh), "--out", p(&basis)]);
    assert!(stdout.contains("6 eigenpairs"));
    let pts = dir.path().join("pts.json");
    PointsFile::save(&pts, &[Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.1, 0.9, 0.3)]).unwrap();
    let sig = dir.path().join("gps.json");
    bodyfit(&["gps", "--mesh", p(&mesh), "--basis", p(&basis), "--points", p(&pts), "--out", p(&sig)]);
    let v: serde_json::Value = serde_json::from_slice(&read(&sig)).unwrap();
    assert_eq!(v["gps"]["shape"], serde_json::json!([2, 6]));

    let data = synth(dir.path(), &[]);
    let model = bodyfit::BodyModel::load(&data.join("model.json")).unwrap();
    let canonical: Vec<_> = model.template_vertices().iter().step_by(50).map(|v| v * 0.98).collect();
    let cpts = dir.path().join("canonical.json");
    PointsFile::save(&cpts, &canonical).unwrap();
    let weights = dir.path().join("weights.json");
    bodyfit(&["weights", "--model", p(&data.join("model.json")), "--points", p(&cpts), "--out", p(&weights)]);
    let moved = dir.path().join("moved.json");
    bodyfit(&[
        "deform", "--weights", p(&weights), "--model", p(&data.join("model.json")),
        "--result", p(&data.join("truth/case_0000.json")), "--out", p(&moved),
    ]);
    assert_eq!(PointsFile::load(&moved).unwrap().len(), canonical.len());
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    bodyfit(&["bench", "--batch-sizes", "4", "--subset-sizes", "0,100", "--threads", "1", "--out", p(&csv)]);
    let text = String::from_utf8(read(&csv)).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("batch,subset,threads,seconds"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_bodyfit"))
        .args(["fit", "--model", "/nonexistent/model.json", "--targets", "x.json", "--out", "/tmp/never"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading model"));
}
