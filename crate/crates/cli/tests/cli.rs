use std::path::Path;
use std::process::{Command, Output};

use nalgebra::Vector3;
use splat7d::gaussian::logit;
use splat7d::image::Image;
use splat7d::io::{load_checkpoint, load_dataset, read_image, save_checkpoint, Checkpoint};
use splat7d::train::{TrainConfig, TrainState};
use splat7d::{CameraFrame, Gaussian7D, RenderSettings};

fn splat7d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splat7d")).args(args).env_remove("S7D_WORKERS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SCENE: [&str; 8] =
    ["--set", "num_gaussians=20", "--set", "num_frames=6", "--set", "width=24", "--set", "height=24"];

fn generate_small(out: &Path, seed: &str) {
    let mut args = vec!["generate", "--out", p(out), "--seed", seed];
    args.extend(SMALL_SCENE);
    let o = splat7d(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn generate_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = splat7d(&["generate", "--out", p(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ds = load_dataset(&a.join("manifest.toml")).unwrap();
    assert_eq!(ds.len(), 30);
    assert!(a.join("hidden.s7dc").exists());
    assert_eq!(load_checkpoint(&a.join("hidden.s7dc")).unwrap().cloud.len(), 100);

    let b = dir.path().join("b");
    assert_eq!(splat7d(&["generate", "--out", p(&b)]).status.code(), Some(0));
    for name in ["manifest.toml", "frames/0007.s7df", "hidden.s7dc"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert_eq!(splat7d(&["generate", "--out", p(&c), "--seed", "9"]).status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("hidden.s7dc")).unwrap(), std::fs::read(c.join("hidden.s7dc")).unwrap());
}

#[test]
fn invalid_generator_spec_exits_2_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = splat7d(&["generate", "--out", p(dir.path()), "--set", "num_gaussians=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("num_gaussians"), "{}", stderr(&o));

    let o = splat7d(&["generate", "--out", p(dir.path()), "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(splat7d(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(splat7d(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(splat7d(&["--workers", "0", "verify", "--quick"]).status.code(), Some(2));
    let o = splat7d(&["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let help = stdout(&o);
    for flag in ["--manifest", "--out", "--config", "--set", "--seed", "--iterations", "--no-agr", "--lambda-t", "--resume"] {
        assert!(help.contains(flag), "help lacks {flag}");
    }
}

#[test]
fn missing_files_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = splat7d(&["eval", "--checkpoint", p(&dir.path().join("none.s7dc")), "--manifest", p(&dir.path().join("m.toml"))]);
    assert_eq!(o.status.code(), Some(1));
    let garbage = dir.path().join("garbage.s7dc");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = splat7d(&["render", "--checkpoint", p(&garbage), "--out", p(&dir.path().join("x.png")), "--eye", "0,-3,0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_iterations_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    generate_small(&scene, "3");
    let run = dir.path().join("run");
    let manifest = scene.join("manifest.toml");
    let o = splat7d(&["train", "--manifest", p(&manifest), "--out", p(&run), "--iterations", "0", "--seed", "5", "--set", "init.count=40"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let saved = load_checkpoint(&run.join("checkpoint.s7dc")).unwrap();

    let cfg: TrainConfig = toml::from_str(&std::fs::read_to_string(run.join("config.toml")).unwrap()).unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.init.count, 40);
    let ds = load_dataset(&manifest).unwrap();
    let cams: Vec<CameraFrame> = ds.frames.iter().map(|f| f.camera.clone()).collect();
    let expected = TrainState::initialize(&cams, &cfg).unwrap().checkpoint();
    assert_eq!(saved, expected);
    assert_eq!(saved.iteration, 0);
    assert!(saved.nets.is_some());
}

#[test]
fn no_agr_writes_an_empty_network_section() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    generate_small(&scene, "4");
    let run = dir.path().join("run");
    let o = splat7d(&[
        "train", "--manifest", p(&scene.join("manifest.toml")), "--out", p(&run), "--iterations", "3", "--no-agr", "--set", "init.count=30",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(run.join("checkpoint.s7dc")).unwrap();
    let p_count = u64::from_le_bytes(bytes[112..120].try_into().unwrap());
    let k = u32::from_le_bytes(bytes[104..108].try_into().unwrap());
    assert_eq!((p_count, k), (0, 0));
    let ck = load_checkpoint(&run.join("checkpoint.s7dc")).unwrap();
    assert!(ck.nets.is_none());
    assert_eq!(ck.iteration, 3);
    let lines = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);
}

#[test]
fn render_puts_the_brightest_pixel_on_the_projected_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = Gaussian7D::isotropic([0.3, 0.1, 0.2], 0.4, [0.0, -1.0, 0.0], 0.05, 0.2, 1.0);
    g.opacity_logit = logit(0.9);
    g.sh[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
    let ck = Checkpoint { iteration: 0, settings: RenderSettings::default(), cloud: vec![g.clone()], nets: None };
    let path = dir.path().join("one.s7dc");
    save_checkpoint(&path, &ck).unwrap();
    let out = dir.path().join("one.s7df");
    let o = splat7d(&[
        "render", "--checkpoint", p(&path), "--out", p(&out), "--eye", "0,-4,0.5", "--time", "0.4", "--width", "64", "--height", "48",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let img: Image = read_image(&out).unwrap();
    assert_eq!((img.width, img.height), (64, 48));
    let mut best = (0, 0, -1.0f32);
    for y in 0..img.height {
        for x in 0..img.width {
            let v = img.pixel(x, y).iter().sum::<f32>();
            if v > best.2 {
                best = (x, y, v);
            }
        }
    }
    let cam = CameraFrame::look_at(Vector3::new(0.0, -4.0, 0.5), Vector3::zeros(), Vector3::z(), 50.0, 64, 48, 0.4);
    let [u, v] = cam.project_point(&Vector3::from(g.mu_p));
    assert!((best.0 as f64 + 0.5 - u).abs() <= 1.0 && (best.1 as f64 + 0.5 - v).abs() <= 1.0, "brightest {best:?}, projection ({u}, {v})");

    // far from the Gaussian's time the frame is background
    let late = dir.path().join("late.s7df");
    let o = splat7d(&["render", "--checkpoint", p(&path), "--out", p(&late), "--eye", "0,-4,0.5", "--time", "3.0", "--width", "64", "--height", "48"]);
    assert_eq!(o.status.code(), Some(0));
    let img = read_image(&late).unwrap();
    assert!(img.data.iter().all(|&v| v.abs() < 1e-3));
}

#[test]
fn eval_on_training_frames_matches_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    generate_small(&scene, "6");
    let run = dir.path().join("run");
    let manifest = scene.join("manifest.toml");
    let o = splat7d(&[
        "train", "--manifest", p(&manifest), "--out", p(&run), "--iterations", "300", "--no-agr",
        "--set", "init.count=60", "--set", "densify.from=100000", "--set", "log_interval=50",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["iteration"], 300);
    let logged = last["psnr"].as_f64().unwrap();

    let table_path = run.join("eval.tsv");
    let o = splat7d(&["eval", "--checkpoint", p(&run.join("checkpoint.s7dc")), "--manifest", p(&manifest), "--split", "train", "--out", p(&table_path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table, std::fs::read_to_string(&table_path).unwrap());
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("frame\tsplit\ttime\tpsnr\tssim"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    let ds = load_dataset(&manifest).unwrap();
    assert_eq!(rows.len(), ds.indices(splat7d::io::Split::Train).len() + 1);
    let mean = rows.last().unwrap();
    assert_eq!(mean[0], "mean");
    let psnr: f64 = mean[3].parse().unwrap();
    assert!(psnr >= logged - 0.1, "eval {psnr} vs logged {logged}");
}

#[test]
fn bench_reports_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    generate_small(&scene, "7");
    let o = splat7d(&["bench", "--checkpoint", p(&scene.join("hidden.s7dc")), "--frames", "4", "--width", "32", "--height", "32"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for key in ["gaussians", "sliced", "slice_seconds", "slice_gaussians_per_second", "frames", "resolution", "fps", "p50_ms", "p90_ms", "p99_ms"] {
        assert!(text.lines().any(|l| l.split('\t').next() == Some(key)), "missing {key}");
    }
    assert!(text.contains("gaussians\t20\n"));
    assert!(text.contains("resolution\t32x32\n"));
}

#[test]
fn verify_quick_passes() {
    let o = splat7d(&["--workers", "2", "verify", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 6);
}

#[test]
fn resume_continues_the_iteration_count() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    generate_small(&scene, "8");
    let manifest = scene.join("manifest.toml");
    let run = dir.path().join("run");
    let common = ["--no-agr", "--set", "init.count=30", "--set", "log_interval=5"];
    let mut a = vec!["train", "--manifest", p(&manifest), "--out", p(&run), "--iterations", "5"];
    a.extend(common);
    assert_eq!(splat7d(&a).status.code(), Some(0));
    let ck = run.join("checkpoint.s7dc");
    let first = dir.path().join("first.s7dc");
    std::fs::copy(&ck, &first).unwrap();
    let mut b = vec!["train", "--manifest", p(&manifest), "--out", p(&run), "--iterations", "10", "--resume", p(&first)];
    b.extend(common);
    let o = splat7d(&b);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(load_checkpoint(&ck).unwrap().iteration, 10);
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let iters: Vec<u64> = log.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["iteration"].as_u64().unwrap()).collect();
    assert_eq!(iters, vec![5, 10]);
}

#[test]
fn invalid_manifest_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    generate_small(&scene, "9");
    let manifest = scene.join("manifest.toml");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let first_time = text.lines().find(|l| l.starts_with("time = ")).unwrap().to_owned();
    std::fs::write(&manifest, text.replacen(&first_time, "time = 5.0", 1)).unwrap();
    let o = splat7d(&["eval", "--checkpoint", p(&scene.join("hidden.s7dc")), "--manifest", p(&manifest)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("frames[0].time"), "{}", stderr(&o));
}
