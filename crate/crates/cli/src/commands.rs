use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use splat7d::image::Image;
use splat7d::io::synthetic::{generate_synthetic, GeneratorSpec};
use splat7d::io::{load_checkpoint, load_dataset, save_checkpoint, write_image, Checkpoint, SceneDataset, Split};
use splat7d::render::render;
use splat7d::slice::slice;
use splat7d::train::{fit, fit_from, LogRecord, TrainConfig, TrainState};
use splat7d::{CameraFrame, OpacityMode, SlicingMode};

use crate::config::{layered, to_toml};
use crate::{CliError, Command, OpacityModeArg, SlicingModeArg, SplitArg, EXIT_OK, EXIT_VERIFY};

pub const CHECKPOINT_NAME: &str = "checkpoint.s7dc";
pub const METRICS_NAME: &str = "metrics.jsonl";
pub const CONFIG_NAME: &str = "config.toml";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Generate { out, seed, cfg } => {
            let spec: GeneratorSpec = layered(cfg.config.as_deref(), &cfg.sets)?;
            let scene = generate_synthetic(&spec, seed)?;
            let ds = scene.write(&out)?;
            write_text(&out.join("generator.toml"), &format!("seed = {seed}\n{}", to_toml(&spec)))?;
            println!(
                "wrote {} frames ({} train, {} test) and {} hidden Gaussians to {}",
                ds.len(),
                ds.indices(Split::Train).len(),
                ds.indices(Split::Test).len(),
                scene.cloud.len(),
                out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Train { manifest, out, cfg, seed, iterations, lambda_t, lambda_d, no_agr, opacity_mode, slicing_mode, resume } => {
            let mut config: TrainConfig = layered(cfg.config.as_deref(), &cfg.sets)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(n) = iterations {
                config.iterations = n;
            }
            if let Some(v) = lambda_t {
                config.render.slice.lambda_t = v;
            }
            if let Some(v) = lambda_d {
                config.render.slice.lambda_d = v;
            }
            if no_agr {
                config.agr = false;
            }
            if let Some(m) = opacity_mode {
                config.render.slice.opacity_mode = match m {
                    OpacityModeArg::Product => OpacityMode::Product,
                    OpacityModeArg::SqrtProduct => OpacityMode::SqrtProduct,
                };
            }
            if let Some(m) = slicing_mode {
                config.render.slice.slicing_mode = match m {
                    SlicingModeArg::Joint => SlicingMode::Joint,
                    SlicingModeArg::TwoStage => SlicingMode::TwoStage,
                };
            }
            config.validate()?;
            train(&manifest, &out, &config, resume.as_deref())
        }
        Command::Render { checkpoint, out, manifest, frame, time, eye, target, up, fov, width, height } => {
            let ck = load_checkpoint(&checkpoint)?;
            let cam = match (manifest, eye) {
                (Some(m), _) => {
                    let ds = load_dataset(&m)?;
                    let i = frame.expect("clap enforces --frame");
                    let mut cam = ds.frames.get(i).ok_or_else(|| CliError::usage(format!("--frame {i} is out of range (dataset has {})", ds.len())))?.camera.clone();
                    if let Some(t) = time {
                        cam.time = t;
                    }
                    cam
                }
                (None, Some(e)) => {
                    if !(fov > 0.0 && fov < 180.0) || width == 0 || height == 0 {
                        return Err(CliError::usage("--fov must lie in (0, 180) and the image must be non-empty"));
                    }
                    CameraFrame::look_at(Vector3::from(e), Vector3::from(target), Vector3::from(up), fov, width, height, time.unwrap_or(0.0))
                }
                (None, None) => return Err(CliError::usage("give either --manifest with --frame, or --eye")),
            };
            cam.validate()?;
            let fb = render::<f32>(&ck.cloud, ck.nets.as_ref(), &cam, &ck.settings)?;
            write_image(&out, &Image::from_frame(&fb))?;
            println!("wrote {}x{} image at t={} to {}", cam.width, cam.height, cam.time, out.display());
            Ok(EXIT_OK)
        }
        Command::Eval { checkpoint, manifest, split, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&manifest)?;
            let table = eval_table(&ck, &ds, split)?;
            print!("{table}");
            if let Some(p) = out {
                write_text(&p, &table)?;
            }
            Ok(EXIT_OK)
        }
        Command::Bench { checkpoint, manifest, frames, width, height } => {
            let ck = load_checkpoint(&checkpoint)?;
            let cams = match manifest {
                Some(m) => load_dataset(&m)?.frames.into_iter().map(|f| f.camera).collect(),
                None => orbit_cameras(&ck, frames.max(1), width, height),
            };
            print!("{}", bench(&ck, &cams, frames)?);
            Ok(EXIT_OK)
        }
        Command::Verify { quick } => {
            let reports = splat7d::verify::run_all(quick);
            let mut ok = true;
            for r in &reports {
                ok &= r.passed;
                println!("{}\t{}\t{}\t{:.2}s", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail, r.seconds);
            }
            Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

fn train(manifest: &Path, out: &Path, cfg: &TrainConfig, resume: Option<&Path>) -> Result<i32, CliError> {
    let ds = load_dataset(manifest)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_text(&out.join(CONFIG_NAME), &to_toml(cfg))?;
    let metrics_path = out.join(METRICS_NAME);
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .truncate(false)
        .open(&metrics_path)
        .map_err(|e| io_err(&metrics_path, e))?;
    if resume.is_none() {
        metrics.set_len(0).map_err(|e| io_err(&metrics_path, e))?;
    }
    let mut write_error = None;
    let on_record = |r: &LogRecord| {
        let line = serde_json::to_string(r).expect("record serializes");
        if let Err(e) = writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
            write_error.get_or_insert(e);
        }
        eprintln!("iter {:>6}  loss {:.5}  psnr {:6.2}  points {:>7}  {:>8} ms", r.iteration, r.loss, r.psnr, r.num_points, r.wall_ms);
    };
    let output = match resume {
        Some(p) => {
            let cams: Vec<CameraFrame> = ds.frames.iter().map(|f| f.camera.clone()).collect();
            let state = TrainState::from_checkpoint(load_checkpoint(p)?, &cams, cfg);
            fit_from(state, &ds, cfg, on_record)?
        }
        None => fit(&ds, cfg, on_record)?,
    };
    if let Some(e) = write_error {
        return Err(io_err(&metrics_path, e));
    }
    let ck_path = out.join(CHECKPOINT_NAME);
    save_checkpoint(&ck_path, &output.state.checkpoint())?;
    println!("wrote {} ({} Gaussians, iteration {})", ck_path.display(), output.state.cloud.len(), output.state.iteration);
    Ok(EXIT_OK)
}

/// Tab-separated per-frame metrics followed by a `mean` row.
pub fn eval_table(ck: &Checkpoint, ds: &SceneDataset, split: SplitArg) -> Result<String, CliError> {
    let indices: Vec<usize> = match split {
        SplitArg::Train => ds.indices(Split::Train),
        SplitArg::Test => ds.indices(Split::Test),
        SplitArg::All => (0..ds.len()).collect(),
    };
    if indices.is_empty() {
        return Err(CliError::usage("the selected split has no frames"));
    }
    let mut table = String::from("frame\tsplit\ttime\tpsnr\tssim\n");
    let (mut sp, mut ss) = (0.0, 0.0);
    for &i in &indices {
        let f = &ds.frames[i];
        let target = ds.load_image(i)?;
        let fb = render::<f64>(&ck.cloud, ck.nets.as_ref(), &f.camera, &ck.settings)?;
        let pred = Image::from_frame(&fb);
        let p = splat7d::metrics::psnr(&pred, &target)?;
        let s = splat7d::metrics::ssim(&pred, &target)?;
        sp += p;
        ss += s;
        let name = match f.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        table.push_str(&format!("{i}\t{name}\t{}\t{p:.4}\t{s:.6}\n", f.time));
    }
    let n = indices.len() as f64;
    let name = format!("{split:?}").to_lowercase();
    table.push_str(&format!("mean\t{name}\t-\t{:.4}\t{:.6}\n", sp / n, ss / n));
    Ok(table)
}

/// Cameras circling the cloud's centroid at three times its RMS radius.
fn orbit_cameras(ck: &Checkpoint, count: usize, width: usize, height: usize) -> Vec<CameraFrame> {
    let n = ck.cloud.len().max(1) as f64;
    let centroid = ck.cloud.iter().map(|g| Vector3::from(g.mu_p)).sum::<Vector3<f64>>() / n;
    let rms = (ck.cloud.iter().map(|g| (Vector3::from(g.mu_p) - centroid).norm_squared()).sum::<f64>() / n).sqrt();
    let radius = 3.0 * rms.max(1e-3);
    (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let eye = centroid + radius * Vector3::new(0.94 * a.cos(), 0.94 * a.sin(), 0.34);
            CameraFrame::look_at(eye, centroid, Vector3::z(), 50.0, width, height, t)
        })
        .collect()
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Single-threaded slicing of the whole cloud, then `frames` timed renders.
pub fn bench(ck: &Checkpoint, cams: &[CameraFrame], frames: usize) -> Result<String, CliError> {
    if cams.is_empty() {
        return Err(CliError::usage("no cameras to benchmark with"));
    }
    let cam = &cams[0];
    let center = cam.center();
    let start = Instant::now();
    let mut sliced = 0usize;
    for g in &ck.cloud {
        let d = (Vector3::from(g.mu_p) - center).normalize();
        if slice(g, cam.time, &d, &ck.settings.slice).is_ok() {
            sliced += 1;
        }
    }
    let slice_s = start.elapsed().as_secs_f64();

    let mut times = Vec::with_capacity(frames);
    for i in 0..frames {
        let c = &cams[i % cams.len()];
        let t0 = Instant::now();
        render::<f32>(&ck.cloud, ck.nets.as_ref(), c, &ck.settings)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut out = String::new();
    out.push_str(&format!("gaussians\t{}\n", ck.cloud.len()));
    out.push_str(&format!("sliced\t{sliced}\n"));
    out.push_str(&format!("slice_seconds\t{slice_s:.6}\n"));
    out.push_str(&format!("slice_gaussians_per_second\t{:.1}\n", ck.cloud.len() as f64 / slice_s.max(1e-12)));
    if !times.is_empty() {
        let total: f64 = times.iter().sum();
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        out.push_str(&format!("frames\t{frames}\n"));
        out.push_str(&format!("resolution\t{}x{}\n", cams[0].width, cams[0].height));
        out.push_str(&format!("fps\t{:.3}\n", frames as f64 / (total / 1e3)));
        for p in [50.0, 90.0, 99.0] {
            out.push_str(&format!("p{}_ms\t{:.3}\n", p as u32, percentile(&sorted, p)));
        }
    }
    Ok(out)
}
