//! TOML dataset manifests. Field-by-field description in `docs/formats.md`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    near: f64,
    far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FrameEntry {
    image: String,
    time: f64,
    split: Split,
    camera: CameraRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    width: usize,
    height: usize,
    time_span: [f64; 2],
    frames: Vec<FrameEntry>,
}

/// One posed, timestamped image. `camera.time` is already normalized to
/// `[0, 1]`; `time` keeps the manifest's raw value.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub camera: CameraFrame,
    pub time: f64,
    /// As written in the manifest, relative to its directory.
    pub image: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    /// Directory that image paths are resolved against.
    pub root: PathBuf,
    pub width: usize,
    pub height: usize,
    pub time_span: (f64, f64),
    pub frames: Vec<FrameRecord>,
}

fn manifest_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Manifest { field: field.into(), message: message.into() }
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.frames.len()).filter(|i| self.frames[*i].split == split).collect()
    }

    pub fn image_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.frames[index].image)
    }

    /// Decodes a frame's image and checks it has the dataset's size.
    pub fn load_image(&self, index: usize) -> Result<Image> {
        let img = super::image_io::read_image(&self.image_path(index))?;
        if img.width != self.width || img.height != self.height {
            return Err(manifest_err(
                format!("frames[{index}].image"),
                format!("image is {}x{}, manifest declares {}x{}", img.width, img.height, self.width, self.height),
            ));
        }
        Ok(img)
    }

    /// Normalized time of a raw timestamp.
    pub fn normalize_time(&self, t: f64) -> f64 {
        (t - self.time_span.0) / (self.time_span.1 - self.time_span.0)
    }

    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.time_span;
        if self.width == 0 || self.height == 0 {
            return Err(manifest_err("width", "image dimensions must be positive"));
        }
        if !t0.is_finite() || !t1.is_finite() || t1 <= t0 {
            return Err(manifest_err("time_span", "must be finite with end > start"));
        }
        if self.frames.is_empty() {
            return Err(manifest_err("frames", "at least one frame is required"));
        }
        if !self.frames.iter().any(|f| f.split == Split::Train) {
            return Err(manifest_err("frames", "at least one train frame is required"));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if !(f.time >= t0 && f.time <= t1) {
                return Err(manifest_err(format!("frames[{i}].time"), format!("{} lies outside [{t0}, {t1}]", f.time)));
            }
            if f.image.as_os_str().is_empty() {
                return Err(manifest_err(format!("frames[{i}].image"), "empty path"));
            }
            f.camera.validate().map_err(|e| manifest_err(format!("frames[{i}].camera"), e.to_string()))?;
        }
        Ok(())
    }

    fn to_file(&self) -> ManifestFile {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let c = &f.camera;
                let r = &c.rotation;
                FrameEntry {
                    image: f.image.to_string_lossy().into_owned(),
                    time: f.time,
                    split: f.split,
                    camera: CameraRecord {
                        fx: c.fx,
                        fy: c.fy,
                        cx: c.cx,
                        cy: c.cy,
                        rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
                        translation: [c.translation.x, c.translation.y, c.translation.z],
                        near: c.near,
                        far: c.far,
                    },
                }
            })
            .collect();
        ManifestFile {
            version: MANIFEST_VERSION,
            width: self.width,
            height: self.height,
            time_span: [self.time_span.0, self.time_span.1],
            frames,
        }
    }

    fn from_file(file: ManifestFile, root: PathBuf) -> Result<Self> {
        if file.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion { found: file.version, expected: MANIFEST_VERSION });
        }
        let (t0, t1) = (file.time_span[0], file.time_span[1]);
        let frames = file
            .frames
            .into_iter()
            .map(|f| {
                let c = f.camera;
                FrameRecord {
                    camera: CameraFrame {
                        fx: c.fx,
                        fy: c.fy,
                        cx: c.cx,
                        cy: c.cy,
                        width: file.width,
                        height: file.height,
                        rotation: Matrix3::from_fn(|i, j| c.rotation[i][j]),
                        translation: Vector3::from(c.translation),
                        time: (f.time - t0) / (t1 - t0),
                        near: c.near,
                        far: c.far,
                    },
                    time: f.time,
                    image: PathBuf::from(f.image),
                    split: f.split,
                }
            })
            .collect();
        let ds = SceneDataset { root, width: file.width, height: file.height, time_span: (t0, t1), frames };
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("manifest serializes")
    }

    pub fn from_toml(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| manifest_err("<document>", e.message().to_string()))?;
        Self::from_file(file, root.into())
    }
}

pub fn load_dataset(path: &Path) -> Result<SceneDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    SceneDataset::from_toml(&text, root)
}

pub fn save_manifest(path: &Path, ds: &SceneDataset) -> Result<()> {
    ds.validate()?;
    super::write_atomic(path, ds.to_toml().as_bytes())
}
