//! File formats: float and PNG images, `S7DC` checkpoints, TOML dataset
//! manifests, and the synthetic scene generator that produces them.

pub mod checkpoint;
pub mod image_io;
pub mod manifest;
pub mod synthetic;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use image_io::{read_image, write_image, write_png, write_s7df};
pub use manifest::{load_dataset, save_manifest, FrameRecord, SceneDataset, Split};
pub use synthetic::{generate_synthetic, GeneratorSpec, SyntheticScene};

/// Writes `bytes` next to `path` and renames over it, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| Error::contract(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
