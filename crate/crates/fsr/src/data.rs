//! Image folders.

use std::path::Path;

use fsr_core::Image;

use crate::error::{Error, Result};
use crate::imageio::{self, ImageFormat};

/// Every `.png`/`.ppm` file directly inside `dir`, sorted by file name.
/// Other files are ignored; an empty result is an error.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && ImageFormat::from_path(&path).is_some() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Usage(format!("{}: no .png or .ppm images", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let img = imageio::read_image(&p)?;
            Ok((name, img))
        })
        .collect()
}

/// Writes `images` as `{prefix}{index:04}.png`.
pub fn save_dir(dir: impl AsRef<Path>, prefix: &str, images: &[Image]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        imageio::write_image(dir.join(format!("{prefix}{i:04}.png")), img)?;
    }
    Ok(())
}
