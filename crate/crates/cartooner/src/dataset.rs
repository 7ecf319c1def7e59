//! Directory-of-images datasets.

use std::path::{Path, PathBuf};

use cartooner_core::data::Dataset;
use cartooner_core::Image;
use log::warn;

use crate::io::load_image;

/// Images with a shorter side below this are skipped.
pub const MIN_SIDE: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot list {0}: {1}")]
    List(String, std::io::Error),
    #[error("no usable images in {0}")]
    Empty(String),
    #[error("{0}")]
    Core(#[from] cartooner_core::Error),
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("png" | "jpg" | "jpeg"))
}

/// Image paths of `dir`: the manifest's lines (relative to `dir`) in order,
/// or every PNG/JPEG file sorted by name.
pub fn list_images(dir: &Path, manifest: Option<&Path>) -> Result<Vec<PathBuf>, DatasetError> {
    if let Some(m) = manifest {
        let text = std::fs::read_to_string(m).map_err(|e| DatasetError::List(m.display().to_string(), e))?;
        return Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(|l| dir.join(l)).collect());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| DatasetError::List(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads every listed image, skipping unreadable or undersized ones with a warning.
pub fn load_images(dir: &Path, manifest: Option<&Path>) -> Result<Vec<Image>, DatasetError> {
    let mut images = Vec::new();
    for path in list_images(dir, manifest)? {
        match load_image(&path) {
            Ok(img) if img.width().min(img.height()) >= MIN_SIDE => images.push(img),
            Ok(img) => warn!("skipping {}: {}x{} is smaller than {} px", path.display(), img.width(), img.height(), MIN_SIDE),
            Err(e) => warn!("skipping {}: {}", path.display(), e),
        }
    }
    if images.is_empty() {
        return Err(DatasetError::Empty(dir.display().to_string()));
    }
    Ok(images)
}

pub fn load_dataset(photo_dir: &Path, photo_manifest: Option<&Path>, cartoon_dir: &Path, cartoon_manifest: Option<&Path>) -> Result<Dataset, DatasetError> {
    Ok(Dataset::new(load_images(photo_dir, photo_manifest)?, load_images(cartoon_dir, cartoon_manifest)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_image;
    use cartooner_core::ColorSpace;

    #[test]
    fn skips_bad_files_and_honours_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(40, 36, ColorSpace::Rgb, &[0.2, 0.4, 0.6]);
        save_image(&img, &dir.path().join("b.png")).unwrap();
        save_image(&img, &dir.path().join("a.png")).unwrap();
        save_image(&Image::filled(8, 8, ColorSpace::Rgb, &[0.0; 3]), &dir.path().join("tiny.png")).unwrap();
        std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let names: Vec<_> = list_images(dir.path(), None).unwrap().iter().map(|p| p.file_name().unwrap().to_owned()).collect();
        assert_eq!(names, ["a.png", "b.png", "broken.png", "tiny.png"]);
        assert_eq!(load_images(dir.path(), None).unwrap().len(), 2);

        let manifest = dir.path().join("order.txt");
        std::fs::write(&manifest, "b.png\n\n# comment\na.png\n").unwrap();
        let listed = list_images(dir.path(), Some(&manifest)).unwrap();
        assert_eq!(listed, [dir.path().join("b.png"), dir.path().join("a.png")]);

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_images(empty.path(), None), Err(DatasetError::Empty(_))));
    }
}
