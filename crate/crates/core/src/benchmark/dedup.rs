use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::manifest::sha256_hex;
use crate::model::{Dataset, ImageId};

/// How two images are recognised as the same image.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum DedupMode {
    /// Equal `file_name` values.
    #[default]
    FileName,
    /// Equal SHA-256 of the image bytes, read from `root/file_name`.
    ContentHash(PathBuf),
}

impl DedupMode {
    pub(crate) fn keys(&self, dataset: &Dataset) -> Result<Vec<String>> {
        dataset
            .images
            .iter()
            .map(|img| match self {
                DedupMode::FileName => Ok(img.file_name.clone()),
                DedupMode::ContentHash(root) => {
                    let path = root.join(&img.file_name);
                    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    Ok(sha256_hex(&bytes))
                }
            })
            .collect()
    }
}

/// Removes exact duplicate images, keeping the first occurrence in image-list
/// order. Annotations of removed images are dropped with them.
pub fn deduplicate(dataset: &Dataset, mode: &DedupMode) -> Result<(Dataset, Vec<ImageId>)> {
    let keys = mode.keys(dataset)?;
    let mut first: BTreeMap<&str, ImageId> = BTreeMap::new();
    let mut removed = Vec::new();
    for (img, key) in dataset.images.iter().zip(&keys) {
        if first.contains_key(key.as_str()) {
            removed.push(img.id);
        } else {
            first.insert(key, img.id);
        }
    }
    if removed.is_empty() {
        return Ok((dataset.clone(), removed));
    }
    let keep = first.values().copied().collect();
    Ok((dataset.subset(&keep, |_| true), removed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImageInfo;

    fn dataset(names: &[&str]) -> Dataset {
        Dataset {
            images: names
                .iter()
                .enumerate()
                .map(|(i, n)| ImageInfo { id: i as u64 + 1, file_name: n.to_string(), width: 4, height: 4 })
                .collect(),
            ..Dataset::default()
        }
    }

    #[test]
    fn file_name_duplicates() {
        let (d, removed) = deduplicate(&dataset(&["a", "b", "a"]), &DedupMode::FileName).unwrap();
        assert_eq!(removed, vec![3]);
        assert_eq!(d.images.len(), 2);
        let (d, removed) = deduplicate(&dataset(&["a", "b"]), &DedupMode::FileName).unwrap();
        assert!(removed.is_empty());
        assert_eq!(d, dataset(&["a", "b"]));
    }

    #[test]
    fn content_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        for (name, bytes) in [("x", "same"), ("y", "same"), ("z", "other"), ("w", "same")] {
            std::fs::write(dir.path().join(name), bytes).unwrap();
        }
        let mode = DedupMode::ContentHash(dir.path().to_path_buf());
        let (d, removed) = deduplicate(&dataset(&["x", "y", "z", "w"]), &mode).unwrap();
        assert_eq!(removed, vec![2, 4]);
        assert_eq!(d.images.len(), 2);
    }

    #[test]
    fn unreadable_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mode = DedupMode::ContentHash(dir.path().to_path_buf());
        let err = deduplicate(&dataset(&["missing.jpg"]), &mode).unwrap_err();
        assert!(err.to_string().contains("missing.jpg"));
    }
}
