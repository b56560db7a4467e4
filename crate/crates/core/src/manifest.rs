//! JSONL manifests: one sample per line.
//!
//! ```json
//! {"id": "s0", "text": "a red square ...", "image": "images/s0.ppm", "model": "demo"}
//! ```
//!
//! `image` paths are resolved relative to the manifest's directory unless
//! absolute. Ids must be unique.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub text: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

impl ManifestEntry {
    /// Resolves the image path against the manifest location.
    pub fn image_path(&self, manifest_path: &Path) -> PathBuf {
        let p = Path::new(&self.image);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(p)
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let reader = BufReader::new(
        File::open(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?,
    );
    let mut entries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Manifest(format!("duplicate id {:?}", entry.id)));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Manifest("empty manifest".into()));
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for entry in entries {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            text: "a red square".into(),
            image: format!("images/{id}.ppm"),
            model: None,
            tags: None,
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let entries = vec![entry("a"), entry("b")];
        write_manifest(&path, &entries).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].id, "b");
        assert_eq!(
            back[0].image_path(&path),
            dir.path().join("images/a.ppm")
        );
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "\n\n").unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("empty manifest"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &[entry("a"), entry("a")]).unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
