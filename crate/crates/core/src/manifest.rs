//! Dataset manifests: CSV rows of image path, optional mask path, image
//! label and split.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::heads::GleasonLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// As written in the manifest; relative paths are resolved against the
    /// manifest's directory.
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub label: GleasonLabel,
    pub split: Split,
}

impl ManifestRow {
    /// File stem of the image, used as the graph id.
    pub fn id(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

const HEADER: [&str; 5] = ["image_path", "mask_path", "primary", "secondary", "split"];

impl DatasetManifest {
    pub fn new(root: PathBuf, rows: Vec<ManifestRow>) -> Self {
        Self { root, rows }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn image_path(&self, row: &ManifestRow) -> PathBuf {
        self.resolve(&row.image_path)
    }

    pub fn mask_path(&self, row: &ManifestRow) -> Option<PathBuf> {
        row.mask_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    /// Reads and validates a manifest; every referenced file must exist and
    /// graph ids must be unique.
    pub fn load(path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::format("manifest", format!("{}: {detail}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| bad(e.to_string()))?;
        let header = reader.headers().map_err(|e| bad(e.to_string()))?;
        if header != HEADER.as_slice() {
            return Err(bad(format!("expected header {}", HEADER.join(","))));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let r = record.map_err(|e| bad(e.to_string()))?;
            let label = GleasonLabel::parse(&r[2], &r[3]).map_err(|e| bad(format!("line {line}: {e}")))?;
            let split = r[4].parse().map_err(|e: Error| bad(format!("line {line}: {e}")))?;
            rows.push(ManifestRow {
                image_path: PathBuf::from(&r[0]),
                mask_path: (!r[1].is_empty()).then(|| PathBuf::from(&r[1])),
                label,
                split,
            });
        }
        let manifest = Self { root, rows };
        let mut ids = std::collections::BTreeSet::new();
        for (i, row) in manifest.rows.iter().enumerate() {
            let line = i + 2;
            if !manifest.image_path(row).is_file() {
                return Err(bad(format!("line {line}: image {} not found", row.image_path.display())));
            }
            if let Some(m) = manifest.mask_path(row) {
                if !m.is_file() {
                    return Err(bad(format!("line {line}: mask {} not found", m.display())));
                }
            }
            if !ids.insert(row.id()) {
                return Err(bad(format!("line {line}: duplicate image id `{}`", row.id())));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic_with(path, |tmp| {
            let mut w = csv::Writer::from_path(tmp)?;
            w.write_record(HEADER)?;
            for r in &self.rows {
                w.write_record([
                    r.image_path.to_string_lossy().as_ref(),
                    r.mask_path.as_deref().map(|p| p.to_string_lossy()).unwrap_or_default().as_ref(),
                    r.label.primary().as_str(),
                    r.label.secondary().as_str(),
                    r.split.as_str(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(tmp, e))
        })
    }
}
