//! Dataset manifest: the ordered list of samples a run operates on.
//!
//! Stored as UTF-8 JSON. Relative paths are resolved against the directory
//! that contains the manifest file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{read_feature_set, MultiScaleFeatureSet};
use crate::pgm::{read_mask, Mask};
use crate::{CfaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageLabel {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub split: Split,
    pub image_label: ImageLabel,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub class_name: String,
    /// `(height, width)` of the input images in pixels.
    pub input_resolution: (usize, usize),
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(
        class_name: impl Into<String>,
        input_resolution: (usize, usize),
        entries: Vec<ManifestEntry>,
    ) -> Self {
        Self {
            class_name: class_name.into(),
            input_resolution,
            entries,
            base_dir: PathBuf::new(),
        }
    }

    /// Directory against which relative paths resolve.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn train(&self) -> impl Iterator<Item = &ManifestEntry> + '_ {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &ManifestEntry> + '_ {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn load_features(&self, entry: &ManifestEntry) -> Result<MultiScaleFeatureSet> {
        read_feature_set(&self.resolve(&entry.feature_path))
    }

    /// Ground-truth mask of a test entry. Normal samples without a mask
    /// get an all-zero mask.
    pub fn load_mask(&self, entry: &ManifestEntry) -> Result<Mask> {
        let (h, w) = self.input_resolution;
        match (&entry.mask_path, entry.image_label) {
            (Some(p), _) => {
                let path = self.resolve(p);
                let mask = read_mask(&path)?;
                if (mask.height, mask.width) != (h, w) {
                    return Err(CfaError::Mask {
                        path,
                        reason: format!(
                            "shape {}x{} differs from input resolution {h}x{w}",
                            mask.height, mask.width
                        ),
                    });
                }
                Ok(mask)
            }
            (None, ImageLabel::Normal) => Ok(Mask::zeros(h, w)),
            (None, ImageLabel::Anomalous) => Err(CfaError::Manifest(format!(
                "anomalous sample {} has no mask",
                entry.sample_id
            ))),
        }
    }

    /// Checks every invariant except file contents.
    pub fn validate_structure(&self) -> Result<()> {
        let (h, w) = self.input_resolution;
        if h == 0 || w == 0 {
            return Err(CfaError::Manifest("input resolution must be non-zero".into()));
        }
        for e in &self.entries {
            if e.split == Split::Train && e.image_label == ImageLabel::Anomalous {
                return Err(CfaError::Manifest(format!(
                    "train entry {} is labeled anomalous; training uses normal samples only",
                    e.sample_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CfaError::io(path, e))
    }
}

/// Parses and fully validates a manifest: structure, every feature file
/// and every referenced mask.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CfaError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest: DatasetManifest = serde_json::from_str::<DatasetManifest>(&text)?.with_base_dir(base);
    manifest.validate_structure()?;
    manifest.entries.par_iter().try_for_each(|e| -> Result<()> {
        let fp = manifest.resolve(&e.feature_path);
        if !fp.is_file() {
            return Err(CfaError::Manifest(format!(
                "feature file {} of sample {} is missing",
                fp.display(),
                e.sample_id
            )));
        }
        read_feature_set(&fp)?;
        if e.mask_path.is_some() {
            manifest.load_mask(e)?;
        }
        Ok(())
    })?;
    Ok(manifest)
}
