//! Dataset manifests: image entries plus named splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::error::{invalid, Error};
use crate::imagery::io::{read_image, read_mask};
use crate::imagery::{BinaryMask, Image};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<String>>,
}

impl DatasetManifest {
    /// Parses a manifest, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut m: DatasetManifest = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.into()))?;
        for e in &mut m.entries {
            for p in [Some(&mut e.image_path), e.gt_path.as_mut(), e.mask_path.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        m.check_ids().map_err(PipelineError::Config)?;
        Ok(m)
    }

    /// Loads and validates a manifest file; every referenced file must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(Error::io(path, e)))?;
        let m = Self::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
        m.check_files().map_err(PipelineError::Data)?;
        Ok(m)
    }

    /// Writes the manifest with paths relative to the manifest's directory
    /// when possible.
    pub fn save(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = self.clone();
        for e in &mut out.entries {
            for p in [Some(&mut e.image_path), e.gt_path.as_mut(), e.mask_path.as_mut()].into_iter().flatten() {
                if let Ok(rel) = p.strip_prefix(base) {
                    *p = rel.to_path_buf();
                }
            }
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&out)?).map_err(|e| Error::io(path, e))
    }

    fn check_ids(&self) -> crate::Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.image_id.is_empty() || e.image_id.contains(['/', '\\']) || e.image_id.chars().any(char::is_whitespace) {
                return Err(invalid(format!("image id '{}' is not a plain token", e.image_id)));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(invalid(format!("duplicate image id '{}'", e.image_id)));
            }
        }
        for (name, ids) in &self.splits {
            if let Some(id) = ids.iter().find(|id| !seen.contains(id.as_str())) {
                return Err(invalid(format!("split '{name}' lists unknown image '{id}'")));
            }
        }
        Ok(())
    }

    fn check_files(&self) -> crate::Result<()> {
        for e in &self.entries {
            for p in [Some(&e.image_path), e.gt_path.as_ref(), e.mask_path.as_ref()].into_iter().flatten() {
                if !p.is_file() {
                    return Err(Error::Format(format!(
                        "image '{}' references missing file {}",
                        e.image_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == id)
    }

    /// Entries of a split in listed order. `None` selects every entry.
    pub fn split(&self, name: Option<&str>) -> Result<Vec<&ManifestEntry>, PipelineError> {
        match name {
            None => Ok(self.entries.iter().collect()),
            Some(n) => {
                let ids = self
                    .splits
                    .get(n)
                    .ok_or_else(|| PipelineError::Config(invalid(format!("manifest has no split '{n}'"))))?;
                Ok(ids.iter().filter_map(|id| self.entry(id)).collect())
            }
        }
    }
}

impl ManifestEntry {
    pub fn read_image(&self) -> crate::Result<Image> {
        read_image(&self.image_path)
    }

    pub fn read_gt(&self) -> crate::Result<Option<BinaryMask>> {
        self.gt_path.as_ref().map(read_mask).transpose()
    }

    pub fn read_mask(&self) -> crate::Result<Option<BinaryMask>> {
        self.mask_path.as_ref().map(read_mask).transpose()
    }
}
