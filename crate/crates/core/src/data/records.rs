use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::image::Image;
use super::manifest::load_image_blob;

/// Capture range category of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeTag {
    None,
    Short,
    Long,
}

impl RangeTag {
    pub fn parse(s: &str) -> Option<RangeTag> {
        match s {
            "none" | "" => Some(RangeTag::None),
            "short" => Some(RangeTag::Short),
            "long" => Some(RangeTag::Long),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RangeTag::None => "none",
            RangeTag::Short => "short",
            RangeTag::Long => "long",
        }
    }
}

/// One sample: pixels (in memory or behind a path) plus its labels.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub pixels: Option<Image>,
    pub identity: usize,
    pub domain: usize,
    pub camera: Option<usize>,
    pub range_tag: RangeTag,
    pub path: Option<PathBuf>,
}

/// Immutable collection of records with declared label bounds.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub n_ids: usize,
    pub n_domains: usize,
    pub n_cameras: usize,
    /// Directory that relative record paths resolve against.
    pub base_dir: Option<PathBuf>,
}

impl Dataset {
    /// Pixels of record `idx`, loading lazily from its blob when needed.
    pub fn pixels(&self, idx: usize) -> Result<Image> {
        let rec = &self.records[idx];
        if let Some(img) = &rec.pixels {
            return Ok(img.clone());
        }
        let path = rec.path.as_ref().ok_or_else(|| {
            Error::Config(format!("record {idx} has neither pixels nor a path"))
        })?;
        let full = match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.clone(),
        };
        load_image_blob(&full)
    }

    /// Record indices of one identity within one domain.
    pub fn cell(&self, identity: usize, domain: usize) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.identity == identity && r.domain == domain)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.identity >= self.n_ids {
                return Err(Error::Config(format!(
                    "record {i}: identity {} out of declared bound {}",
                    r.identity, self.n_ids
                )));
            }
            if r.domain >= self.n_domains {
                return Err(Error::Config(format!(
                    "record {i}: domain {} out of declared bound {}",
                    r.domain, self.n_domains
                )));
            }
            if let Some(cam) = r.camera {
                if cam >= self.n_cameras {
                    return Err(Error::Config(format!(
                        "record {i}: camera {cam} out of declared bound {}",
                        self.n_cameras
                    )));
                }
            }
            if let Some(img) = &r.pixels {
                if img.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Config(format!(
                        "record {i}: pixel values outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn resolve_base(manifest_path: &Path) -> Option<PathBuf> {
    manifest_path.parent().map(|p| p.to_path_buf())
}
