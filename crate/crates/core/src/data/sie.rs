use crate::error::{Error, Result};

use super::records::{Dataset, ImageRecord, RangeTag};

/// Which side information feeds the SIE table. Typical cardinalities:
/// domain-only = 2 or 4, camera-only = 9, domain+camera = 18,
/// domain+range = 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SieScheme {
    DomainOnly,
    CameraOnly,
    DomainCamera,
    DomainRange,
}

impl SieScheme {
    pub fn parse(s: &str) -> Result<SieScheme> {
        match s {
            "domain-only" | "domain" => Ok(SieScheme::DomainOnly),
            "camera-only" | "camera" => Ok(SieScheme::CameraOnly),
            "domain+camera" | "domain-camera" => Ok(SieScheme::DomainCamera),
            "domain+range" | "domain-range" => Ok(SieScheme::DomainRange),
            _ => Err(Error::Scheme(format!(
                "unknown sie scheme {s:?}; expected domain-only, camera-only, domain+camera, or domain+range"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SieScheme::DomainOnly => "domain-only",
            SieScheme::CameraOnly => "camera-only",
            SieScheme::DomainCamera => "domain+camera",
            SieScheme::DomainRange => "domain+range",
        }
    }

    /// Size of the SIE table this scheme needs for a dataset.
    pub fn table_size(&self, ds: &Dataset) -> usize {
        match self {
            SieScheme::DomainOnly => ds.n_domains,
            SieScheme::CameraOnly => ds.n_cameras,
            SieScheme::DomainCamera => ds.n_domains * ds.n_cameras,
            SieScheme::DomainRange => 2 * ds.n_domains,
        }
    }
}

/// Map a record to its SIE table index under a scheme.
pub fn assign_sie_index(record: &ImageRecord, scheme: SieScheme, ds: &Dataset) -> Result<usize> {
    match scheme {
        SieScheme::DomainOnly => Ok(record.domain),
        SieScheme::CameraOnly => record.camera.ok_or_else(|| {
            Error::Scheme("camera-only scheme but record lacks a camera index".into())
        }),
        SieScheme::DomainCamera => {
            let cam = record.camera.ok_or_else(|| {
                Error::Scheme("domain+camera scheme but record lacks a camera index".into())
            })?;
            Ok(record.domain * ds.n_cameras + cam)
        }
        SieScheme::DomainRange => {
            let block = match record.range_tag {
                RangeTag::Short => 0,
                RangeTag::Long => 1,
                RangeTag::None => {
                    return Err(Error::Scheme(
                        "domain+range scheme but record lacks a range tag".into(),
                    ))
                }
            };
            Ok(block * ds.n_domains + record.domain)
        }
    }
}
