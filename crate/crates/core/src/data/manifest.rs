use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::image::Image;
use super::records::{resolve_base, Dataset, ImageRecord, RangeTag};

pub const MANIFEST_HEADER: &str = "path,identity,domain,camera,range";
const IMG_TAG: &str = "xspec-img-v1";

/// Load a comma-separated manifest: optional `# key=value` bound lines, a
/// required header row, then one record per line. Images stay on disk and
/// are loaded lazily.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut declared: Vec<(String, usize)> = Vec::new();
    let mut header_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                let v: usize = v.trim().parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad bound value in {line:?}"),
                })?;
                declared.push((k.trim().to_string(), v));
            }
            continue;
        }
        if !header_seen {
            if line != MANIFEST_HEADER {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected header {MANIFEST_HEADER:?}, found {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let parse_num = |s: &str, what: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad {what}: {s:?}"),
            })
        };
        let camera = match fields[3].trim() {
            "" | "-" => None,
            s => Some(parse_num(s, "camera")?),
        };
        let range_tag = RangeTag::parse(fields[4].trim()).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("bad range tag: {:?}", fields[4]),
        })?;
        records.push(ImageRecord {
            pixels: None,
            identity: parse_num(fields[1], "identity")?,
            domain: parse_num(fields[2], "domain")?,
            camera,
            range_tag,
            path: Some(PathBuf::from(fields[0].trim())),
        });
    }
    if !header_seen {
        return Err(Error::Parse {
            line: 1,
            msg: "manifest is missing its header row".into(),
        });
    }

    let bound = |key: &str, derived: usize| -> usize {
        declared
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .unwrap_or(derived)
    };
    let max1 = |f: &dyn Fn(&ImageRecord) -> Option<usize>| {
        records.iter().filter_map(|r| f(r)).max().map_or(0, |m| m + 1)
    };
    let ds = Dataset {
        n_ids: bound("n_ids", max1(&|r| Some(r.identity))),
        n_domains: bound("n_domains", max1(&|r| Some(r.domain))),
        n_cameras: bound("n_cameras", max1(&|r| r.camera)),
        base_dir: resolve_base(path),
        records,
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset as manifest + one image blob per record. In-memory pixels
/// are materialized under `dir/images/`; path-only records keep their paths.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut lines = String::new();
    lines.push_str(&format!(
        "# n_ids={}\n# n_domains={}\n# n_cameras={}\n{MANIFEST_HEADER}\n",
        ds.n_ids, ds.n_domains, ds.n_cameras
    ));
    for (i, rec) in ds.records.iter().enumerate() {
        let rel = match (&rec.pixels, &rec.path) {
            (Some(img), _) => {
                let rel = PathBuf::from(format!("images/img_{i:05}.bin"));
                save_image_blob(img, &dir.join(&rel))?;
                rel
            }
            (None, Some(p)) => p.clone(),
            (None, None) => {
                return Err(Error::Config(format!(
                    "record {i} has neither pixels nor a path"
                )))
            }
        };
        let cam = rec.camera.map_or(String::from("-"), |c| c.to_string());
        lines.push_str(&format!(
            "{},{},{},{},{}\n",
            rel.display(),
            rec.identity,
            rec.domain,
            cam,
            rec.range_tag.as_str()
        ));
    }
    let manifest = dir.join("manifest.csv");
    fs::write(&manifest, lines).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Binary image blob: a one-line text header with dimensions, then f64 LE.
pub fn save_image_blob(img: &Image, path: &Path) -> Result<()> {
    let mut bytes = format!("{IMG_TAG} {} {} {}\n", img.h, img.w, img.c).into_bytes();
    for v in &img.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_image_blob(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("image blob {} has no header line", path.display()),
        })?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Parse {
        line: 1,
        msg: "image blob header is not utf-8".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != IMG_TAG {
        return Err(Error::Parse {
            line: 1,
            msg: format!("bad image blob header: {header:?}"),
        });
    }
    let dims: Vec<usize> = parts[1..]
        .iter()
        .map(|s| {
            s.parse().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("bad dimension in blob header: {s:?}"),
            })
        })
        .collect::<Result<_>>()?;
    let (h, w, c) = (dims[0], dims[1], dims[2]);
    let payload = &bytes[nl + 1..];
    if payload.len() != h * w * c * 8 {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "image blob payload is {} bytes, expected {}",
                payload.len(),
                h * w * c * 8
            ),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    Ok(Image::new(h, w, c, data))
}
