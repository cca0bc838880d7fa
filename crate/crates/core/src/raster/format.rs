//! MCRS raster files.
//!
//! Little-endian layout:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `MCRS`                            |
//! | 4      | 2    | version (u16, currently 1)              |
//! | 6      | 4    | width (u32)                             |
//! | 10     | 4    | height (u32)                            |
//! | 14     | 1    | dtype (1 = f32)                         |
//! | 15     | 1    | flags (bit 0: mask present)             |
//! | 16     | 4    | value_range lo (f32)                    |
//! | 20     | 4    | value_range hi (f32)                    |
//! | 24     | 4·N  | values, row-major f32                   |
//! | 24+4·N | N    | mask bytes (0/1), only when bit 0 is set|
//!
//! The mask block is written only when at least one pixel is masked; a file
//! without it decodes to an all-clear mask.
//!
//! Each raster may have a sidecar `<name>.meta.json` and, for EO bands, a
//! companion QA raster `<name>.qa.mcrs`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{CalendarDate, ModalityId, Raster, RasterError, Result, Sensor};

pub const MAGIC: &[u8; 4] = b"MCRS";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 24;
const DTYPE_F32: u8 = 1;
const FLAG_MASK: u8 = 1;

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let n = r.len();
    let with_mask = r.has_mask();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n + if with_mask { n } else { 0 });
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&r.width().to_le_bytes());
    out.extend_from_slice(&r.height().to_le_bytes());
    out.push(DTYPE_F32);
    out.push(if with_mask { FLAG_MASK } else { 0 });
    let (lo, hi) = r.value_range();
    out.extend_from_slice(&lo.to_le_bytes());
    out.extend_from_slice(&hi.to_le_bytes());
    for v in r.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if with_mask {
        out.extend(r.mask().iter().map(|&m| u8::from(m)));
    }
    out
}

fn take(bytes: &[u8], at: usize, len: usize) -> Result<&[u8]> {
    bytes.get(at..at + len).ok_or(RasterError::Truncated {
        expected: at + len,
        found: bytes.len(),
    })
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, at, 4)?.try_into().unwrap()))
}

fn f32_at(bytes: &[u8], at: usize) -> Result<f32> {
    Ok(f32::from_le_bytes(take(bytes, at, 4)?.try_into().unwrap()))
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let magic: [u8; 4] = take(bytes, 0, 4)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(RasterError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(RasterError::VersionMismatch(version));
    }
    let width = u32_at(bytes, 6)?;
    let height = u32_at(bytes, 10)?;
    let header = take(bytes, 14, 2)?;
    let (dtype, flags) = (header[0], header[1]);
    if dtype != DTYPE_F32 {
        return Err(RasterError::UnsupportedDtype(dtype));
    }
    let lo = f32_at(bytes, 16)?;
    let hi = f32_at(bytes, 20)?;

    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| RasterError::Invalid("dimensions overflow".into()))?;
    let with_mask = flags & FLAG_MASK != 0;
    let expected = HEADER_LEN + 4 * n + if with_mask { n } else { 0 };
    if bytes.len() < expected {
        return Err(RasterError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(RasterError::Invalid(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + 4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mask = if with_mask {
        bytes[HEADER_LEN + 4 * n..]
            .iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(RasterError::Invalid(format!(
                    "mask byte {other} at pixel {i}"
                ))),
            })
            .collect::<Result<Vec<bool>>>()?
    } else {
        vec![false; n]
    };
    Raster::new(width, height, values, mask, (lo, hi))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    decode_raster(&fs::read(path)?)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    Ok(write_atomic(path.as_ref(), &encode_raster(r))?)
}

/// Readers see either the old file or the complete new one.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    replace_file(path, bytes, false)
}

/// Like [`write_atomic`], and also flushed to disk before the rename.
pub(crate) fn write_durable(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    replace_file(path, bytes, true)
}

fn replace_file(path: &Path, bytes: &[u8], sync: bool) -> std::io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| std::io::Error::other("path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    let seq = TMP_SEQ.fetch_add(1, Ordering::Relaxed);
    tmp_name.push(format!(".{}.{seq}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        if sync {
            f.sync_all()?;
        }
    }
    fs::rename(&tmp, path)?;
    #[cfg(unix)]
    if sync {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::File::open(dir)?.sync_all()?;
    }
    Ok(())
}

/// Sidecar metadata stored next to a raster as `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterMeta {
    pub sensor: Sensor,
    pub band: String,
    pub tile_id: String,
    pub date: CalendarDate,
    #[serde(default)]
    pub source: String,
}

impl RasterMeta {
    pub fn modality(&self) -> Result<ModalityId> {
        ModalityId::new(self.sensor, &self.band)
    }
}

fn stem_path(raster_path: &Path) -> PathBuf {
    match raster_path.extension() {
        Some(ext) if ext == "mcrs" => raster_path.with_extension(""),
        _ => raster_path.to_path_buf(),
    }
}

fn with_suffix(raster_path: &Path, suffix: &str) -> PathBuf {
    let stem = stem_path(raster_path);
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    stem.with_file_name(name)
}

/// `foo.mcrs` → `foo.meta.json`.
pub fn meta_path(raster_path: impl AsRef<Path>) -> PathBuf {
    with_suffix(raster_path.as_ref(), ".meta.json")
}

/// `foo.mcrs` → `foo.qa.mcrs`.
pub fn qa_path(raster_path: impl AsRef<Path>) -> PathBuf {
    with_suffix(raster_path.as_ref(), ".qa.mcrs")
}

pub fn write_meta(raster_path: impl AsRef<Path>, meta: &RasterMeta) -> Result<()> {
    let json = serde_json::to_vec_pretty(meta).map_err(|e| RasterError::Meta(e.to_string()))?;
    write_atomic(&meta_path(raster_path), &json)?;
    Ok(())
}

pub fn read_meta(raster_path: impl AsRef<Path>) -> Result<RasterMeta> {
    let bytes = fs::read(meta_path(raster_path))?;
    serde_json::from_slice(&bytes).map_err(|e| RasterError::Meta(e.to_string()))
}
