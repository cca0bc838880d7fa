//! Single-band rasters, modality identifiers and the pixel-level operations
//! shared by the rest of the crate: the MCRS codec, quality ratios, cloud
//! heuristics, resampling and PSNR/SSIM.

mod format;
mod metrics;
mod quality;
mod resample;

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use format::{
    decode_raster, encode_raster, meta_path, qa_path, read_meta, read_raster, write_meta,
    write_raster, RasterMeta, FORMAT_VERSION, MAGIC,
};
pub(crate) use format::{write_atomic, write_durable};
pub use metrics::{mse, psnr, psnr_from_mse, ssim, SsimParams, DEFAULT_PSNR_CAP_DB};
pub use quality::{
    brightness_saturation_cloud_fraction, brightness_saturation_mask, nodata_ratio, qa_cloud_ratio,
    DEFAULT_BS_TAU, DEFAULT_CLOUD_CLASSES,
};
pub use resample::bilinear_resample;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"MCRS\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionMismatch(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite value at unmasked pixel {index}")]
    NonFinite { index: usize },
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("no pixel is unmasked in both rasters")]
    EmptyOverlap,
    #[error("input contains masked pixels")]
    MaskedInput,
    #[error("window {window} larger than image {width}x{height}")]
    WindowTooLarge {
        window: usize,
        width: u32,
        height: u32,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("QA pixel {index} holds non-integer value {value}")]
    NonIntegerQa { index: usize, value: f32 },
    #[error("metadata: {0}")]
    Meta(String),
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

/// Satellite sensors known to the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sensor {
    Sentinel1,
    Sentinel2,
    Landsat5,
    Landsat8,
}

const SENTINEL1_BANDS: &[&str] = &["VV", "VH"];
const SENTINEL2_BANDS: &[&str] = &[
    "B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12",
];
const LANDSAT5_BANDS: &[&str] = &[
    "SR_B1", "SR_B2", "SR_B3", "SR_B4", "SR_B5", "ST_B6", "SR_B7",
];
const LANDSAT8_BANDS: &[&str] = &[
    "SR_B1", "SR_B2", "SR_B3", "SR_B4", "SR_B5", "SR_B6", "SR_B7", "ST_B10",
];

impl Sensor {
    pub const ALL: [Sensor; 4] = [
        Sensor::Sentinel1,
        Sensor::Sentinel2,
        Sensor::Landsat5,
        Sensor::Landsat8,
    ];

    /// Band names in the sensor's canonical order.
    pub fn bands(self) -> &'static [&'static str] {
        match self {
            Sensor::Sentinel1 => SENTINEL1_BANDS,
            Sensor::Sentinel2 => SENTINEL2_BANDS,
            Sensor::Landsat5 => LANDSAT5_BANDS,
            Sensor::Landsat8 => LANDSAT8_BANDS,
        }
    }

    /// Electro-optical sensors are subject to cloud filtering; SAR is not.
    pub fn is_eo(self) -> bool {
        !matches!(self, Sensor::Sentinel1)
    }

    pub fn is_landsat(self) -> bool {
        matches!(self, Sensor::Landsat5 | Sensor::Landsat8)
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Sentinel1 => "Sentinel1",
            Sensor::Sentinel2 => "Sentinel2",
            Sensor::Landsat5 => "Landsat5",
            Sensor::Landsat8 => "Landsat8",
        }
    }

    pub fn band_index(self, band: &str) -> Option<usize> {
        self.bands().iter().position(|b| *b == band)
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sensor {
    type Err = RasterError;

    fn from_str(s: &str) -> Result<Self> {
        Sensor::ALL
            .into_iter()
            .find(|sensor| sensor.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| RasterError::Invalid(format!("unknown sensor {s:?}")))
    }
}

/// A (sensor, band) pair. Ordered by sensor, then by the band's position in
/// the sensor's band table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModalityId {
    sensor: Sensor,
    band: String,
}

impl ModalityId {
    pub fn new(sensor: Sensor, band: &str) -> Result<Self> {
        if sensor.band_index(band).is_none() {
            return Err(RasterError::Invalid(format!(
                "band {band:?} is not a {sensor} band"
            )));
        }
        Ok(ModalityId {
            sensor,
            band: band.to_string(),
        })
    }

    pub fn sensor(&self) -> Sensor {
        self.sensor
    }

    pub fn band(&self) -> &str {
        &self.band
    }

    fn band_index(&self) -> usize {
        self.sensor.band_index(&self.band).unwrap_or(usize::MAX)
    }

    /// Declared dynamic range of the modality's physical values.
    pub fn value_range(&self) -> (f32, f32) {
        match self.sensor {
            Sensor::Sentinel1 => (-50.0, 1.0),
            _ if self.band.starts_with("ST_") => (0.0, 65535.0),
            _ => (0.0, 10000.0),
        }
    }

    /// `hi - lo` of the value range; the PSNR peak and the SSIM `L`.
    pub fn dynamic_range(&self) -> f64 {
        let (lo, hi) = self.value_range();
        f64::from(hi) - f64::from(lo)
    }
}

impl PartialOrd for ModalityId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ModalityId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.sensor, self.band_index(), &self.band).cmp(&(
            other.sensor,
            other.band_index(),
            &other.band,
        ))
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.sensor, self.band)
    }
}

impl FromStr for ModalityId {
    type Err = RasterError;

    /// Parses `Sentinel2_B11` or `Landsat5_SR_B3`.
    fn from_str(s: &str) -> Result<Self> {
        let (sensor, band) = s
            .split_once('_')
            .ok_or_else(|| RasterError::Invalid(format!("malformed modality {s:?}")))?;
        ModalityId::new(sensor.parse()?, band)
    }
}

impl Serialize for ModalityId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModalityId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Proleptic Gregorian calendar date, serialized as `YYYY-MM-DD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CalendarDate(NaiveDate);

impl CalendarDate {
    pub fn new(year: i32, month: u32, day: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(CalendarDate)
            .ok_or_else(|| RasterError::Invalid(format!("invalid date {year}-{month}-{day}")))
    }

    /// Signed number of days from `other` to `self`.
    pub fn days_since(self, other: CalendarDate) -> i64 {
        (self.0 - other.0).num_days()
    }

    pub fn add_days(self, days: i64) -> CalendarDate {
        CalendarDate(self.0 + chrono::Duration::days(days))
    }

    pub fn year(self) -> i32 {
        self.0.year()
    }

    pub fn month(self) -> u32 {
        self.0.month()
    }

    pub fn day(self) -> u32 {
        self.0.day()
    }
}

impl fmt::Display for CalendarDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

impl FromStr for CalendarDate {
    type Err = RasterError;

    fn from_str(s: &str) -> Result<Self> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(CalendarDate)
            .map_err(|e| RasterError::Invalid(format!("invalid date {s:?}: {e}")))
    }
}

impl Serialize for CalendarDate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CalendarDate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single-band grid of physical values with a per-pixel nodata mask.
///
/// Values are row-major. A `true` mask entry marks the pixel as missing; its
/// stored value is meaningless and may be non-finite.
#[derive(Debug, Clone)]
pub struct Raster {
    width: u32,
    height: u32,
    values: Vec<f32>,
    mask: Vec<bool>,
    value_range: (f32, f32),
}

impl Raster {
    pub fn new(
        width: u32,
        height: u32,
        values: Vec<f32>,
        mask: Vec<bool>,
        value_range: (f32, f32),
    ) -> Result<Self> {
        let n = width as usize * height as usize;
        if width == 0 || height == 0 {
            return Err(RasterError::Invalid("zero dimension".into()));
        }
        if values.len() != n || mask.len() != n {
            return Err(RasterError::Invalid(format!(
                "expected {n} values and mask entries, got {} and {}",
                values.len(),
                mask.len()
            )));
        }
        let (lo, hi) = value_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(RasterError::Invalid(format!(
                "value range ({lo}, {hi}) must satisfy lo < hi"
            )));
        }
        if let Some(index) = values
            .iter()
            .zip(&mask)
            .position(|(v, masked)| !masked && !v.is_finite())
        {
            return Err(RasterError::NonFinite { index });
        }
        Ok(Raster {
            width,
            height,
            values,
            mask,
            value_range,
        })
    }

    /// Fully unmasked raster.
    pub fn from_values(
        width: u32,
        height: u32,
        values: Vec<f32>,
        value_range: (f32, f32),
    ) -> Result<Self> {
        let mask = vec![false; values.len()];
        Raster::new(width, height, values, mask, value_range)
    }

    pub fn filled(width: u32, height: u32, value: f32, value_range: (f32, f32)) -> Result<Self> {
        Raster::from_values(
            width,
            height,
            vec![value; width as usize * height as usize],
            value_range,
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.value_range
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn is_masked(&self, index: usize) -> bool {
        self.mask[index]
    }

    pub fn has_mask(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, other: &Raster) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(RasterError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ))
        }
    }

    /// Bit-level equality of values, mask, dimensions and range.
    pub fn bit_eq(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.value_range.0.to_bits() == other.value_range.0.to_bits()
            && self.value_range.1.to_bits() == other.value_range.1.to_bits()
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Median of the unmasked values, `None` when everything is masked.
    pub fn unmasked_median(&self) -> Option<f32> {
        let mut v: Vec<f32> = self
            .values
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| !**m)
            .map(|(v, _)| *v)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f32::total_cmp);
        Some(v[v.len() / 2])
    }

    /// Copy with masked pixels replaced by `fill` and the mask cleared.
    pub fn filled_masked(&self, fill: f32) -> Raster {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            values,
            mask: vec![false; self.mask.len()],
            value_range: self.value_range,
        }
    }

    pub fn into_parts(self) -> (u32, u32, Vec<f32>, Vec<bool>, (f32, f32)) {
        (
            self.width,
            self.height,
            self.values,
            self.mask,
            self.value_range,
        )
    }
}
