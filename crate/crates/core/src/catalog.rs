//! Indexed image catalog.
//!
//! A catalog is a single JSON document on disk:
//!
//! ```json
//! { "format": "stackfill-catalog", "schema_version": 1, "next_id": 3,
//!   "records": [ { "id": 0, "modality": "Sentinel2_B4", "tile_id": "t0",
//!                  "date": "2019-07-01", "width": 256, "height": 256,
//!                  "nodata_ratio": 0.0, "cloud_ratio": 0.01,
//!                  "path": "scene/t0/Sentinel2_B4_2019-07-01.mcrs" } ] }
//! ```
//!
//! Records are indexed in memory by `(tile_id, sensor)` with each posting
//! list sorted by date, so time-window queries are a binary search plus a
//! short scan. Every mutation rewrites the file through a temporary and a
//! rename. A handle allows many concurrent readers and serializes writers;
//! separate processes must not ingest into the same file at once.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::raster::{
    self, nodata_ratio, qa_cloud_ratio, CalendarDate, ModalityId, RasterError, Sensor,
    DEFAULT_CLOUD_CLASSES,
};

pub const CATALOG_FORMAT: &str = "stackfill-catalog";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt catalog store: {0}")]
    Corrupt(String),
    #[error("catalog schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("duplicate record for {modality} on tile {tile_id} at {date}")]
    Duplicate {
        modality: ModalityId,
        tile_id: String,
        date: CalendarDate,
    },
    #[error("raster {path}: {source}")]
    Raster {
        path: String,
        #[source]
        source: RasterError,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub modality: ModalityId,
    pub tile_id: String,
    pub date: CalendarDate,
    pub width: u32,
    pub height: u32,
    pub nodata_ratio: f64,
    /// Zero for SAR.
    pub cloud_ratio: f64,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryFilter {
    pub max_nodata: f64,
    pub max_cloud: f64,
    /// Half-width of the time window, in days.
    pub window_days: u32,
}

impl Default for QueryFilter {
    fn default() -> Self {
        QueryFilter {
            max_nodata: 0.0,
            max_cloud: 0.05,
            window_days: 45,
        }
    }
}

impl QueryFilter {
    pub fn with_window(self, window_days: u32) -> Self {
        QueryFilter {
            window_days,
            ..self
        }
    }

    /// Quality part of the predicate; the time window is checked separately.
    pub fn accepts_quality(&self, r: &ImageRecord) -> bool {
        r.nodata_ratio <= self.max_nodata
            && (!r.modality.sensor().is_eo() || r.cloud_ratio <= self.max_cloud)
    }
}

/// Metadata supplied with a raster at ingest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestMeta {
    pub modality: ModalityId,
    pub tile_id: String,
    pub date: CalendarDate,
}

/// One line of a bulk ingest manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub raster: String,
    pub sensor: Sensor,
    pub band: String,
    pub tile_id: String,
    pub date: CalendarDate,
}

impl ManifestEntry {
    pub fn meta(&self) -> raster::Result<IngestMeta> {
        Ok(IngestMeta {
            modality: ModalityId::new(self.sensor, &self.band)?,
            tile_id: self.tile_id.clone(),
            date: self.date,
        })
    }
}

/// Parses a JSON-lines manifest. Relative raster paths are resolved against
/// the manifest's directory. Blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| CatalogError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
        ModalityId::new(entry.sensor, &entry.band).map_err(|e| CatalogError::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        if Path::new(&entry.raster).is_relative() {
            entry.raster = base.join(&entry.raster).to_string_lossy().into_owned();
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> std::io::Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        text.push('\n');
    }
    raster::write_atomic(path.as_ref(), text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalityStats {
    pub modality: ModalityId,
    pub count: usize,
    pub first_date: CalendarDate,
    pub last_date: CalendarDate,
    /// Inclusive span in days; a single date spans one day.
    pub span_days: i64,
}

#[derive(Serialize, Deserialize)]
struct StoreDoc {
    format: String,
    schema_version: u32,
    next_id: u64,
    records: Vec<ImageRecord>,
}

#[derive(Default)]
struct State {
    next_id: u64,
    records: Vec<ImageRecord>,
    keys: HashSet<(ModalityId, String, CalendarDate)>,
    /// (tile, sensor) → record positions sorted by (date, position).
    by_tile_sensor: BTreeMap<(String, Sensor), Vec<usize>>,
}

impl State {
    fn insert(&mut self, rec: ImageRecord) -> Result<()> {
        let key = (rec.modality.clone(), rec.tile_id.clone(), rec.date);
        if self.keys.contains(&key) {
            return Err(CatalogError::Duplicate {
                modality: rec.modality,
                tile_id: rec.tile_id,
                date: rec.date,
            });
        }
        self.keys.insert(key);
        let pos = self.records.len();
        let list = self
            .by_tile_sensor
            .entry((rec.tile_id.clone(), rec.modality.sensor()))
            .or_default();
        let at = list.partition_point(|&p| self.records[p].date <= rec.date);
        list.insert(at, pos);
        self.next_id = self.next_id.max(rec.id + 1);
        self.records.push(rec);
        Ok(())
    }
}

/// Handle to an open catalog.
pub struct Catalog {
    path: Option<PathBuf>,
    cloud_classes: BTreeSet<i32>,
    state: RwLock<State>,
}

impl Catalog {
    /// Creates an empty catalog at `path` or opens the existing one.
    pub fn create_or_open(path: impl AsRef<Path>) -> Result<Catalog> {
        let path = path.as_ref().to_path_buf();
        let state = if path.exists() {
            load_state(&path)?
        } else {
            let state = State::default();
            persist(&path, &state)?;
            state
        };
        Ok(Catalog {
            path: Some(path),
            cloud_classes: DEFAULT_CLOUD_CLASSES.into_iter().collect(),
            state: RwLock::new(state),
        })
    }

    /// A catalog that lives only in memory.
    pub fn in_memory() -> Catalog {
        Catalog {
            path: None,
            cloud_classes: DEFAULT_CLOUD_CLASSES.into_iter().collect(),
            state: RwLock::new(State::default()),
        }
    }

    /// QA codes treated as cloud when computing `cloud_ratio` at ingest.
    pub fn with_cloud_classes(mut self, classes: impl IntoIterator<Item = i32>) -> Self {
        self.cloud_classes = classes.into_iter().collect();
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<ImageRecord> {
        self.state.read().unwrap().records.clone()
    }

    pub fn get(&self, id: u64) -> Option<ImageRecord> {
        let state = self.state.read().unwrap();
        state.records.iter().find(|r| r.id == id).cloned()
    }

    /// Computes quality ratios for `raster_path` and persists a new record.
    pub fn ingest(&self, raster_path: impl AsRef<Path>, meta: &IngestMeta) -> Result<ImageRecord> {
        let mut out = self.ingest_batch(&[(raster_path.as_ref().to_path_buf(), meta.clone())]);
        out.pop().expect("one result per item")
    }

    /// Ingests many rasters, persisting once at the end. Results follow the
    /// input order; failed items do not affect the others.
    pub fn ingest_batch(&self, items: &[(PathBuf, IngestMeta)]) -> Vec<Result<ImageRecord>> {
        let prepared: Vec<Result<(PathBuf, IngestMeta, u32, u32, f64, f64)>> = items
            .iter()
            .map(|(path, meta)| {
                let (w, h, nodata, cloud) = self.measure(path, meta)?;
                Ok((path.clone(), meta.clone(), w, h, nodata, cloud))
            })
            .collect();

        let mut state = self.state.write().unwrap();
        let mut results = Vec::with_capacity(items.len());
        let mut changed = false;
        for item in prepared {
            results.push(item.and_then(|(path, meta, width, height, nodata, cloud)| {
                let rec = ImageRecord {
                    id: state.next_id,
                    modality: meta.modality,
                    tile_id: meta.tile_id,
                    date: meta.date,
                    width,
                    height,
                    nodata_ratio: nodata,
                    cloud_ratio: cloud,
                    path: path.to_string_lossy().into_owned(),
                };
                state.insert(rec.clone())?;
                changed = true;
                Ok(rec)
            }));
        }
        if changed {
            if let Some(path) = &self.path {
                if let Err(e) = persist(path, &state) {
                    let msg = e.to_string();
                    return results
                        .into_iter()
                        .map(|r| r.and(Err(CatalogError::Corrupt(msg.clone()))))
                        .collect();
                }
            }
        }
        results
    }

    fn measure(&self, path: &Path, meta: &IngestMeta) -> Result<(u32, u32, f64, f64)> {
        let wrap = |source: RasterError| CatalogError::Raster {
            path: path.display().to_string(),
            source,
        };
        let r = raster::read_raster(path).map_err(wrap)?;
        let nodata = nodata_ratio(&r);
        let qa = raster::qa_path(path);
        let cloud = if meta.modality.sensor().is_eo() && qa.exists() {
            let qa_raster = raster::read_raster(&qa).map_err(wrap)?;
            qa_cloud_ratio(&qa_raster, &self.cloud_classes).map_err(wrap)?
        } else {
            0.0
        };
        Ok((r.width(), r.height(), nodata, cloud))
    }

    /// Records of `sensor` (and `band`, when given) on `tile_id` within
    /// `filter.window_days` of `center` that pass the quality thresholds,
    /// ordered by |gap|, then earlier date, then band name.
    pub fn query_images(
        &self,
        sensor: Sensor,
        band: Option<&str>,
        tile_id: &str,
        center: CalendarDate,
        filter: &QueryFilter,
    ) -> Vec<ImageRecord> {
        let state = self.state.read().unwrap();
        let Some(list) = state.by_tile_sensor.get(&(tile_id.to_string(), sensor)) else {
            return Vec::new();
        };
        let w = i64::from(filter.window_days);
        let start = center.add_days(-w);
        let end = center.add_days(w);
        let first = list.partition_point(|&p| state.records[p].date < start);
        let mut out: Vec<ImageRecord> = list[first..]
            .iter()
            .map(|&p| &state.records[p])
            .take_while(|r| r.date <= end)
            .filter(|r| band.is_none_or(|b| r.modality.band() == b))
            .filter(|r| filter.accepts_quality(r))
            .cloned()
            .collect();
        sort_by_proximity(&mut out, center);
        out
    }

    pub fn stats(&self) -> Vec<ModalityStats> {
        let state = self.state.read().unwrap();
        let mut acc: BTreeMap<ModalityId, (usize, CalendarDate, CalendarDate)> = BTreeMap::new();
        for r in &state.records {
            acc.entry(r.modality.clone())
                .and_modify(|(n, lo, hi)| {
                    *n += 1;
                    *lo = (*lo).min(r.date);
                    *hi = (*hi).max(r.date);
                })
                .or_insert((1, r.date, r.date));
        }
        acc.into_iter()
            .map(|(modality, (count, first_date, last_date))| ModalityStats {
                modality,
                count,
                first_date,
                last_date,
                span_days: last_date.days_since(first_date) + 1,
            })
            .collect()
    }
}

/// Ordering used by every time-window query: |gap| ascending, then earlier
/// date, then band name, then id.
pub fn sort_by_proximity(records: &mut [ImageRecord], center: CalendarDate) {
    records.sort_by(|a, b| {
        let ga = a.date.days_since(center).abs();
        let gb = b.date.days_since(center).abs();
        ga.cmp(&gb)
            .then(a.date.cmp(&b.date))
            .then_with(|| a.modality.band().cmp(b.modality.band()))
            .then(a.id.cmp(&b.id))
    });
}

fn load_state(path: &Path) -> Result<State> {
    let bytes = fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| CatalogError::Corrupt(format!("{}: {e}", path.display())))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(CATALOG_FORMAT) {
        return Err(CatalogError::Corrupt(format!(
            "{} is not a catalog store",
            path.display()
        )));
    }
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CatalogError::Corrupt("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(CatalogError::VersionMismatch {
            found: version as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let doc: StoreDoc =
        serde_json::from_value(value).map_err(|e| CatalogError::Corrupt(e.to_string()))?;
    let mut state = State::default();
    for rec in doc.records {
        if !(0.0..=1.0).contains(&rec.nodata_ratio) || !(0.0..=1.0).contains(&rec.cloud_ratio) {
            return Err(CatalogError::Corrupt(format!(
                "record {} has ratios outside [0, 1]",
                rec.id
            )));
        }
        state
            .insert(rec)
            .map_err(|e| CatalogError::Corrupt(e.to_string()))?;
    }
    state.next_id = state.next_id.max(doc.next_id);
    Ok(state)
}

fn persist(path: &Path, state: &State) -> Result<()> {
    let doc = StoreDoc {
        format: CATALOG_FORMAT.to_string(),
        schema_version: SCHEMA_VERSION,
        next_id: state.next_id,
        records: state.records.clone(),
    };
    let bytes = serde_json::to_vec(&doc).map_err(|e| CatalogError::Corrupt(e.to_string()))?;
    raster::write_durable(path, &bytes)?;
    Ok(())
}
