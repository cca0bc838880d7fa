//! Deterministic synthetic multimodal scenes.
//!
//! Every tile carries `latent_fields` smooth value-noise fields defined over
//! continuous tile coordinates, so grids of different sizes sample the same
//! terrain. Fields drift slowly: each one blends between independent
//! realizations keyed to consecutive `drift_days` periods. A band is an
//! affine combination of the fields plus Gaussian noise, in units of the
//! band's value range. Optical epochs may carry cloud blobs (recorded in a
//! QA raster with codes 9 core, 8 edge, 4 clear), SAR bands get
//! multiplicative speckle, and whole observations can be dropped or striped
//! with nodata. All randomness is derived from hashes of the seed and the
//! observation identity, so output does not depend on generation order.

mod queries;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{write_manifest, ManifestEntry};
use crate::hash::{fnv1a, mix, splitmix64, unit};
use crate::par;
use crate::raster::{self, write_meta, write_raster, CalendarDate, Raster, RasterMeta, Sensor};

pub use queries::{make_query_set, HoldoutRules, QuerySet, QuerySpec, QUERY_CSV_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("not enough {kind} query candidates: wanted {wanted}, found {found}")]
    NotEnoughCandidates {
        kind: &'static str,
        wanted: usize,
        found: usize,
    },
    #[error(transparent)]
    Raster(#[from] raster::RasterError),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

/// Per-sensor band mixing: `value = lo + (hi - lo) * (offset + w·fields + noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMix {
    /// One per band, in band-table order.
    pub offsets: Vec<f64>,
    /// `weights[band][field]`.
    pub weights: Vec<Vec<f64>>,
    /// Standard deviation of per-pixel noise, as a fraction of the range.
    pub noise_sigma: f64,
}

impl SensorMix {
    /// The built-in mix for `sensor` with `k` latent fields.
    pub fn default_for(sensor: Sensor, k: usize) -> SensorMix {
        let n = sensor.bands().len();
        let weight = |b: usize, j: usize, scale: f64| {
            scale * ((b as f64 * 0.9 + j as f64 * 1.7 + 0.3).cos())
        };
        match sensor {
            Sensor::Sentinel1 => SensorMix {
                offsets: (0..n).map(|b| 0.72 - 0.1 * b as f64).collect(),
                weights: (0..n)
                    .map(|b| (0..k).map(|j| weight(b, j, 0.05)).collect())
                    .collect(),
                noise_sigma: 0.004,
            },
            _ => SensorMix {
                offsets: sensor
                    .bands()
                    .iter()
                    .enumerate()
                    .map(|(b, name)| {
                        if name.starts_with("ST_") {
                            0.45
                        } else {
                            0.08 + 0.02 * b as f64
                        }
                    })
                    .collect(),
                weights: (0..n)
                    .map(|b| (0..k).map(|j| weight(b, j, 0.06)).collect())
                    .collect(),
                noise_sigma: 0.003,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub tile_count: usize,
    /// Square grid size of Sentinel-1/2 rasters.
    pub sentinel_size: u32,
    /// Square grid size of Landsat rasters.
    pub landsat_size: u32,
    pub dates: BTreeMap<Sensor, Vec<CalendarDate>>,
    pub latent_fields: usize,
    /// Lattice cells across a tile for the coarsest noise octave.
    pub field_cells: u32,
    pub octaves: u32,
    /// Length of one drift period of the latent fields.
    pub drift_days: u32,
    /// Overrides of the built-in band mixes.
    pub mixing: BTreeMap<Sensor, SensorMix>,
    /// Chance that an optical epoch carries cloud blobs.
    pub cloud_probability: f64,
    /// Chance that a single (modality, date) observation is missing.
    pub gap_probability: f64,
    /// Chance that an epoch has a stripe of nodata rows.
    pub nodata_probability: f64,
    /// Variance of the unit-mean gamma speckle applied to SAR intensity.
    pub speckle_variance: f64,
}

fn every(start: &str, step: i64, count: usize) -> Vec<CalendarDate> {
    let start: CalendarDate = start.parse().expect("valid literal date");
    (0..count)
        .map(|i| start.add_days(step * i as i64))
        .collect()
}

impl Default for SceneConfig {
    /// Two tiles over 2019. Sentinel-1 is dense until June and then only
    /// observed on three isolated dates, each near a Sentinel-2 acquisition.
    fn default() -> Self {
        let mut s1 = every("2019-01-05", 12, 15);
        s1.extend(
            ["2019-08-31", "2019-10-30", "2019-12-19"].map(|d| d.parse::<CalendarDate>().unwrap()),
        );
        let dates = BTreeMap::from([
            (Sensor::Sentinel1, s1),
            (Sensor::Sentinel2, every("2019-01-03", 15, 25)),
            (Sensor::Landsat5, every("2011-03-02", 16, 8)),
            (Sensor::Landsat8, every("2019-01-08", 16, 22)),
        ]);
        SceneConfig {
            seed: 0,
            tile_count: 4,
            sentinel_size: 256,
            landsat_size: 85,
            dates,
            latent_fields: 4,
            field_cells: 6,
            octaves: 3,
            drift_days: 120,
            mixing: BTreeMap::new(),
            cloud_probability: 0.2,
            gap_probability: 0.05,
            nodata_probability: 0.03,
            speckle_variance: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.tile_count == 0 || self.latent_fields == 0 || self.octaves == 0 {
            return bad("tile_count, latent_fields and octaves must be positive".into());
        }
        if self.sentinel_size == 0 || self.landsat_size == 0 || self.field_cells == 0 {
            return bad("grid sizes and field_cells must be positive".into());
        }
        if self.drift_days == 0 {
            return bad("drift_days must be positive".into());
        }
        for (name, p) in [
            ("cloud_probability", self.cloud_probability),
            ("gap_probability", self.gap_probability),
            ("nodata_probability", self.nodata_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.speckle_variance >= 0.0) {
            return bad("speckle_variance must be >= 0".into());
        }
        for (sensor, mix) in &self.mixing {
            let n = sensor.bands().len();
            if mix.offsets.len() != n
                || mix.weights.len() != n
                || mix.weights.iter().any(|w| w.len() != self.latent_fields)
            {
                return bad(format!(
                    "{sensor} mix must have {n} offsets and {n}x{} weights",
                    self.latent_fields
                ));
            }
            if !(mix.noise_sigma >= 0.0) {
                return bad(format!("{sensor} noise_sigma must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn mix_for(&self, sensor: Sensor) -> SensorMix {
        self.mixing
            .get(&sensor)
            .cloned()
            .unwrap_or_else(|| SensorMix::default_for(sensor, self.latent_fields))
    }

    pub fn grid_size(&self, sensor: Sensor) -> u32 {
        if sensor.is_landsat() {
            self.landsat_size
        } else {
            self.sentinel_size
        }
    }

    pub fn tile_ids(&self) -> Vec<String> {
        (0..self.tile_count).map(|i| format!("T{i:02}")).collect()
    }
}

/// What `generate` wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub manifest: PathBuf,
    pub rasters: usize,
    pub dropped: usize,
    pub cloudy_epochs: usize,
    pub nodata_epochs: usize,
}

/// File name of a scene raster, also used for truth rasters.
pub fn raster_name(sensor: Sensor, band: &str, tile: &str, date: CalendarDate) -> String {
    format!("{}_{band}_{tile}_{date}.mcrs", sensor.name())
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

struct Terrain {
    state: u64,
    cells: u32,
    octaves: u32,
}

impl Terrain {
    fn lattice(&self, field: u64, period: i64, octave: u32, ix: i64, iy: i64) -> f64 {
        let h = mix(
            mix(
                mix(
                    mix(mix(self.state, field), period as u64),
                    u64::from(octave),
                ),
                ix as u64,
            ),
            iy as u64,
        );
        2.0 * unit(h) - 1.0
    }

    /// Value noise in roughly [-1, 1] at tile coordinates `(x, y)` in [0, 1].
    fn noise(&self, field: u64, period: i64, x: f64, y: f64) -> f64 {
        let mut total = 0.0;
        let mut amp = 1.0;
        let mut norm = 0.0;
        for o in 0..self.octaves {
            let cells = f64::from(self.cells << o);
            let (fx, fy) = (x * cells, y * cells);
            let (ix, iy) = (fx.floor(), fy.floor());
            let (tx, ty) = (smoothstep(fx - ix), smoothstep(fy - iy));
            let (ix, iy) = (ix as i64, iy as i64);
            let v00 = self.lattice(field, period, o, ix, iy);
            let v10 = self.lattice(field, period, o, ix + 1, iy);
            let v01 = self.lattice(field, period, o, ix, iy + 1);
            let v11 = self.lattice(field, period, o, ix + 1, iy + 1);
            let top = v00 + tx * (v10 - v00);
            let bottom = v01 + tx * (v11 - v01);
            total += amp * (top + ty * (bottom - top));
            norm += amp;
            amp *= 0.5;
        }
        total / norm
    }

    /// `k` fields on a `size`×`size` grid at `day` (days since epoch).
    fn fields(&self, k: usize, size: u32, day: i64, drift_days: u32) -> Vec<Vec<f64>> {
        let period = day.div_euclid(i64::from(drift_days));
        let t = smoothstep(day.rem_euclid(i64::from(drift_days)) as f64 / f64::from(drift_days));
        let n = size as usize;
        (0..k)
            .map(|j| {
                let mut out = Vec::with_capacity(n * n);
                for py in 0..n {
                    let y = (py as f64 + 0.5) / n as f64;
                    for px in 0..n {
                        let x = (px as f64 + 0.5) / n as f64;
                        let a = self.noise(j as u64, period, x, y);
                        let b = self.noise(j as u64, period + 1, x, y);
                        out.push(a + t * (b - a));
                    }
                }
                out
            })
            .collect()
    }
}

struct Cloud {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Cloud {
    /// Normalized elliptical distance; below 1 is inside.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        (u * u + v * v).sqrt()
    }
}

const QA_CLEAR: f32 = 4.0;
const QA_CLOUD_EDGE: f32 = 8.0;
const QA_CLOUD_CORE: f32 = 9.0;
const CLOUD_CORE: f64 = 0.7;

struct Epoch {
    tile: String,
    sensor: Sensor,
    date: CalendarDate,
}

struct EpochOutput {
    entries: Vec<ManifestEntry>,
    dropped: usize,
    cloudy: bool,
    nodata: bool,
}

fn epoch_rng(cfg: &SceneConfig, e: &Epoch, what: &str) -> ChaCha8Rng {
    let h = mix(
        mix(
            mix(
                mix(splitmix64(cfg.seed), fnv1a(e.tile.as_bytes())),
                fnv1a(e.sensor.name().as_bytes()),
            ),
            fnv1a(e.date.to_string().as_bytes()),
        ),
        fnv1a(what.as_bytes()),
    );
    ChaCha8Rng::seed_from_u64(h)
}

fn epoch_day(date: CalendarDate) -> i64 {
    date.days_since(CalendarDate::new(1970, 1, 1).expect("valid date"))
}

/// One rendered observation: every band that was not dropped, plus the QA
/// raster for optical sensors.
#[derive(Debug, Clone)]
pub struct Observation {
    pub bands: Vec<(String, Raster)>,
    pub qa: Option<Raster>,
    pub dropped: usize,
    pub cloudy: bool,
    pub nodata: bool,
}

/// Renders one (tile, sensor, date) observation in memory. `generate`
/// writes exactly these rasters.
pub fn render(
    cfg: &SceneConfig,
    tile: &str,
    sensor: Sensor,
    date: CalendarDate,
) -> Result<Observation> {
    cfg.validate()?;
    let epoch = Epoch {
        tile: tile.to_string(),
        sensor,
        date,
    };
    let e = &epoch;
    let size = cfg.grid_size(e.sensor);
    let n = (size * size) as usize;
    let terrain = Terrain {
        state: mix(splitmix64(cfg.seed), fnv1a(e.tile.as_bytes())),
        cells: cfg.field_cells,
        octaves: cfg.octaves,
    };
    let fields = terrain.fields(cfg.latent_fields, size, epoch_day(e.date), cfg.drift_days);
    let mix_cfg = cfg.mix_for(e.sensor);

    let mut events = epoch_rng(cfg, e, "events");
    let cloudy = e.sensor.is_eo() && events.random::<f64>() < cfg.cloud_probability;
    let nodata = events.random::<f64>() < cfg.nodata_probability;
    let dropped: Vec<bool> = e
        .sensor
        .bands()
        .iter()
        .map(|_| events.random::<f64>() < cfg.gap_probability)
        .collect();

    // cover[i] in [0, 1]: how much of pixel i is cloud; qa holds the codes
    let mut cover = vec![0.0f64; n];
    let mut qa = vec![QA_CLEAR; n];
    if cloudy {
        let blobs = events.random_range(1..=3);
        let clouds: Vec<Cloud> = (0..blobs)
            .map(|_| Cloud {
                cx: events.random_range(0.15..0.85),
                cy: events.random_range(0.15..0.85),
                rx: events.random_range(0.12..0.3),
                ry: events.random_range(0.12..0.3),
                angle: events.random_range(0.0..std::f64::consts::PI),
            })
            .collect();
        for py in 0..size as usize {
            let y = (py as f64 + 0.5) / f64::from(size);
            for px in 0..size as usize {
                let x = (px as f64 + 0.5) / f64::from(size);
                let i = py * size as usize + px;
                let d = clouds
                    .iter()
                    .map(|c| c.distance(x, y))
                    .fold(f64::INFINITY, f64::min);
                if d < CLOUD_CORE {
                    cover[i] = 1.0;
                    qa[i] = QA_CLOUD_CORE;
                } else if d < 1.0 {
                    cover[i] = (1.0 - d) / (1.0 - CLOUD_CORE);
                    qa[i] = QA_CLOUD_EDGE;
                }
            }
        }
    }
    let mut mask = vec![false; n];
    if nodata {
        let rows = size as usize;
        let height = ((rows as f64) * events.random_range(0.05..0.2)).ceil() as usize;
        let start = events.random_range(0..rows.saturating_sub(height).max(1));
        for row in start..(start + height).min(rows) {
            mask[row * rows..(row + 1) * rows].fill(true);
        }
    }

    let qa_raster = if e.sensor.is_eo() {
        Some(Raster::from_values(size, size, qa, (0.0, 255.0))?)
    } else {
        None
    };
    let speckle = (e.sensor == Sensor::Sentinel1 && cfg.speckle_variance > 0.0).then(|| {
        let shape = 1.0 / cfg.speckle_variance;
        Gamma::new(shape, cfg.speckle_variance).expect("positive gamma parameters")
    });

    let mut bands = Vec::new();
    for (b, band) in e.sensor.bands().iter().enumerate() {
        if dropped[b] {
            continue;
        }
        let mut rng = epoch_rng(cfg, e, band);
        let noise = Normal::new(0.0, mix_cfg.noise_sigma.max(0.0)).expect("finite sigma");
        let modality = raster::ModalityId::new(e.sensor, band)?;
        let (lo, hi) = modality.value_range();
        let (lo, hi) = (f64::from(lo), f64::from(hi));
        let cloud_target = if band.starts_with("ST_") { 0.35 } else { 0.85 };
        let values: Vec<f32> = (0..n)
            .map(|i| {
                let mut v = mix_cfg.offsets[b]
                    + mix_cfg.weights[b]
                        .iter()
                        .zip(&fields)
                        .map(|(w, f)| w * f[i])
                        .sum::<f64>()
                    + noise.sample(&mut rng);
                v += cover[i] * (cloud_target - v);
                let mut value = lo + (hi - lo) * v;
                if let Some(g) = &speckle {
                    let linear = 10f64.powf(value / 10.0) * g.sample(&mut rng);
                    value = 10.0 * linear.max(1e-12).log10();
                }
                if mask[i] {
                    0.0
                } else {
                    value.clamp(lo, hi) as f32
                }
            })
            .collect();
        let r = Raster::new(size, size, values, mask.clone(), modality.value_range())?;
        bands.push((band.to_string(), r));
    }
    Ok(Observation {
        dropped: dropped.iter().filter(|&&d| d).count(),
        bands,
        qa: qa_raster,
        cloudy,
        nodata,
    })
}

fn render_epoch(cfg: &SceneConfig, e: &Epoch, out_dir: &Path) -> Result<EpochOutput> {
    let obs = render(cfg, &e.tile, e.sensor, e.date)?;
    let tile_dir = out_dir.join(&e.tile);
    fs::create_dir_all(&tile_dir)?;
    let mut entries = Vec::new();
    for (band, r) in &obs.bands {
        let name = raster_name(e.sensor, band, &e.tile, e.date);
        let path = tile_dir.join(&name);
        write_raster(r, &path)?;
        write_meta(
            &path,
            &RasterMeta {
                sensor: e.sensor,
                band: band.to_string(),
                tile_id: e.tile.clone(),
                date: e.date,
                source: format!("synthetic seed {}", cfg.seed),
            },
        )?;
        if let Some(qa) = &obs.qa {
            write_raster(qa, raster::qa_path(&path))?;
        }
        entries.push(ManifestEntry {
            raster: format!("{}/{name}", e.tile),
            sensor: e.sensor,
            band: band.to_string(),
            tile_id: e.tile.clone(),
            date: e.date,
        });
    }
    Ok(EpochOutput {
        entries,
        dropped: obs.dropped,
        cloudy: obs.cloudy,
        nodata: obs.nodata,
    })
}

/// Writes every scene raster, its sidecars, `scene.json` and
/// `manifest.jsonl` under `out_dir`.
pub fn generate(cfg: &SceneConfig, out_dir: impl AsRef<Path>) -> Result<SceneSummary> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut epochs = Vec::new();
    for tile in cfg.tile_ids() {
        for (&sensor, dates) in &cfg.dates {
            let mut dates = dates.clone();
            dates.sort();
            dates.dedup();
            for date in dates {
                epochs.push(Epoch {
                    tile: tile.clone(),
                    sensor,
                    date,
                });
            }
        }
    }
    let outputs = par::map(&epochs, |e| render_epoch(cfg, e, out_dir));
    let mut summary = SceneSummary {
        manifest: out_dir.join("manifest.jsonl"),
        rasters: 0,
        dropped: 0,
        cloudy_epochs: 0,
        nodata_epochs: 0,
    };
    let mut entries = Vec::new();
    for out in outputs {
        let out = out?;
        summary.rasters += out.entries.len();
        summary.dropped += out.dropped;
        summary.cloudy_epochs += usize::from(out.cloudy);
        summary.nodata_epochs += usize::from(out.nodata);
        entries.extend(out.entries);
    }
    let scene = serde_json::to_vec_pretty(cfg).expect("scene config serializes");
    raster::write_atomic(&out_dir.join("scene.json"), &scene)?;
    write_manifest(&summary.manifest, &entries)?;
    Ok(summary)
}
