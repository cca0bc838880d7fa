//! Hold-out query sets with a known routing split.
//!
//! Works directly on the manifest with brute-force scans rather than through
//! the catalog or the resolver, so it can serve as an oracle for both.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{raster_name, Result, SynthError};
use crate::catalog::{read_manifest, write_manifest, ManifestEntry};
use crate::hash::{fnv1a, mix, splitmix64};
use crate::par;
use crate::pattern::{CompletionQuery, FallbackTable, Route, LANDSAT_OUTPUT_SIZE};
use crate::pipeline::write_queries;
use crate::raster::{
    self, bilinear_resample, nodata_ratio, qa_cloud_ratio, read_raster, write_raster, CalendarDate,
    ModalityId, Sensor, DEFAULT_CLOUD_CLASSES,
};

pub const QUERY_CSV_HEADER: [&str; 4] = ["sensor", "band", "tile_id", "date"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoldoutRules {
    pub n_queries: usize,
    /// Share of queries that must fall back to inter-modal generation.
    pub inter_fraction: f64,
    /// Must match the completion filter's window.
    pub window_days: u32,
    pub cond_window_days: u32,
    pub max_nodata: f64,
    pub max_cloud: f64,
    pub cloud_classes: Vec<i32>,
    /// Sensors intra-modal queries are drawn from.
    pub intra_sensors: Vec<Sensor>,
    pub fallback: FallbackTable,
}

impl Default for HoldoutRules {
    fn default() -> Self {
        HoldoutRules {
            n_queries: 100,
            inter_fraction: 0.16,
            window_days: 45,
            cond_window_days: 5,
            max_nodata: 0.0,
            max_cloud: 0.05,
            cloud_classes: DEFAULT_CLOUD_CLASSES.to_vec(),
            intra_sensors: Sensor::ALL.to_vec(),
            fallback: FallbackTable::default(),
        }
    }
}

impl HoldoutRules {
    pub fn n_inter(&self) -> usize {
        (self.n_queries as f64 * self.inter_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub query: CompletionQuery,
    /// Route the query was constructed to take.
    pub expected: Route,
    pub truth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub queries_csv: PathBuf,
    pub train_manifest: PathBuf,
    pub truth_dir: PathBuf,
    pub specs: Vec<QuerySpec>,
    /// Manifest entries kept out of the training manifest.
    pub withheld: usize,
}

struct Rec {
    entry: ManifestEntry,
    modality: ModalityId,
    usable: bool,
}

struct Index {
    recs: Vec<Rec>,
    by_tile_sensor: BTreeMap<(String, Sensor), Vec<usize>>,
}

impl Index {
    fn same(&self, i: usize) -> &[usize] {
        let r = &self.recs[i];
        &self.by_tile_sensor[&(r.entry.tile_id.clone(), r.entry.sensor)]
    }

    fn within(&self, a: usize, b: usize, days: u32) -> bool {
        self.recs[a]
            .entry
            .date
            .days_since(self.recs[b].entry.date)
            .abs()
            <= i64::from(days)
    }

    /// Whether `q` keeps a usable same-sensor neighbor outside `withheld`.
    fn has_neighbor(&self, q: usize, withheld: &BTreeSet<usize>, window: u32) -> bool {
        self.same(q).iter().any(|&r| {
            r != q && self.recs[r].usable && !withheld.contains(&r) && self.within(q, r, window)
        })
    }
}

fn measure(entry: &ManifestEntry, rules: &HoldoutRules) -> Result<bool> {
    let r = read_raster(&entry.raster)?;
    if nodata_ratio(&r) > rules.max_nodata {
        return Ok(false);
    }
    let qa = raster::qa_path(&entry.raster);
    if entry.sensor.is_eo() && qa.exists() {
        let classes: BTreeSet<i32> = rules.cloud_classes.iter().copied().collect();
        return Ok(qa_cloud_ratio(&read_raster(&qa)?, &classes)? <= rules.max_cloud);
    }
    Ok(true)
}

/// Splits a scene manifest into a training manifest, a query list and the
/// withheld truth rasters.
///
/// Inter-modal queries are cells of a fallback target sensor for which,
/// once every record of that sensor within the window on the tile is
/// withheld, a complete usable conditioning date exists within
/// `cond_window_days`. Intra-modal queries are usable cells that keep at
/// least one usable same-sensor neighbor within the window after all
/// withholding. Truth for Landsat queries is resampled to the output size.
pub fn make_query_set(
    manifest: impl AsRef<Path>,
    rules: &HoldoutRules,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<QuerySet> {
    if !(0.0..=1.0).contains(&rules.inter_fraction) {
        return Err(SynthError::Config(format!(
            "inter_fraction must be in [0, 1], got {}",
            rules.inter_fraction
        )));
    }
    let out_dir = out_dir.as_ref();
    let entries = read_manifest(manifest)?;
    let usable = par::map(&entries, |e| measure(e, rules));
    let mut recs = Vec::with_capacity(entries.len());
    for (entry, ok) in entries.into_iter().zip(usable) {
        let modality = ModalityId::new(entry.sensor, &entry.band)?;
        recs.push(Rec {
            entry,
            modality,
            usable: ok?,
        });
    }
    let mut by_tile_sensor: BTreeMap<(String, Sensor), Vec<usize>> = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        by_tile_sensor
            .entry((r.entry.tile_id.clone(), r.entry.sensor))
            .or_default()
            .push(i);
    }
    let idx = Index {
        recs,
        by_tile_sensor,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix(splitmix64(seed), fnv1a(b"query-set")));

    let n_inter = rules.n_inter();
    let n_intra = rules.n_queries - n_inter;
    let mut withheld: BTreeSet<usize> = BTreeSet::new();
    let mut protected: BTreeSet<usize> = BTreeSet::new();
    let mut inter: Vec<usize> = Vec::new();

    let mut inter_candidates: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, r) in idx.recs.iter().enumerate() {
        if !r.usable {
            continue;
        }
        for rule in rules.fallback.rules_for(r.entry.sensor) {
            let Some(sources) = idx
                .by_tile_sensor
                .get(&(r.entry.tile_id.clone(), rule.source))
            else {
                continue;
            };
            let nearby: Vec<usize> = sources
                .iter()
                .copied()
                .filter(|&s| idx.within(i, s, rules.cond_window_days))
                .collect();
            let mut dates: BTreeSet<CalendarDate> = BTreeSet::new();
            for &s in &nearby {
                dates.insert(idx.recs[s].entry.date);
            }
            let complete = dates.iter().any(|&d| {
                rule.bands.iter().all(|b| {
                    nearby.iter().any(|&s| {
                        let e = &idx.recs[s];
                        e.entry.date == d && e.modality.band() == b && e.usable
                    })
                })
            });
            if complete {
                inter_candidates.push((i, nearby));
                break;
            }
        }
    }
    inter_candidates.shuffle(&mut rng);
    // prefer cells that cost the fewest withheld neighbors
    inter_candidates.sort_by_key(|(c, _)| {
        idx.same(*c)
            .iter()
            .filter(|&&r| idx.within(*c, r, rules.window_days))
            .count()
    });
    for (c, nearby) in inter_candidates.into_iter().take(n_inter) {
        withheld.extend(
            idx.same(c)
                .iter()
                .copied()
                .filter(|&r| idx.within(c, r, rules.window_days)),
        );
        protected.extend(nearby);
        inter.push(c);
    }
    if inter.len() < n_inter {
        return Err(SynthError::NotEnoughCandidates {
            kind: "inter-modal",
            wanted: n_inter,
            found: inter.len(),
        });
    }

    let mut intra_candidates: Vec<usize> = (0..idx.recs.len())
        .filter(|&i| {
            let r = &idx.recs[i];
            r.usable
                && rules.intra_sensors.contains(&r.entry.sensor)
                && !withheld.contains(&i)
                && !protected.contains(&i)
        })
        .collect();
    intra_candidates.shuffle(&mut rng);
    let mut intra: Vec<usize> = Vec::new();
    for c in intra_candidates {
        if intra.len() == n_intra {
            break;
        }
        withheld.insert(c);
        let ok = idx.has_neighbor(c, &withheld, rules.window_days)
            && intra
                .iter()
                .all(|&q| idx.has_neighbor(q, &withheld, rules.window_days));
        if ok {
            intra.push(c);
        } else {
            withheld.remove(&c);
        }
    }
    if intra.len() < n_intra {
        return Err(SynthError::NotEnoughCandidates {
            kind: "intra-modal",
            wanted: n_intra,
            found: intra.len(),
        });
    }

    let truth_dir = out_dir.join("truth");
    fs::create_dir_all(&truth_dir)?;
    let mut chosen: Vec<(usize, Route)> = inter
        .iter()
        .map(|&i| (i, Route::InterModal))
        .chain(intra.iter().map(|&i| (i, Route::IntraModal)))
        .collect();
    chosen.sort_by(|a, b| {
        let (x, y) = (&idx.recs[a.0], &idx.recs[b.0]);
        (&x.entry.tile_id, x.entry.date, &x.modality).cmp(&(
            &y.entry.tile_id,
            y.entry.date,
            &y.modality,
        ))
    });
    let specs = par::map(&chosen, |&(i, expected)| -> Result<QuerySpec> {
        let r = &idx.recs[i];
        let mut truth = read_raster(&r.entry.raster)?;
        if r.entry.sensor.is_landsat()
            && (truth.width(), truth.height()) != (LANDSAT_OUTPUT_SIZE, LANDSAT_OUTPUT_SIZE)
        {
            truth = bilinear_resample(&truth, LANDSAT_OUTPUT_SIZE, LANDSAT_OUTPUT_SIZE)?;
        }
        let path = truth_dir.join(raster_name(
            r.entry.sensor,
            &r.entry.band,
            &r.entry.tile_id,
            r.entry.date,
        ));
        write_raster(&truth, &path)?;
        Ok(QuerySpec {
            query: CompletionQuery {
                modality: r.modality.clone(),
                tile_id: r.entry.tile_id.clone(),
                date: r.entry.date,
            },
            expected,
            truth: path,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let train: Vec<ManifestEntry> = idx
        .recs
        .iter()
        .enumerate()
        .filter(|(i, _)| !withheld.contains(i))
        .map(|(_, r)| {
            let mut e = r.entry.clone();
            if let Ok(abs) = fs::canonicalize(&e.raster) {
                e.raster = abs.to_string_lossy().into_owned();
            }
            e
        })
        .collect();
    let set = QuerySet {
        queries_csv: out_dir.join("queries.csv"),
        train_manifest: out_dir.join("train_manifest.jsonl"),
        truth_dir,
        withheld: withheld.len(),
        specs,
    };
    write_manifest(&set.train_manifest, &train)?;
    let queries: Vec<CompletionQuery> = set.specs.iter().map(|s| s.query.clone()).collect();
    write_queries(&set.queries_csv, &queries)?;
    let json = serde_json::to_vec_pretty(&set).expect("query set serializes");
    raster::write_atomic(&out_dir.join("holdout.json"), &json)?;
    Ok(set)
}
