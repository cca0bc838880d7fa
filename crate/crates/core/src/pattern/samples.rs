//! Per-pattern training samples.
//!
//! A training group is an output-modality record plus, for every pattern
//! input, the record of that modality on the same tile whose quantized month
//! gap to the output equals the pattern's gap (closest to the nominal date,
//! and within the filter's window of it). Pixels unmasked in every raster of
//! a group form the pool. Each pooled pixel gets a priority from a
//! counter-based hash of `(seed, pattern key, tile, date, pixel)`; the
//! lowest priorities are drawn, so the draw is without replacement and does
//! not depend on enumeration order or thread count.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{month_gap, ModelPattern, PatternError, PatternInput, Result, DAYS_PER_MONTH};
use crate::catalog::{Catalog, ImageRecord, QueryFilter};
use crate::gbdt::Dataset;
use crate::hash::{fnv1a, mix, splitmix64};
use crate::par;
use crate::raster::{read_raster, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 2048,
            val: 512,
            test: 512,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Scales every split by `pool / total`, rounding down.
    pub fn shrink_to(&self, pool: usize) -> SplitSizes {
        if pool >= self.total() {
            return *self;
        }
        let total = self.total() as u128;
        let scale = |n: usize| (n as u128 * pool as u128 / total) as usize;
        SplitSizes {
            train: scale(self.train),
            val: scale(self.val),
            test: scale(self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub pattern_key: String,
    /// Column order of every feature row.
    pub features: Vec<PatternInput>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub requested: SplitSizes,
    /// Set when the pool was smaller than requested.
    pub shrunk: bool,
    pub pool_size: usize,
    pub group_count: usize,
}

impl SampleSet {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.sizes().total()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Group {
    output: ImageRecord,
    inputs: Vec<ImageRecord>,
}

impl Group {
    fn load(&self) -> Result<Option<(Raster, Vec<Raster>)>> {
        let out = read_raster(&self.output.path)?;
        let mut ins = Vec::with_capacity(self.inputs.len());
        for r in &self.inputs {
            let raster = read_raster(&r.path)?;
            if !raster.same_dims(&out) {
                return Ok(None);
            }
            ins.push(raster);
        }
        Ok(Some((out, ins)))
    }
}

fn find_groups(pattern: &ModelPattern, catalog: &Catalog, filter: &QueryFilter) -> Vec<Group> {
    let outputs: Vec<ImageRecord> = catalog
        .records()
        .into_iter()
        .filter(|r| &r.modality == pattern.output() && filter.accepts_quality(r))
        .collect();
    let mut groups: Vec<Group> = outputs
        .into_iter()
        .filter_map(|out| {
            let inputs: Option<Vec<ImageRecord>> = pattern
                .inputs()
                .iter()
                .map(|inp| {
                    let offset = (f64::from(inp.month_gap) * DAYS_PER_MONTH).round() as i64;
                    let nominal = out.date.add_days(-offset);
                    catalog
                        .query_images(
                            inp.modality.sensor(),
                            Some(inp.modality.band()),
                            &out.tile_id,
                            nominal,
                            filter,
                        )
                        .into_iter()
                        .find(|r| r.id != out.id && month_gap(out.date, r.date) == inp.month_gap)
                })
                .collect();
            inputs.map(|inputs| Group {
                output: out,
                inputs,
            })
        })
        .collect();
    groups.sort_by(|a, b| {
        (&a.output.tile_id, a.output.date).cmp(&(&b.output.tile_id, b.output.date))
    });
    groups
}

/// Draws train/validation/test pixel samples for `pattern`.
pub fn assemble_samples(
    pattern: &ModelPattern,
    catalog: &Catalog,
    filter: &QueryFilter,
    sizes: SplitSizes,
    seed: u64,
) -> Result<SampleSet> {
    let key = pattern.key();
    let groups = find_groups(pattern, catalog, filter);
    if groups.is_empty() {
        return Err(PatternError::NoMatchingGroups(key));
    }
    let wanted = sizes.total();
    let key_state = mix(splitmix64(seed), fnv1a(key.as_bytes()));
    let group_state: Vec<u64> = groups
        .iter()
        .map(|g| {
            let day = g
                .output
                .date
                .days_since(crate::raster::CalendarDate::new(1970, 1, 1).unwrap());
            mix(
                mix(key_state, fnv1a(g.output.tile_id.as_bytes())),
                day as u64,
            )
        })
        .collect();

    // Pass 1: per-group lowest priorities.
    let indexed: Vec<usize> = (0..groups.len()).collect();
    let partials = par::map(&indexed, |&gi| -> Result<(usize, Vec<(u64, usize, u32)>)> {
        let Some((out, ins)) = groups[gi].load()? else {
            return Ok((0, Vec::new()));
        };
        let mut heap: BinaryHeap<(u64, usize, u32)> = BinaryHeap::with_capacity(wanted + 1);
        let mut pool = 0usize;
        for px in 0..out.len() {
            if out.is_masked(px) || ins.iter().any(|r| r.is_masked(px)) {
                continue;
            }
            pool += 1;
            let entry = (mix(group_state[gi], px as u64), gi, px as u32);
            if heap.len() < wanted {
                heap.push(entry);
            } else if wanted > 0 && entry < *heap.peek().unwrap() {
                heap.pop();
                heap.push(entry);
            }
        }
        Ok((pool, heap.into_vec()))
    });

    let mut pool_size = 0usize;
    let mut chosen: Vec<(u64, usize, u32)> = Vec::new();
    for p in partials {
        let (n, entries) = p?;
        pool_size += n;
        chosen.extend(entries);
    }
    if pool_size == 0 {
        return Err(PatternError::EmptyPool(key));
    }
    chosen.sort_unstable();
    let actual = sizes.shrink_to(pool_size);
    chosen.truncate(actual.total());

    // Pass 2: read the chosen pixels.
    let n_features = pattern.inputs().len();
    let mut per_group: Vec<Vec<(usize, u32)>> = vec![Vec::new(); groups.len()];
    for (rank, &(_, gi, px)) in chosen.iter().enumerate() {
        per_group[gi].push((rank, px));
    }
    let with_pixels: Vec<usize> = (0..groups.len())
        .filter(|&gi| !per_group[gi].is_empty())
        .collect();
    let rows = par::map(&with_pixels, |&gi| -> Result<Vec<(usize, Vec<f32>, f32)>> {
        let (out, ins) = groups[gi]
            .load()?
            .expect("group dimensions were checked in the first pass");
        Ok(per_group[gi]
            .iter()
            .map(|&(rank, px)| {
                let px = px as usize;
                let feats = ins.iter().map(|r| r.values()[px]).collect();
                (rank, feats, out.values()[px])
            })
            .collect())
    });
    let mut features = vec![0.0f32; chosen.len() * n_features];
    let mut targets = vec![0.0f32; chosen.len()];
    for part in rows {
        for (rank, feats, y) in part? {
            features[rank * n_features..(rank + 1) * n_features].copy_from_slice(&feats);
            targets[rank] = y;
        }
    }

    let slice = |from: usize, to: usize| Dataset {
        features: features[from * n_features..to * n_features].to_vec(),
        targets: targets[from..to].to_vec(),
        n_features,
    };
    let t1 = actual.train;
    let t2 = t1 + actual.val;
    let t3 = t2 + actual.test;
    Ok(SampleSet {
        pattern_key: key,
        features: pattern.inputs().to_vec(),
        train: slice(0, t1),
        val: slice(t1, t2),
        test: slice(t2, t3),
        requested: sizes,
        shrunk: actual != sizes,
        pool_size,
        group_count: groups.len(),
    })
}
