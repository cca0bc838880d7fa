use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{month_gap, CompletionPlan, CompletionQuery, ModelPattern, PatternInput};
use crate::catalog::{Catalog, ImageRecord, QueryFilter};
use crate::raster::{CalendarDate, Sensor};

/// Which sensor's bands condition generation for a target sensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackRule {
    pub target: Sensor,
    pub source: Sensor,
    /// Conditioning bands, in the order the generator expects them.
    pub bands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FallbackTable(pub Vec<FallbackRule>);

impl Default for FallbackTable {
    /// Sentinel-1 from the nine Sentinel-2 bands B2–B8, B11, B12.
    fn default() -> Self {
        FallbackTable(vec![FallbackRule {
            target: Sensor::Sentinel1,
            source: Sensor::Sentinel2,
            bands: ["B2", "B3", "B4", "B5", "B6", "B7", "B8", "B11", "B12"]
                .map(String::from)
                .to_vec(),
        }])
    }
}

impl FallbackTable {
    pub fn rules_for(&self, target: Sensor) -> impl Iterator<Item = &FallbackRule> {
        self.0.iter().filter(move |r| r.target == target)
    }
}

/// Routes a query to intra-modal regression, inter-modal generation or
/// neither.
///
/// Intra-modal wins whenever the query's own sensor has any record on the
/// tile within `filter.window_days`; each band contributes its closest
/// record. The query cell itself is never used as an input.
pub fn resolve(
    q: &CompletionQuery,
    catalog: &Catalog,
    filter: &QueryFilter,
    cond_window_days: u32,
    fallback: &FallbackTable,
) -> CompletionPlan {
    let same_sensor: Vec<ImageRecord> = catalog
        .query_images(q.modality.sensor(), None, &q.tile_id, q.date, filter)
        .into_iter()
        .filter(|r| !(r.modality == q.modality && r.date == q.date))
        .collect();

    if !same_sensor.is_empty() {
        let mut closest: BTreeMap<_, ImageRecord> = BTreeMap::new();
        for r in same_sensor {
            closest.entry(r.modality.clone()).or_insert(r);
        }
        let mut pairs: Vec<(PatternInput, ImageRecord)> = closest
            .into_values()
            .map(|r| {
                (
                    PatternInput {
                        modality: r.modality.clone(),
                        month_gap: month_gap(q.date, r.date),
                    },
                    r,
                )
            })
            .collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let (inputs, chosen_inputs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        return CompletionPlan::IntraModal {
            pattern: ModelPattern::new(q.modality.clone(), inputs),
            chosen_inputs,
        };
    }

    let cond_filter = filter.with_window(cond_window_days);
    for rule in fallback.rules_for(q.modality.sensor()) {
        let candidates = catalog.query_images(rule.source, None, &q.tile_id, q.date, &cond_filter);
        // candidates arrive closest-first, so the first complete date wins
        let mut by_date: BTreeMap<CalendarDate, Vec<&ImageRecord>> = BTreeMap::new();
        let mut date_order: Vec<CalendarDate> = Vec::new();
        for r in &candidates {
            by_date
                .entry(r.date)
                .or_insert_with(|| {
                    date_order.push(r.date);
                    Vec::new()
                })
                .push(r);
        }
        for date in date_order {
            let on_date = &by_date[&date];
            let conditioning: Option<Vec<ImageRecord>> = rule
                .bands
                .iter()
                .map(|b| {
                    on_date
                        .iter()
                        .find(|r| r.modality.band() == b)
                        .map(|r| (*r).clone())
                })
                .collect();
            if let Some(conditioning) = conditioning {
                return CompletionPlan::InterModal {
                    conditioning,
                    source_sensor: rule.source,
                };
            }
        }
    }

    CompletionPlan::Unresolvable {
        reason: format!(
            "no {} record within {} days and no complete fallback source within {} days",
            q.modality.sensor(),
            filter.window_days,
            cond_window_days
        ),
    }
}
