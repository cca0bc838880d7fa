#![allow(dead_code)]

use std::path::PathBuf;

use stackfill::catalog::{Catalog, ImageRecord, IngestMeta};
use stackfill::raster::{write_raster, CalendarDate, ModalityId, Raster};

pub fn m(s: &str) -> ModalityId {
    s.parse().unwrap()
}

pub fn d(s: &str) -> CalendarDate {
    s.parse().unwrap()
}

/// Writes rasters under a temp directory and ingests them.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub catalog: Catalog,
}

impl Fixture {
    pub fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let catalog = Catalog::create_or_open(dir.path().join("catalog.json")).unwrap();
        Fixture { dir, catalog }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn add(&self, modality: &str, tile: &str, date: &str, r: &Raster) -> ImageRecord {
        let name = format!("{modality}_{tile}_{date}.mcrs");
        let path = self.path(&name);
        write_raster(r, &path).unwrap();
        self.catalog
            .ingest(
                &path,
                &IngestMeta {
                    modality: m(modality),
                    tile_id: tile.into(),
                    date: d(date),
                },
            )
            .unwrap()
    }

    /// A `w`×`h` raster with values `f(i)` in the modality's range.
    pub fn add_fn(
        &self,
        modality: &str,
        tile: &str,
        date: &str,
        w: u32,
        h: u32,
        f: impl Fn(usize) -> f32,
    ) -> ImageRecord {
        let range = m(modality).value_range();
        let values = (0..(w * h) as usize).map(f).collect();
        self.add(
            modality,
            tile,
            date,
            &Raster::from_values(w, h, values, range).unwrap(),
        )
    }
}
