mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use stackfill::catalog::{read_manifest, QueryFilter};
use stackfill::pattern::{resolve, FallbackTable, Route, LANDSAT_OUTPUT_SIZE};
use stackfill::pipeline::read_queries;
use stackfill::raster::{qa_path, read_meta, read_raster, Sensor};
use stackfill::synth::{generate, make_query_set, HoldoutRules, SceneConfig};
use stackfill::with_threads;

fn small_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        seed,
        tile_count: 4,
        sentinel_size: 24,
        landsat_size: 8,
        ..SceneConfig::default()
    }
}

fn digest_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, Sha256::digest(fs::read(&p).unwrap()).to_vec());
            }
        }
    }
    out
}

#[test]
fn scene_is_a_pure_function_of_the_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let sa = with_threads(1, || generate(&small_scene(3), a.path()).unwrap());
    let sb = with_threads(4, || generate(&small_scene(3), b.path()).unwrap());
    generate(&small_scene(4), c.path()).unwrap();
    assert_eq!(sa.rasters, sb.rasters);
    let (da, db, dc) = (
        digest_dir(a.path()),
        digest_dir(b.path()),
        digest_dir(c.path()),
    );
    // the manifest embeds absolute-free relative paths, so whole trees match
    assert_eq!(da, db);
    assert_ne!(da, dc);
}

#[test]
fn scene_contents_follow_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig {
        cloud_probability: 0.5,
        gap_probability: 0.1,
        nodata_probability: 0.2,
        ..small_scene(1)
    };
    let summary = generate(&cfg, dir.path()).unwrap();
    let entries = read_manifest(&summary.manifest).unwrap();
    assert_eq!(entries.len(), summary.rasters);
    let planned: usize = cfg
        .dates
        .iter()
        .map(|(s, d)| s.bands().len() * d.len())
        .sum::<usize>()
        * cfg.tile_count;
    assert_eq!(summary.rasters + summary.dropped, planned);
    assert!(summary.dropped > 0 && summary.cloudy_epochs > 0 && summary.nodata_epochs > 0);

    let mut cloudy_seen = false;
    for e in &entries {
        let r = read_raster(&e.raster).unwrap();
        let expected = if e.sensor.is_landsat() { 8 } else { 24 };
        assert_eq!((r.width(), r.height()), (expected, expected));
        let (lo, hi) = r.value_range();
        assert!(r.values().iter().all(|v| (lo..=hi).contains(v)));
        let meta = read_meta(&e.raster).unwrap();
        assert_eq!(
            (meta.sensor, meta.band.as_str(), meta.date),
            (e.sensor, e.band.as_str(), e.date)
        );
        let qa = qa_path(&e.raster);
        assert_eq!(qa.exists(), e.sensor.is_eo(), "{}", e.raster);
        if qa.exists() {
            let qa = read_raster(&qa).unwrap();
            assert!(qa.values().iter().all(|&c| [4.0, 8.0, 9.0].contains(&c)));
            cloudy_seen |= qa.values().contains(&9.0);
        }
    }
    assert!(cloudy_seen);
    let scene: SceneConfig =
        serde_json::from_slice(&fs::read(dir.path().join("scene.json")).unwrap()).unwrap();
    assert_eq!(scene, cfg);
}

#[test]
fn clouds_brighten_and_desaturate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig {
        cloud_probability: 1.0,
        gap_probability: 0.0,
        nodata_probability: 0.0,
        tile_count: 1,
        sentinel_size: 48,
        ..small_scene(2)
    };
    cfg.dates.get(&Sensor::Sentinel2).unwrap();
    generate(&cfg, dir.path()).unwrap();
    let date = cfg.dates[&Sensor::Sentinel2][0];
    let band = |b: &str| {
        read_raster(
            dir.path()
                .join(format!("T00/Sentinel2_{b}_T00_{date}.mcrs")),
        )
        .unwrap()
    };
    let (r, g, bl) = (band("B4"), band("B3"), band("B2"));
    let qa = read_raster(qa_path(
        dir.path().join(format!("T00/Sentinel2_B4_T00_{date}.mcrs")),
    ))
    .unwrap();
    let mask = stackfill::raster::brightness_saturation_mask(&r, &g, &bl, 0.8).unwrap();
    let mut core_hits = 0;
    let mut core = 0;
    for i in 0..qa.len() {
        if qa.values()[i] == 9.0 {
            core += 1;
            core_hits += usize::from(mask[i]);
        } else if qa.values()[i] == 4.0 {
            assert!(!mask[i]);
        }
    }
    assert!(core > 0);
    assert_eq!(core_hits, core);
}

#[test]
fn query_set_has_the_constructed_split() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate(&small_scene(5), dir.path().join("scene")).unwrap();
    let rules = HoldoutRules::default();
    let set = make_query_set(&scene.manifest, &rules, 9, dir.path().join("qs")).unwrap();
    assert_eq!(set.specs.len(), 100);
    let inter = set
        .specs
        .iter()
        .filter(|s| s.expected == Route::InterModal)
        .count();
    assert_eq!(inter, 16);
    assert!(set
        .specs
        .iter()
        .filter(|s| s.expected == Route::InterModal)
        .all(|s| s.query.modality.sensor() == Sensor::Sentinel1));

    let queries = read_queries(&set.queries_csv).unwrap();
    assert_eq!(
        queries,
        set.specs
            .iter()
            .map(|s| s.query.clone())
            .collect::<Vec<_>>()
    );

    let train = read_manifest(&set.train_manifest).unwrap();
    let all = read_manifest(&scene.manifest).unwrap();
    assert_eq!(train.len() + set.withheld, all.len());
    for s in &set.specs {
        let q = &s.query;
        assert!(!train.iter().any(|e| e.sensor == q.modality.sensor()
            && e.band == q.modality.band()
            && e.tile_id == q.tile_id
            && e.date == q.date));
        let truth = read_raster(&s.truth).unwrap();
        if q.modality.sensor().is_landsat() {
            assert_eq!(truth.width(), LANDSAT_OUTPUT_SIZE);
        }
    }

    // the resolver agrees with the construction
    let fx = common::Fixture::new();
    let items: Vec<_> = train
        .iter()
        .map(|e| (e.raster.clone().into(), e.meta().unwrap()))
        .collect();
    assert!(fx.catalog.ingest_batch(&items).iter().all(|r| r.is_ok()));
    for s in &set.specs {
        let plan = resolve(
            &s.query,
            &fx.catalog,
            &QueryFilter::default(),
            5,
            &FallbackTable::default(),
        );
        assert_eq!(plan.route(), s.expected, "{}", s.query);
    }

    // same inputs, same set
    let again = make_query_set(&scene.manifest, &rules, 9, dir.path().join("qs2")).unwrap();
    assert_eq!(
        again.specs.iter().map(|s| &s.query).collect::<Vec<_>>(),
        set.specs.iter().map(|s| &s.query).collect::<Vec<_>>()
    );
}

#[test]
fn impossible_split_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_scene(5);
    cfg.dates.remove(&Sensor::Sentinel2);
    let scene = generate(&cfg, dir.path().join("scene")).unwrap();
    let err = make_query_set(
        &scene.manifest,
        &HoldoutRules::default(),
        1,
        dir.path().join("qs"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("inter-modal"), "{err}");
}

mod scene {
    use stackfill::raster::{CalendarDate, Sensor};
    use stackfill::synth::*;

    #[test]
    fn default_isolated_sar_dates_have_optical_partners() {
        let cfg = SceneConfig::default();
        cfg.validate().unwrap();
        let s1 = &cfg.dates[&Sensor::Sentinel1];
        let s2 = &cfg.dates[&Sensor::Sentinel2];
        for d in &s1[15..] {
            let nearest_sar = s1
                .iter()
                .filter(|o| *o != d)
                .map(|o| o.days_since(*d).abs())
                .min()
                .unwrap();
            assert!(nearest_sar > 45, "{d}: {nearest_sar}");
            let nearest_opt = s2.iter().map(|o| o.days_since(*d).abs()).min().unwrap();
            assert!(nearest_opt <= 5, "{d}: {nearest_opt}");
        }
    }

    /// Cloud-free, gap-free, noiseless Sentinel-2 at `size`.
    fn clean(size: u32) -> SceneConfig {
        let mut cfg = SceneConfig {
            seed: 5,
            sentinel_size: size,
            cloud_probability: 0.0,
            gap_probability: 0.0,
            nodata_probability: 0.0,
            ..SceneConfig::default()
        };
        let mut m = cfg.mix_for(Sensor::Sentinel2);
        m.noise_sigma = 0.0;
        cfg.mixing.insert(Sensor::Sentinel2, m);
        cfg
    }

    fn b8(cfg: &SceneConfig, date: CalendarDate) -> Vec<f32> {
        let obs = render(cfg, "T00", Sensor::Sentinel2, date).unwrap();
        let (_, r) = obs.bands.iter().find(|(b, _)| b == "B8").unwrap();
        r.values().to_vec()
    }

    #[test]
    fn noise_is_continuous_across_grids() {
        let (coarse, fine) = (clean(5), clean(15));
        let date = coarse.dates[&Sensor::Sentinel2][0];
        let (a, b) = (b8(&coarse, date), b8(&fine, date));
        // pixel centers coincide at (2,2) on the 5-grid and (7,7) on the 15-grid
        assert!(
            (a[2 * 5 + 2] - b[7 * 15 + 7]).abs() < 1e-2,
            "{} {}",
            a[12],
            b[112]
        );
    }

    #[test]
    fn fields_drift_slowly() {
        let cfg = clean(16);
        let d = cfg.dates[&Sensor::Sentinel2][0];
        let diff = |x: &[f32], y: &[f32]| {
            x.iter()
                .zip(y)
                .map(|(p, q)| f64::from((p - q).abs()))
                .sum::<f64>()
                / x.len() as f64
        };
        let a = b8(&cfg, d);
        let near = diff(&a, &b8(&cfg, d.add_days(1)));
        let far = diff(&a, &b8(&cfg, d.add_days(300)));
        assert!(near * 10.0 < far, "{near} {far}");
    }

    #[test]
    fn mix_shape_is_validated() {
        let mut cfg = SceneConfig::default();
        cfg.mixing.insert(
            Sensor::Sentinel1,
            SensorMix {
                offsets: vec![0.5],
                weights: vec![vec![0.1; 4]],
                noise_sigma: 0.0,
            },
        );
        assert!(matches!(cfg.validate(), Err(SynthError::Config(_))));
    }
}
