mod common;

use std::sync::Arc;
use std::thread;

use common::{d, m, Fixture};
use stackfill::catalog::{Catalog, QueryFilter};
use stackfill::gbdt::GbdtParams;
use stackfill::pattern::{
    assemble_samples, execute, pattern_key, resolve, CompletionPlan, CompletionQuery,
    ExchangeConfig, ExecContext, FallbackTable, ModelPattern, ModelStore, PatternError,
    PatternInput, Route, SampleSet, SplitSizes, TrainingConfig, LANDSAT_OUTPUT_SIZE,
};
use stackfill::raster::{read_meta, read_raster, Raster};
use stackfill::with_threads;

fn query(modality: &str, tile: &str, date: &str) -> CompletionQuery {
    CompletionQuery {
        modality: m(modality),
        tile_id: tile.into(),
        date: d(date),
    }
}

fn input(modality: &str, gap: i32) -> PatternInput {
    PatternInput {
        modality: m(modality),
        month_gap: gap,
    }
}

fn fast_training() -> TrainingConfig {
    TrainingConfig {
        gbdt: GbdtParams {
            n_trees: 30,
            ..GbdtParams::default()
        },
        ..TrainingConfig::default()
    }
}

#[test]
fn sar_pair_a_year_earlier_routes_intra_modal() {
    let fx = Fixture::new();
    fx.add_fn("Sentinel1_VV", "t0", "2018-01-15", 4, 4, |_| -10.0);
    fx.add_fn("Sentinel1_VH", "t0", "2018-01-15", 4, 4, |_| -15.0);
    let q = query("Sentinel1_VH", "t0", "2019-01-15");
    let filter = QueryFilter::default().with_window(366);
    let plan = resolve(&q, &fx.catalog, &filter, 5, &FallbackTable::default());
    let CompletionPlan::IntraModal {
        pattern,
        chosen_inputs,
    } = &plan
    else {
        panic!("{plan:?}")
    };
    assert_eq!(
        pattern.inputs(),
        &[input("Sentinel1_VV", 12), input("Sentinel1_VH", 12)]
    );
    assert_eq!(pattern.output(), &m("Sentinel1_VH"));
    for (i, rec) in pattern.inputs().iter().zip(chosen_inputs) {
        assert_eq!(i.modality, rec.modality);
    }
    assert_eq!(
        pattern_key(&plan).unwrap(),
        "Sentinel1_VH<=Sentinel1_VV@12,Sentinel1_VH@12"
    );

    // the default 45-day window sees nothing
    let narrow = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    assert_eq!(narrow.route(), Route::Unresolvable);
}

#[test]
fn empty_catalog_is_unresolvable() {
    let cat = Catalog::in_memory();
    let plan = resolve(
        &query("Sentinel2_B4", "t0", "2019-06-01"),
        &cat,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    assert_eq!(plan.route(), Route::Unresolvable);
}

const S2_BANDS: [&str; 9] = ["B2", "B3", "B4", "B5", "B6", "B7", "B8", "B11", "B12"];

#[test]
fn sar_without_neighbors_falls_back_to_optical() {
    let fx = Fixture::new();
    for b in S2_BANDS {
        fx.add_fn(&format!("Sentinel2_{b}"), "t0", "2019-01-18", 4, 4, |_| {
            500.0
        });
    }
    // an incomplete date closer to the query must be skipped
    fx.add_fn("Sentinel2_B2", "t0", "2019-01-16", 4, 4, |_| 500.0);
    // SAR on another tile does not count
    fx.add_fn("Sentinel1_VV", "t1", "2019-01-15", 4, 4, |_| -10.0);

    let q = query("Sentinel1_VV", "t0", "2019-01-15");
    let plan = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    let CompletionPlan::InterModal {
        conditioning,
        source_sensor,
    } = plan
    else {
        panic!("{plan:?}")
    };
    assert_eq!(source_sensor.to_string(), "Sentinel2");
    let bands: Vec<&str> = conditioning.iter().map(|r| r.modality.band()).collect();
    assert_eq!(bands, S2_BANDS);
    assert!(conditioning.iter().all(|r| r.date == d("2019-01-18")));

    // outside the conditioning window
    let far = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        2,
        &FallbackTable::default(),
    );
    assert_eq!(far.route(), Route::Unresolvable);
}

#[test]
fn same_sensor_neighbor_beats_fallback() {
    let fx = Fixture::new();
    for b in S2_BANDS {
        fx.add_fn(&format!("Sentinel2_{b}"), "t0", "2019-01-15", 4, 4, |_| {
            500.0
        });
    }
    fx.add_fn("Sentinel1_VH", "t0", "2019-02-20", 4, 4, |_| -15.0);
    let q = query("Sentinel1_VV", "t0", "2019-01-15");
    let plan = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    assert_eq!(plan.route(), Route::IntraModal);
    assert_eq!(pattern_key(&plan).unwrap(), "Sentinel1_VV<=Sentinel1_VH@-1");
}

#[test]
fn query_cell_is_not_its_own_input() {
    let fx = Fixture::new();
    fx.add_fn("Sentinel2_B4", "t0", "2019-01-15", 4, 4, |_| 1.0);
    let q = query("Sentinel2_B4", "t0", "2019-01-15");
    let plan = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    assert_eq!(plan.route(), Route::Unresolvable);
    fx.add_fn("Sentinel2_B3", "t0", "2019-01-15", 4, 4, |_| 1.0);
    let plan = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    assert_eq!(pattern_key(&plan).unwrap(), "Sentinel2_B4<=Sentinel2_B3@0");
}

/// Two dates of co-registered B3/B4 whose B3 values identify the pixel.
fn band_pair_fixture(side: u32, dates: &[&str]) -> Fixture {
    let fx = Fixture::new();
    for (g, date) in dates.iter().enumerate() {
        let offset = (g as u32 * side * side) as f32;
        fx.add_fn("Sentinel2_B3", "t0", date, side, side, |i| {
            offset + i as f32
        });
        fx.add_fn("Sentinel2_B4", "t0", date, side, side, |i| (i % 7) as f32);
    }
    fx
}

fn b4_from_b3() -> ModelPattern {
    ModelPattern::new(m("Sentinel2_B4"), vec![input("Sentinel2_B3", 0)])
}

fn all_rows(s: &SampleSet) -> Vec<f32> {
    [&s.train, &s.val, &s.test]
        .iter()
        .flat_map(|d| d.features.iter().copied())
        .collect()
}

fn assert_distinct(rows: &[f32]) {
    let mut keys: Vec<u32> = rows.iter().map(|v| v.to_bits()).collect();
    keys.sort_unstable();
    let n = keys.len();
    keys.dedup();
    assert_eq!(keys.len(), n, "repeated pixels");
}

#[test]
fn ample_pool_gives_exact_split_sizes() {
    let fx = band_pair_fixture(64, &["2019-01-01", "2019-03-01"]);
    let s = assemble_samples(
        &b4_from_b3(),
        &fx.catalog,
        &QueryFilter::default(),
        SplitSizes::default(),
        7,
    )
    .unwrap();
    assert_eq!(s.train.len(), 2048);
    assert_eq!(s.val.len(), 512);
    assert_eq!(s.test.len(), 512);
    assert!(!s.shrunk);
    assert_eq!(s.pool_size, 2 * 64 * 64);
    assert_eq!(s.group_count, 2);
    assert_eq!(s.features, vec![input("Sentinel2_B3", 0)]);
    let rows = all_rows(&s);
    assert_eq!(rows.len(), 3072);
    assert_distinct(&rows);
    // both groups contribute
    assert!(rows.iter().any(|&v| v < 4096.0) && rows.iter().any(|&v| v >= 4096.0));
    // targets belong to the sampled pixels
    for (x, y) in s.train.features.iter().zip(&s.train.targets) {
        let px = *x as usize % 4096;
        assert_eq!(*y, (px % 7) as f32);
    }
}

#[test]
fn six_pixel_pool_is_exhausted_without_repeats() {
    let fx = Fixture::new();
    fx.add_fn("Sentinel2_B3", "t0", "2019-01-01", 3, 2, |i| i as f32);
    fx.add_fn("Sentinel2_B4", "t0", "2019-01-01", 3, 2, |i| {
        10.0 * i as f32
    });
    let sizes = SplitSizes {
        train: 4,
        val: 1,
        test: 1,
    };
    let s = assemble_samples(
        &b4_from_b3(),
        &fx.catalog,
        &QueryFilter::default(),
        sizes,
        1,
    )
    .unwrap();
    assert_eq!(s.sizes(), sizes);
    assert!(!s.shrunk);
    let mut rows = all_rows(&s);
    assert_distinct(&rows);
    rows.sort_by(f32::total_cmp);
    assert_eq!(rows, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn small_pool_shrinks_four_one_one() {
    let fx = band_pair_fixture(10, &["2019-01-01"]);
    let s = assemble_samples(
        &b4_from_b3(),
        &fx.catalog,
        &QueryFilter::default(),
        SplitSizes::default(),
        1,
    )
    .unwrap();
    assert!(s.shrunk);
    assert_eq!(s.pool_size, 100);
    assert_eq!(
        s.sizes(),
        SplitSizes {
            train: 66,
            val: 16,
            test: 16
        }
    );
    assert_distinct(&all_rows(&s));
}

#[test]
fn masked_pixels_never_enter_the_pool() {
    let fx = Fixture::new();
    let n: usize = 8 * 8;
    let mask: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let values: Vec<f32> = (0..n)
        .map(|i| if i % 3 == 0 { 9999.0 } else { i as f32 })
        .collect();
    fx.add(
        "Sentinel2_B3",
        "t0",
        "2019-01-01",
        &Raster::new(8, 8, values, mask, (0.0, 10000.0)).unwrap(),
    );
    fx.add_fn("Sentinel2_B4", "t0", "2019-01-01", 8, 8, |_| 1.0);
    let lenient = QueryFilter {
        max_nodata: 1.0,
        ..QueryFilter::default()
    };
    let s = assemble_samples(
        &b4_from_b3(),
        &fx.catalog,
        &lenient,
        SplitSizes::default(),
        3,
    )
    .unwrap();
    assert_eq!(s.pool_size, n - n.div_ceil(3));
    assert!(all_rows(&s).iter().all(|&v| v != 9999.0));

    // the default filter rejects the raster outright
    assert!(matches!(
        assemble_samples(
            &b4_from_b3(),
            &fx.catalog,
            &QueryFilter::default(),
            SplitSizes::default(),
            3
        ),
        Err(PatternError::NoMatchingGroups(_))
    ));
}

#[test]
fn fully_masked_group_is_an_empty_pool() {
    let fx = Fixture::new();
    fx.add(
        "Sentinel2_B3",
        "t0",
        "2019-01-01",
        &Raster::new(2, 2, vec![0.0; 4], vec![true; 4], (0.0, 10000.0)).unwrap(),
    );
    fx.add_fn("Sentinel2_B4", "t0", "2019-01-01", 2, 2, |_| 1.0);
    let lenient = QueryFilter {
        max_nodata: 1.0,
        ..QueryFilter::default()
    };
    assert!(matches!(
        assemble_samples(
            &b4_from_b3(),
            &fx.catalog,
            &lenient,
            SplitSizes::default(),
            3
        ),
        Err(PatternError::EmptyPool(_))
    ));
}

#[test]
fn sampling_is_deterministic_across_threads_and_ingest_order() {
    let dates = ["2019-01-01", "2019-02-01", "2019-03-01", "2019-04-01"];
    let fx = band_pair_fixture(40, &dates);
    let run = |threads| {
        with_threads(threads, || {
            assemble_samples(
                &b4_from_b3(),
                &fx.catalog,
                &QueryFilter::default(),
                SplitSizes::default(),
                11,
            )
            .unwrap()
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));

    let mut reversed = dates;
    reversed.reverse();
    let fx2 = Fixture::new();
    for date in reversed {
        let g = dates.iter().position(|x| *x == date).unwrap() as u32;
        fx2.add_fn("Sentinel2_B4", "t0", date, 40, 40, |i| (i % 7) as f32);
        fx2.add_fn("Sentinel2_B3", "t0", date, 40, 40, |i| {
            (g * 1600) as f32 + i as f32
        });
    }
    let other = assemble_samples(
        &b4_from_b3(),
        &fx2.catalog,
        &QueryFilter::default(),
        SplitSizes::default(),
        11,
    )
    .unwrap();
    assert_eq!(one, other);

    let reseeded = assemble_samples(
        &b4_from_b3(),
        &fx.catalog,
        &QueryFilter::default(),
        SplitSizes::default(),
        12,
    )
    .unwrap();
    assert_ne!(one.train, reseeded.train);
}

#[test]
fn no_groups_for_unmatched_gap() {
    let fx = band_pair_fixture(4, &["2019-01-01"]);
    let p = ModelPattern::new(m("Sentinel2_B4"), vec![input("Sentinel2_B3", 2)]);
    assert!(matches!(
        assemble_samples(
            &p,
            &fx.catalog,
            &QueryFilter::default(),
            SplitSizes::default(),
            0
        ),
        Err(PatternError::NoMatchingGroups(_))
    ));
}

fn ctx<'a>(
    catalog: &'a Catalog,
    store: &'a ModelStore,
    training: &'a TrainingConfig,
    exchange: &'a ExchangeConfig,
) -> ExecContext<'a> {
    ExecContext {
        catalog,
        store,
        training,
        exchange,
    }
}

#[test]
fn landsat_output_is_resampled_to_256() {
    let fx = Fixture::new();
    for date in ["2019-01-01", "2019-02-01"] {
        fx.add_fn("Landsat5_SR_B2", "t0", date, 85, 85, |i| {
            (i % 85) as f32 * 10.0
        });
        fx.add_fn("Landsat5_SR_B3", "t0", date, 85, 85, |i| {
            (i / 85) as f32 * 10.0
        });
    }
    let q = query("Landsat5_SR_B3", "t0", "2019-03-01");
    let filter = QueryFilter::default();
    let plan = resolve(&q, &fx.catalog, &filter, 5, &FallbackTable::default());
    assert_eq!(
        pattern_key(&plan).unwrap(),
        "Landsat5_SR_B3<=Landsat5_SR_B2@1,Landsat5_SR_B3@1"
    );
    let store = ModelStore::new();
    let training = fast_training();
    let exchange = ExchangeConfig::default();
    let out = fx.path("out/landsat.mcrs");
    let report = execute(
        &q,
        &plan,
        &ctx(&fx.catalog, &store, &training, &exchange),
        &out,
    )
    .unwrap();
    assert!(report.trained_now);
    assert_eq!(report.route, Route::IntraModal);
    let r = read_raster(&out).unwrap();
    assert_eq!(
        (r.width(), r.height()),
        (LANDSAT_OUTPUT_SIZE, LANDSAT_OUTPUT_SIZE)
    );
    assert_eq!(r.value_range(), (0.0, 10000.0));
    let meta = read_meta(&out).unwrap();
    assert_eq!(meta.modality().unwrap(), m("Landsat5_SR_B3"));
    assert_eq!(meta.date, d("2019-03-01"));
}

#[test]
fn unresolvable_plan_writes_nothing() {
    let cat = Catalog::in_memory();
    let q = query("Sentinel2_B4", "t0", "2019-01-01");
    let plan = resolve(
        &q,
        &cat,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    let store = ModelStore::new();
    let training = TrainingConfig::default();
    let exchange = ExchangeConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.mcrs");
    assert!(matches!(
        execute(&q, &plan, &ctx(&cat, &store, &training, &exchange), &out),
        Err(PatternError::Unresolvable(_))
    ));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    assert_eq!(store.trainings(), 0);
}

#[test]
fn inter_modal_without_exchange_is_unavailable() {
    let fx = Fixture::new();
    for b in S2_BANDS {
        fx.add_fn(&format!("Sentinel2_{b}"), "t0", "2019-01-16", 4, 4, |_| {
            500.0
        });
    }
    let q = query("Sentinel1_VH", "t0", "2019-01-15");
    let plan = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    assert_eq!(plan.route(), Route::InterModal);
    let store = ModelStore::new();
    let training = TrainingConfig::default();
    let exchange = ExchangeConfig {
        dir: Some(fx.path("missing")),
        ..ExchangeConfig::default()
    };
    let out = fx.path("sar.mcrs");
    assert!(matches!(
        execute(
            &q,
            &plan,
            &ctx(&fx.catalog, &store, &training, &exchange),
            &out
        ),
        Err(PatternError::GenerationUnavailable(_))
    ));
    assert!(!out.exists());
}

/// 32 discrete levels so every test value also occurs in training.
fn level(i: usize, salt: usize) -> f32 {
    1000.0 + 250.0 * ((i * 7 + salt * 13 + (i / 17) * 5) % 32) as f32
}

#[test]
fn identity_task_reproduces_the_input_band() {
    let fx = Fixture::new();
    let dates = [
        "2019-01-01",
        "2019-02-01",
        "2019-03-01",
        "2019-04-01",
        "2019-05-01",
    ];
    for (t, date) in dates.iter().enumerate() {
        fx.add_fn("Sentinel2_B4", "t0", date, 48, 48, |i| level(i, t));
        if t + 1 < dates.len() {
            fx.add_fn("Sentinel2_B8", "t0", date, 48, 48, |i| level(i, t));
        }
    }
    let q = query("Sentinel2_B8", "t0", "2019-05-01");
    let plan = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    assert_eq!(
        pattern_key(&plan).unwrap(),
        "Sentinel2_B8<=Sentinel2_B4@0,Sentinel2_B8@1"
    );
    let store = ModelStore::new();
    let training = TrainingConfig {
        gbdt: GbdtParams {
            learning_rate: 0.3,
            ..GbdtParams::default()
        },
        ..TrainingConfig::default()
    };
    let exchange = ExchangeConfig::default();
    let out = fx.path("b8.mcrs");
    execute(
        &q,
        &plan,
        &ctx(&fx.catalog, &store, &training, &exchange),
        &out,
    )
    .unwrap();
    let pred = read_raster(&out).unwrap();
    let truth = read_raster(fx.path("Sentinel2_B4_t0_2019-05-01.mcrs")).unwrap();
    let tol = 1e-3 * 10000.0;
    let worst = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= tol, "max error {worst}");
}

#[test]
fn masked_inputs_are_infilled_and_flagged() {
    let fx = Fixture::new();
    for date in ["2019-01-01", "2019-02-01"] {
        fx.add_fn("Sentinel2_B3", "t0", date, 8, 8, |i| i as f32);
        fx.add_fn("Sentinel2_B4", "t0", date, 8, 8, |i| 2.0 * i as f32);
    }
    let mask: Vec<bool> = (0..64).map(|i| i < 5).collect();
    fx.add(
        "Sentinel2_B3",
        "t0",
        "2019-03-01",
        &Raster::new(
            8,
            8,
            (0..64).map(|i| i as f32).collect(),
            mask,
            (0.0, 10000.0),
        )
        .unwrap(),
    );
    let lenient = QueryFilter {
        max_nodata: 0.1,
        ..QueryFilter::default()
    };
    let q = query("Sentinel2_B4", "t0", "2019-03-01");
    let plan = resolve(&q, &fx.catalog, &lenient, 5, &FallbackTable::default());
    assert_eq!(
        pattern_key(&plan).unwrap(),
        "Sentinel2_B4<=Sentinel2_B3@0,Sentinel2_B4@1"
    );
    let store = ModelStore::new();
    let training = TrainingConfig {
        filter: lenient,
        ..fast_training()
    };
    let exchange = ExchangeConfig::default();
    let out = fx.path("b4.mcrs");
    let report = execute(
        &q,
        &plan,
        &ctx(&fx.catalog, &store, &training, &exchange),
        &out,
    )
    .unwrap();
    assert!(
        report
            .flags
            .contains(&"infilled:Sentinel2_B3:5".to_string()),
        "{:?}",
        report.flags
    );
    assert!(!read_raster(&out).unwrap().has_mask());
}

#[test]
fn concurrent_callers_share_one_training() {
    let fx = band_pair_fixture(16, &["2019-01-01", "2019-02-01"]);
    fx.add_fn("Sentinel2_B3", "t0", "2019-03-01", 16, 16, |i| i as f32);
    let q = query("Sentinel2_B4", "t0", "2019-03-01");
    let plan = resolve(
        &q,
        &fx.catalog,
        &QueryFilter::default(),
        5,
        &FallbackTable::default(),
    );
    let store = Arc::new(ModelStore::new());
    let training = fast_training();
    let exchange = ExchangeConfig::default();
    let reports: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|k| {
                let (store, plan, q, fx, training, exchange) =
                    (&store, &plan, &q, &fx, &training, &exchange);
                s.spawn(move || {
                    let out = fx.path(&format!("o{k}.mcrs"));
                    execute(q, plan, &ctx(&fx.catalog, store, training, exchange), &out).unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(store.trainings(), 1);
    assert_eq!(reports.iter().filter(|r| r.trained_now).count(), 1);
    let first = read_raster(fx.path("o0.mcrs")).unwrap();
    for k in 1..8 {
        assert!(first.bit_eq(&read_raster(fx.path(&format!("o{k}.mcrs"))).unwrap()));
    }
}

#[test]
fn failed_training_is_remembered() {
    let store = ModelStore::new();
    let fail = || Err(PatternError::NoMatchingGroups("k".into()));
    assert!(matches!(
        store.get_or_train("k", fail),
        Err(PatternError::TrainingImpossible { .. })
    ));
    assert!(matches!(
        store.get_or_train("k", || unreachable!()),
        Err(PatternError::TrainingImpossible { .. })
    ));
    assert_eq!(store.trainings(), 1);
    assert!(store.get("k").is_none());
}

mod keys {
    use stackfill::pattern::*;
    use stackfill::raster::{CalendarDate, ModalityId};

    fn m(s: &str) -> ModalityId {
        s.parse().unwrap()
    }

    fn d(s: &str) -> CalendarDate {
        s.parse().unwrap()
    }

    fn input(s: &str, gap: i32) -> PatternInput {
        PatternInput {
            modality: m(s),
            month_gap: gap,
        }
    }

    #[test]
    fn month_quantization() {
        assert_eq!(month_gap(d("2019-01-15"), d("2018-01-15")), 12);
        assert_eq!(month_gap(d("2018-01-15"), d("2019-01-15")), -12);
        assert_eq!(month_gap(d("2019-07-01"), d("2019-07-01")), 0);
        // 15 days is just under half a month, 16 just over
        assert_eq!(month_gap(d("2019-07-16"), d("2019-07-01")), 0);
        assert_eq!(month_gap(d("2019-07-17"), d("2019-07-01")), 1);
        assert_eq!(month_gap(d("2019-07-01"), d("2019-07-17")), -1);
    }

    #[test]
    fn table_row_two_key() {
        let bands = [
            "B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B12",
        ];
        let mut inputs: Vec<PatternInput> = bands
            .iter()
            .map(|b| input(&format!("Sentinel2_{b}"), 0))
            .collect();
        inputs.push(input("Sentinel2_B11", -12));
        let p = ModelPattern::new(m("Sentinel2_B11"), inputs.clone());
        assert_eq!(
            p.key(),
            "Sentinel2_B11<=Sentinel2_B1@0,Sentinel2_B2@0,Sentinel2_B3@0,Sentinel2_B4@0,\
             Sentinel2_B5@0,Sentinel2_B6@0,Sentinel2_B7@0,Sentinel2_B8@0,Sentinel2_B8A@0,\
             Sentinel2_B9@0,Sentinel2_B11@-12,Sentinel2_B12@0"
        );
        inputs.reverse();
        assert_eq!(ModelPattern::new(m("Sentinel2_B11"), inputs).key(), p.key());
        assert!(p.is_intra_modal());
    }

    #[test]
    fn output_modality_separates_keys() {
        let inputs = vec![input("Sentinel1_VV", 12), input("Sentinel1_VH", 12)];
        let vh = ModelPattern::new(m("Sentinel1_VH"), inputs.clone());
        let vv = ModelPattern::new(m("Sentinel1_VV"), inputs);
        assert_eq!(vh.key(), "Sentinel1_VH<=Sentinel1_VV@12,Sentinel1_VH@12");
        assert_ne!(vh.key(), vv.key());
    }

    #[test]
    fn non_intra_plans_have_no_key() {
        let plan = CompletionPlan::Unresolvable {
            reason: "empty".into(),
        };
        assert!(matches!(
            pattern_key(&plan),
            Err(PatternError::NotIntraModal)
        ));
    }
}

mod exchange {
    use std::fs;
    use std::path::{Path, PathBuf};
    use std::thread;
    use std::time::{Duration, Instant};

    use stackfill::pattern::*;
    use stackfill::raster::write_raster;
    use stackfill::raster::Raster;

    fn request(dir: &Path, id: &str) -> GenerationRequest {
        GenerationRequest {
            id: id.into(),
            tile_id: "t0".into(),
            date: "2019-01-10".parse().unwrap(),
            conditioning_date: "2019-01-12".parse().unwrap(),
            conditioning: vec![RequestInput {
                modality: "Sentinel2_B2".parse().unwrap(),
                path: "b2.mcrs".into(),
            }],
            output_modality: "Sentinel1_VV".parse().unwrap(),
            output_path: dir
                .join(format!("{id}.mcrs"))
                .to_string_lossy()
                .into_owned(),
            value_range: (-50.0, 1.0),
        }
    }

    fn quick(dir: Option<PathBuf>) -> ExchangeConfig {
        ExchangeConfig {
            dir,
            timeout: Duration::from_millis(300),
            poll_interval: Duration::from_millis(10),
        }
    }

    #[test]
    fn missing_directory_is_unavailable() {
        let tmp = tempfile::tempdir().unwrap();
        let req = request(tmp.path(), "a");
        for cfg in [quick(None), quick(Some(tmp.path().join("nope")))] {
            assert!(matches!(
                cfg.generate(&req),
                Err(PatternError::GenerationUnavailable(_))
            ));
        }
    }

    #[test]
    fn unanswered_request_times_out() {
        let tmp = tempfile::tempdir().unwrap();
        let req = request(tmp.path(), "b");
        let t = Instant::now();
        assert!(matches!(
            quick(Some(tmp.path().into())).generate(&req),
            Err(PatternError::GenerationTimeout(_))
        ));
        assert!(t.elapsed() >= Duration::from_millis(300));
        let posted: GenerationRequest =
            serde_json::from_slice(&fs::read(req.request_file(tmp.path())).unwrap()).unwrap();
        assert_eq!(posted, req);
    }

    #[test]
    fn answered_and_failed_requests() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        let cfg = ExchangeConfig {
            timeout: Duration::from_secs(10),
            ..quick(Some(dir.clone()))
        };
        let ok = request(&dir, "ok");
        let bad = request(&dir, "bad");
        let responder = {
            let dir = dir.clone();
            thread::spawn(move || {
                let deadline = Instant::now() + Duration::from_secs(5);
                let mut pending = vec!["ok", "bad"];
                while !pending.is_empty() && Instant::now() < deadline {
                    pending.retain(|id| {
                        let f = dir.join(format!("req_{id}.json"));
                        if !f.exists() {
                            return true;
                        }
                        let r: GenerationRequest =
                            serde_json::from_slice(&fs::read(f).unwrap()).unwrap();
                        if *id == "ok" {
                            let out = Raster::filled(4, 4, -10.0, r.value_range).unwrap();
                            write_raster(&out, &r.output_path).unwrap();
                            fs::write(done_path(&dir, id), b"").unwrap();
                        } else {
                            fs::write(err_path(&dir, id), "bad conditioning\n").unwrap();
                        }
                        false
                    });
                    thread::sleep(Duration::from_millis(5));
                }
            })
        };
        let got = cfg.generate(&ok).unwrap();
        assert_eq!(got.values(), &[-10.0; 16]);
        match cfg.generate(&bad) {
            Err(PatternError::GenerationFailed(reason)) => assert_eq!(reason, "bad conditioning"),
            other => panic!("{other:?}"),
        }
        responder.join().unwrap();
    }
}

mod samples {
    use stackfill::pattern::*;

    #[test]
    fn proportional_shrink() {
        let s = SplitSizes::default();
        assert_eq!(s.shrink_to(10_000), s);
        assert_eq!(
            s.shrink_to(6),
            SplitSizes {
                train: 4,
                val: 1,
                test: 1
            }
        );
        assert_eq!(
            s.shrink_to(100),
            SplitSizes {
                train: 66,
                val: 16,
                test: 16
            }
        );
        let exact = SplitSizes {
            train: 4,
            val: 1,
            test: 1,
        };
        assert_eq!(exact.shrink_to(6), exact);
    }
}
