//! End-to-end completion runs and their evaluation.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, QueryFilter};
use crate::gbdt::GbdtParams;
use crate::par;
use crate::pattern::{
    execute, resolve, train_pattern, CompletionPlan, CompletionQuery, ExchangeConfig, ExecContext,
    FallbackTable, ModelStore, PredictionReport, Route, SplitSizes, TrainingConfig,
};
use crate::raster::{
    self, psnr, read_raster, ssim, CalendarDate, ModalityId, RasterError, Sensor, SsimParams,
    DEFAULT_CLOUD_CLASSES, DEFAULT_PSNR_CAP_DB,
};
use crate::synth::{raster_name, QUERY_CSV_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("query file line {line}: {message}")]
    Query { line: usize, message: String },
    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },
    #[error("report is empty")]
    EmptyReport,
    #[error("no truth raster for {query} at {path}")]
    MissingTruth { query: String, path: PathBuf },
    #[error("{query}: {source}")]
    Metric {
        query: String,
        #[source]
        source: RasterError,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Settings shared by every subcommand. Relative paths are resolved against
/// the directory of the config file they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog store file.
    pub catalog: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// QA codes counted as cloud at ingest.
    pub cloud_classes: Vec<i32>,
    pub filter: QueryFilter,
    /// Window for inter-modal conditioning dates, in days.
    pub cond_window_days: u32,
    pub gbdt: GbdtParams,
    pub samples: SplitSizes,
    pub fallback: FallbackTable,
    pub exchange: ExchangeConfig,
    /// Predicted rasters go here.
    pub output_dir: PathBuf,
    /// Trained models are saved here when set.
    pub model_dir: Option<PathBuf>,
    pub report: PathBuf,
    pub metrics: PathBuf,
    /// Per-query LPIPS from an external evaluator, keyed by query name.
    pub lpips: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: "catalog.json".into(),
            seed: 0,
            threads: 0,
            cloud_classes: DEFAULT_CLOUD_CLASSES.to_vec(),
            filter: QueryFilter::default(),
            cond_window_days: 5,
            gbdt: GbdtParams::default(),
            samples: SplitSizes::default(),
            fallback: FallbackTable::default(),
            exchange: ExchangeConfig::default(),
            output_dir: "outputs".into(),
            model_dir: None,
            report: "report.jsonl".into(),
            metrics: "metrics.json".into(),
            lpips: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config and anchors its relative paths at its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.rebase(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.catalog);
        fix(&mut self.output_dir);
        fix(&mut self.report);
        fix(&mut self.metrics);
        for p in [&mut self.model_dir, &mut self.lpips, &mut self.exchange.dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gbdt
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let f = &self.filter;
        if !(0.0..=1.0).contains(&f.max_nodata) || !(0.0..=1.0).contains(&f.max_cloud) {
            return Err(PipelineError::Config(
                "filter thresholds must be in [0, 1]".into(),
            ));
        }
        if self.samples.train == 0 {
            return Err(PipelineError::Config(
                "samples.train must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Checks that input files named by the config exist. A missing exchange
    /// directory is allowed: inter-modal queries then fail individually.
    pub fn check_paths(&self) -> Result<()> {
        if let Some(p) = &self.lpips {
            if !p.is_file() {
                return Err(PipelineError::Config(format!(
                    "lpips file {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(dir) = &self.exchange.dir {
            if dir.exists() && !dir.is_dir() {
                return Err(PipelineError::Config(format!(
                    "exchange path {} is not a directory",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            gbdt: self.gbdt.clone(),
            sizes: self.samples,
            filter: self.filter,
            seed: self.seed,
        }
    }

    /// Opens (or creates) the configured catalog.
    pub fn open_catalog(&self) -> Result<Catalog> {
        if let Some(parent) = self.catalog.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        Ok(Catalog::create_or_open(&self.catalog)?
            .with_cloud_classes(self.cloud_classes.iter().copied()))
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct QueryRow {
    sensor: String,
    band: String,
    tile_id: String,
    date: String,
}

/// Parses a query CSV with header `sensor,band,tile_id,date`.
pub fn parse_queries(text: &str) -> Result<Vec<CompletionQuery>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != QUERY_CSV_HEADER {
        return Err(PipelineError::Query {
            line: 1,
            message: format!("expected header {}", QUERY_CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| PipelineError::Query { line, message };
        let row: QueryRow = record.deserialize(None).map_err(|e| bad(e.to_string()))?;
        let sensor: Sensor = row
            .sensor
            .parse()
            .map_err(|e: RasterError| bad(e.to_string()))?;
        let modality = ModalityId::new(sensor, &row.band).map_err(|e| bad(e.to_string()))?;
        let date: CalendarDate = row
            .date
            .parse()
            .map_err(|e: RasterError| bad(e.to_string()))?;
        out.push(CompletionQuery {
            modality,
            tile_id: row.tile_id,
            date,
        });
    }
    Ok(out)
}

pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<CompletionQuery>> {
    parse_queries(&fs::read_to_string(path)?)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[CompletionQuery]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(QUERY_CSV_HEADER)?;
    for q in queries {
        w.serialize(QueryRow {
            sensor: q.modality.sensor().to_string(),
            band: q.modality.band().to_string(),
            tile_id: q.tile_id.clone(),
            date: q.date.to_string(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    raster::write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

/// `<sensor>_<band>_<tile>_<date>`, the stem of the query's truth file.
pub fn query_name(q: &CompletionQuery) -> String {
    raster_name(q.modality.sensor(), q.modality.band(), &q.tile_id, q.date)
        .trim_end_matches(".mcrs")
        .to_string()
}

/// Output raster path for the query at position `index`.
pub fn output_path(dir: &Path, index: usize, q: &CompletionQuery) -> PathBuf {
    dir.join(format!("q{index:05}_{}.mcrs", query_name(q)))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteSummary {
    pub routes: BTreeMap<Route, usize>,
    pub distinct_patterns: usize,
    pub trainings: usize,
    pub succeeded: usize,
    pub failed: usize,
}

/// Resolves, trains and executes every query.
///
/// Every distinct pattern is trained once, before any prediction; the
/// first query (in input order) using a pattern is the one reported with
/// `trained_now`. Reports come back in input order.
pub fn complete(
    cfg: &RunConfig,
    catalog: &Catalog,
    queries: &[CompletionQuery],
) -> (Vec<PredictionReport>, CompleteSummary) {
    let plans = par::map(queries, |q| {
        resolve(q, catalog, &cfg.filter, cfg.cond_window_days, &cfg.fallback)
    });

    let mut first_use: HashMap<String, usize> = HashMap::new();
    let mut patterns = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        if let CompletionPlan::IntraModal { pattern, .. } = plan {
            if let Entry::Vacant(e) = first_use.entry(pattern.key()) {
                e.insert(i);
                patterns.push(pattern.clone());
            }
        }
    }
    let store = match &cfg.model_dir {
        Some(dir) => ModelStore::with_dir(dir),
        None => ModelStore::new(),
    };
    let training = cfg.training();
    par::map(&patterns, |p| {
        // failures are remembered by the store and reported per query
        let _ = store.get_or_train(&p.key(), || train_pattern(p, catalog, &training));
    });

    let ctx = ExecContext {
        catalog,
        store: &store,
        training: &training,
        exchange: &cfg.exchange,
    };
    let indexed: Vec<(usize, &CompletionQuery, &CompletionPlan)> = queries
        .iter()
        .zip(&plans)
        .enumerate()
        .map(|(i, (q, p))| (i, q, p))
        .collect();
    let reports = par::map(&indexed, |&(i, q, plan)| {
        let out = output_path(&cfg.output_dir, i, q);
        match execute(q, plan, &ctx, &out) {
            Ok(mut r) => {
                r.trained_now = r
                    .pattern_key
                    .as_ref()
                    .is_some_and(|k| first_use.get(k) == Some(&i));
                r
            }
            Err(e) => PredictionReport::failed(q.clone(), plan, &e),
        }
    });

    let mut summary = CompleteSummary {
        distinct_patterns: patterns.len(),
        trainings: store.trainings(),
        ..CompleteSummary::default()
    };
    for r in &reports {
        *summary.routes.entry(r.route).or_default() += 1;
        if r.error.is_some() {
            summary.failed += 1;
        } else {
            summary.succeeded += 1;
        }
    }
    (reports, summary)
}

pub fn write_report(path: impl AsRef<Path>, reports: &[PredictionReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text.push_str(&serde_json::to_string(r).expect("report serializes"));
        text.push('\n');
    }
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    raster::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<PredictionReport>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| PipelineError::Report {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: String,
    pub route: Route,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    /// Why the query has no scores.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub scored: usize,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    /// Null unless external LPIPS scores were supplied.
    pub mean_lpips: Option<f64>,
    pub routes: BTreeMap<Route, usize>,
    pub per_query: Vec<QueryMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every produced output against `truth_dir/<query name>.mcrs`.
///
/// Queries that failed upstream are listed without scores. PSNR uses the
/// modality's dynamic range as peak and SSIM its range as `L`.
pub fn evaluate(
    reports: &[PredictionReport],
    truth_dir: impl AsRef<Path>,
    lpips: Option<&BTreeMap<String, f64>>,
) -> Result<Metrics> {
    if reports.is_empty() {
        return Err(PipelineError::EmptyReport);
    }
    let truth_dir = truth_dir.as_ref();
    let per_query = par::map(reports, |r| -> Result<QueryMetrics> {
        let name = query_name(&r.query);
        let mut m = QueryMetrics {
            query: name.clone(),
            route: r.route,
            psnr: None,
            ssim: None,
            lpips: None,
            error: r.error.clone(),
        };
        let Some(out) = &r.output_path else {
            return Ok(m);
        };
        let truth_path = truth_dir.join(format!("{name}.mcrs"));
        if !truth_path.exists() {
            return Err(PipelineError::MissingTruth {
                query: name,
                path: truth_path,
            });
        }
        let wrap = |source| PipelineError::Metric {
            query: name.clone(),
            source,
        };
        let pred = read_raster(out).map_err(wrap)?;
        let truth = read_raster(&truth_path).map_err(wrap)?;
        let range = r.query.modality.dynamic_range();
        m.psnr = Some(psnr(&pred, &truth, range, DEFAULT_PSNR_CAP_DB).map_err(wrap)?);
        m.ssim = Some(ssim(&pred, &truth, &SsimParams::for_range(range)).map_err(wrap)?);
        m.lpips = lpips.and_then(|l| l.get(&name).copied());
        Ok(m)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut routes = BTreeMap::new();
    for r in reports {
        *routes.entry(r.route).or_default() += 1;
    }
    Ok(Metrics {
        queries: reports.len(),
        scored: per_query.iter().filter(|m| m.psnr.is_some()).count(),
        mean_psnr: mean(per_query.iter().filter_map(|m| m.psnr)),
        mean_ssim: mean(per_query.iter().filter_map(|m| m.ssim)),
        mean_lpips: mean(per_query.iter().filter_map(|m| m.lpips)),
        routes,
        per_query,
    })
}

/// Reads an LPIPS score file: a JSON object from query name to score.
pub fn read_lpips(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let bytes = fs::read(path.as_ref())?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.as_ref().display())))
}

pub fn write_metrics(path: impl AsRef<Path>, m: &Metrics) -> Result<()> {
    let json = serde_json::to_vec_pretty(m).expect("metrics serialize");
    raster::write_atomic(path.as_ref(), &json)?;
    Ok(())
}
